#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "lungquant/preprocess.hpp"
#include "test_support.hpp"

using namespace lungquant;
using namespace lungquant::preprocess;

TEST_CASE("window_and_normalize maps the window ends to 0 and 1") {
    CtVolume vol = lqtest::make_volume({4, 3, 2});
    vol.voxels(0, 0, 0) = -1000.0f;
    vol.voxels(1, 0, 0) = 0.0f;
    vol.voxels(2, 0, 0) = 300.0f;
    vol.voxels(3, 0, 0) = -2000.0f; // below the window
    vol.voxels(0, 1, 0) = 5000.0f;  // above the window

    const CtVolume lung = window_and_normalize(vol, kLungWindow);
    CHECK(lung.voxels(0, 0, 0) == doctest::Approx(0.0));
    CHECK(lung.voxels(1, 0, 0) == doctest::Approx(0.5)); // (0 + 1000) / 2000
    CHECK(lung.voxels(3, 0, 0) == doctest::Approx(0.0));
    CHECK(lung.voxels(0, 1, 0) == doctest::Approx(1.0));
    CHECK(lung.dims() == vol.dims());

    const CtVolume lesion = window_and_normalize(vol, kLesionWindow);
    CHECK(lesion.voxels(2, 0, 0) == doctest::Approx(1.0)); // 300 HU at the top of the window
}

TEST_CASE("window_and_normalize is monotone and idempotent on the unit window") {
    Rng rng(11);
    CtVolume vol = lqtest::make_volume({8, 8, 8});
    for (auto& v : vol.voxels.vec()) v = static_cast<float>(rng.uniform(-2000.0, 2000.0));

    const CtVolume once = window_and_normalize(vol, kLungWindow);
    const CtVolume twice = window_and_normalize(once, HuWindow{0.0, 1.0});
    CHECK(once.voxels.vec() == twice.voxels.vec());

    // monotone: sort two values, outputs stay ordered
    for (int i = 0; i < 100; ++i) {
        const double a = rng.uniform(-2000.0, 2000.0), b = rng.uniform(-2000.0, 2000.0);
        CtVolume two = lqtest::make_volume({2, 1, 1});
        two.voxels(0, 0, 0) = static_cast<float>(std::min(a, b));
        two.voxels(1, 0, 0) = static_cast<float>(std::max(a, b));
        const CtVolume w = window_and_normalize(two, kLungWindow);
        CHECK(w.voxels(0, 0, 0) <= w.voxels(1, 0, 0));
    }

    CHECK_THROWS_AS(window_and_normalize(vol, HuWindow{10.0, 10.0}), Error);
}

TEST_CASE("resample hits the target grid and preserves physical extent") {
    CtVolume vol = lqtest::make_volume({400, 300, 200}, 0.0f, {0.8, 0.8, 1.5});
    for (int z = 0; z < 200; ++z)
        for (int y = 0; y < 300; ++y)
            for (int x = 0; x < 400; ++x)
                vol.voxels(x, y, z) = static_cast<float>(x) * 0.25f + z;

    const CtVolume out = resample(vol, {200, 150, 100});
    REQUIRE(out.dims() == Dims3{200, 150, 100});
    CHECK(out.spacing.x == doctest::Approx(1.6));
    CHECK(out.spacing.y == doctest::Approx(1.6));
    CHECK(out.spacing.z == doctest::Approx(3.0));
    // physical extent per axis unchanged
    CHECK(out.dims().x * out.spacing.x == doctest::Approx(400 * 0.8));
    CHECK(out.dims().z * out.spacing.z == doctest::Approx(200 * 1.5));
    // linear ramps are reproduced exactly by trilinear interpolation (interior)
    CHECK(out.voxels(100, 70, 50) ==
          doctest::Approx(((100 + 0.5) * 2.0 - 0.5) * 0.25 + ((50 + 0.5) * 2.0 - 0.5)).epsilon(1e-4));
}

TEST_CASE("resample to identical dims is the identity") {
    Rng rng(3);
    CtVolume vol = lqtest::make_volume({13, 9, 7});
    for (auto& v : vol.voxels.vec()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    const CtVolume out = resample(vol, vol.dims());
    CHECK(out.voxels.vec() == vol.voxels.vec());
}

TEST_CASE("mask resampling stays binary and maps constants to constants") {
    BinaryMask3D ones = lqtest::make_mask({11, 18, 5});
    for (auto& v : ones.voxels.vec()) v = 1;
    const BinaryMask3D up = resample(ones, {23, 31, 9});
    CHECK(up.foreground_count() == up.voxels.size());

    const BinaryMask3D r = resample(lqtest::random_mask({16, 12, 10}, 21), {9, 17, 13});
    for (auto v : r.voxels.vec()) CHECK(v <= 1);
}

TEST_CASE("resample_mask_to_original recovers a cuboid phantom") {
    const Dims3 full{96, 80, 64};
    CtVolume reference = lqtest::make_volume(full, 0.0f, {1.0, 1.25, 2.0});
    BinaryMask3D mask = lqtest::make_mask(full, reference.spacing);
    lqtest::fill_cuboid(mask, {20, 16, 12}, {75, 63, 51});

    const BinaryMask3D down = resample(mask, {48, 40, 32});
    const BinaryMask3D back = resample_mask_to_original(down, reference);
    REQUIRE(back.dims() == full);
    CHECK(lqtest::dice_oracle(back, mask) >= 0.95);
    CHECK(back.spacing.x == doctest::Approx(reference.spacing.x));

    SUBCASE("empty and full masks are fixed points") {
        BinaryMask3D empty = lqtest::make_mask({20, 20, 20});
        CHECK(resample_mask_to_original(resample(empty, {9, 9, 9}), reference).foreground_count() == 0);

        BinaryMask3D full_mask = lqtest::make_mask({20, 20, 20});
        for (auto& v : full_mask.voxels.vec()) v = 1;
        const BinaryMask3D fb = resample_mask_to_original(resample(full_mask, {9, 9, 9}), reference);
        CHECK(fb.foreground_count() == fb.voxels.size());
    }
}

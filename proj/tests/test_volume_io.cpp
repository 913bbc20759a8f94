#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "lungquant/errors.hpp"
#include "lungquant/volume_io.hpp"
#include "test_support.hpp"

using namespace lungquant;
using lqtest::TempDir;

TEST_CASE("volume round trip preserves dims, spacing and values") {
    TempDir tmp("vio_rt");
    CtVolume vol = lqtest::make_volume({200, 150, 100});
    Rng rng(7);
    for (auto& v : vol.voxels.vec()) v = static_cast<float>(rng.uniform(-1000.0, 1000.0));
    vol.spacing = {0.7, 0.7, 8.0};
    vol.origin = {-120.0, 30.5, -44.25};

    for (const char* name : {"a.nii", "a.nii.gz"}) {
        io::save_volume(vol, tmp.file(name));
        const CtVolume back = io::load_volume(tmp.file(name));
        REQUIRE(back.dims() == vol.dims());
        CHECK(back.spacing.x == doctest::Approx(0.7).epsilon(1e-6));
        CHECK(back.spacing.y == doctest::Approx(0.7).epsilon(1e-6));
        CHECK(back.spacing.z == doctest::Approx(8.0).epsilon(1e-6));
        double max_err = 0.0;
        for (std::size_t i = 0; i < vol.voxels.size(); ++i)
            max_err = std::max(max_err, std::fabs(double(back.voxels[i]) - vol.voxels[i]));
        CHECK(max_err <= 1e-6);
    }
}

TEST_CASE("mask round trip is bit exact") {
    TempDir tmp("vio_mask");

    SUBCASE("all zeros") {
        BinaryMask3D m = lqtest::make_mask({20, 15, 10});
        io::save_mask(m, tmp.file("z.nii.gz"));
        const BinaryMask3D back = io::load_mask(tmp.file("z.nii.gz"));
        CHECK(back.foreground_count() == 0);
        CHECK(back.dims() == m.dims());
    }

    SUBCASE("exactly 1234 foreground voxels survive the round trip") {
        BinaryMask3D m = lqtest::make_mask({20, 16, 12});
        // place 1234 voxels at deterministically shuffled positions
        std::vector<std::size_t> idx(m.voxels.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        Rng rng(99);
        for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.uniform_index(i)]);
        for (int i = 0; i < 1234; ++i) m.voxels[idx[i]] = 1;

        io::save_mask(m, tmp.file("m.nii"));
        const BinaryMask3D back = io::load_mask(tmp.file("m.nii"));
        std::size_t count = 0; // independent count
        for (int z = 0; z < back.dims().z; ++z)
            for (int y = 0; y < back.dims().y; ++y)
                for (int x = 0; x < back.dims().x; ++x) count += back.voxels(x, y, z);
        CHECK(count == 1234);
        CHECK(back.voxels.vec() == m.voxels.vec());
    }

    SUBCASE("random masks are bit exact") {
        for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
            const BinaryMask3D m = lqtest::random_mask({17, 13, 9}, seed);
            io::save_mask(m, tmp.file("r.nii.gz"));
            CHECK(io::load_mask(tmp.file("r.nii.gz")).voxels.vec() == m.voxels.vec());
        }
    }
}

TEST_CASE("8-bit intensity data is rejected") {
    TempDir tmp("vio_8bit");
    BinaryMask3D m = lqtest::make_mask({8, 8, 8});
    m.voxels(1, 1, 1) = 1;
    io::save_mask(m, tmp.file("mask8.nii")); // uint8 container
    CHECK_THROWS_AS(io::load_volume(tmp.file("mask8.nii")), UnsupportedInputError);
    CHECK_NOTHROW(io::load_mask(tmp.file("mask8.nii")));
}

TEST_CASE("malformed files raise structured parse errors") {
    TempDir tmp("vio_bad");

    SUBCASE("not a NIfTI header") {
        std::ofstream f(tmp.file("junk.nii"), std::ios::binary);
        for (int i = 0; i < 1000; ++i) f.put(char(i & 0xff));
        f.close();
        CHECK_THROWS_AS(io::load_volume(tmp.file("junk.nii")), ParseError);
    }

    SUBCASE("truncated data section") {
        lqtest::RawNifti raw;
        raw.dim[0] = 3;
        raw.dim[1] = 10;
        raw.dim[2] = 10;
        raw.dim[3] = 10;
        raw.data.assign(10 * 10 * 10 * 4 / 2, 0); // half the voxels
        raw.write(tmp.file("trunc.nii"));
        CHECK_THROWS_AS(io::load_volume(tmp.file("trunc.nii")), ParseError);
    }

    SUBCASE("missing file") {
        CHECK_THROWS_AS(io::load_volume(tmp.file("nope.nii")), ParseError);
    }
}

TEST_CASE("foreign orientations are reoriented to the canonical axes") {
    TempDir tmp("vio_orient");
    // file axes (i,j,k): world x = 2k, world y = 1.5i, world z = -3j + 6
    const int ni = 4, nj = 3, nk = 5;
    lqtest::RawNifti raw;
    raw.dim[0] = 3;
    raw.dim[1] = ni;
    raw.dim[2] = nj;
    raw.dim[3] = nk;
    raw.pixdim[1] = 1.5f;
    raw.pixdim[2] = 3.0f;
    raw.pixdim[3] = 2.0f;
    float srow[3][4] = {{0, 0, 2, 0}, {1.5f, 0, 0, 0}, {0, -3, 0, 6}};
    std::memcpy(raw.srow, srow, sizeof(srow));
    raw.data.resize(static_cast<std::size_t>(ni) * nj * nk * 4);
    for (int k = 0; k < nk; ++k)
        for (int j = 0; j < nj; ++j)
            for (int i = 0; i < ni; ++i) {
                const float v = static_cast<float>(i + 10 * j + 100 * k);
                std::memcpy(raw.data.data() + 4 * (i + ni * (j + static_cast<std::size_t>(nj) * k)),
                            &v, 4);
            }
    raw.write(tmp.file("orient.nii"));

    const CtVolume vol = io::load_volume(tmp.file("orient.nii"));
    REQUIRE(vol.dims() == Dims3{nk, ni, nj});
    CHECK(vol.spacing.x == doctest::Approx(2.0));
    CHECK(vol.spacing.y == doctest::Approx(1.5));
    CHECK(vol.spacing.z == doctest::Approx(3.0));
    // canonical (x,y,z) reads file (i=y, j=nj-1-z, k=x)
    for (int z = 0; z < nj; ++z)
        for (int y = 0; y < ni; ++y)
            for (int x = 0; x < nk; ++x)
                CHECK(vol.voxels(x, y, z) == doctest::Approx(y + 10 * (nj - 1 - z) + 100 * x));
    // origin is the world position of the new (0,0,0) corner
    CHECK(vol.origin.x == doctest::Approx(0.0));
    CHECK(vol.origin.y == doctest::Approx(0.0));
    CHECK(vol.origin.z == doctest::Approx(0.0));
}

TEST_CASE("integer volumes honor scale and intercept") {
    TempDir tmp("vio_scl");
    lqtest::RawNifti raw;
    raw.dim[1] = 3;
    raw.dim[2] = 2;
    raw.dim[3] = 2;
    raw.datatype = 4; // int16
    raw.bitpix = 16;
    raw.scl_slope = 2.0f;
    raw.scl_inter = -1000.0f;
    const std::int16_t vals[12] = {0, 100, 200, 300, 400, 500, 600, 700, 800, 900, 1000, 1100};
    raw.data.resize(sizeof(vals));
    std::memcpy(raw.data.data(), vals, sizeof(vals));
    raw.write(tmp.file("i16.nii"));

    const CtVolume vol = io::load_volume(tmp.file("i16.nii"));
    CHECK(vol.voxels(0, 0, 0) == doctest::Approx(-1000.0));
    CHECK(vol.voxels(1, 0, 0) == doctest::Approx(-800.0));
    CHECK(vol.voxels(2, 1, 1) == doctest::Approx(1200.0));
}

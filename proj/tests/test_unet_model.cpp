#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <functional>
#include <numeric>

#include "lungquant/nn/layers.hpp"
#include "lungquant/unet.hpp"
#include "test_support.hpp"

using namespace lungquant;
using namespace lungquant::unet;
using nn::Tensor;

namespace {

double rel_err(double a, double b) {
    const double denom = std::max(std::fabs(a) + std::fabs(b), 1e-8);
    return std::fabs(a - b) / denom;
}

// central finite difference with the step measured from the stored floats
double fd_grad(Grid3<float>& p, std::size_t i, const std::function<double(const Grid3<float>&)>& f,
               float h = 1e-3f) {
    const float orig = p[i];
    p[i] = orig + h;
    const double lp = f(p);
    const double hp = p[i];
    p[i] = orig - h;
    const double lm = f(p);
    const double hm = p[i];
    p[i] = orig;
    return (lp - lm) / (hp - hm);
}

Grid3<float> random_field(Dims3 d, std::uint64_t seed, double lo = 0.05, double hi = 0.95) {
    Grid3<float> g(d);
    Rng rng(seed);
    for (auto& v : g.vec()) v = static_cast<float>(rng.uniform(lo, hi));
    return g;
}

Tensor random_tensor(int c, int z, int y, int x, std::uint64_t seed, double lo = -1.0,
                     double hi = 1.0) {
    Tensor t(c, z, y, x);
    Rng rng(seed);
    for (auto& v : t.v) v = static_cast<float>(rng.uniform(lo, hi));
    return t;
}

// naive direct 3D convolution used as the forward oracle
Tensor conv_oracle(const Tensor& in, const std::vector<float>& w, const std::vector<float>& b,
                   int cout, int k, int stride, int pad) {
    const int oz = (in.z + 2 * pad - k) / stride + 1;
    const int oy = (in.y + 2 * pad - k) / stride + 1;
    const int ox = (in.x + 2 * pad - k) / stride + 1;
    Tensor out(cout, oz, oy, ox);
    for (int co = 0; co < cout; ++co)
        for (int z = 0; z < oz; ++z)
            for (int y = 0; y < oy; ++y)
                for (int x = 0; x < ox; ++x) {
                    double acc = b[co];
                    for (int ci = 0; ci < in.c; ++ci)
                        for (int kz = 0; kz < k; ++kz)
                            for (int ky = 0; ky < k; ++ky)
                                for (int kx = 0; kx < k; ++kx) {
                                    const int iz = z * stride + kz - pad;
                                    const int iy = y * stride + ky - pad;
                                    const int ix = x * stride + kx - pad;
                                    if (iz < 0 || iz >= in.z || iy < 0 || iy >= in.y || ix < 0 ||
                                        ix >= in.x)
                                        continue;
                                    acc += w[(((static_cast<std::size_t>(co) * in.c + ci) * k + kz) *
                                                  k + ky) * k + kx] *
                                           in.at(ci, iz, iy, ix);
                                }
                    out.at(co, z, y, x) = static_cast<float>(acc);
                }
    return out;
}

} // namespace

// ---------------------------------------------------------------------------
// dice_metric

TEST_CASE("dice_metric basics") {
    BinaryMask3D a = lqtest::make_mask({4, 4, 4});
    BinaryMask3D b = lqtest::make_mask({4, 4, 4});

    SUBCASE("identical nonempty masks give 1") {
        lqtest::fill_cuboid(a, {0, 0, 0}, {1, 1, 1});
        CHECK(dice_metric(a, a) == doctest::Approx(1.0));
    }
    SUBCASE("disjoint nonempty masks give 0") {
        a.voxels(0, 0, 0) = 1;
        b.voxels(3, 3, 3) = 1;
        CHECK(dice_metric(a, b) == doctest::Approx(0.0));
    }
    SUBCASE("|true|=4, |pred|=4, overlap 2 gives 0.5") {
        for (int i = 0; i < 4; ++i) a.voxels(i, 0, 0) = 1;
        b.voxels(2, 0, 0) = 1;
        b.voxels(3, 0, 0) = 1;
        b.voxels(0, 1, 0) = 1;
        b.voxels(1, 1, 0) = 1;
        REQUIRE(a.foreground_count() == 4);
        REQUIRE(b.foreground_count() == 4);
        CHECK(dice_metric(a, b) == doctest::Approx(0.5));
    }
    SUBCASE("both empty is defined as 1") { CHECK(dice_metric(a, b) == doctest::Approx(1.0)); }
    SUBCASE("dims mismatch is an error") {
        const BinaryMask3D c = lqtest::make_mask({4, 4, 5});
        CHECK_THROWS_AS(dice_metric(a, c), Error);
    }
}

TEST_CASE("dice_metric equals the brute-force oracle and is symmetric") {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const BinaryMask3D a = lqtest::random_mask({8, 8, 8}, seed * 2 + 1, 0.3);
        const BinaryMask3D b = lqtest::random_mask({8, 8, 8}, seed * 2 + 2, 0.3);
        const double d = dice_metric(a, b);
        CHECK(std::fabs(d - lqtest::dice_oracle(a, b)) <= 1e-12);
        CHECK(d == dice_metric(b, a));
    }
}

// ---------------------------------------------------------------------------
// losses

TEST_CASE("dice_loss closed-form cases") {
    const Dims3 d{4, 4, 4};
    BinaryMask3D m = lqtest::make_mask(d);
    lqtest::fill_cuboid(m, {0, 0, 0}, {3, 3, 1}); // half full

    SUBCASE("hard match gives 0") {
        Grid3<float> p(d);
        for (std::size_t i = 0; i < p.size(); ++i) p[i] = m.voxels[i];
        CHECK(dice_loss(p, m) == doctest::Approx(0.0));
    }
    SUBCASE("all-zero prediction with nonempty mask gives 1") {
        const Grid3<float> p(d, 0.0f);
        CHECK(dice_loss(p, m) == doctest::Approx(1.0));
    }
    SUBCASE("uniform 0.5 on a half-full mask gives 0.5") {
        const Grid3<float> p(d, 0.5f);
        CHECK(dice_loss(p, m) == doctest::Approx(0.5));
    }
    SUBCASE("both empty gives 0") {
        const Grid3<float> p(d, 0.0f);
        const BinaryMask3D empty = lqtest::make_mask(d);
        CHECK(dice_loss(p, empty) == doctest::Approx(0.0));
    }
}

TEST_CASE("weighted_cross_entropy closed-form cases") {
    SUBCASE("perfect prediction gives 0") {
        const Dims3 d{3, 3, 3};
        BinaryMask3D m = lqtest::make_mask(d);
        m.voxels(1, 1, 1) = 1;
        Grid3<float> p(d, 0.0f);
        p(1, 1, 1) = 1.0f;
        ClassWeights w;
        w.w_background = 0.5005;
        w.w_foreground = 500.5;
        CHECK(weighted_cross_entropy(p, m, w) == doctest::Approx(0.0).epsilon(1e-9));
    }
    SUBCASE("single foreground voxel at p = e^-1 with w_fg = 500 contributes 500") {
        const Dims3 d{1, 1, 1};
        BinaryMask3D m = lqtest::make_mask(d);
        m.voxels(0, 0, 0) = 1;
        Grid3<float> p(d, static_cast<float>(std::exp(-1.0)));
        ClassWeights w;
        w.w_background = 0.5005;
        w.w_foreground = 500.0;
        CHECK(weighted_cross_entropy(p, m, w) == doctest::Approx(500.0).epsilon(1e-5));
    }
    SUBCASE("weights derived from f = (999000, 1000)") {
        BinaryMask3D m1 = lqtest::make_mask({100, 100, 100});
        for (int i = 0; i < 1000; ++i) m1.voxels[static_cast<std::size_t>(i) * 997] = 1;
        REQUIRE(m1.foreground_count() == 1000);
        const ClassWeights w = compute_class_weights({m1});
        CHECK(w.f_foreground == doctest::Approx(1000.0));
        CHECK(w.f_background == doctest::Approx(999000.0));
        CHECK(w.w0 == doctest::Approx(500000.0));
        CHECK(w.w_foreground == doctest::Approx(500.0));
        CHECK(w.w_background == doctest::Approx(500000.0 / 999000.0));
    }
}

TEST_CASE("compute_class_weights worked example and edge cases") {
    SUBCASE("foreground counts 100 and 300 in 10x10x10 grids") {
        BinaryMask3D a = lqtest::make_mask({10, 10, 10});
        BinaryMask3D b = lqtest::make_mask({10, 10, 10});
        for (int i = 0; i < 100; ++i) a.voxels[(i * 7) % 1000] = 1;
        for (int i = 0; i < 300; ++i) b.voxels[(i * 3) % 1000] = 1;
        REQUIRE(a.foreground_count() == 100);
        REQUIRE(b.foreground_count() == 300);
        const ClassWeights w = compute_class_weights({a, b});
        CHECK(w.f_foreground == doctest::Approx(200.0));
        CHECK(w.f_background == doctest::Approx(800.0));
        CHECK(w.w0 == doctest::Approx(500.0));
        CHECK(w.w_background == doctest::Approx(0.625));
        CHECK(w.w_foreground == doctest::Approx(2.5));
    }
    SUBCASE("balanced classes give unit weights") {
        BinaryMask3D a = lqtest::make_mask({10, 10, 10});
        lqtest::fill_cuboid(a, {0, 0, 0}, {9, 9, 4});
        REQUIRE(a.foreground_count() == 500);
        const ClassWeights w = compute_class_weights({a});
        CHECK(w.w_background == doctest::Approx(1.0));
        CHECK(w.w_foreground == doctest::Approx(1.0));
    }
    SUBCASE("rarer foreground earns a larger weight") {
        BinaryMask3D big = lqtest::make_mask({10, 10, 10});
        BinaryMask3D small = lqtest::make_mask({10, 10, 10});
        lqtest::fill_cuboid(big, {0, 0, 0}, {9, 9, 1});
        small.voxels(0, 0, 0) = 1;
        CHECK(compute_class_weights({small}).w_foreground >
              compute_class_weights({big}).w_foreground);
    }
    SUBCASE("all-background training set is an error") {
        CHECK_THROWS_AS(compute_class_weights({lqtest::make_mask({4, 4, 4})}), Error);
        CHECK_THROWS_AS(compute_class_weights(std::vector<BinaryMask3D>{}), Error);
    }
}

TEST_CASE("combined_loss is the sum of its parts and zero on perfect predictions") {
    const Dims3 d{4, 4, 4};
    const BinaryMask3D m = lqtest::random_mask(d, 31, 0.4);
    const Grid3<float> p = random_field(d, 32);
    ClassWeights w;
    w.w_background = 0.7;
    w.w_foreground = 3.1;
    CHECK(combined_loss(p, m, w) ==
          doctest::Approx(dice_loss(p, m) + weighted_cross_entropy(p, m, w)));

    Grid3<float> exact(d);
    for (std::size_t i = 0; i < exact.size(); ++i) exact[i] = m.voxels[i];
    CHECK(combined_loss(exact, m, w) == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("analytic loss gradients match central finite differences") {
    const Dims3 d{4, 4, 4};
    ClassWeights w;
    w.w_background = 0.5005;
    w.w_foreground = 42.0;

    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        const BinaryMask3D m = lqtest::random_mask(d, seed * 100, 0.35);
        Grid3<float> p = random_field(d, seed * 100 + 1);

        struct NamedLoss {
            const char* name;
            std::function<double(const Grid3<float>&)> value;
            std::function<LossValueGrad(const Grid3<float>&)> grad;
        };
        const NamedLoss losses[] = {
            {"dice", [&](const Grid3<float>& q) { return dice_loss(q, m); },
             [&](const Grid3<float>& q) { return dice_loss_grad(q, m); }},
            {"wce", [&](const Grid3<float>& q) { return weighted_cross_entropy(q, m, w); },
             [&](const Grid3<float>& q) { return weighted_cross_entropy_grad(q, m, w); }},
            {"combined", [&](const Grid3<float>& q) { return combined_loss(q, m, w); },
             [&](const Grid3<float>& q) { return combined_loss_grad(q, m, w); }},
        };

        for (const auto& loss : losses) {
            CAPTURE(loss.name);
            const LossValueGrad lg = loss.grad(p);
            CHECK(lg.value == doctest::Approx(loss.value(p)));
            double worst = 0.0;
            for (std::size_t i = 0; i < p.size(); ++i) {
                const double fd = fd_grad(p, i, loss.value);
                worst = std::max(worst, rel_err(lg.grad[i], fd));
            }
            CHECK(worst < 1e-4);
        }
    }
}

// ---------------------------------------------------------------------------
// layers against oracles and finite differences

TEST_CASE("Conv3d forward matches the naive oracle") {
    Rng rng(5);
    for (const auto& [k, stride, pad] : std::vector<std::tuple<int, int, int>>{
             {3, 1, 1}, {2, 2, 0}, {1, 1, 0}}) {
        CAPTURE(k);
        nn::Conv3d conv(3, 4, k, stride);
        conv.init_he(rng);
        for (auto& bi : conv.b) bi = static_cast<float>(rng.uniform(-0.5, 0.5));
        const Tensor in = random_tensor(3, 6, 4, 8, 77 + k);
        const Tensor got = conv.forward(in, false);
        const Tensor want = conv_oracle(in, conv.w, conv.b, 4, k, stride, pad);
        REQUIRE(got.same_shape(want));
        for (std::size_t i = 0; i < got.size(); ++i)
            CHECK(got.v[i] == doctest::Approx(want.v[i]).epsilon(1e-4));
    }
}

namespace {

// scalar probe loss: dot(out, fixed random direction)
struct ProbeLoss {
    Tensor dir;
    double operator()(const Tensor& out) const {
        double s = 0.0;
        for (std::size_t i = 0; i < out.size(); ++i) s += double(out.v[i]) * dir.v[i];
        return s;
    }
};

template <typename Layer>
void check_layer_input_gradients(Layer& layer, Tensor in, std::uint64_t seed, double tol = 2e-2) {
    Tensor out = layer.forward(in, true);
    ProbeLoss probe{random_tensor(out.c, out.z, out.y, out.x, seed)};
    const Tensor gin = layer.backward(probe.dir);

    double worst = 0.0;
    Rng pick(seed + 1);
    for (int trial = 0; trial < 24; ++trial) {
        const std::size_t i = pick.uniform_index(in.size());
        const float orig = in.v[i];
        const float h = 1e-2f;
        in.v[i] = orig + h;
        const double lp = probe(layer.forward(in, false));
        const double hp = in.v[i];
        in.v[i] = orig - h;
        const double lm = probe(layer.forward(in, false));
        const double hm = in.v[i];
        in.v[i] = orig;
        worst = std::max(worst, rel_err(gin.v[i], (lp - lm) / (hp - hm)));
    }
    CHECK(worst < tol);
}

} // namespace

TEST_CASE("layer input gradients agree with finite differences") {
    Rng rng(6);
    SUBCASE("Conv3d k3 s1") {
        nn::Conv3d conv(2, 3, 3, 1);
        conv.init_he(rng);
        check_layer_input_gradients(conv, random_tensor(2, 5, 4, 6, 201), 301);
    }
    SUBCASE("Conv3d k2 s2") {
        nn::Conv3d conv(2, 3, 2, 2);
        conv.init_he(rng);
        check_layer_input_gradients(conv, random_tensor(2, 4, 4, 6, 202), 302);
    }
    SUBCASE("ConvTranspose3d") {
        nn::ConvTranspose3d deconv(3, 2);
        deconv.init_he(rng);
        check_layer_input_gradients(deconv, random_tensor(3, 3, 4, 2, 203), 303);
    }
    SUBCASE("InstanceNorm3d") {
        nn::InstanceNorm3d norm(3);
        Rng g(7);
        for (auto& v : norm.gamma) v = static_cast<float>(g.uniform(0.5, 1.5));
        for (auto& v : norm.beta) v = static_cast<float>(g.uniform(-0.2, 0.2));
        check_layer_input_gradients(norm, random_tensor(3, 4, 5, 6, 204), 304);
    }
}

TEST_CASE("Conv3d weight gradients agree with finite differences") {
    Rng rng(8);
    nn::Conv3d conv(2, 2, 3, 1);
    conv.init_he(rng);
    const Tensor in = random_tensor(2, 4, 4, 5, 401);
    Tensor out = conv.forward(in, true);
    ProbeLoss probe{random_tensor(out.c, out.z, out.y, out.x, 402)};
    conv.zero_grad();
    conv.backward(probe.dir);

    Rng pick(403);
    double worst = 0.0;
    for (int trial = 0; trial < 24; ++trial) {
        const std::size_t i = pick.uniform_index(conv.w.size());
        const float orig = conv.w[i];
        const float h = 1e-2f;
        conv.w[i] = orig + h;
        const double lp = probe(conv.forward(in, false));
        const double hp = conv.w[i];
        conv.w[i] = orig - h;
        const double lm = probe(conv.forward(in, false));
        const double hm = conv.w[i];
        conv.w[i] = orig;
        worst = std::max(worst, rel_err(conv.gw[i], (lp - lm) / (hp - hm)));
    }
    CHECK(worst < 2e-2);
}

TEST_CASE("softmax channels sum to one and backward matches finite differences") {
    Tensor logits = random_tensor(2, 3, 4, 5, 501, -3.0, 3.0);
    const Tensor probs = nn::softmax_channels(logits);
    for (std::size_t i = 0; i < probs.spatial(); ++i) {
        const double s = double(probs.chan(0)[i]) + probs.chan(1)[i];
        CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
    }

    ProbeLoss probe{random_tensor(2, 3, 4, 5, 502)};
    const Tensor gin = nn::softmax_backward(probs, probe.dir);
    Rng pick(503);
    double worst = 0.0;
    for (int trial = 0; trial < 24; ++trial) {
        const std::size_t i = pick.uniform_index(logits.size());
        const float orig = logits.v[i];
        const float h = 1e-2f;
        logits.v[i] = orig + h;
        const double lp = probe(nn::softmax_channels(logits));
        const double hp = logits.v[i];
        logits.v[i] = orig - h;
        const double lm = probe(nn::softmax_channels(logits));
        const double hm = logits.v[i];
        logits.v[i] = orig;
        worst = std::max(worst, rel_err(gin.v[i], (lp - lm) / (hp - hm)));
    }
    CHECK(worst < 2e-2);
}

// ---------------------------------------------------------------------------
// architecture

TEST_CASE("residual stages act as the identity when weights and biases are zero") {
    detail::ResidualStage stage(4, 3);
    // freshly constructed stages have zero conv weights and biases
    const Tensor in = random_tensor(4, 5, 6, 7, 601);
    const Tensor out = stage.forward(in, false);
    REQUIRE(out.same_shape(in));
    CHECK(out.v == in.v);
}

TEST_CASE("forward output spatial dims equal input dims with softmax over classes") {
    struct Case {
        int depth, base;
        Dims3 dims;
    };
    // the full-size grid is checked with a narrow net to keep runtime sane
    const Case cases[] = {{2, 4, {16, 16, 16}},
                          {3, 8, {48, 36, 24}},
                          {6, 8, {64, 48, 32}},
                          {6, 2, {200, 150, 100}}};
    for (const auto& c : cases) {
        CAPTURE(c.depth);
        UNetModel model(toy_config(c.dims, c.depth, c.base), 99);
        const Tensor in = random_tensor(1, c.dims.z, c.dims.y, c.dims.x, 602, 0.0, 1.0);
        const Tensor probs = model.forward(in, false);
        REQUIRE(probs.c == 2);
        REQUIRE(probs.x == c.dims.x);
        REQUIRE(probs.y == c.dims.y);
        REQUIRE(probs.z == c.dims.z);
        float min_p = 1.0f;
        double worst_sum = 0.0;
        for (std::size_t i = 0; i < probs.spatial(); ++i) {
            min_p = std::min({min_p, probs.chan(0)[i], probs.chan(1)[i]});
            worst_sum = std::max(worst_sum,
                                 std::fabs(double(probs.chan(0)[i]) + probs.chan(1)[i] - 1.0));
        }
        CHECK(min_p >= 0.0f);
        CHECK(worst_sum <= 1e-5);
    }
}

TEST_CASE("forward is deterministic and validates its input") {
    UNetModel model(toy_config({16, 16, 16}, 2, 4), 7);
    const Tensor in = random_tensor(1, 16, 16, 16, 603, 0.0, 1.0);
    const Tensor a = model.forward(in, false);
    const Tensor b = model.forward(in, false);
    CHECK(a.v == b.v);

    const Tensor wrong = random_tensor(1, 8, 16, 16, 604, 0.0, 1.0);
    CHECK_THROWS_AS(model.forward(wrong, false), Error);
}

TEST_CASE("invalid configurations are construction errors") {
    UNetConfig cfg;
    cfg.depth = 1;
    CHECK_THROWS_AS(UNetModel{cfg}, Error);
    cfg = UNetConfig{};
    cfg.base_channels = 0;
    CHECK_THROWS_AS(UNetModel{cfg}, Error);
    cfg = UNetConfig{};
    cfg.input_dims = {0, 10, 10};
    CHECK_THROWS_AS(UNetModel{cfg}, Error);
}

TEST_CASE("model gradients agree with a directional finite difference through the whole graph") {
    // guards the graph wiring (skips, residual adds, concat splits, pad/crop)
    UNetModel model(toy_config({8, 8, 8}, 2, 2), 11);
    const Tensor in = random_tensor(1, 8, 8, 8, 606, 0.0, 1.0);
    const BinaryMask3D target = lqtest::random_mask({8, 8, 8}, 607, 0.4);

    auto loss_value = [&]() {
        Tensor probs = model.forward(in, false);
        return dice_loss(nn::grid_from_channel(probs, 1), target);
    };

    model.zero_grad();
    Tensor probs = model.forward(in, true);
    const LossValueGrad lg = dice_loss_grad(nn::grid_from_channel(probs, 1), target);
    Tensor gprobs(probs.c, probs.z, probs.y, probs.x);
    std::copy(lg.grad.vec().begin(), lg.grad.vec().end(), gprobs.chan(1));
    model.backward(gprobs);

    auto params = model.params();
    for (std::uint64_t dir_seed : {608ULL, 708ULL, 808ULL}) {
        CAPTURE(dir_seed);
        Rng dir_rng(dir_seed);
        std::vector<std::vector<float>> direction;
        double analytic = 0.0;
        for (const auto& pv : params) {
            auto& d = direction.emplace_back(pv.n);
            for (std::size_t i = 0; i < pv.n; ++i) {
                d[i] = static_cast<float>(dir_rng.uniform(-1.0, 1.0));
                analytic += static_cast<double>(pv.grad[i]) * d[i];
            }
        }
        auto shift = [&](double h) {
            for (std::size_t p = 0; p < params.size(); ++p)
                for (std::size_t i = 0; i < params[p].n; ++i)
                    params[p].value[i] += static_cast<float>(h * direction[p][i]);
        };
        const double h = 2.5e-4; // the loss surface is strongly curved; keep truncation small
        shift(h);
        const double lp = loss_value();
        shift(-2.0 * h);
        const double lm = loss_value();
        shift(h);
        const double fd = (lp - lm) / (2.0 * h);
        CHECK(rel_err(analytic, fd) < 2e-2);
    }
}

TEST_CASE("checkpoints round trip weights, config and window") {
    lqtest::TempDir tmp("unet_ckpt");
    const UNetConfig cfg = toy_config({16, 12, 8}, 2, 4);
    UNetModel model(cfg, 123);

    CheckpointInfo info;
    info.config = cfg;
    info.window = {-1000.0, 300.0};
    info.metrics["best_epoch"] = 17;
    info.notes["loss"] = "dice";
    const std::string path = tmp.file("toy.ckpt");
    save_checkpoint(model, info, path);

    auto loaded = load_checkpoint(path);
    CHECK(loaded.info.window.lo == doctest::Approx(-1000.0));
    CHECK(loaded.info.window.hi == doctest::Approx(300.0));
    CHECK(loaded.info.config.depth == 2);
    CHECK(loaded.info.metrics.at("best_epoch") == doctest::Approx(17));
    CHECK(loaded.info.notes.at("loss") == "dice");

    const Tensor in = random_tensor(1, 8, 12, 16, 605, 0.0, 1.0);
    const Tensor a = model.forward(in, false);
    const Tensor b = loaded.model->forward(in, false);
    REQUIRE(a.same_shape(b));
    CHECK(a.v == b.v);

    SUBCASE("sidecar/blob architecture mismatch is rejected") {
        auto bad_info = info;
        bad_info.config.depth = 3;
        UNetModel other(bad_info.config, 1);
        save_checkpoint(other, bad_info, tmp.file("other.ckpt"));
        std::filesystem::copy_file(tmp.file("other.ckpt.json"), path + ".json",
                                   std::filesystem::copy_options::overwrite_existing);
        CHECK_THROWS_AS(load_checkpoint(path), ParseError);
    }
}

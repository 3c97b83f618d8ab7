#include <cmath>

#include <doctest.h>

#include "cmems/perturbation.hpp"
#include "cmems/segnet.hpp"
#include "helpers.hpp"

using namespace cmems;

namespace {

// Weights, running statistics and input are closed-form so an independent
// PyTorch build of the same UNet can reproduce them.
NetworkParams formula_network(int base, int classes) {
    UNetConfig cfg = UNetConfig::with_base_width(classes, base);
    cfg.dropout = {0, 0, 0, 0, 0};
    NetworkParams net = init_network(0, cfg);
    for (std::size_t i = 0; i < net.weights.size(); ++i)
        net.weights[i] = static_cast<real>(0.3 * std::sin(0.731 * double(i) + 0.2));
    // Stats are laid out per batch-norm as [mean(C), var(C)].
    std::size_t j = 0;
    while (j < net.running_stats.size()) {
        bool found = false;
        auto fill = [&](const BatchNormSpec& bn) {
            if (bn.mean != j) return;
            for (int c = 0; c < bn.channels; ++c) {
                net.running_stats[bn.mean + c] = static_cast<real>(0.05 * std::sin(1.3 * double(bn.mean + c)));
                const double cs = std::cos(0.7 * double(bn.var + c));
                net.running_stats[bn.var + c] = static_cast<real>(1 + 0.5 * cs * cs);
            }
            j += 2 * bn.channels;
            found = true;
        };
        for (const auto& b : net.layout.encoder) fill(b.bn1), fill(b.bn2);
        for (const auto& d : net.layout.decoder) fill(d.block.bn1), fill(d.block.bn2);
        REQUIRE(found);
    }
    return net;
}

Tensor formula_input() {
    Tensor x(2, 1, 32, 32);
    for (int n = 0; n < 2; ++n)
        for (int y = 0; y < 32; ++y)
            for (int xx = 0; xx < 32; ++xx)
                x.at(n, 0, y, xx) = static_cast<real>(0.5 * std::sin(0.1 * (n + 1) * y + 0.23 * xx) + 0.5);
    return x;
}

double sum(const Tensor& t) {
    double s = 0;
    for (real v : t.span()) s += v;
    return s;
}

double sumsq(const Tensor& t) {
    double s = 0;
    for (real v : t.span()) s += double(v) * v;
    return s;
}

struct Probe {
    int n, c, y, x;
};
constexpr Probe kProbes[] = {{0, 0, 0, 0}, {1, 2, 31, 31}, {0, 1, 17, 5}, {1, 0, 8, 22}};

}  // namespace

TEST_CASE("parameter and statistic counts of the reference UNet") {
    const NetworkParams net = init_network(0, 4);
    CHECK(net.layout.num_weights == 1813764);
    CHECK(net.layout.num_stats == 2944);
    CHECK(net.weights.size() == net.layout.num_weights);

    std::size_t covered = 0;
    for (const auto& t : net.layout.tensors) {
        CHECK(t.offset == covered);
        covered += t.size;
    }
    CHECK(covered == net.layout.num_weights);
}

TEST_CASE("encoder pyramid shapes at 224x224") {
    NetworkParams net = init_network(1, 9);
    const Tensor x(1, 1, 224, 224, real(0.5));
    const FeaturePyramid p = encode_eval(net, x);
    const Shape4 expected[] = {{1, 16, 224, 224}, {1, 32, 112, 112}, {1, 64, 56, 56}, {1, 128, 28, 28},
                               {1, 256, 14, 14}};
    for (int l = 0; l < kPyramidLevels; ++l) CHECK(p.levels[l].shape() == expected[l]);
}

TEST_CASE("pyramid and logits shapes for other input sizes") {
    NetworkParams net = init_network(2, UNetConfig::with_base_width(3, 4));
    for (int h : {32, 64, 96, 224})
        for (int w : {32, 64, 96, 224}) {
            CAPTURE(h);
            CAPTURE(w);
            const Tensor x(2, 1, h, w, real(0.1));
            const FeaturePyramid p = encode_eval(net, x);
            for (int l = 0; l < kPyramidLevels; ++l) {
                CHECK(p.levels[l].shape() == Shape4{2, 4 << l, h >> l, w >> l});
            }
            CHECK(decode_eval(net, p).shape() == Shape4{2, 3, h, w});
        }
}

TEST_CASE("input sizes that are not multiples of 16 are rejected") {
    NetworkParams net = init_network(0, UNetConfig::with_base_width(2, 2));
    CHECK_THROWS_AS(forward_eval(net, Tensor(1, 1, 40, 32)), ShapeError);
    CHECK_THROWS_AS(forward_eval(net, Tensor(1, 2, 32, 32)), ShapeError);
}

TEST_CASE("forward matches an independent PyTorch build") {
    // Frozen from torch (float64): Conv1x1 -> bilinear x2 (align_corners=False)
    // -> cat([skip, up]) per decoder stage, BN momentum 0.1, LeakyReLU 0.01.
    NetworkParams net = formula_network(2, 3);
    REQUIRE(net.layout.num_weights == 28913);
    const Tensor x = formula_input();

    SUBCASE("eval mode") {
        const Tensor y = forward_eval(net, x);
        const double vals[] = {0.011678638222, -0.430823301202, -0.158846895034, 0.0483524651677};
        for (int i = 0; i < 4; ++i) {
            const auto& p = kProbes[i];
            CHECK(y.at(p.n, p.c, p.y, p.x) == doctest::Approx(vals[i]).epsilon(1e-9));
        }
        CHECK(sum(y) == doctest::Approx(-831.0177985).epsilon(1e-9));
        CHECK(sumsq(y) == doctest::Approx(230.870126738).epsilon(1e-9));
    }

    SUBCASE("train mode with running-stat update") {
        PassOptions opts;
        opts.training = true;
        const Tensor y = forward(net, x, opts);
        const double vals[] = {0.0722738269319, -1.2211139187, -0.162698729641, 0.0442960241525};
        for (int i = 0; i < 4; ++i) {
            const auto& p = kProbes[i];
            CHECK(y.at(p.n, p.c, p.y, p.x) == doctest::Approx(vals[i]).epsilon(1e-9));
        }
        CHECK(sum(y) == doctest::Approx(-887.962597368).epsilon(1e-9));
        CHECK(sumsq(y) == doctest::Approx(919.686900865).epsilon(1e-9));

        const auto& bn = net.layout.encoder[0].bn1;
        CHECK(net.running_stats[bn.mean] == doctest::Approx(0.0212993371743).epsilon(1e-9));
        CHECK(net.running_stats[bn.mean + 1] == doctest::Approx(0.0747149414473).epsilon(1e-9));
        CHECK(net.running_stats[bn.var] == doctest::Approx(0.914203128084).epsilon(1e-9));
        CHECK(net.running_stats[bn.var + 1] == doctest::Approx(1.01584806503).epsilon(1e-9));
        const auto& last = net.layout.decoder[3].block.bn2;
        CHECK(net.running_stats[last.var] == doctest::Approx(0.919924920883).epsilon(1e-9));
        CHECK(net.running_stats[last.var + 1] == doctest::Approx(1.16546209259).epsilon(1e-9));
    }

    SUBCASE("train mode without stat update leaves running stats alone") {
        const auto before = net.running_stats;
        PassOptions opts;
        opts.training = true;
        opts.update_stats = false;
        (void)forward(net, x, opts);
        CHECK(net.running_stats == before);
    }
}

TEST_CASE("decode equals forward and accepts a perturbed pyramid") {
    NetworkParams net = init_network(5, UNetConfig::with_base_width(4, 2));
    const Tensor x = testutil::random_tensor({2, 1, 32, 32}, 9);
    const FeaturePyramid p = encode_eval(net, x);
    CHECK(decode_eval(net, p) == forward_eval(net, x));

    Rng rng(3);
    const FeaturePyramid q = feature_perturb(p, rng, 0.5);
    const Tensor y = decode_eval(net, q);
    CHECK(y.shape() == Shape4{2, 4, 32, 32});
    CHECK_FALSE(y == forward_eval(net, x));

    FeaturePyramid bad = p;
    bad.levels[2] = Tensor(2, 3, 8, 8);
    CHECK_THROWS_AS(decode_eval(net, bad), ShapeError);
}

TEST_CASE("the two networks of a run start from different weights") {
    const NetworkParams a = init_network(7, 3, 1);
    const NetworkParams b = init_network(7, 3, 2);
    const NetworkParams a2 = init_network(7, 3, 1);
    CHECK(a.weights == a2.weights);
    CHECK_FALSE(a.weights == b.weights);
}

TEST_CASE("training dropout is driven by the supplied stream") {
    NetworkParams net = init_network(4, UNetConfig::with_base_width(3, 2));
    const Tensor x = testutil::random_tensor({1, 1, 32, 32}, 2);
    PassOptions opts;
    opts.training = true;
    opts.update_stats = false;
    Rng r1(11), r2(11), r3(12);
    opts.rng = &r1;
    const Tensor y1 = forward(net, x, opts);
    opts.rng = &r2;
    const Tensor y2 = forward(net, x, opts);
    opts.rng = &r3;
    const Tensor y3 = forward(net, x, opts);
    CHECK(y1 == y2);
    CHECK_FALSE(y1 == y3);
}

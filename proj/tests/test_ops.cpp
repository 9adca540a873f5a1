#include <doctest.h>

#include <random>

#include "helpers.hpp"
#include "mseg/ops.hpp"

using namespace mseg;
using testutil::distinct_tensor;
using testutil::gradcheck;
using testutil::project;
using testutil::random_tensor;

namespace {
constexpr double kTol = 1e-4;
}

TEST_CASE("conv 1x1 identity kernel reproduces the input") {
    std::mt19937 rng(1);
    GraphD g;
    TensorD in = random_tensor<double>({1, 1, 4, 5}, rng);
    int x = g.leaf(in);
    TensorD k({1, 1, 1, 1});
    k[0] = 1.0;
    int kn = g.leaf(k);
    int bn = g.leaf(TensorD({1}, 0.0));
    int y = conv_nd(g, x, kn, bn, {}, Padding::Same);
    REQUIRE(g.value(y).shape == in.shape);
    for (std::size_t i = 0; i < in.numel(); ++i) CHECK(g.value(y)[i] == doctest::Approx(in[i]));
}

TEST_CASE("3x3 all-ones kernel on constant 2, valid padding, gives 18 everywhere") {
    GraphD g;
    int x = g.leaf(TensorD({1, 1, 6, 6}, 2.0));
    int k = g.leaf(TensorD({1, 1, 3, 3}, 1.0));
    int b = g.leaf(TensorD({1}, 0.0));
    int y = conv_nd(g, x, k, b, {}, Padding::Valid);
    REQUIRE(g.value(y).shape == std::vector<std::size_t>{1, 1, 4, 4});
    for (double v : g.value(y).data) CHECK(v == doctest::Approx(18.0));
}

TEST_CASE("conv gradients match finite differences (2D and 3D, 20 instances each)") {
    std::mt19937 rng(2);
    for (int rep = 0; rep < 20; ++rep) {
        auto build2 = [](GraphD& g, const std::vector<int>& l) {
            int y = conv_nd(g, l[0], l[1], l[2], {}, Padding::Same);
            TensorD w(g.value(y).shape);
            for (std::size_t i = 0; i < w.numel(); ++i) w[i] = 0.3 + 0.01 * double(i % 17);
            return project(g, y, w);
        };
        CHECK(gradcheck({random_tensor<double>({1, 2, 4, 4}, rng),
                         random_tensor<double>({2, 2, 3, 3}, rng),
                         random_tensor<double>({2}, rng)},
                        build2) < kTol);
        auto build3 = [](GraphD& g, const std::vector<int>& l) {
            int y = conv_nd(g, l[0], l[1], l[2], {}, Padding::Same);
            TensorD w(g.value(y).shape);
            for (std::size_t i = 0; i < w.numel(); ++i) w[i] = 0.2 + 0.013 * double(i % 11);
            return project(g, y, w);
        };
        CHECK(gradcheck({random_tensor<double>({1, 2, 3, 4, 4}, rng),
                         random_tensor<double>({2, 2, 3, 3, 3}, rng),
                         random_tensor<double>({2}, rng)},
                        build3) < kTol);
    }
}

TEST_CASE("conv valid padding and stride gradients") {
    std::mt19937 rng(3);
    for (int rep = 0; rep < 20; ++rep) {
        auto build = [](GraphD& g, const std::vector<int>& l) {
            int y = conv_nd(g, l[0], l[1], l[2], {2, 2}, Padding::Valid);
            TensorD w(g.value(y).shape, 1.0);
            return project(g, y, w);
        };
        CHECK(gradcheck({random_tensor<double>({1, 1, 6, 6}, rng),
                         random_tensor<double>({2, 1, 3, 3}, rng),
                         random_tensor<double>({2}, rng)},
                        build) < kTol);
    }
}

TEST_CASE("conv channel mismatch names both shapes") {
    GraphD g;
    int x = g.leaf(TensorD({1, 2, 4, 4}, 0.0));
    int k = g.leaf(TensorD({1, 3, 3, 3}, 0.0));
    int b = g.leaf(TensorD({1}, 0.0));
    CHECK_THROWS_WITH_AS(conv_nd(g, x, k, b, {}, Padding::Same),
                         doctest::Contains("[1x2x4x4]"), std::invalid_argument);
}

TEST_CASE("conv is linear in its input (zero bias)") {
    std::mt19937 rng(4);
    TensorD x = random_tensor<double>({1, 2, 5, 5}, rng);
    TensorD y = random_tensor<double>({1, 2, 5, 5}, rng);
    TensorD k = random_tensor<double>({3, 2, 3, 3}, rng);
    const double a = 1.7, b = -0.6;
    TensorD mix(x.shape);
    for (std::size_t i = 0; i < x.numel(); ++i) mix[i] = a * x[i] + b * y[i];
    auto run = [&](const TensorD& in) {
        GraphD g;
        int r = conv_nd(g, g.leaf(in), g.leaf(k), g.leaf(TensorD({3}, 0.0)), {}, Padding::Same);
        return g.value(r);
    };
    TensorD rm = run(mix), rx = run(x), ry = run(y);
    for (std::size_t i = 0; i < rm.numel(); ++i)
        CHECK(std::abs(rm[i] - (a * rx[i] + b * ry[i])) < 1e-10);
}

TEST_CASE("maxpool forward: constant input and the forced [[1,2],[3,4]] case") {
    GraphD g;
    int c = maxpool_nd(g, g.leaf(TensorD({1, 1, 4, 4}, 5.0)), {2}, {2});
    for (double v : g.value(c).data) CHECK(v == 5.0);

    TensorD t({1, 1, 2, 2});
    t.data = {1, 2, 3, 4};
    int p = maxpool_nd(g, g.leaf(t), {2}, {2});
    REQUIRE(g.value(p).numel() == 1);
    CHECK(g.value(p)[0] == 4.0);
}

TEST_CASE("maxpool rejects a window larger than the extent") {
    GraphD g;
    int x = g.leaf(TensorD({1, 1, 2, 2}, 0.0));
    CHECK_THROWS_AS(maxpool_nd(g, x, {3}, {3}), std::invalid_argument);
}

TEST_CASE("maxpool backward routes to the first-occurrence argmax on ties") {
    GraphD g;
    TensorD t({1, 1, 2, 2}, 7.0);  // all tied
    TensorD sink(t.shape, 0.0);
    int x = g.leaf_param(t, &sink);
    int p = maxpool_nd(g, x, {2}, {2});
    g.backward(p);
    CHECK(sink[0] == 1.0);
    CHECK(sink[1] == 0.0);
    CHECK(sink[2] == 0.0);
    CHECK(sink[3] == 0.0);
}

TEST_CASE("maxpool gradients (tie-free inputs, 2D and 3D)") {
    std::mt19937 rng(5);
    for (int rep = 0; rep < 20; ++rep) {
        auto build2 = [](GraphD& g, const std::vector<int>& l) {
            int y = maxpool_nd(g, l[0], {2}, {2});
            TensorD w(g.value(y).shape);
            for (std::size_t i = 0; i < w.numel(); ++i) w[i] = 1.0 + 0.1 * double(i);
            return project(g, y, w);
        };
        CHECK(gradcheck({distinct_tensor<double>({1, 2, 4, 4}, rng)}, build2) < kTol);
        auto build3 = [](GraphD& g, const std::vector<int>& l) {
            int y = maxpool_nd(g, l[0], {2}, {2});
            TensorD w(g.value(y).shape);
            for (std::size_t i = 0; i < w.numel(); ++i) w[i] = 1.0 + 0.1 * double(i);
            return project(g, y, w);
        };
        CHECK(gradcheck({distinct_tensor<double>({1, 1, 4, 4, 4}, rng)}, build3) < kTol);
    }
}

TEST_CASE("upsample factor 1 is the identity; constants are preserved") {
    std::mt19937 rng(6);
    GraphD g;
    TensorD in = random_tensor<double>({1, 2, 3, 3}, rng);
    int u1 = upsample_linear_nd(g, g.leaf(in), 1);
    for (std::size_t i = 0; i < in.numel(); ++i) CHECK(g.value(u1)[i] == in[i]);

    int u3 = upsample_linear_nd(g, g.leaf(TensorD({1, 1, 2, 2, 2}, 4.5)), 3);
    REQUIRE(g.value(u3).shape == std::vector<std::size_t>{1, 1, 6, 6, 6});
    for (double v : g.value(u3).data) CHECK(v == doctest::Approx(4.5));
}

TEST_CASE("upsample gradients (2D and 3D, 20 instances)") {
    std::mt19937 rng(7);
    for (int rep = 0; rep < 20; ++rep) {
        auto build = [](GraphD& g, const std::vector<int>& l) {
            int y = upsample_linear_nd(g, l[0], 2);
            TensorD w(g.value(y).shape);
            for (std::size_t i = 0; i < w.numel(); ++i) w[i] = 0.5 + 0.02 * double(i % 23);
            return project(g, y, w);
        };
        CHECK(gradcheck({random_tensor<double>({1, 2, 3, 4}, rng)}, build) < kTol);
        CHECK(gradcheck({random_tensor<double>({1, 1, 2, 3, 3}, rng)}, build) < kTol);
    }
}

TEST_CASE("concat adds channel counts; single-input concat is the identity") {
    std::mt19937 rng(8);
    GraphD g;
    TensorD a = random_tensor<double>({1, 3, 4, 4}, rng);
    TensorD b = random_tensor<double>({1, 12, 4, 4}, rng);
    int c = concat_channels(g, {g.leaf(a), g.leaf(b)});
    CHECK(g.value(c).shape == std::vector<std::size_t>{1, 15, 4, 4});

    int one = concat_channels(g, {g.leaf(a)});
    for (std::size_t i = 0; i < a.numel(); ++i) CHECK(g.value(one)[i] == a[i]);
}

TEST_CASE("concat then slice is the identity on each input") {
    std::mt19937 rng(9);
    TensorD a = random_tensor<double>({2, 2, 3, 3}, rng);
    TensorD b = random_tensor<double>({2, 3, 3, 3}, rng);
    GraphD g;
    int c = concat_channels(g, {g.leaf(a), g.leaf(b)});
    int sa = slice_channels(g, c, 0, 2);
    int sb = slice_channels(g, c, 2, 3);
    for (std::size_t i = 0; i < a.numel(); ++i) CHECK(g.value(sa)[i] == a[i]);
    for (std::size_t i = 0; i < b.numel(); ++i) CHECK(g.value(sb)[i] == b[i]);
}

TEST_CASE("concat and slice gradients") {
    std::mt19937 rng(10);
    for (int rep = 0; rep < 20; ++rep) {
        auto build = [](GraphD& g, const std::vector<int>& l) {
            int c = concat_channels(g, {l[0], l[1]});
            int s = slice_channels(g, c, 1, 2);
            TensorD w(g.value(s).shape);
            for (std::size_t i = 0; i < w.numel(); ++i) w[i] = 1.0 + 0.07 * double(i);
            return project(g, s, w);
        };
        CHECK(gradcheck({random_tensor<double>({1, 2, 3, 3}, rng),
                         random_tensor<double>({1, 2, 3, 3}, rng)},
                        build) < kTol);
    }
}

TEST_CASE("batchnorm train mode normalizes per channel") {
    std::mt19937 rng(11);
    GraphD g;
    TensorD in = random_tensor<double>({4, 2, 5, 5}, rng, -3.0, 7.0);
    int gamma = g.leaf(TensorD({2}, 1.0));
    int beta = g.leaf(TensorD({2}, 0.0));
    int y = batchnorm(g, g.leaf(in), gamma, beta, BnMode::Train);
    const TensorD& out = g.value(y);
    const std::size_t sp = 25, N = 4, C = 2;
    for (std::size_t c = 0; c < C; ++c) {
        double mean = 0, var = 0;
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t i = 0; i < sp; ++i) mean += out.data[(n * C + c) * sp + i];
        mean /= double(N * sp);
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t i = 0; i < sp; ++i) {
                const double d = out.data[(n * C + c) * sp + i] - mean;
                var += d * d;
            }
        var /= double(N * sp);
        CHECK(std::abs(mean) < 1e-5);
        CHECK(std::abs(var - 1.0) < 1e-4);
    }
}

TEST_CASE("batchnorm infer mode with unit running stats is the identity") {
    std::mt19937 rng(12);
    TensorD in = random_tensor<double>({2, 2, 3, 3}, rng);
    TensorD rmean({2}, 0.0), rvar({2}, 1.0);
    GraphD g;
    int y = batchnorm(g, g.leaf(in), g.leaf(TensorD({2}, 1.0)), g.leaf(TensorD({2}, 0.0)),
                      BnMode::Infer, RunningStats<double>{&rmean, &rvar});
    for (std::size_t i = 0; i < in.numel(); ++i)
        CHECK(g.value(y)[i] == doctest::Approx(in[i]).epsilon(1e-4));
}

TEST_CASE("batchnorm gradients at 1e-3 tolerance") {
    std::mt19937 rng(13);
    for (int rep = 0; rep < 20; ++rep) {
        auto build = [](GraphD& g, const std::vector<int>& l) {
            int y = batchnorm(g, l[0], l[1], l[2], BnMode::Train);
            TensorD w(g.value(y).shape);
            for (std::size_t i = 0; i < w.numel(); ++i) w[i] = 0.4 + 0.03 * double(i % 13);
            return project(g, y, w);
        };
        CHECK(gradcheck({random_tensor<double>({3, 2, 3, 3}, rng, -2.0, 2.0),
                         random_tensor<double>({2}, rng, 0.5, 1.5),
                         random_tensor<double>({2}, rng)},
                        build) < 1e-3);
    }
}

TEST_CASE("softmax: uniform logits give 0.25 and huge logits do not overflow") {
    GraphD g;
    int u = softmax_channels(g, g.leaf(TensorD({1, 4, 2, 2}, 3.0)));
    for (double v : g.value(u).data) CHECK(v == doctest::Approx(0.25));

    TensorD big({1, 4, 1, 1});
    big.data = {1000.0, 0.0, 0.0, 0.0};
    int s = softmax_channels(g, g.leaf(big));
    CHECK(g.value(s)[0] == doctest::Approx(1.0));
    CHECK(g.value(s)[1] == doctest::Approx(0.0));
}

TEST_CASE("softmax channels sum to 1 for arbitrary finite logits") {
    std::mt19937 rng(14);
    GraphD g;
    TensorD in = random_tensor<double>({2, 4, 3, 3}, rng, -50.0, 50.0);
    int s = softmax_channels(g, g.leaf(in));
    const TensorD& p = g.value(s);
    for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t i = 0; i < 9; ++i) {
            double sum = 0;
            for (std::size_t c = 0; c < 4; ++c) sum += p.data[(n * 4 + c) * 9 + i];
            CHECK(std::abs(sum - 1.0) < 1e-6);
        }
}

TEST_CASE("softmax gradient composed with a log-loss") {
    std::mt19937 rng(15);
    for (int rep = 0; rep < 20; ++rep) {
        auto build = [](GraphD& g, const std::vector<int>& l) {
            int p = softmax_channels(g, l[0]);
            // -sum log p over a fixed class pattern, via the projection of log
            const TensorD& pv = g.value(p);
            NodeT<double> n;
            n.op = "neglog";
            n.inputs = {p};
            n.value = TensorD({1});
            double acc = 0;
            for (std::size_t i = 0; i < pv.numel(); i += 4) acc -= std::log(pv[i]);
            n.value[0] = acc;
            n.requires_grad = true;
            n.backward = [p](GraphD& gr, NodeT<double>& self) {
                const TensorD& q = gr.value(p);
                TensorD& dq = gr.grad(p);
                for (std::size_t i = 0; i < q.numel(); i += 4)
                    dq[i] += self.grad[0] * (-1.0 / q[i]);
            };
            return g.add(std::move(n));
        };
        CHECK(gradcheck({random_tensor<double>({1, 4, 2, 2}, rng)}, build) < kTol);
    }
}

TEST_CASE("relu clamps negatives, passes positives, and differentiates away from 0") {
    GraphD g;
    int neg = relu(g, g.leaf(TensorD({1, 1, 2, 2}, -3.0)));
    for (double v : g.value(neg).data) CHECK(v == 0.0);
    int pos = relu(g, g.leaf(TensorD({1, 1, 2, 2}, 3.0)));
    for (double v : g.value(pos).data) CHECK(v == 3.0);

    std::mt19937 rng(16);
    for (int rep = 0; rep < 20; ++rep) {
        TensorD in = random_tensor<double>({1, 2, 3, 3}, rng);
        for (double& v : in.data)
            if (std::abs(v) < 0.05) v = 0.1;  // keep clear of the kink
        auto build = [](GraphD& g, const std::vector<int>& l) {
            int y = relu(g, l[0]);
            TensorD w(g.value(y).shape, 1.0);
            return project(g, y, w);
        };
        CHECK(gradcheck({in}, build) < kTol);
    }
}

TEST_CASE("forward pass rejects non-finite outputs") {
    GraphD g;
    TensorD t({1, 1, 1, 1});
    t[0] = 1e308;
    int x = g.leaf(t);
    int k = g.leaf(TensorD({1, 1, 1, 1}, 1e308));
    int b = g.leaf(TensorD({1}, 0.0));
    CHECK_THROWS_AS(conv_nd(g, x, k, b, {}, Padding::Same), std::runtime_error);
}

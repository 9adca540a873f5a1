#include <doctest.h>

#include <random>

#include "helpers.hpp"
#include "mseg/loss.hpp"

using namespace mseg;
using testutil::random_tensor;

TEST_CASE("target weights validate at construction") {
    CHECK_NOTHROW(TargetWeights({0.4, 0.2, 0.2, 0.2}));
    CHECK_NOTHROW(TargetWeights({0.7, 0.1, 0.1, 0.1}));
    CHECK_THROWS_AS(TargetWeights({0.5, 0.2, 0.2, 0.2}), std::invalid_argument);
    CHECK_THROWS_AS(TargetWeights({1.2, -0.2}), std::invalid_argument);
    CHECK_THROWS_AS(TargetWeights({}), std::invalid_argument);
}

namespace {

LabelVolume labels_with_counts(const std::vector<std::size_t>& counts) {
    std::size_t total = 0;
    for (std::size_t c : counts) total += c;
    LabelVolume l({total, 1, 1});
    std::size_t i = 0;
    for (std::size_t c = 0; c < counts.size(); ++c)
        for (std::size_t k = 0; k < counts[c]; ++k) l[i++] = static_cast<std::uint8_t>(c);
    return l;
}

}  // namespace

TEST_CASE("voxel weights for counts (100,10,10,10) at 3D targets") {
    LabelVolume l = labels_with_counts({100, 10, 10, 10});
    TensorD w = compute_voxel_weights<double>(l, TargetWeights({0.4, 0.2, 0.2, 0.2}));
    for (std::size_t i = 0; i < l.numel(); ++i) {
        const double expect = l[i] == 0 ? 0.004 : 0.02;
        CHECK(w[i] == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("single-class batch renormalizes to 1/N") {
    LabelVolume l = labels_with_counts({40});
    TensorD w = compute_voxel_weights<double>(l, TargetWeights({0.4, 0.2, 0.2, 0.2}));
    for (std::size_t i = 0; i < l.numel(); ++i) CHECK(w[i] == doctest::Approx(1.0 / 40.0));
}

TEST_CASE("absent class renormalizes the remaining targets") {
    // counts (50, 0, 25, 25): present mass 0.8 -> (0.5, -, 0.25, 0.25)
    LabelVolume l = labels_with_counts({50, 0, 25, 25});
    TensorD w = compute_voxel_weights<double>(l, TargetWeights({0.4, 0.2, 0.2, 0.2}));
    double total = 0;
    for (std::size_t i = 0; i < l.numel(); ++i) {
        total += w[i];
        const double expect = l[i] == 0 ? 0.5 / 50.0 : 0.25 / 25.0;
        CHECK(w[i] == doctest::Approx(expect).epsilon(1e-12));
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("per-class weight sums equal renormalized targets on 1000 random batches") {
    std::mt19937 rng(21);
    const TargetWeights t3({0.4, 0.2, 0.2, 0.2});
    const TargetWeights t2({0.7, 0.1, 0.1, 0.1});
    for (int rep = 0; rep < 1000; ++rep) {
        const TargetWeights& t = rep % 2 ? t2 : t3;
        std::uniform_int_distribution<std::size_t> count(0, 30);
        std::vector<std::size_t> counts(4);
        std::size_t total = 0;
        do {
            for (auto& c : counts) c = count(rng);
            total = counts[0] + counts[1] + counts[2] + counts[3];
        } while (total == 0);
        LabelVolume l = labels_with_counts(counts);
        TensorD w = compute_voxel_weights<double>(l, t);
        double present_mass = 0;
        for (std::size_t c = 0; c < 4; ++c)
            if (counts[c]) present_mass += t.t[c];
        std::array<double, 4> per_class{};
        double grand = 0;
        for (std::size_t i = 0; i < l.numel(); ++i) {
            per_class[l[i]] += w[i];
            grand += w[i];
        }
        for (std::size_t c = 0; c < 4; ++c)
            if (counts[c])
                CHECK(std::abs(per_class[c] - t.t[c] / present_mass) < 1e-9);
        CHECK(std::abs(grand - 1.0) < 1e-9);
    }
}

TEST_CASE("voxel weight errors: empty labels, out-of-range label") {
    CHECK_THROWS_AS(compute_voxel_weights<double>(LabelVolume({0, 1, 1}),
                                                  TargetWeights({0.5, 0.5})),
                    std::invalid_argument);
    LabelVolume l({1, 1, 1});
    l[0] = 7;
    CHECK_THROWS_AS(compute_voxel_weights<double>(l, TargetWeights({0.5, 0.5})),
                    std::invalid_argument);
}

TEST_CASE("perfect prediction yields zero cross-entropy") {
    LabelVolume l({1, 2, 2});
    l.data = {0, 1, 2, 3};
    TensorD p({1, 4, 2, 2}, 0.0);
    for (std::size_t i = 0; i < 4; ++i) p.data[l[i] * 4 + i] = 1.0;
    TensorD w = compute_voxel_weights<double>(l, TargetWeights({0.25, 0.25, 0.25, 0.25}));
    GraphD g;
    int loss = weighted_cross_entropy(g, g.leaf(p), l, w, 4);
    CHECK(g.value(loss)[0] == doctest::Approx(0.0));
}

TEST_CASE("uniform prediction over 4 classes gives log(4)/V") {
    LabelVolume l({1, 2, 2});
    l.data = {0, 1, 2, 3};
    TensorD p({1, 4, 2, 2}, 0.25);
    TensorD w = compute_voxel_weights<double>(l, TargetWeights({0.4, 0.2, 0.2, 0.2}));
    GraphD g;
    int loss = weighted_cross_entropy(g, g.leaf(p), l, w, 4);
    CHECK(g.value(loss)[0] == doctest::Approx(std::log(4.0) / 4.0).epsilon(1e-12));
}

TEST_CASE("cross-entropy is invariant to permuting voxel order") {
    std::mt19937 rng(22);
    LabelVolume l({1, 4, 4});
    for (auto& v : l.data) v = static_cast<std::uint8_t>(rng() % 4);
    TensorD logits = random_tensor<double>({1, 4, 4, 4}, rng);
    TensorD w = compute_voxel_weights<double>(l, TargetWeights({0.4, 0.2, 0.2, 0.2}));

    auto value = [&](const LabelVolume& lab, const TensorD& lg, const TensorD& wt) {
        GraphD g;
        int p = softmax_channels(g, g.leaf(lg));
        return static_cast<double>(g.value(weighted_cross_entropy(g, p, lab, wt, 16))[0]);
    };
    const double base = value(l, logits, w);

    // Apply the same permutation to labels, weights, and spatial positions.
    std::vector<std::size_t> perm(16);
    for (std::size_t i = 0; i < 16; ++i) perm[i] = i;
    std::shuffle(perm.begin(), perm.end(), rng);
    LabelVolume lp({1, 4, 4});
    TensorD wp(w.shape), lgp(logits.shape);
    for (std::size_t i = 0; i < 16; ++i) {
        lp[i] = l[perm[i]];
        wp[i] = w[perm[i]];
        for (std::size_t c = 0; c < 4; ++c) lgp.data[c * 16 + i] = logits.data[c * 16 + perm[i]];
    }
    CHECK(value(lp, lgp, wp) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("cross-entropy gradient matches finite differences through softmax") {
    std::mt19937 rng(23);
    for (int rep = 0; rep < 20; ++rep) {
        LabelVolume l({1, 2, 2});
        for (auto& v : l.data) v = static_cast<std::uint8_t>(rng() % 4);
        TensorD w = compute_voxel_weights<double>(l, TargetWeights({0.4, 0.2, 0.2, 0.2}));
        auto build = [l, w](GraphD& g, const std::vector<int>& leaves) {
            int p = softmax_channels(g, leaves[0]);
            return weighted_cross_entropy(g, p, l, w, 4);
        };
        CHECK(testutil::gradcheck({random_tensor<double>({1, 4, 2, 2}, rng)}, build) < 1e-4);
    }
}

TEST_CASE("increasing a present class's target never lowers its loss share") {
    std::mt19937 rng(24);
    LabelVolume l = labels_with_counts({10, 5, 5, 5});
    TensorD logits = random_tensor<double>({1, 4, 5, 5}, rng);
    auto class0_share = [&](double t0) {
        const double rest = (1.0 - t0) / 3.0;
        TensorD w = compute_voxel_weights<double>(l, TargetWeights({t0, rest, rest, rest}));
        GraphD g;
        int p = softmax_channels(g, g.leaf(logits));
        const TensorD& pv = g.value(p);
        double share = 0;
        for (std::size_t i = 0; i < 25; ++i)
            if (l[i] == 0) share -= w[i] * std::log(pv.data[l[i] * 25 + i]) / 25.0;
        return share;
    };
    double prev = class0_share(0.1);
    for (double t0 : {0.3, 0.5, 0.7, 0.9}) {
        const double cur = class0_share(t0);
        CHECK(cur >= prev);
        prev = cur;
    }
}

TEST_CASE("combined loss: default coefficients, degenerate cases, convexity") {
    auto b = combined_loss(2.0, {1.0, 1.0, 1.0, 1.0, 1.0}, 0.75, std::vector<double>(5, 0.05));
    CHECK(b.combined == doctest::Approx(0.75 * 2.0 + 0.25));

    auto m = combined_loss(3.5, {}, 1.0, {});
    CHECK(m.combined == doctest::Approx(3.5));

    auto e = combined_loss(1.7, {1.7, 1.7}, 0.5, {0.25, 0.25});
    CHECK(e.combined == doctest::Approx(1.7));

    CHECK_THROWS_AS(combined_loss(1.0, {1.0}, 0.9, {0.2}), std::invalid_argument);
}

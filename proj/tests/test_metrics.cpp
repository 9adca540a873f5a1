#include <doctest.h>

#include <random>

#include "mseg/metrics.hpp"

using namespace mseg;

TEST_CASE("dice basics: identical, disjoint, half-overlap, both-empty") {
    std::vector<bool> a(20, false), b(20, false);
    for (int i = 0; i < 10; ++i) a[i] = true;

    CHECK(dice(a, a) == 1.0);
    CHECK(dice(std::vector<bool>(20, false), std::vector<bool>(20, false)) == 1.0);

    std::vector<bool> disjoint(20, false);
    for (int i = 10; i < 20; ++i) disjoint[i] = true;
    CHECK(dice(a, disjoint) == 0.0);

    // |P| = 10, |T| = 10, overlap 5 -> 0.5
    std::vector<bool> half(20, false);
    for (int i = 5; i < 15; ++i) half[i] = true;
    CHECK(dice(a, half) == doctest::Approx(0.5));
}

TEST_CASE("dice is symmetric and bounded") {
    std::mt19937 rng(61);
    for (int rep = 0; rep < 50; ++rep) {
        std::vector<bool> p(30), t(30);
        for (int i = 0; i < 30; ++i) {
            p[i] = rng() % 2;
            t[i] = rng() % 2;
        }
        const double d = dice(p, t);
        CHECK(d == dice(t, p));
        CHECK(d >= 0.0);
        CHECK(d <= 1.0);
    }
}

TEST_CASE("region definitions nest: EC voxels count toward TC and WT") {
    for (std::uint8_t l = 0; l < 4; ++l) {
        if (in_region(l, Region::EnhancingCore)) CHECK(in_region(l, Region::TumorCore));
        if (in_region(l, Region::TumorCore)) CHECK(in_region(l, Region::WholeTumor));
    }
    CHECK(in_region(2, Region::WholeTumor));
    CHECK_FALSE(in_region(2, Region::TumorCore));
}

TEST_CASE("evaluate: perfect prediction and the both-empty EC convention") {
    std::mt19937 rng(62);
    LabelVolume truth({3, 3, 3});
    for (auto& v : truth.data) v = static_cast<std::uint8_t>(rng() % 3);  // no class 3
    RegionScores s = evaluate(truth, truth);
    CHECK(s.wt == 1.0);
    CHECK(s.tc == 1.0);
    CHECK(s.ec == 1.0);  // both empty
}

TEST_CASE("edema mislabeled as class 1 keeps WT perfect but degrades TC") {
    LabelVolume truth({1, 4, 4}, 0), pred({1, 4, 4}, 0);
    // truth: 4 edema, 2 core; prediction turns the edema into class 1
    for (int i = 0; i < 4; ++i) truth[i] = 2;
    truth[4] = truth[5] = 1;
    for (int i = 0; i < 6; ++i) pred[i] = 1;
    RegionScores s = evaluate(pred, truth);
    CHECK(s.wt == 1.0);
    // TC: |P| = 6, |T| = 2, overlap 2 -> 0.5
    CHECK(s.tc == doctest::Approx(0.5));
}

TEST_CASE("summary statistics match a hand-computed sample") {
    // sorted: 1 2 3 4 5 -> mean 3, median 3, q25 2, q75 4
    SummaryStats s = summarize({5, 3, 1, 4, 2});
    CHECK(s.mean == doctest::Approx(3.0));
    CHECK(s.median == doctest::Approx(3.0));
    CHECK(s.q25 == doctest::Approx(2.0));
    CHECK(s.q75 == doctest::Approx(4.0));
    CHECK(s.stddev == doctest::Approx(std::sqrt(2.5)));  // n-1 denominator
}

#include <catch2/catch_amalgamated.hpp>

#include "oracles.hpp"
#include "tonemeter/stats.hpp"

using namespace tonemeter;

namespace {

std::vector<RatingPair> rating_pairs(const std::vector<std::pair<int, int>>& rp) {
    std::vector<RatingPair> out;
    for (size_t i = 0; i < rp.size(); ++i) {
        out.push_back({"s" + std::to_string(i), rp[i].first, rp[i].second, ""});
    }
    return out;
}

std::vector<ContinuousPair> continuous_pairs(
    const std::vector<std::pair<double, double>>& cp) {
    std::vector<ContinuousPair> out;
    for (size_t i = 0; i < cp.size(); ++i) {
        out.push_back({"s" + std::to_string(i), cp[i].first, cp[i].second, ""});
    }
    return out;
}

}  // namespace

TEST_CASE("weighted kappa hand fixtures match the frozen oracle values", "[stats]") {
    // expected values computed with an independent NumPy implementation
    struct Fixture {
        std::vector<std::pair<int, int>> pairs;
        double expected;
    };
    const std::vector<Fixture> fixtures = {
        {{{1, 1}, {1, 2}, {3, 3}, {6, 6}}, 0.8823529411764706},
        {{{1, 2}, {2, 3}, {3, 4}, {4, 5}, {5, 6}}, 0.44444444444444453},
        {{{2, 2}, {2, 2}, {3, 3}, {5, 5}, {6, 6}, {1, 1}}, 1.0},
        {{{1, 6}, {6, 1}, {1, 6}, {6, 1}}, -1.0},
        {{{1, 1}, {2, 2}, {3, 4}, {4, 3}, {5, 5}, {6, 6}, {2, 3}, {3, 2}}, 0.7142857142857142},
        {{{2, 2}, {3, 2}, {2, 3}, {4, 5}, {5, 4}, {6, 6}, {1, 1}, {2, 2}, {3, 3}, {4, 4}},
         0.7560975609756098},
    };
    for (const auto& f : fixtures) {
        auto pairs = rating_pairs(f.pairs);
        KappaResult r = weighted_kappa(pairs);
        CHECK(r.value == Catch::Approx(f.expected).margin(1e-12));
        CHECK_FALSE(r.degenerate);
        // cross-check against the in-repo brute-force oracle as well
        std::vector<oracle::Pair> op;
        for (auto& [a, b] : f.pairs) op.push_back({a, b});
        CHECK(r.value ==
              Catch::Approx(oracle::kappa_linear_bruteforce(op)).margin(1e-12));
    }
}

TEST_CASE("kappa degenerate case: both raters constant and equal", "[stats]") {
    auto pairs = rating_pairs({{4, 4}, {4, 4}, {4, 4}});
    KappaResult r = weighted_kappa(pairs);
    CHECK(r.value == 1.0);
    CHECK(r.degenerate);
}

TEST_CASE("kappa of independent uniform ratings is near zero", "[stats]") {
    Rng rng(1234);
    std::vector<RatingPair> pairs;
    for (int i = 0; i < 20000; ++i) {
        pairs.push_back({"s" + std::to_string(i), 1 + static_cast<int>(rng.uniform_int(6)),
                         1 + static_cast<int>(rng.uniform_int(6)), ""});
    }
    CHECK(std::abs(weighted_kappa(pairs).value) < 0.05);
}

TEST_CASE("kappa is invariant under ordinal reversal of both raters", "[stats]") {
    Rng rng(77);
    std::vector<RatingPair> pairs, reversed;
    for (int i = 0; i < 500; ++i) {
        int r = 1 + static_cast<int>(rng.uniform_int(6));
        int p = std::clamp(r + static_cast<int>(rng.uniform_int(3)) - 1, 1, 6);
        pairs.push_back({"s" + std::to_string(i), r, p, ""});
        reversed.push_back({"s" + std::to_string(i), 7 - r, 7 - p, ""});
    }
    CHECK(weighted_kappa(pairs).value ==
          Catch::Approx(weighted_kappa(reversed).value).margin(1e-12));
}

TEST_CASE("kappa validates its input", "[stats]") {
    auto one = rating_pairs({{1, 1}});
    CHECK_THROWS_AS(weighted_kappa(one), validation_error);
    std::vector<RatingPair> bad{{"s", 0, 3, ""}, {"t", 2, 2, ""}};
    CHECK_THROWS_AS(weighted_kappa(bad), validation_error);
}

TEST_CASE("ICC(3,1) hand fixtures match the frozen ANOVA oracle values", "[stats]") {
    struct Fixture {
        std::vector<std::pair<double, double>> pairs;
        double expected;
    };
    const std::vector<Fixture> fixtures = {
        {{{10, 11}, {12, 14}, {15, 14}, {20, 23}, {25, 24}, {30, 32}}, 0.9775880469583778},
        {{{1.0, 2.0}, {2.0, 2.9}, {3.0, 4.2}, {4.0, 5.1}, {5.0, 5.8}}, 0.9949238578680206},
        {{{10, 17}, {20, 27}, {30, 37}, {15, 22}, {25, 32}}, 1.0},  // offset invariance
        {{{10, 20}, {20, 40}, {30, 60}, {15, 30}, {25, 50}}, 0.8},  // scaling is penalized
        {{{50.0, 48.0}, {60.0, 63.0}, {40.0, 39.5}, {55.0, 54.0}, {70.0, 72.5}, {45.0, 46.0}},
         0.9848101265822785},
    };
    for (const auto& f : fixtures) {
        auto pairs = continuous_pairs(f.pairs);
        double got = icc3(pairs);
        CHECK(got == Catch::Approx(f.expected).margin(1e-10));
        std::vector<std::vector<double>> table;
        for (auto& [r, p] : f.pairs) table.push_back({r, p});
        CHECK(got == Catch::Approx(oracle::icc31_anova(table)).margin(1e-10));
    }
}

TEST_CASE("ICC equals 1 for exact and offset agreement", "[stats]") {
    auto exact = continuous_pairs({{10, 10}, {20, 20}, {30, 30}, {40, 40}});
    CHECK(icc3(exact) == Catch::Approx(1.0).margin(1e-12));
    auto offset = continuous_pairs({{10, 17}, {20, 27}, {30, 37}, {40, 47}});
    CHECK(icc3(offset) == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("scaling one rater strictly decreases consistency ICC", "[stats]") {
    auto base = continuous_pairs({{10, 10}, {20, 20}, {30, 30}, {15, 15}, {25, 25}});
    auto scaled = continuous_pairs({{10, 20}, {20, 40}, {30, 60}, {15, 30}, {25, 50}});
    CHECK(icc3(base) == Catch::Approx(1.0).margin(1e-12));
    CHECK(icc3(scaled) < 1.0 - 1e-6);
}

TEST_CASE("ICC generalizes to the triplicate (k=3) case", "[stats]") {
    std::vector<std::vector<double>> trip = {{10, 11, 10.5},
                                             {20, 21, 19.0},
                                             {30, 29, 31.0},
                                             {40, 42, 41.0},
                                             {50, 49, 50.5}};
    CHECK(icc3_table(trip) == Catch::Approx(0.9964212849928095).margin(1e-10));
    CHECK(icc3_table(trip) == Catch::Approx(oracle::icc31_anova(trip)).margin(1e-12));
}

TEST_CASE("ICC degeneracy and input validation", "[stats]") {
    auto flat = continuous_pairs({{5, 5}, {5, 5}, {5, 5}, {5, 5}});
    CHECK_THROWS_AS(icc3(flat), degenerate_statistics_error);
    auto two = continuous_pairs({{1, 2}, {3, 4}});
    CHECK_THROWS_AS(icc3(two), validation_error);
    std::vector<ContinuousPair> nan_pair = continuous_pairs({{1, 2}, {3, 4}, {5, 6}});
    nan_pair[0].predicted = std::nan("");
    CHECK_THROWS_AS(icc3(nan_pair), validation_error);
}

TEST_CASE("ordinal error summaries", "[stats]") {
    auto perfect = rating_pairs({{1, 1}, {3, 3}, {6, 6}});
    OrdinalErrors p = ordinal_errors(perfect);
    CHECK(p.mae == 0.0);
    CHECK(p.within_one_pct == 100.0);
    CHECK(p.bias == 0.0);

    auto high = rating_pairs({{1, 2}, {2, 3}, {4, 5}, {5, 6}});
    OrdinalErrors h = ordinal_errors(high);
    CHECK(h.mae == 1.0);
    CHECK(h.within_one_pct == 100.0);
    CHECK(h.bias == 1.0);

    // frozen five-pair fixture: mae 1.2, within-one 60%, bias -0.4
    auto mixed = rating_pairs({{1, 2}, {2, 2}, {3, 1}, {5, 6}, {6, 4}});
    OrdinalErrors m = ordinal_errors(mixed);
    CHECK(m.mae == Catch::Approx(1.2).margin(1e-12));
    CHECK(m.within_one_pct == Catch::Approx(60.0).margin(1e-12));
    CHECK(m.bias == Catch::Approx(-0.4).margin(1e-12));
}

TEST_CASE("within-one is never below exact agreement", "[stats]") {
    Rng rng(31);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<RatingPair> pairs;
        for (int i = 0; i < 50; ++i) {
            pairs.push_back({"s" + std::to_string(i),
                             1 + static_cast<int>(rng.uniform_int(6)),
                             1 + static_cast<int>(rng.uniform_int(6)), ""});
        }
        double exact = 0;
        for (const auto& p : pairs) exact += p.predicted == p.reference;
        exact = 100.0 * exact / pairs.size();
        REQUIRE(ordinal_errors(pairs).within_one_pct >= exact);
    }
}

TEST_CASE("Bland-Altman basics and frozen fixture", "[stats]") {
    auto same = continuous_pairs({{10, 10}, {20, 20}, {30, 30}});
    BlandAltman s = bland_altman(same);
    CHECK(s.bias == 0.0);
    CHECK(s.loa_lo == 0.0);
    CHECK(s.loa_hi == 0.0);

    auto constant = continuous_pairs({{10, 13}, {20, 23}, {30, 33}});
    BlandAltman c = bland_altman(constant);
    CHECK(c.bias == Catch::Approx(3.0).margin(1e-12));
    CHECK(c.loa_lo == Catch::Approx(3.0).margin(1e-12));
    CHECK(c.loa_hi == Catch::Approx(3.0).margin(1e-12));

    // frozen: bias 0.8, LoA (-3.156579330684524, 4.7565793306845245)
    auto fix = continuous_pairs({{10.0, 12.5}, {20.0, 19.0}, {30.0, 33.0}, {40.0, 41.0},
                                 {50.0, 48.5}});
    BlandAltman f = bland_altman(fix);
    CHECK(f.bias == Catch::Approx(0.8).margin(1e-12));
    CHECK(f.loa_lo == Catch::Approx(-3.156579330684524).margin(1e-12));
    CHECK(f.loa_hi == Catch::Approx(4.7565793306845245).margin(1e-12));
    // symmetric about the bias
    CHECK(f.loa_hi - f.bias == Catch::Approx(f.bias - f.loa_lo).margin(1e-12));
}

TEST_CASE("Bland-Altman recovers a seeded Gaussian difference", "[stats]") {
    Rng rng(2024);
    std::vector<ContinuousPair> pairs;
    for (int i = 0; i < 10000; ++i) {
        double ref = rng.uniform(-40, 60);
        pairs.push_back({"s" + std::to_string(i), ref, ref + rng.normal(2.0, 5.0), ""});
    }
    BlandAltman ba = bland_altman(pairs);
    CHECK(ba.bias == Catch::Approx(2.0).margin(0.2));
    CHECK(ba.loa_hi - ba.loa_lo == Catch::Approx(2 * 1.96 * 5.0).margin(0.5));
}

TEST_CASE("bootstrap CI on zero-variance data is degenerate", "[stats]") {
    std::vector<ContinuousPair> pairs;
    for (int i = 0; i < 20; ++i) {
        pairs.push_back({"s" + std::to_string(i % 5), 10.0, 12.0, ""});
    }
    auto metric = [](const std::vector<ContinuousPair>& p) { return bland_altman(p).bias; };
    BootstrapCi ci = bootstrap_ci<ContinuousPair>(pairs, metric, 200, 0.95, 9);
    CHECK(ci.lo == 2.0);
    CHECK(ci.hi == 2.0);
}

TEST_CASE("bootstrap CI contains the point estimate on random data", "[stats]") {
    Rng rng(555);
    auto metric = [](const std::vector<ContinuousPair>& p) {
        double m = 0;
        for (const auto& x : p) m += x.predicted - x.reference;
        return m / static_cast<double>(p.size());
    };
    for (int run = 0; run < 100; ++run) {
        std::vector<ContinuousPair> pairs;
        for (int s = 0; s < 12; ++s) {
            double subj_shift = rng.normal(0, 2);
            for (int i = 0; i < 4; ++i) {
                double ref = rng.uniform(0, 50);
                pairs.push_back({"s" + std::to_string(s), ref,
                                 ref + subj_shift + rng.normal(0, 1), ""});
            }
        }
        double point = metric(pairs);
        BootstrapCi ci = bootstrap_ci<ContinuousPair>(pairs, metric, 300, 0.95,
                                                      1000 + run);
        REQUIRE(ci.lo <= point);
        REQUIRE(point <= ci.hi);
    }
}

TEST_CASE("doubling the resample count barely moves the bounds", "[stats]") {
    Rng rng(31337);
    std::vector<ContinuousPair> pairs;
    for (int s = 0; s < 20; ++s) {
        for (int i = 0; i < 5; ++i) {
            double ref = rng.uniform(0, 100);
            pairs.push_back({"s" + std::to_string(s), ref, ref + rng.normal(1.0, 3.0), ""});
        }
    }
    auto metric = [](const std::vector<ContinuousPair>& p) { return bland_altman(p).bias; };
    BootstrapCi a = bootstrap_ci<ContinuousPair>(pairs, metric, 1000, 0.95, 7);
    BootstrapCi b = bootstrap_ci<ContinuousPair>(pairs, metric, 2000, 0.95, 7);
    double width = a.hi - a.lo;
    CHECK(std::abs(a.lo - b.lo) < 0.1 * width);
    CHECK(std::abs(a.hi - b.hi) < 0.1 * width);
}

TEST_CASE("bootstrap redraws resamples on degenerate metrics", "[stats]") {
    // two subjects with identical values within each subject: resamples
    // drawing a single subject twice make ICC degenerate and get redrawn
    std::vector<ContinuousPair> pairs;
    for (int i = 0; i < 3; ++i) pairs.push_back({"a", 10.0, 11.0, ""});
    for (int i = 0; i < 3; ++i) pairs.push_back({"b", 30.0, 29.0, ""});
    auto metric = [](const std::vector<ContinuousPair>& p) { return icc3(p); };
    BootstrapCi ci = bootstrap_ci<ContinuousPair>(pairs, metric, 200, 0.95, 3);
    CHECK(ci.redraws > 0);
    CHECK(ci.lo <= ci.hi);
}

TEST_CASE("bootstrap is deterministic given the seed", "[stats]") {
    Rng rng(8);
    std::vector<ContinuousPair> pairs;
    for (int s = 0; s < 10; ++s) {
        for (int i = 0; i < 3; ++i) {
            double ref = rng.uniform(0, 10);
            pairs.push_back({"s" + std::to_string(s), ref, ref + rng.normal(0, 1), ""});
        }
    }
    auto metric = [](const std::vector<ContinuousPair>& p) { return bland_altman(p).bias; };
    BootstrapCi a = bootstrap_ci<ContinuousPair>(pairs, metric, 250, 0.95, 42);
    BootstrapCi b = bootstrap_ci<ContinuousPair>(pairs, metric, 250, 0.95, 42);
    CHECK(a.lo == b.lo);
    CHECK(a.hi == b.hi);
}

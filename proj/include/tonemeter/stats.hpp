// Agreement statistics: linear-weighted Cohen's kappa, ICC(3,1), ordinal
// error summaries, Bland-Altman limits of agreement, and subject-cluster
// bootstrap confidence intervals.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "tonemeter/common.hpp"

namespace tonemeter {

struct RatingPair {
    std::string subject_id;
    int reference = 1;  // 1..K
    int predicted = 1;
    std::string stratum;
};

struct ContinuousPair {
    std::string subject_id;
    double reference = 0.0;
    double predicted = 0.0;
    std::string stratum;
};

struct KappaResult {
    double value = 0.0;
    // Both raters constant and equal: chance-expected disagreement is zero
    // and kappa is defined as 1.
    bool degenerate = false;
};

// Linear-weighted Cohen's kappa: 1 - sum(d_ij O_ij) / sum(d_ij E_ij) with
// disagreement weights d_ij = |i-j|/(K-1), observed proportions O, and
// chance proportions E from the two raters' sample marginals.
inline KappaResult weighted_kappa(std::span<const RatingPair> pairs, int num_classes = 6) {
    if (pairs.size() < 2) throw validation_error("weighted kappa needs at least 2 pairs");
    const int k = num_classes;
    std::vector<double> obs(static_cast<size_t>(k) * k, 0.0);
    std::vector<double> marg_ref(k, 0.0), marg_pred(k, 0.0);
    for (const auto& p : pairs) {
        if (p.reference < 1 || p.reference > k || p.predicted < 1 || p.predicted > k) {
            throw validation_error("rating outside 1.." + std::to_string(k));
        }
        obs[static_cast<size_t>(p.reference - 1) * k + (p.predicted - 1)] += 1.0;
        marg_ref[p.reference - 1] += 1.0;
        marg_pred[p.predicted - 1] += 1.0;
    }
    const double n = static_cast<double>(pairs.size());
    double num = 0.0, den = 0.0;
    for (int i = 0; i < k; ++i) {
        for (int j = 0; j < k; ++j) {
            double d = std::abs(i - j) / static_cast<double>(k - 1);
            num += d * obs[static_cast<size_t>(i) * k + j] / n;
            den += d * (marg_ref[i] / n) * (marg_pred[j] / n);
        }
    }
    if (den == 0.0) return {1.0, true};
    return {1.0 - num / den, false};
}

namespace detail {

// Two-way ANOVA for ICC(3,1): n subjects x k raters, consistency, single
// measurement: (MS_R - MS_E) / (MS_R + (k-1) MS_E).
inline double icc3_from_table(const std::vector<std::vector<double>>& table) {
    const size_t n = table.size();
    if (n < 3) throw validation_error("ICC3 needs at least 3 subjects");
    const size_t k = table[0].size();
    if (k < 2) throw validation_error("ICC3 needs at least 2 raters");
    for (const auto& row : table) {
        if (row.size() != k) throw validation_error("ICC3 table is ragged");
    }

    double grand = 0.0;
    for (const auto& row : table) {
        for (double v : row) grand += v;
    }
    grand /= static_cast<double>(n * k);

    std::vector<double> row_mean(n, 0.0), col_mean(k, 0.0);
    for (size_t i = 0; i < n; ++i) {
        for (size_t j = 0; j < k; ++j) {
            row_mean[i] += table[i][j];
            col_mean[j] += table[i][j];
        }
    }
    for (auto& v : row_mean) v /= static_cast<double>(k);
    for (auto& v : col_mean) v /= static_cast<double>(n);

    double ss_rows = 0.0, ss_cols = 0.0, ss_total = 0.0;
    for (size_t i = 0; i < n; ++i) ss_rows += (row_mean[i] - grand) * (row_mean[i] - grand);
    ss_rows *= static_cast<double>(k);
    for (size_t j = 0; j < k; ++j) ss_cols += (col_mean[j] - grand) * (col_mean[j] - grand);
    ss_cols *= static_cast<double>(n);
    for (size_t i = 0; i < n; ++i) {
        for (size_t j = 0; j < k; ++j) {
            ss_total += (table[i][j] - grand) * (table[i][j] - grand);
        }
    }
    double ss_err = ss_total - ss_rows - ss_cols;

    double ms_r = ss_rows / static_cast<double>(n - 1);
    double ms_e = ss_err / static_cast<double>((n - 1) * (k - 1));
    if (ms_e < 0.0) ms_e = 0.0;  // guard tiny negative from cancellation

    double scale = ss_total / static_cast<double>(n * k - 1);
    if (ms_r <= 1e-12 * std::max(scale, 1e-300) || scale == 0.0) {
        throw degenerate_statistics_error(
            "ICC3 undefined: zero between-subject variance (all subjects rate identically)");
    }
    return (ms_r - ms_e) / (ms_r + static_cast<double>(k - 1) * ms_e);
}

}  // namespace detail

// ICC(3,1) with the prediction and reference as the two raters.
inline double icc3(std::span<const ContinuousPair> pairs) {
    std::vector<std::vector<double>> table;
    table.reserve(pairs.size());
    for (const auto& p : pairs) {
        if (!std::isfinite(p.reference) || !std::isfinite(p.predicted)) {
            throw validation_error("ICC3 input contains non-finite values");
        }
        table.push_back({p.reference, p.predicted});
    }
    return detail::icc3_from_table(table);
}

// ICC(3,1) over an n x k measurement table (k >= 2), e.g. the triplicate
// colorimeter repeatability case with k = 3.
inline double icc3_table(const std::vector<std::vector<double>>& table) {
    return detail::icc3_from_table(table);
}

struct OrdinalErrors {
    double mae = 0.0;
    double within_one_pct = 0.0;  // 0..100
    double bias = 0.0;            // mean(predicted - reference)
};

inline OrdinalErrors ordinal_errors(std::span<const RatingPair> pairs) {
    if (pairs.empty()) throw validation_error("ordinal_errors needs at least 1 pair");
    OrdinalErrors e;
    size_t within = 0;
    for (const auto& p : pairs) {
        int d = p.predicted - p.reference;
        e.mae += std::abs(d);
        e.bias += d;
        if (std::abs(d) <= 1) ++within;
    }
    double n = static_cast<double>(pairs.size());
    e.mae /= n;
    e.bias /= n;
    e.within_one_pct = 100.0 * static_cast<double>(within) / n;
    return e;
}

struct BlandAltman {
    double bias = 0.0;
    double loa_lo = 0.0;
    double loa_hi = 0.0;
};

// d = predicted - reference; bias = mean(d), limits = bias +- 1.96 sd(d)
// with the n-1 sample standard deviation.
inline BlandAltman bland_altman(std::span<const ContinuousPair> pairs) {
    if (pairs.size() < 2) throw validation_error("Bland-Altman needs at least 2 pairs");
    double mean = 0.0;
    for (const auto& p : pairs) mean += p.predicted - p.reference;
    mean /= static_cast<double>(pairs.size());
    double ss = 0.0;
    for (const auto& p : pairs) {
        double d = p.predicted - p.reference - mean;
        ss += d * d;
    }
    double sd = std::sqrt(ss / static_cast<double>(pairs.size() - 1));
    return {mean, mean - 1.96 * sd, mean + 1.96 * sd};
}

struct BootstrapCi {
    double lo = 0.0;
    double hi = 0.0;
    int redraws = 0;  // resamples redrawn because the metric was undefined
};

namespace detail {

inline double percentile(std::vector<double>& sorted_values, double p) {
    std::sort(sorted_values.begin(), sorted_values.end());
    const size_t n = sorted_values.size();
    double pos = p * static_cast<double>(n - 1);
    size_t lo = static_cast<size_t>(pos);
    size_t hi = std::min(lo + 1, n - 1);
    double frac = pos - static_cast<double>(lo);
    return sorted_values[lo] * (1.0 - frac) + sorted_values[hi] * frac;
}

}  // namespace detail

// Percentile bootstrap that resamples SUBJECTS with replacement, preserving
// within-subject correlation. Deterministic given the seed: every resample
// (and every redraw after a degenerate metric) has its own derived seed, so
// resamples are order-independent.
template <typename Row>
BootstrapCi bootstrap_ci(std::span<const Row> rows,
                         const std::function<double(const std::vector<Row>&)>& metric,
                         int resamples = 1000, double level = 0.95, uint64_t seed = 0) {
    if (resamples < 100) throw validation_error("bootstrap needs at least 100 resamples");
    if (!(level > 0.0 && level < 1.0)) throw validation_error("bootstrap level outside (0,1)");
    if (rows.empty()) throw validation_error("bootstrap input is empty");

    std::map<std::string, std::vector<size_t>> by_subject;
    for (size_t i = 0; i < rows.size(); ++i) by_subject[rows[i].subject_id].push_back(i);
    std::vector<const std::vector<size_t>*> subjects;
    subjects.reserve(by_subject.size());
    for (const auto& [_, idx] : by_subject) subjects.push_back(&idx);

    BootstrapCi ci;
    std::vector<double> stats;
    stats.reserve(resamples);
    for (int b = 0; b < resamples; ++b) {
        double value = 0.0;
        bool ok = false;
        for (int attempt = 0; attempt < 1000 && !ok; ++attempt) {
            Rng rng(mix_seed(seed, static_cast<uint64_t>(b), static_cast<uint64_t>(attempt)));
            std::vector<Row> sample;
            sample.reserve(rows.size());
            for (size_t s = 0; s < subjects.size(); ++s) {
                const auto& idx = *subjects[rng.uniform_int(subjects.size())];
                for (size_t i : idx) sample.push_back(rows[i]);
            }
            try {
                value = metric(sample);
                ok = true;
            } catch (const degenerate_statistics_error&) {
                ++ci.redraws;
            }
        }
        if (!ok) {
            throw degenerate_statistics_error(
                "bootstrap: metric undefined on 1000 consecutive redraws");
        }
        stats.push_back(value);
    }

    double alpha = 1.0 - level;
    ci.lo = detail::percentile(stats, alpha / 2.0);
    ci.hi = detail::percentile(stats, 1.0 - alpha / 2.0);
    return ci;
}

struct AgreementReport {
    std::string metric;
    double estimate = 0.0;
    double ci_lo = 0.0;
    double ci_hi = 0.0;
    size_t n = 0;
    std::string stratum;  // "overall" or a site name
};

}  // namespace tonemeter

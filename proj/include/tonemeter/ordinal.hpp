// CORAL ordinal regression: extended binary encoding, rank-consistent
// threshold losses and decoding, plus the plain cross-entropy head used as
// the classification baseline.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "tonemeter/common.hpp"

namespace tonemeter {

// Fitzpatrick-style ordinal rank, 1..K (K = 6 in shipped configs).
struct Fitzpatrick {
    int rank = 1;

    explicit Fitzpatrick(int r, int num_classes = 6) : rank(r) {
        if (r < 1 || r > num_classes) {
            throw validation_error("ordinal rank " + std::to_string(r) + " outside 1.." +
                                   std::to_string(num_classes));
        }
    }
};

// Extended binary encoding: entry j (0-based) is 1 iff label > j+1.
inline std::vector<double> encode_ordinal(Fitzpatrick label, int num_classes = 6) {
    if (label.rank > num_classes) throw validation_error("label exceeds class count");
    std::vector<double> y(static_cast<size_t>(num_classes) - 1, 0.0);
    for (int j = 0; j < num_classes - 1; ++j) {
        y[j] = label.rank > j + 1 ? 1.0 : 0.0;
    }
    return y;
}

inline double sigmoid(double z) {
    return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

struct LossValue {
    double loss = 0.0;
    std::vector<double> grad;  // d loss / d logits
};

// Sum of binary cross-entropies between sigmoid(logit_k) and the extended
// binary target. Uses the log-sum formulation, stable for large |logit|.
inline LossValue coral_loss(std::span<const double> logits, Fitzpatrick target) {
    const int km1 = static_cast<int>(logits.size());
    std::vector<double> y = encode_ordinal(target, km1 + 1);
    LossValue out;
    out.grad.resize(km1);
    for (int k = 0; k < km1; ++k) {
        double z = logits[k];
        // bce = max(z,0) - z*y + log(1 + exp(-|z|))
        out.loss += std::max(z, 0.0) - z * y[k] + std::log1p(std::exp(-std::abs(z)));
        out.grad[k] = sigmoid(z) - y[k];
    }
    return out;
}

// Rank = 1 + number of thresholds exceeded. A sigmoid of exactly 0.5 counts
// as not exceeded.
inline Fitzpatrick decode_rank(std::span<const double> logits) {
    int rank = 1;
    for (double z : logits) {
        if (sigmoid(z) > 0.5) rank++;
    }
    return Fitzpatrick(rank, static_cast<int>(logits.size()) + 1);
}

// Standard cross-entropy over K class logits, argmax decoding.
inline LossValue softmax_head_loss(std::span<const double> logits, Fitzpatrick target) {
    const int k = static_cast<int>(logits.size());
    if (target.rank > k) throw validation_error("target exceeds logit count");
    double zmax = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double z : logits) sum += std::exp(z - zmax);
    double log_sum = zmax + std::log(sum);

    LossValue out;
    out.loss = log_sum - logits[target.rank - 1];
    out.grad.resize(k);
    for (int i = 0; i < k; ++i) {
        double p = std::exp(logits[i] - log_sum);
        out.grad[i] = p - (i == target.rank - 1 ? 1.0 : 0.0);
    }
    return out;
}

inline Fitzpatrick decode_argmax(std::span<const double> logits) {
    size_t best = 0;
    for (size_t i = 1; i < logits.size(); ++i) {
        if (logits[i] > logits[best]) best = i;
    }
    return Fitzpatrick(static_cast<int>(best) + 1, static_cast<int>(logits.size()));
}

// Projects the CORAL threshold biases back onto the ordered set
// b_1 >= b_2 >= ... >= b_{K-1}. Run after every optimizer step; ordered
// biases make P(y > k) = sigmoid(w.x + b_k) non-increasing in k for every x.
inline void project_ordered_biases(std::span<double> biases) {
    std::sort(biases.begin(), biases.end(), std::greater<double>());
}

// CORAL head parameters: one shared weight vector, K-1 ordered biases.
struct CoralHead {
    std::vector<double> weights;
    std::vector<double> biases;

    // threshold logits for a feature vector
    std::vector<double> logits(std::span<const double> features) const {
        double s = 0.0;
        for (size_t i = 0; i < weights.size(); ++i) s += weights[i] * features[i];
        std::vector<double> z(biases.size());
        for (size_t k = 0; k < biases.size(); ++k) z[k] = s + biases[k];
        return z;
    }
};

}  // namespace tonemeter

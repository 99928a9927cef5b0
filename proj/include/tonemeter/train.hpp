// Training loop: Adam, minibatches, subject-level validation split, early
// stopping on validation loss, and finite-difference gradient checking.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "tonemeter/checkpoint.hpp"
#include "tonemeter/common.hpp"
#include "tonemeter/net.hpp"
#include "tonemeter/ordinal.hpp"

namespace tonemeter {

// Training blew up (NaN/inf loss). Not a validation problem; carries the
// epoch/batch for diagnosis.
class training_error : public std::runtime_error {
public:
    explicit training_error(const std::string& what) : std::runtime_error(what) {}
};

struct TrainSample {
    PatchTensor image;  // raw [0,1] intensities, any size
    std::string subject_id;
    int fp = 0;  // 1..num_classes when present
    LabColor lab;
    bool has_lab = false;
};

struct TrainConfig {
    double learning_rate = 1e-4;
    int batch_size = 32;
    int max_epochs = 30;
    int patience = 5;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double val_fraction = 0.2;  // fraction of subjects held out for validation
    uint64_t seed = 0;          // drives the split and epoch shuffles

    // Fitzpatrick fine-tuning defaults: lr 1e-4, batch 32, up to 30 epochs,
    // patience 5.
    static TrainConfig ordinal_defaults() { return TrainConfig{}; }

    // Lab regression defaults: lr 5e-4, batch 32, up to 50 epochs, patience 5.
    static TrainConfig lab_defaults() {
        TrainConfig c;
        c.learning_rate = 5e-4;
        c.max_epochs = 50;
        return c;
    }

    void validate() const {
        if (patience < 1) throw validation_error("patience must be >= 1");
        if (batch_size < 1) throw validation_error("batch size must be >= 1");
        if (max_epochs < 1) throw validation_error("max_epochs must be >= 1");
        if (!(learning_rate > 0.0)) throw validation_error("learning rate must be positive");
        if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
            throw validation_error("validation fraction must be in (0,1)");
        }
    }
};

class Adam {
public:
    Adam(size_t n, const TrainConfig& cfg)
        : lr_(cfg.learning_rate),
          b1_(cfg.adam_beta1),
          b2_(cfg.adam_beta2),
          eps_(cfg.adam_eps),
          m_(n, 0.0),
          v_(n, 0.0) {}

    void step(std::vector<double>& params, const std::vector<double>& grad) {
        ++t_;
        const double bc1 = 1.0 - std::pow(b1_, t_);
        const double bc2 = 1.0 - std::pow(b2_, t_);
        for (size_t i = 0; i < params.size(); ++i) {
            m_[i] = b1_ * m_[i] + (1.0 - b1_) * grad[i];
            v_[i] = b2_ * v_[i] + (1.0 - b2_) * grad[i] * grad[i];
            params[i] -= lr_ * (m_[i] / bc1) / (std::sqrt(v_[i] / bc2) + eps_);
        }
    }

private:
    double lr_, b1_, b2_, eps_;
    long t_ = 0;
    std::vector<double> m_, v_;
};

// Stops when the validation loss has not strictly improved for `patience`
// consecutive epochs; remembers the best epoch.
class EarlyStopper {
public:
    explicit EarlyStopper(int patience) : patience_(patience) {
        if (patience < 1) throw validation_error("patience must be >= 1");
    }

    // Returns true if training should stop after this epoch.
    bool observe(int epoch, double val_loss) {
        if (val_loss < best_loss_) {
            best_loss_ = val_loss;
            best_epoch_ = epoch;
            stale_ = 0;
            return false;
        }
        return ++stale_ >= patience_;
    }

    int best_epoch() const { return best_epoch_; }
    double best_loss() const { return best_loss_; }

private:
    int patience_;
    int stale_ = 0;
    int best_epoch_ = 0;
    double best_loss_ = std::numeric_limits<double>::infinity();
};

struct EpochStats {
    int epoch = 0;  // 1-based
    double train_loss = 0.0;
    double val_loss = 0.0;
};

struct TrainResult {
    ModelCheckpoint checkpoint;
    std::vector<EpochStats> history;
    int best_epoch = 0;
    int epochs_run = 0;
};

// Loss + output gradient for one sample under the network's head.
inline LossValue head_loss(const NetworkConfig& cfg, std::span<const double> out,
                           const TrainSample& s) {
    switch (cfg.head) {
        case HeadKind::ordinal:
            return coral_loss(out, Fitzpatrick(s.fp, cfg.num_classes));
        case HeadKind::classification:
            return softmax_head_loss(out, Fitzpatrick(s.fp, cfg.num_classes));
        case HeadKind::lab_regression:
            return delta_e_loss(out, s.lab);
    }
    throw validation_error("unknown head");
}

namespace detail {

struct PreparedSample {
    std::vector<float> chw;  // normalized, input_size^2 * 3
    size_t index;            // into the original sample span
};

inline std::vector<float> prepare_input(const PatchTensor& img, const NetworkConfig& cfg) {
    PatchTensor t = img;
    if (t.height != cfg.input_size || t.width != cfg.input_size) {
        t = resize_bilinear(t, cfg.input_size, cfg.input_size);
    }
    normalize_channels(t, cfg.norm_mean, cfg.norm_std);
    std::vector<double> chw = to_chw(t);
    return std::vector<float>(chw.begin(), chw.end());
}

}  // namespace detail

// Minibatch Adam with subject-level validation split and early stopping.
// Returns the checkpoint of the best validation epoch. Deterministic:
// (network seed, data, cfg) fully determine the result.
inline TrainResult train(const NetworkConfig& net_cfg, std::span<const TrainSample> samples,
                         const TrainConfig& cfg) {
    cfg.validate();
    if (samples.empty()) throw validation_error("training corpus is empty");
    for (const auto& s : samples) {
        if (s.subject_id.empty()) throw validation_error("training sample without subject id");
        if (net_cfg.head == HeadKind::lab_regression) {
            if (!s.has_lab) {
                throw validation_error("lab head requires colorimeter-style Lab targets");
            }
        } else if (s.fp < 1 || s.fp > net_cfg.num_classes) {
            throw validation_error("rank label outside 1.." +
                                   std::to_string(net_cfg.num_classes));
        }
    }

    // Subject-level validation split, seeded.
    std::set<std::string> subject_set;
    for (const auto& s : samples) subject_set.insert(s.subject_id);
    std::vector<std::string> subjects(subject_set.begin(), subject_set.end());
    if (subjects.size() < 2) {
        throw validation_error("need at least 2 subjects for a subject-level validation split");
    }
    Rng split_rng(mix_seed(cfg.seed, 0x73706c6974ull));  // "split"
    split_rng.shuffle(subjects);
    size_t n_val = static_cast<size_t>(std::lround(cfg.val_fraction * subjects.size()));
    n_val = std::min(std::max<size_t>(n_val, 1), subjects.size() - 1);
    std::set<std::string> val_subjects(subjects.begin(), subjects.begin() + n_val);

    Network net(net_cfg);
    Workspace ws = net.make_workspace();

    std::vector<detail::PreparedSample> train_set, val_set;
    for (size_t i = 0; i < samples.size(); ++i) {
        detail::PreparedSample p;
        p.chw = detail::prepare_input(samples[i].image, net_cfg);
        p.index = i;
        (val_subjects.count(samples[i].subject_id) ? val_set : train_set).push_back(std::move(p));
    }
    if (train_set.empty() || val_set.empty()) {
        throw validation_error("subject split produced an empty train or validation set");
    }

    Adam adam(net.param_count(), cfg);
    std::vector<double> grad(net.param_count(), 0.0);
    std::vector<double> input(ws.block_in.empty() ? 0 : ws.block_in[0].size());
    EarlyStopper stopper(cfg.patience);
    std::vector<double> best_params;
    TrainResult result;

    auto eval_loss = [&](const detail::PreparedSample& p) {
        std::copy(p.chw.begin(), p.chw.end(), input.begin());
        auto out = net.forward(input, ws);
        return head_loss(net_cfg, out, samples[p.index]);
    };

    std::vector<size_t> order(train_set.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        Rng epoch_rng(mix_seed(cfg.seed, 0x65706f6368ull, static_cast<uint64_t>(epoch)));
        epoch_rng.shuffle(order);

        double train_loss_sum = 0.0;
        for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
            size_t end = std::min(order.size(), start + cfg.batch_size);
            std::fill(grad.begin(), grad.end(), 0.0);
            for (size_t i = start; i < end; ++i) {
                const auto& p = train_set[order[i]];
                std::copy(p.chw.begin(), p.chw.end(), input.begin());
                auto out = net.forward(input, ws);
                LossValue lv = head_loss(net_cfg, out, samples[p.index]);
                if (!std::isfinite(lv.loss)) {
                    throw training_error("training diverged (non-finite loss) at epoch " +
                                         std::to_string(epoch));
                }
                train_loss_sum += lv.loss;
                net.backward(lv.grad, ws, grad);
            }
            double inv = 1.0 / static_cast<double>(end - start);
            for (double& g : grad) g *= inv;
            adam.step(net.params(), grad);
            if (net_cfg.head == HeadKind::ordinal) {
                project_ordered_biases(net.ordinal_bias_span());
            }
        }
        double train_loss = train_loss_sum / static_cast<double>(train_set.size());

        double val_loss_sum = 0.0;
        for (const auto& p : val_set) val_loss_sum += eval_loss(p).loss;
        double val_loss = val_loss_sum / static_cast<double>(val_set.size());
        if (!std::isfinite(val_loss)) {
            throw training_error("training diverged (non-finite validation loss) at epoch " +
                                 std::to_string(epoch));
        }

        result.history.push_back({epoch, train_loss, val_loss});
        bool improved_to_best = val_loss < stopper.best_loss();
        bool stop = stopper.observe(epoch, val_loss);
        if (improved_to_best) best_params = net.params();
        result.epochs_run = epoch;
        if (stop) break;
    }

    result.best_epoch = stopper.best_epoch();
    Network best = Network::from_params(net_cfg, std::move(best_params));
    Provenance prov;
    prov.seed = net_cfg.seed;
    prov.epochs_run = result.epochs_run;
    prov.best_epoch = result.best_epoch;
    prov.best_val_loss = stopper.best_loss();
    prov.train_samples = static_cast<int>(train_set.size());
    result.checkpoint = ModelCheckpoint::from_network(best, prov);
    return result;
}

struct GradCheckResult {
    double max_rel_err = 0.0;
    size_t params_checked = 0;
};

// Central finite differences over every parameter against the analytic
// backward pass. rel err = |a - n| / max(1, |a|, |n|).
inline GradCheckResult grad_check(Network& net, std::span<const double> input,
                                  const std::function<LossValue(std::span<const double>)>& loss,
                                  double h = 1e-5) {
    Workspace ws = net.make_workspace();
    std::vector<double> analytic(net.param_count(), 0.0);
    {
        auto out = net.forward(input, ws);
        LossValue lv = loss(out);
        net.backward(lv.grad, ws, analytic);
    }

    GradCheckResult res;
    res.params_checked = net.param_count();
    for (size_t i = 0; i < net.param_count(); ++i) {
        double saved = net.params()[i];
        net.params()[i] = saved + h;
        double lp = loss(net.forward(input, ws)).loss;
        net.params()[i] = saved - h;
        double lm = loss(net.forward(input, ws)).loss;
        net.params()[i] = saved;
        double numeric = (lp - lm) / (2.0 * h);
        double denom = std::max({1.0, std::abs(analytic[i]), std::abs(numeric)});
        res.max_rel_err = std::max(res.max_rel_err, std::abs(analytic[i] - numeric) / denom);
    }
    return res;
}

}  // namespace tonemeter

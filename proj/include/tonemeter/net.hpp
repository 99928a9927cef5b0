// Desk-scale convolutional network with manual forward/backward passes.
// Three interchangeable heads: CORAL ordinal thresholds, plain softmax
// classification, and CIELAB regression. Double precision throughout.
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "tonemeter/common.hpp"
#include "tonemeter/image.hpp"
#include "tonemeter/ordinal.hpp"

namespace tonemeter {

enum class HeadKind { ordinal, classification, lab_regression };

inline std::string head_kind_name(HeadKind h) {
    switch (h) {
        case HeadKind::ordinal: return "ordinal";
        case HeadKind::classification: return "classification";
        case HeadKind::lab_regression: return "lab_regression";
    }
    return "?";
}

inline HeadKind head_kind_from_name(const std::string& s) {
    if (s == "ordinal") return HeadKind::ordinal;
    if (s == "classification") return HeadKind::classification;
    if (s == "lab_regression" || s == "lab") return HeadKind::lab_regression;
    throw validation_error("unknown head kind: " + s);
}

struct ConvBlockSpec {
    int channels = 8;
    int kernel = 3;  // odd
    int pool = 2;    // max-pool window and stride
};

struct NetworkConfig {
    int input_size = 64;
    int input_channels = 3;
    std::vector<ConvBlockSpec> blocks{{8, 3, 2}, {16, 3, 2}, {32, 3, 2}};
    int feature_dim = 64;
    HeadKind head = HeadKind::ordinal;
    int num_classes = 6;
    uint64_t seed = 0;
    std::array<double, 3> norm_mean{0.485, 0.456, 0.406};
    std::array<double, 3> norm_std{0.229, 0.224, 0.225};
    // Fixed affine applied to the lab head output so the raw head works in
    // O(1) units: lab = raw * scale + offset.
    std::array<double, 3> lab_scale{25.0, 15.0, 15.0};
    std::array<double, 3> lab_offset{55.0, 10.0, 18.0};

    int head_dim() const {
        switch (head) {
            case HeadKind::ordinal: return num_classes - 1;
            case HeadKind::classification: return num_classes;
            case HeadKind::lab_regression: return 3;
        }
        return 0;
    }

    void validate() const {
        if (input_size < 1 || input_channels < 1 || feature_dim < 1 || num_classes < 2) {
            throw validation_error("network dimensions must be positive");
        }
        int s = input_size;
        for (const auto& b : blocks) {
            if (b.channels < 1) throw validation_error("conv channels must be positive");
            if (b.kernel < 1 || b.kernel % 2 == 0) {
                throw validation_error("conv kernel must be odd and positive");
            }
            if (b.pool < 1 || s % b.pool != 0) {
                throw validation_error("input size must be divisible by the pooling chain");
            }
            s /= b.pool;
        }
        if (s < 1) throw validation_error("pooling chain exhausts the input");
    }

    // true when two configs describe interchangeable weight layouts
    bool same_architecture(const NetworkConfig& o) const {
        if (input_size != o.input_size || input_channels != o.input_channels ||
            feature_dim != o.feature_dim || head != o.head || num_classes != o.num_classes ||
            blocks.size() != o.blocks.size()) {
            return false;
        }
        for (size_t i = 0; i < blocks.size(); ++i) {
            if (blocks[i].channels != o.blocks[i].channels ||
                blocks[i].kernel != o.blocks[i].kernel || blocks[i].pool != o.blocks[i].pool) {
                return false;
            }
        }
        return norm_mean == o.norm_mean && norm_std == o.norm_std &&
               lab_scale == o.lab_scale && lab_offset == o.lab_offset;
    }
};

struct TensorDesc {
    std::string name;
    std::vector<int> shape;
    size_t offset = 0;
    size_t count = 0;
};

constexpr double kLeakySlope = 0.01;

inline double leaky_relu(double x) { return x > 0.0 ? x : kLeakySlope * x; }
inline double leaky_relu_grad(double x) { return x > 0.0 ? 1.0 : kLeakySlope; }

// Per-sample activation buffers, reused across forward/backward calls.
struct Workspace {
    std::vector<std::vector<double>> block_in;   // input of each block (CHW)
    std::vector<std::vector<double>> conv_z;     // conv pre-activation
    std::vector<std::vector<double>> act;        // leaky-relu output
    std::vector<std::vector<int>> pool_idx;      // argmax into act
    std::vector<double> pooled_last;             // output of final block == fc input
    std::vector<double> fc_z, fc_a;
    std::vector<double> out;
    // backward scratch
    std::vector<std::vector<double>> d_act;
    std::vector<std::vector<double>> d_in;
    std::vector<double> d_fc_a;
};

class Network {
public:
    explicit Network(NetworkConfig cfg) : cfg_(std::move(cfg)) {
        cfg_.validate();
        layout();
        init_params();
    }

    static Network from_params(NetworkConfig cfg, std::vector<double> params) {
        Network net(std::move(cfg), SkipInit{});
        if (params.size() != net.params_.size()) {
            throw validation_error("parameter vector size mismatch: got " +
                                   std::to_string(params.size()) + ", expected " +
                                   std::to_string(net.params_.size()));
        }
        net.params_ = std::move(params);
        return net;
    }

    const NetworkConfig& config() const { return cfg_; }
    std::vector<double>& params() { return params_; }
    const std::vector<double>& params() const { return params_; }
    const std::vector<TensorDesc>& tensors() const { return tensors_; }
    size_t param_count() const { return params_.size(); }

    // Span of the CORAL threshold biases within the flat parameter vector.
    std::span<double> ordinal_bias_span() {
        if (cfg_.head != HeadKind::ordinal) return {};
        const TensorDesc& d = tensors_.back();
        return {params_.data() + d.offset, d.count};
    }

    Workspace make_workspace() const {
        Workspace ws;
        const size_t nb = cfg_.blocks.size();
        ws.block_in.resize(nb);
        ws.conv_z.resize(nb);
        ws.act.resize(nb);
        ws.pool_idx.resize(nb);
        ws.d_act.resize(nb);
        ws.d_in.resize(nb);
        int s = cfg_.input_size;
        int ch = cfg_.input_channels;
        for (size_t i = 0; i < nb; ++i) {
            const auto& b = cfg_.blocks[i];
            ws.block_in[i].resize(static_cast<size_t>(ch) * s * s);
            ws.conv_z[i].resize(static_cast<size_t>(b.channels) * s * s);
            ws.act[i].resize(ws.conv_z[i].size());
            ws.d_act[i].resize(ws.conv_z[i].size());
            ws.d_in[i].resize(ws.block_in[i].size());
            s /= b.pool;
            ch = b.channels;
            ws.pool_idx[i].resize(static_cast<size_t>(ch) * s * s);
        }
        ws.pooled_last.resize(static_cast<size_t>(ch) * s * s);
        ws.fc_z.resize(cfg_.feature_dim);
        ws.fc_a.resize(cfg_.feature_dim);
        ws.out.resize(cfg_.head_dim());
        ws.d_fc_a.resize(cfg_.feature_dim);
        return ws;
    }

    // Forward pass on a normalized CHW input. Returns the head output
    // (logits, or Lab values for the regression head).
    std::span<const double> forward(std::span<const double> input, Workspace& ws) const {
        const size_t in_count = static_cast<size_t>(cfg_.input_channels) * cfg_.input_size *
                                cfg_.input_size;
        if (input.size() != in_count) {
            throw validation_error("forward: input size " + std::to_string(input.size()) +
                                   " != expected " + std::to_string(in_count));
        }

        int s = cfg_.input_size;
        int ch = cfg_.input_channels;
        std::copy(input.begin(), input.end(), ws.block_in[0].begin());
        for (size_t bi = 0; bi < cfg_.blocks.size(); ++bi) {
            const auto& blk = cfg_.blocks[bi];
            conv_forward(ws.block_in[bi].data(), ch, s, bi, ws.conv_z[bi].data());
            for (size_t i = 0; i < ws.conv_z[bi].size(); ++i) {
                ws.act[bi][i] = leaky_relu(ws.conv_z[bi][i]);
            }
            double* pooled = bi + 1 < cfg_.blocks.size() ? ws.block_in[bi + 1].data()
                                                         : ws.pooled_last.data();
            pool_forward(ws.act[bi].data(), blk.channels, s, blk.pool, pooled,
                         ws.pool_idx[bi].data());
            s /= blk.pool;
            ch = blk.channels;
        }

        const double* fc_w = params_.data() + fc_w_.offset;
        const double* fc_b = params_.data() + fc_b_.offset;
        const size_t flat = ws.pooled_last.size();
        for (int f = 0; f < cfg_.feature_dim; ++f) {
            double acc = fc_b[f];
            const double* row = fc_w + static_cast<size_t>(f) * flat;
            for (size_t i = 0; i < flat; ++i) acc += row[i] * ws.pooled_last[i];
            ws.fc_z[f] = acc;
            ws.fc_a[f] = leaky_relu(acc);
        }

        const double* hw = params_.data() + head_w_.offset;
        const double* hb = params_.data() + head_b_.offset;
        const int hd = cfg_.head_dim();
        if (cfg_.head == HeadKind::ordinal) {
            double score = 0.0;
            for (int f = 0; f < cfg_.feature_dim; ++f) score += hw[f] * ws.fc_a[f];
            for (int k = 0; k < hd; ++k) ws.out[k] = score + hb[k];
        } else {
            for (int k = 0; k < hd; ++k) {
                double acc = hb[k];
                const double* row = hw + static_cast<size_t>(k) * cfg_.feature_dim;
                for (int f = 0; f < cfg_.feature_dim; ++f) acc += row[f] * ws.fc_a[f];
                ws.out[k] = acc;
            }
            if (cfg_.head == HeadKind::lab_regression) {
                for (int k = 0; k < 3; ++k) {
                    ws.out[k] = ws.out[k] * cfg_.lab_scale[k] + cfg_.lab_offset[k];
                }
            }
        }
        return {ws.out.data(), static_cast<size_t>(hd)};
    }

    // Accumulates d(loss)/d(params) into grad, given d(loss)/d(output).
    // Must follow a forward() call on the same workspace.
    void backward(std::span<const double> d_out, Workspace& ws,
                  std::vector<double>& grad) const {
        if (grad.size() != params_.size()) {
            throw validation_error("gradient buffer size mismatch");
        }
        const int hd = cfg_.head_dim();
        if (static_cast<int>(d_out.size()) != hd) {
            throw validation_error("backward: output gradient size mismatch");
        }

        // head
        const double* hw = params_.data() + head_w_.offset;
        double* g_hw = grad.data() + head_w_.offset;
        double* g_hb = grad.data() + head_b_.offset;
        std::fill(ws.d_fc_a.begin(), ws.d_fc_a.end(), 0.0);
        if (cfg_.head == HeadKind::ordinal) {
            double dscore = 0.0;
            for (int k = 0; k < hd; ++k) {
                dscore += d_out[k];
                g_hb[k] += d_out[k];
            }
            for (int f = 0; f < cfg_.feature_dim; ++f) {
                g_hw[f] += dscore * ws.fc_a[f];
                ws.d_fc_a[f] = dscore * hw[f];
            }
        } else {
            std::vector<double> dz(d_out.begin(), d_out.end());
            if (cfg_.head == HeadKind::lab_regression) {
                for (int k = 0; k < 3; ++k) dz[k] *= cfg_.lab_scale[k];
            }
            for (int k = 0; k < hd; ++k) {
                g_hb[k] += dz[k];
                const double* row = hw + static_cast<size_t>(k) * cfg_.feature_dim;
                double* g_row = g_hw + static_cast<size_t>(k) * cfg_.feature_dim;
                for (int f = 0; f < cfg_.feature_dim; ++f) {
                    g_row[f] += dz[k] * ws.fc_a[f];
                    ws.d_fc_a[f] += dz[k] * row[f];
                }
            }
        }

        // fully connected
        const size_t flat = ws.pooled_last.size();
        const double* fc_w = params_.data() + fc_w_.offset;
        double* g_fc_w = grad.data() + fc_w_.offset;
        double* g_fc_b = grad.data() + fc_b_.offset;
        std::vector<double> d_flat(flat, 0.0);
        for (int f = 0; f < cfg_.feature_dim; ++f) {
            double dfz = ws.d_fc_a[f] * leaky_relu_grad(ws.fc_z[f]);
            g_fc_b[f] += dfz;
            const double* row = fc_w + static_cast<size_t>(f) * flat;
            double* g_row = g_fc_w + static_cast<size_t>(f) * flat;
            for (size_t i = 0; i < flat; ++i) {
                g_row[i] += dfz * ws.pooled_last[i];
                d_flat[i] += dfz * row[i];
            }
        }

        // blocks, last to first
        std::vector<int> sizes(cfg_.blocks.size() + 1);
        sizes[0] = cfg_.input_size;
        for (size_t i = 0; i < cfg_.blocks.size(); ++i) {
            sizes[i + 1] = sizes[i] / cfg_.blocks[i].pool;
        }
        std::vector<double>* d_pooled = &d_flat;
        for (int bi = static_cast<int>(cfg_.blocks.size()) - 1; bi >= 0; --bi) {
            const int s = sizes[bi];
            const int in_ch = bi == 0 ? cfg_.input_channels : cfg_.blocks[bi - 1].channels;

            // unpool into d_act, then fold in the activation derivative
            std::fill(ws.d_act[bi].begin(), ws.d_act[bi].end(), 0.0);
            for (size_t i = 0; i < d_pooled->size(); ++i) {
                ws.d_act[bi][ws.pool_idx[bi][i]] += (*d_pooled)[i];
            }
            for (size_t i = 0; i < ws.d_act[bi].size(); ++i) {
                ws.d_act[bi][i] *= leaky_relu_grad(ws.conv_z[bi][i]);
            }

            const bool need_d_in = bi > 0;
            if (need_d_in) std::fill(ws.d_in[bi].begin(), ws.d_in[bi].end(), 0.0);
            conv_backward(ws.block_in[bi].data(), in_ch, s, bi, ws.d_act[bi].data(),
                          grad.data(), need_d_in ? ws.d_in[bi].data() : nullptr);
            d_pooled = &ws.d_in[bi];
        }
    }

    // Resize + normalize + forward on a raw [0,1] image of any size.
    std::vector<double> predict(const PatchTensor& raw) const {
        PatchTensor img = raw;
        if (img.height != cfg_.input_size || img.width != cfg_.input_size) {
            img = resize_bilinear(img, cfg_.input_size, cfg_.input_size);
        }
        normalize_channels(img, cfg_.norm_mean, cfg_.norm_std);
        Workspace ws = make_workspace();
        auto out = forward(to_chw(img), ws);
        return {out.begin(), out.end()};
    }

private:
    struct SkipInit {};
    Network(NetworkConfig cfg, SkipInit) : cfg_(std::move(cfg)) {
        cfg_.validate();
        layout();
    }

    void layout() {
        size_t off = 0;
        auto add = [&](const std::string& name, std::vector<int> shape) {
            TensorDesc d;
            d.name = name;
            d.shape = std::move(shape);
            d.count = 1;
            for (int s : d.shape) d.count *= static_cast<size_t>(s);
            d.offset = off;
            off += d.count;
            tensors_.push_back(d);
            return tensors_.size() - 1;
        };
        int ch = cfg_.input_channels;
        int s = cfg_.input_size;
        conv_w_.clear();
        conv_b_.clear();
        for (size_t i = 0; i < cfg_.blocks.size(); ++i) {
            const auto& b = cfg_.blocks[i];
            conv_w_.push_back(add("conv" + std::to_string(i) + ".weight",
                                  {b.channels, ch, b.kernel, b.kernel}));
            conv_b_.push_back(add("conv" + std::to_string(i) + ".bias", {b.channels}));
            ch = b.channels;
            s /= b.pool;
        }
        const int flat = ch * s * s;
        size_t fcw = add("fc.weight", {cfg_.feature_dim, flat});
        size_t fcb = add("fc.bias", {cfg_.feature_dim});
        fc_w_ = tensors_[fcw];
        fc_b_ = tensors_[fcb];
        size_t hw, hb;
        if (cfg_.head == HeadKind::ordinal) {
            hw = add("head.weight", {cfg_.feature_dim});
            hb = add("head.bias", {cfg_.num_classes - 1});
        } else if (cfg_.head == HeadKind::classification) {
            hw = add("head.weight", {cfg_.num_classes, cfg_.feature_dim});
            hb = add("head.bias", {cfg_.num_classes});
        } else {
            hw = add("head.weight", {3, cfg_.feature_dim});
            hb = add("head.bias", {3});
        }
        head_w_ = tensors_[hw];
        head_b_ = tensors_[hb];
        params_.assign(off, 0.0);
    }

    void init_params() {
        Rng rng(mix_seed(cfg_.seed, 0x696e6974ull));  // "init"
        int ch = cfg_.input_channels;
        for (size_t i = 0; i < cfg_.blocks.size(); ++i) {
            const auto& b = cfg_.blocks[i];
            const TensorDesc& w = tensors_[conv_w_[i]];
            double std_dev = std::sqrt(2.0 / (ch * b.kernel * b.kernel));
            for (size_t j = 0; j < w.count; ++j) {
                params_[w.offset + j] = rng.normal(0.0, std_dev);
            }
            ch = b.channels;  // conv biases stay zero
        }
        {
            double std_dev = std::sqrt(2.0 / fc_w_.shape[1]);
            for (size_t j = 0; j < fc_w_.count; ++j) {
                params_[fc_w_.offset + j] = rng.normal(0.0, std_dev);
            }
        }
        {
            double std_dev = std::sqrt(1.0 / cfg_.feature_dim);
            for (size_t j = 0; j < head_w_.count; ++j) {
                params_[head_w_.offset + j] = rng.normal(0.0, std_dev);
            }
        }
        if (cfg_.head == HeadKind::ordinal) {
            // ordered biases from +1.5 down to -1.5
            const int km1 = cfg_.num_classes - 1;
            for (int k = 0; k < km1; ++k) {
                params_[head_b_.offset + k] =
                    1.5 - 3.0 * (km1 == 1 ? 0.5 : static_cast<double>(k) / (km1 - 1));
            }
        }
    }

    // same-padding convolution, stride 1
    void conv_forward(const double* in, int in_ch, int s, size_t bi, double* out) const {
        const auto& blk = cfg_.blocks[bi];
        const int k = blk.kernel;
        const int pad = k / 2;
        const double* w = params_.data() + tensors_[conv_w_[bi]].offset;
        const double* b = params_.data() + tensors_[conv_b_[bi]].offset;
        const size_t plane = static_cast<size_t>(s) * s;

        for (int oc = 0; oc < blk.channels; ++oc) {
            double* out_p = out + oc * plane;
            std::fill(out_p, out_p + plane, b[oc]);
            for (int ic = 0; ic < in_ch; ++ic) {
                const double* in_p = in + ic * plane;
                const double* w_oc = w + (static_cast<size_t>(oc) * in_ch + ic) * k * k;
                for (int ky = 0; ky < k; ++ky) {
                    const int dy = ky - pad;
                    const int y0 = std::max(0, -dy);
                    const int y1 = std::min(s, s - dy);
                    for (int kx = 0; kx < k; ++kx) {
                        const double wv = w_oc[ky * k + kx];
                        const int dx = kx - pad;
                        const int x0 = std::max(0, -dx);
                        const int x1 = std::min(s, s - dx);
                        for (int y = y0; y < y1; ++y) {
                            double* orow = out_p + static_cast<size_t>(y) * s;
                            const double* irow = in_p + static_cast<size_t>(y + dy) * s + dx;
                            for (int x = x0; x < x1; ++x) orow[x] += wv * irow[x];
                        }
                    }
                }
            }
        }
    }

    void conv_backward(const double* in, int in_ch, int s, size_t bi, const double* d_out,
                       double* grad, double* d_in) const {
        const auto& blk = cfg_.blocks[bi];
        const int k = blk.kernel;
        const int pad = k / 2;
        const double* w = params_.data() + tensors_[conv_w_[bi]].offset;
        double* g_w = grad + tensors_[conv_w_[bi]].offset;
        double* g_b = grad + tensors_[conv_b_[bi]].offset;
        const size_t plane = static_cast<size_t>(s) * s;

        for (int oc = 0; oc < blk.channels; ++oc) {
            const double* dz = d_out + oc * plane;
            double bsum = 0.0;
            for (size_t i = 0; i < plane; ++i) bsum += dz[i];
            g_b[oc] += bsum;
            for (int ic = 0; ic < in_ch; ++ic) {
                const double* in_p = in + ic * plane;
                const size_t w_base = (static_cast<size_t>(oc) * in_ch + ic) * k * k;
                double* d_in_p = d_in ? d_in + ic * plane : nullptr;
                for (int ky = 0; ky < k; ++ky) {
                    const int dy = ky - pad;
                    const int y0 = std::max(0, -dy);
                    const int y1 = std::min(s, s - dy);
                    for (int kx = 0; kx < k; ++kx) {
                        const int dx = kx - pad;
                        const int x0 = std::max(0, -dx);
                        const int x1 = std::min(s, s - dx);
                        double acc = 0.0;
                        const double wv = w[w_base + ky * k + kx];
                        for (int y = y0; y < y1; ++y) {
                            const double* dzrow = dz + static_cast<size_t>(y) * s;
                            const double* irow = in_p + static_cast<size_t>(y + dy) * s + dx;
                            if (d_in_p) {
                                double* dirow = d_in_p + static_cast<size_t>(y + dy) * s + dx;
                                for (int x = x0; x < x1; ++x) {
                                    acc += dzrow[x] * irow[x];
                                    dirow[x] += wv * dzrow[x];
                                }
                            } else {
                                for (int x = x0; x < x1; ++x) acc += dzrow[x] * irow[x];
                            }
                        }
                        g_w[w_base + ky * k + kx] += acc;
                    }
                }
            }
        }
    }

    // p x p max pool, stride p; ties go to the first (lowest index) element
    static void pool_forward(const double* in, int ch, int s, int p, double* out,
                             int* idx) {
        const int so = s / p;
        const size_t in_plane = static_cast<size_t>(s) * s;
        const size_t out_plane = static_cast<size_t>(so) * so;
        for (int c = 0; c < ch; ++c) {
            const double* ip = in + c * in_plane;
            double* op = out + c * out_plane;
            int* xp = idx + c * out_plane;
            for (int y = 0; y < so; ++y) {
                for (int x = 0; x < so; ++x) {
                    int best = (y * p) * s + x * p;
                    double bv = ip[best];
                    for (int dy = 0; dy < p; ++dy) {
                        for (int dx = 0; dx < p; ++dx) {
                            int at = (y * p + dy) * s + (x * p + dx);
                            if (ip[at] > bv) {
                                bv = ip[at];
                                best = at;
                            }
                        }
                    }
                    op[static_cast<size_t>(y) * so + x] = bv;
                    xp[static_cast<size_t>(y) * so + x] = static_cast<int>(c * in_plane) + best;
                }
            }
        }
    }

    NetworkConfig cfg_;
    std::vector<double> params_;
    std::vector<TensorDesc> tensors_;
    std::vector<size_t> conv_w_, conv_b_;
    TensorDesc fc_w_, fc_b_, head_w_, head_b_;
};

// Loss for the lab head: CIE delta E 1976 between predicted and target Lab.
// The square-root kink at zero is handled by switching to squared delta E
// within 1e-12 of zero, which leaves the optimum unchanged.
inline LossValue delta_e_loss(std::span<const double> pred, const LabColor& target) {
    double d[3] = {pred[0] - target.L, pred[1] - target.a, pred[2] - target.b};
    double sq = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
    double de = std::sqrt(sq);
    LossValue out;
    out.grad.resize(3);
    if (de < 1e-12) {
        out.loss = sq;
        for (int i = 0; i < 3; ++i) out.grad[i] = 2.0 * d[i];
    } else {
        out.loss = de;
        for (int i = 0; i < 3; ++i) out.grad[i] = d[i] / de;
    }
    return out;
}

}  // namespace tonemeter

// PatchTensor: the H x W x 3 image carrier used by the estimators, the
// synthetic renderer, and the network input pipeline.
#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "tonemeter/color.hpp"
#include "tonemeter/common.hpp"

namespace tonemeter {

// Row-major H x W x 3 float image. For loaded or rendered images all values
// are sRGB intensities in [0,1]; after normalization (preprocess) values are
// unrestricted. The optional mask marks excluded pixels (true = lesion).
struct PatchTensor {
    int height = 0;
    int width = 0;
    std::vector<float> data;            // size height*width*3, interleaved RGB
    std::optional<std::vector<uint8_t>> mask;  // size height*width, nonzero = excluded

    static PatchTensor zeros(int h, int w) {
        PatchTensor t;
        t.height = h;
        t.width = w;
        t.data.assign(static_cast<size_t>(h) * w * 3, 0.0f);
        return t;
    }

    size_t pixel_count() const { return static_cast<size_t>(height) * width; }

    float* pixel(int y, int x) { return data.data() + (static_cast<size_t>(y) * width + x) * 3; }
    const float* pixel(int y, int x) const {
        return data.data() + (static_cast<size_t>(y) * width + x) * 3;
    }

    bool masked(int y, int x) const {
        return mask && (*mask)[static_cast<size_t>(y) * width + x] != 0;
    }

    SrgbColor srgb_at(int y, int x) const {
        const float* p = pixel(y, x);
        return SrgbColor{p[0], p[1], p[2]};
    }

    // Checks the invariants required of an image-valued tensor (as opposed
    // to a normalized one): min size, intensities in [0,1], mask shape.
    void validate_image(int min_side = 8) const {
        if (height < min_side || width < min_side) {
            throw validation_error("image too small: " + std::to_string(width) + "x" +
                                   std::to_string(height) + ", need at least " +
                                   std::to_string(min_side));
        }
        if (data.size() != pixel_count() * 3) {
            throw validation_error("image data size does not match dimensions");
        }
        for (float v : data) {
            if (!(v >= 0.0f && v <= 1.0f)) {
                throw validation_error("image intensities must be in [0,1]");
            }
        }
        if (mask && mask->size() != pixel_count()) {
            throw validation_error("mask shape does not match image");
        }
    }
};

// Bilinear resize (half-pixel centers, the usual convention: output pixel i
// samples source coordinate (i + 0.5) * scale - 0.5). The mask, if present,
// is resized by nearest neighbor.
inline PatchTensor resize_bilinear(const PatchTensor& src, int out_h, int out_w) {
    if (out_h <= 0 || out_w <= 0) throw validation_error("resize target must be positive");
    if (src.height <= 0 || src.width <= 0) throw validation_error("resize source is empty");

    PatchTensor dst = PatchTensor::zeros(out_h, out_w);
    double sy = static_cast<double>(src.height) / out_h;
    double sx = static_cast<double>(src.width) / out_w;

    for (int y = 0; y < out_h; ++y) {
        double fy = (y + 0.5) * sy - 0.5;
        int y0 = static_cast<int>(std::floor(fy));
        double wy = fy - y0;
        int y1 = y0 + 1;
        y0 = std::min(std::max(y0, 0), src.height - 1);
        y1 = std::min(std::max(y1, 0), src.height - 1);
        for (int x = 0; x < out_w; ++x) {
            double fx = (x + 0.5) * sx - 0.5;
            int x0 = static_cast<int>(std::floor(fx));
            double wx = fx - x0;
            int x1 = x0 + 1;
            x0 = std::min(std::max(x0, 0), src.width - 1);
            x1 = std::min(std::max(x1, 0), src.width - 1);

            const float* p00 = src.pixel(y0, x0);
            const float* p01 = src.pixel(y0, x1);
            const float* p10 = src.pixel(y1, x0);
            const float* p11 = src.pixel(y1, x1);
            float* out = dst.pixel(y, x);
            for (int c = 0; c < 3; ++c) {
                double top = p00[c] * (1.0 - wx) + p01[c] * wx;
                double bot = p10[c] * (1.0 - wx) + p11[c] * wx;
                out[c] = static_cast<float>(top * (1.0 - wy) + bot * wy);
            }
        }
    }

    if (src.mask) {
        std::vector<uint8_t> m(static_cast<size_t>(out_h) * out_w, 0);
        for (int y = 0; y < out_h; ++y) {
            int syi = std::min(static_cast<int>((y + 0.5) * sy), src.height - 1);
            for (int x = 0; x < out_w; ++x) {
                int sxi = std::min(static_cast<int>((x + 0.5) * sx), src.width - 1);
                m[static_cast<size_t>(y) * out_w + x] =
                    (*src.mask)[static_cast<size_t>(syi) * src.width + sxi];
            }
        }
        dst.mask = std::move(m);
    }
    return dst;
}

// Per-channel (x - mean) / std, in place.
inline void normalize_channels(PatchTensor& t, const std::array<double, 3>& mean,
                               const std::array<double, 3>& std_dev) {
    for (int c = 0; c < 3; ++c) {
        if (std_dev[c] <= 0.0) throw validation_error("normalization std must be positive");
    }
    const size_t n = t.pixel_count();
    for (size_t i = 0; i < n; ++i) {
        for (int c = 0; c < 3; ++c) {
            t.data[i * 3 + c] =
                static_cast<float>((t.data[i * 3 + c] - mean[c]) / std_dev[c]);
        }
    }
}

// Interleaved HWC float -> planar CHW double, the layout the network consumes.
inline std::vector<double> to_chw(const PatchTensor& t) {
    std::vector<double> out(t.pixel_count() * 3);
    const size_t plane = t.pixel_count();
    for (size_t i = 0; i < plane; ++i) {
        for (size_t c = 0; c < 3; ++c) {
            out[c * plane + i] = t.data[i * 3 + c];
        }
    }
    return out;
}

}  // namespace tonemeter

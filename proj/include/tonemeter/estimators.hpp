// Pixel-statistics ITA baselines: k-means dominant color, border-patch
// averaging, and Shades-of-Gray white balance.
#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "tonemeter/color.hpp"
#include "tonemeter/common.hpp"
#include "tonemeter/image.hpp"

namespace tonemeter {

struct EstimatorResult {
    LabColor lab;
    ItaDegrees ita_degrees;
    // diagnostics
    std::vector<size_t> cluster_sizes;  // k-means only
    int patches_used = 0;               // patch baseline only
    int patches_discarded_mask = 0;
    int patches_discarded_variance = 0;
    int iterations = 0;  // k-means Lloyd iterations
};

struct KmeansConfig {
    int k = 3;
    uint64_t seed = 0;
    int max_iterations = 100;
};

namespace detail {

// Non-masked pixel Lab values sorted lexicographically. Sorting makes the
// estimator a function of the pixel multiset, so permuting pixel positions
// cannot change the result.
inline std::vector<LabColor> sorted_lab_pixels(const PatchTensor& img) {
    std::vector<LabColor> labs;
    labs.reserve(img.pixel_count());
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            if (img.masked(y, x)) continue;
            labs.push_back(srgb_to_lab(img.srgb_at(y, x)));
        }
    }
    std::sort(labs.begin(), labs.end(), [](const LabColor& p, const LabColor& q) {
        if (p.L != q.L) return p.L < q.L;
        if (p.a != q.a) return p.a < q.a;
        return p.b < q.b;
    });
    return labs;
}

inline double lab_dist2(const LabColor& p, const LabColor& q) {
    double dL = p.L - q.L, da = p.a - q.a, db = p.b - q.b;
    return dL * dL + da * da + db * db;
}

}  // namespace detail

// Dominant-color ITA: k-means over non-masked pixels in Lab space,
// k-means++ init with the given seed, result = centroid of the largest
// cluster (ties broken toward the lower cluster index).
inline EstimatorResult kmeans_ita(const PatchTensor& img, const KmeansConfig& cfg = {}) {
    if (cfg.k < 1) throw validation_error("k-means requires k >= 1");
    std::vector<LabColor> px = detail::sorted_lab_pixels(img);
    if (px.empty()) throw validation_error("k-means: no unmasked pixels");
    if (px.size() < static_cast<size_t>(cfg.k)) {
        throw validation_error("k-means: fewer unmasked pixels (" + std::to_string(px.size()) +
                               ") than clusters (" + std::to_string(cfg.k) + ")");
    }

    const int k = cfg.k;
    Rng rng(mix_seed(cfg.seed, 0x6b6d65616e73ull));  // "kmeans"

    // k-means++ seeding
    std::vector<LabColor> centers;
    centers.reserve(k);
    centers.push_back(px[rng.uniform_int(px.size())]);
    std::vector<double> d2(px.size());
    for (int c = 1; c < k; ++c) {
        double total = 0.0;
        for (size_t i = 0; i < px.size(); ++i) {
            double best = detail::lab_dist2(px[i], centers[0]);
            for (size_t j = 1; j < centers.size(); ++j) {
                best = std::min(best, detail::lab_dist2(px[i], centers[j]));
            }
            d2[i] = best;
            total += best;
        }
        if (total <= 0.0) {
            centers.push_back(px[0]);  // all points coincide with a center
            continue;
        }
        double r = rng.uniform01() * total;
        size_t pick = px.size() - 1;
        double acc = 0.0;
        for (size_t i = 0; i < px.size(); ++i) {
            acc += d2[i];
            if (acc >= r) {
                pick = i;
                break;
            }
        }
        centers.push_back(px[pick]);
    }

    std::vector<int> assign(px.size(), 0);
    std::vector<size_t> counts(k, 0);
    int iter = 0;
    for (; iter < cfg.max_iterations; ++iter) {
        bool changed = false;
        for (size_t i = 0; i < px.size(); ++i) {
            int best = 0;
            double bestd = detail::lab_dist2(px[i], centers[0]);
            for (int j = 1; j < k; ++j) {
                double d = detail::lab_dist2(px[i], centers[j]);
                if (d < bestd) {
                    bestd = d;
                    best = j;
                }
            }
            if (assign[i] != best) {
                assign[i] = best;
                changed = true;
            }
        }
        if (!changed && iter > 0) break;

        std::vector<LabColor> sums(k);
        counts.assign(k, 0);
        for (size_t i = 0; i < px.size(); ++i) {
            sums[assign[i]].L += px[i].L;
            sums[assign[i]].a += px[i].a;
            sums[assign[i]].b += px[i].b;
            counts[assign[i]]++;
        }
        for (int j = 0; j < k; ++j) {
            if (counts[j] == 0) {
                // re-seed an empty cluster at the point farthest from its center
                size_t far_i = 0;
                double far_d = -1.0;
                for (size_t i = 0; i < px.size(); ++i) {
                    double d = detail::lab_dist2(px[i], centers[assign[i]]);
                    if (d > far_d) {
                        far_d = d;
                        far_i = i;
                    }
                }
                centers[j] = px[far_i];
            } else {
                centers[j] = LabColor{sums[j].L / counts[j], sums[j].a / counts[j],
                                      sums[j].b / counts[j]};
            }
        }
    }

    counts.assign(k, 0);
    std::vector<LabColor> sums(k);
    for (size_t i = 0; i < px.size(); ++i) {
        sums[assign[i]].L += px[i].L;
        sums[assign[i]].a += px[i].a;
        sums[assign[i]].b += px[i].b;
        counts[assign[i]]++;
    }
    int largest = 0;
    for (int j = 1; j < k; ++j) {
        if (counts[j] > counts[largest]) largest = j;
    }

    EstimatorResult res;
    if (counts[largest] == 0) throw validation_error("k-means: empty dominant cluster");
    res.lab = LabColor{sums[largest].L / counts[largest], sums[largest].a / counts[largest],
                       sums[largest].b / counts[largest]};
    res.ita_degrees = ita(res.lab);
    res.cluster_sizes.assign(counts.begin(), counts.end());
    res.iterations = iter;
    return res;
}

struct PatchConfig {
    int patch_size = 20;
    double variance_cutoff = 50.0;  // Lab units^2, total variance within a patch
};

// Border-patch ITA: mean Lab over 8 fixed patches (4 corners, 4 edge
// midpoints). Patches touching the mask or exceeding the Lab variance cutoff
// are discarded; the rest contribute their mean Lab, averaged unweighted.
inline EstimatorResult patch_ita(const PatchTensor& img, const PatchConfig& cfg = {}) {
    const int p = cfg.patch_size;
    if (p < 1) throw validation_error("patch size must be positive");
    if (img.height < p || img.width < p) {
        throw validation_error("image too small for " + std::to_string(p) + "x" +
                               std::to_string(p) + " border patches");
    }

    const int ym = (img.height - p) / 2;
    const int xm = (img.width - p) / 2;
    const int yb = img.height - p;
    const int xr = img.width - p;
    const int origins[8][2] = {{0, 0},   {0, xr},  {yb, 0},  {yb, xr},
                               {0, xm},  {yb, xm}, {ym, 0},  {ym, xr}};

    EstimatorResult res;
    LabColor acc;
    for (const auto& o : origins) {
        bool touches_mask = false;
        LabColor mean;
        std::vector<LabColor> labs;
        labs.reserve(static_cast<size_t>(p) * p);
        for (int y = o[0]; y < o[0] + p && !touches_mask; ++y) {
            for (int x = o[1]; x < o[1] + p; ++x) {
                if (img.masked(y, x)) {
                    touches_mask = true;
                    break;
                }
                labs.push_back(srgb_to_lab(img.srgb_at(y, x)));
            }
        }
        if (touches_mask) {
            res.patches_discarded_mask++;
            continue;
        }
        for (const auto& l : labs) {
            mean.L += l.L;
            mean.a += l.a;
            mean.b += l.b;
        }
        mean.L /= labs.size();
        mean.a /= labs.size();
        mean.b /= labs.size();
        double var = 0.0;
        for (const auto& l : labs) var += detail::lab_dist2(l, mean);
        var /= labs.size();
        if (var > cfg.variance_cutoff) {
            res.patches_discarded_variance++;
            continue;
        }
        acc.L += mean.L;
        acc.a += mean.a;
        acc.b += mean.b;
        res.patches_used++;
    }

    if (res.patches_used == 0) {
        throw validation_error(
            "all 8 border patches discarded (" + std::to_string(res.patches_discarded_mask) +
            " overlapped the mask, " + std::to_string(res.patches_discarded_variance) +
            " exceeded the variance cutoff)");
    }
    res.lab = LabColor{acc.L / res.patches_used, acc.a / res.patches_used,
                       acc.b / res.patches_used};
    res.ita_degrees = ita(res.lab);
    return res;
}

struct ShadesOfGrayResult {
    PatchTensor image;
    bool clamped = false;
    bool identity = false;  // illuminant was undefined; input returned unchanged
    double illuminant[3] = {0, 0, 0};
};

// Shades-of-Gray white balance: per-channel illuminant estimate
// e_c = mean(I_c^p)^(1/p); channels are rescaled by mean(e)/e_c so the
// corrected illuminant is gray with the overall level preserved. p=1 is
// Gray-World. Operates on the stored intensities; the mask is ignored, the
// estimate is a global image statistic.
inline ShadesOfGrayResult shades_of_gray(const PatchTensor& img, double p = 6.0) {
    if (p < 1.0) throw validation_error("Shades-of-Gray requires p >= 1");

    ShadesOfGrayResult out;
    double sums[3] = {0, 0, 0};
    const size_t n = img.pixel_count();
    for (size_t i = 0; i < n; ++i) {
        for (int c = 0; c < 3; ++c) {
            sums[c] += std::pow(static_cast<double>(img.data[i * 3 + c]), p);
        }
    }
    double mean_e = 0.0;
    for (int c = 0; c < 3; ++c) {
        out.illuminant[c] = std::pow(sums[c] / static_cast<double>(n), 1.0 / p);
        mean_e += out.illuminant[c];
    }
    mean_e /= 3.0;

    // A vanishing channel (all-black image included) leaves the illuminant
    // undefined; return the input unchanged.
    for (int c = 0; c < 3; ++c) {
        if (out.illuminant[c] <= 1e-12) {
            out.image = img;
            out.identity = true;
            return out;
        }
    }

    out.image = img;
    double scale[3];
    for (int c = 0; c < 3; ++c) scale[c] = mean_e / out.illuminant[c];
    for (size_t i = 0; i < n; ++i) {
        for (int c = 0; c < 3; ++c) {
            double v = img.data[i * 3 + c] * scale[c];
            if (v < 0.0 || v > 1.0) {
                out.clamped = true;
                v = v < 0.0 ? 0.0 : 1.0;
            }
            out.image.data[i * 3 + c] = static_cast<float>(v);
        }
    }
    return out;
}

}  // namespace tonemeter

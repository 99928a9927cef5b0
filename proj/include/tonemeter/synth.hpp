// Synthetic skin-patch generator with known ground truth. Truth is the
// pre-illumination skin color, mirroring contact colorimetry: the rendered
// pixels carry illumination gain, color cast, and noise on top of it.
#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tonemeter/color.hpp"
#include "tonemeter/common.hpp"
#include "tonemeter/dataset.hpp"
#include "tonemeter/image.hpp"
#include "tonemeter/png_io.hpp"

namespace tonemeter {

// Documented closed-form melanin -> CIELAB map (the ground-truth curve):
//   L* = 75 - 50 m      (strictly decreasing, ~75 at m=0 down to ~25 at m=1)
//   a* =  8 + 10 m
//   b* = 16 +  8 m
// Chromaticity varies with m, so the true tone stays identifiable under a
// pure intensity gain; ITA(lab(m)) is strictly decreasing in m.
inline LabColor melanin_to_lab(double m) {
    if (!(m >= 0.0 && m <= 1.0)) {
        throw validation_error("melanin fraction outside [0,1]");
    }
    return LabColor{75.0 - 50.0 * m, 8.0 + 10.0 * m, 16.0 + 8.0 * m};
}

// Five strictly increasing cut points in (0,1). Uniform sixths by default;
// the empirically calibrated thresholds of the source pipelines are not
// published, so these are a declared placeholder.
struct MelaninThresholds {
    std::array<double, 5> cuts{1.0 / 6, 2.0 / 6, 3.0 / 6, 4.0 / 6, 5.0 / 6};

    void validate() const {
        double prev = 0.0;
        for (double c : cuts) {
            if (!(c > prev && c < 1.0)) {
                throw validation_error("melanin thresholds must be strictly increasing in (0,1)");
            }
            prev = c;
        }
    }
};

// Bin index 1..6: one plus the number of cut points <= m (bins are
// left-closed, so m exactly on a cut belongs to the bin above it).
inline int melanin_to_fp(double m, const MelaninThresholds& thresholds = {}) {
    if (!(m >= 0.0 && m <= 1.0)) throw validation_error("melanin fraction outside [0,1]");
    thresholds.validate();
    int fp = 1;
    for (double c : thresholds.cuts) {
        if (c <= m) ++fp;
    }
    return fp;
}

struct LesionSpec {
    double center_x = 0.5;  // fractions of the patch size
    double center_y = 0.5;
    double radius = 0.18;
    double darkening = 0.55;  // multiplicative, < 1
};

struct SynthParams {
    double melanin = 0.5;
    double gain = 1.0;        // global illumination scalar
    double ramp_slope = 0.0;  // linear left-to-right gain ramp (+-fraction at the edges)
    std::array<double, 3> cast{1.0, 1.0, 1.0};
    double noise_sigma = 0.0;
    std::optional<LesionSpec> lesion;
    uint64_t seed = 0;
    int size = 64;

    void validate() const {
        if (!(melanin >= 0.0 && melanin <= 1.0)) throw validation_error("melanin outside [0,1]");
        if (!(gain > 0.0)) throw validation_error("gain must be positive");
        if (!(noise_sigma >= 0.0)) throw validation_error("noise sigma must be >= 0");
        if (size < 8) throw validation_error("patch size must be >= 8");
        for (double c : cast) {
            if (!(c > 0.0)) throw validation_error("cast gains must be positive");
        }
        if (lesion) {
            if (!(lesion->radius > 0.0 && lesion->radius < 0.5)) {
                throw validation_error("lesion radius fraction outside (0, 0.5)");
            }
            if (!(lesion->darkening > 0.0 && lesion->darkening <= 1.0)) {
                throw validation_error("lesion darkening outside (0, 1]");
            }
        }
    }
};

struct SynthSample {
    PatchTensor image;
    LabColor truth_lab;  // pre-illumination skin color
    int truth_fp = 1;
    SynthParams params;
    bool clamped = false;
};

// Renders one patch: base color from the melanin map, darker lesion disk,
// then gain ramp x global gain x per-channel cast applied to the stored
// intensities, plus Gaussian pixel noise. Deterministic for (params, seed).
inline SynthSample render(const SynthParams& params,
                          const MelaninThresholds& thresholds = {}) {
    params.validate();
    SynthSample s;
    s.params = params;
    s.truth_lab = melanin_to_lab(params.melanin);
    s.truth_fp = melanin_to_fp(params.melanin, thresholds);

    SrgbConversion base = lab_to_srgb(s.truth_lab);
    s.clamped = base.clamped;
    const int n = params.size;
    s.image = PatchTensor::zeros(n, n);

    double cx = 0.0, cy = 0.0, r2 = 0.0;
    std::vector<uint8_t> mask;
    if (params.lesion) {
        cx = params.lesion->center_x * n;
        cy = params.lesion->center_y * n;
        double r = params.lesion->radius * n;
        r2 = r * r;
        mask.assign(static_cast<size_t>(n) * n, 0);
    }

    Rng rng(mix_seed(params.seed, 0x72656e646572ull));  // "render"
    const double base_c[3] = {base.color.r, base.color.g, base.color.b};
    for (int y = 0; y < n; ++y) {
        for (int x = 0; x < n; ++x) {
            double factor = 1.0;
            if (params.lesion) {
                double dx = (x + 0.5) - cx;
                double dy = (y + 0.5) - cy;
                if (dx * dx + dy * dy <= r2) {
                    factor = params.lesion->darkening;
                    mask[static_cast<size_t>(y) * n + x] = 1;
                }
            }
            double gain_field =
                params.gain *
                (1.0 + params.ramp_slope * (static_cast<double>(x) / (n - 1) - 0.5));
            float* px = s.image.pixel(y, x);
            for (int c = 0; c < 3; ++c) {
                double v = base_c[c] * factor * gain_field * params.cast[c];
                if (params.noise_sigma > 0.0) v += rng.normal(0.0, params.noise_sigma);
                if (v < 0.0 || v > 1.0) {
                    s.clamped = true;
                    v = v < 0.0 ? 0.0 : 1.0;
                }
                px[c] = static_cast<float>(v);
            }
        }
    }
    if (params.lesion) s.image.mask = std::move(mask);
    return s;
}

// Sampling distribution for a corpus. Subjects share one melanin value
// across their images; acquisition parameters vary per image.
struct CorpusSpec {
    int subjects = 60;
    int images_per_subject = 10;
    int image_size = 64;
    bool stratify_fp = true;  // spread subjects evenly over the 6 bands
    // With stratification off, subject melanin is drawn as u^melanin_power
    // (u uniform). power > 1 skews toward lighter skin, the shape public
    // dermatoscopy benchmarks actually have.
    double melanin_power = 1.0;
    double gain_min = 1.0, gain_max = 1.0;
    double cast_min = 1.0, cast_max = 1.0;
    double ramp_min = 0.0, ramp_max = 0.0;
    double noise_sigma = 0.0;
    double lesion_probability = 0.0;
    MelaninThresholds thresholds;

    void validate() const {
        if (subjects < 0 || images_per_subject < 1) {
            throw validation_error("corpus needs subjects >= 0 and images_per_subject >= 1");
        }
        if (gain_min > gain_max || cast_min > cast_max || ramp_min > ramp_max) {
            throw validation_error("corpus parameter ranges are inverted");
        }
        if (lesion_probability < 0.0 || lesion_probability > 1.0) {
            throw validation_error("lesion probability outside [0,1]");
        }
        if (!(melanin_power > 0.0)) throw validation_error("melanin power must be positive");
        thresholds.validate();
    }
};

struct CorpusEntry {
    SynthSample sample;
    std::string subject_id;
    std::string site;  // cycled through the site list, for stratified reports
    std::string image_name;
    std::string mask_name;  // empty when no lesion
};

// Deterministic corpus: subject melanin, per-image acquisition parameters,
// and render noise all come from seeds derived from (seed, subject, image).
inline std::vector<CorpusEntry> generate_corpus(const CorpusSpec& spec, uint64_t seed) {
    spec.validate();
    std::vector<CorpusEntry> entries;
    entries.reserve(static_cast<size_t>(spec.subjects) * spec.images_per_subject);

    for (int s = 0; s < spec.subjects; ++s) {
        Rng subj_rng(mix_seed(seed, 0x7375626aull, static_cast<uint64_t>(s)));  // "subj"
        double m;
        if (spec.stratify_fp) {
            int stratum = s % 6;
            double lo = stratum == 0 ? 0.0 : spec.thresholds.cuts[stratum - 1];
            double hi = stratum == 5 ? 1.0 : spec.thresholds.cuts[stratum];
            m = subj_rng.uniform(lo, hi);
        } else {
            m = std::pow(subj_rng.uniform01(), spec.melanin_power);
        }

        char subj_name[32];
        std::snprintf(subj_name, sizeof(subj_name), "subj_%04d", s);

        for (int i = 0; i < spec.images_per_subject; ++i) {
            uint64_t tag = static_cast<uint64_t>(s) * 1000003ull + static_cast<uint64_t>(i);
            Rng img_rng(mix_seed(seed, 0x696d6167ull, tag));  // "imag"
            SynthParams p;
            p.melanin = m;
            p.size = spec.image_size;
            p.gain = img_rng.uniform(spec.gain_min, spec.gain_max);
            p.ramp_slope = img_rng.uniform(spec.ramp_min, spec.ramp_max);
            for (int c = 0; c < 3; ++c) p.cast[c] = img_rng.uniform(spec.cast_min, spec.cast_max);
            p.noise_sigma = spec.noise_sigma;
            if (spec.lesion_probability > 0.0 &&
                img_rng.uniform01() < spec.lesion_probability) {
                LesionSpec les;
                les.center_x = img_rng.uniform(0.42, 0.58);
                les.center_y = img_rng.uniform(0.42, 0.58);
                les.radius = img_rng.uniform(0.12, 0.25);
                les.darkening = img_rng.uniform(0.4, 0.7);
                p.lesion = les;
            }
            p.seed = mix_seed(seed, 0x72656e64ull, tag);  // "rend"

            CorpusEntry e;
            e.sample = render(p, spec.thresholds);
            e.subject_id = subj_name;
            e.site = kSites[(static_cast<size_t>(s) * spec.images_per_subject + i) % kSites.size()];
            char img_name[64];
            std::snprintf(img_name, sizeof(img_name), "images/%s_img%03d.png", subj_name, i);
            e.image_name = img_name;
            if (p.lesion) {
                std::snprintf(img_name, sizeof(img_name), "masks/%s_img%03d_mask.png", subj_name,
                              i);
                e.mask_name = img_name;
            }
            entries.push_back(std::move(e));
        }
    }
    return entries;
}

inline ManifestRow corpus_entry_row(const CorpusEntry& e) {
    ManifestRow r;
    r.image_path = e.image_name;
    r.subject_id = e.subject_id;
    r.site = e.site;
    r.modality = "dermatoscopic";
    r.fitzpatrick = e.sample.truth_fp;
    r.colorimeter = e.sample.truth_lab;  // the pre-illumination truth plays colorimeter
    r.lesion_mask_path = e.mask_name;
    return r;
}

// Writes images (8-bit PNG), lesion masks, and the manifest; returns the
// manifest path.
inline std::string write_corpus(const std::vector<CorpusEntry>& entries,
                                const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(out_dir) / "images");
    bool any_mask = false;
    for (const auto& e : entries) any_mask |= !e.mask_name.empty();
    if (any_mask) fs::create_directories(fs::path(out_dir) / "masks");

    std::vector<ManifestRow> rows;
    rows.reserve(entries.size());
    for (const auto& e : entries) {
        save_image((fs::path(out_dir) / e.image_name).string(), e.sample.image);
        if (!e.mask_name.empty()) {
            std::vector<uint8_t> gray(e.sample.image.pixel_count());
            for (size_t i = 0; i < gray.size(); ++i) {
                gray[i] = (*e.sample.image.mask)[i] ? 255 : 0;
            }
            write_png_gray8((fs::path(out_dir) / e.mask_name).string(), e.sample.image.width,
                            e.sample.image.height, gray);
        }
        rows.push_back(corpus_entry_row(e));
    }
    std::string manifest_path = (fs::path(out_dir) / "manifest.csv").string();
    save_manifest(rows, manifest_path);
    return manifest_path;
}

}  // namespace tonemeter

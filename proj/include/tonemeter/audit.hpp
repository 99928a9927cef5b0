// Dataset auditing and evaluation: runs an estimator (pixel baseline or
// fold ensemble) over a manifest, builds skin-tone composition reports,
// agreement tables, and swatch grids.
#pragma once

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "tonemeter/checkpoint.hpp"
#include "tonemeter/color.hpp"
#include "tonemeter/dataset.hpp"
#include "tonemeter/estimators.hpp"
#include "tonemeter/png_io.hpp"
#include "tonemeter/stats.hpp"

namespace tonemeter {

// Work is pulled from an atomic counter; each item writes only its own
// slot, so the aggregate is independent of the thread count.
template <typename Fn>
void parallel_for_index(size_t n, int threads, Fn&& fn) {
    threads = std::max(1, threads);
    if (threads == 1 || n <= 1) {
        for (size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto worker = [&] {
        for (size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!error) error = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

struct EstimatorSpec {
    enum class Kind { kmeans, patch, net };
    Kind kind = Kind::kmeans;
    KmeansConfig kmeans;
    PatchConfig patch;
    bool use_shades_of_gray = false;  // ablation toggle; off by default
    double sog_p = 6.0;
    std::vector<ModelCheckpoint> fp_checkpoints;
    std::vector<ModelCheckpoint> lab_checkpoints;
    ItaBands bands;  // baseline FP reporting is ITA-band derived, not clinical

    // Where the reported rank comes from: a trained ensemble, or the
    // explicitly labeled ITA banding of a pixel baseline.
    std::string fp_source() const {
        if (kind != Kind::net) return "ita-band";
        if (fp_checkpoints.empty()) return "none";
        return fp_checkpoints[0].network.head == HeadKind::ordinal ? "ordinal-ensemble"
                                                                   : "classification-ensemble";
    }

    std::string describe() const {
        char buf[160];
        switch (kind) {
            case Kind::kmeans:
                std::snprintf(buf, sizeof(buf), "kmeans(k=%d,seed=%llu)%s", kmeans.k,
                              static_cast<unsigned long long>(kmeans.seed),
                              use_shades_of_gray ? "+shades-of-gray" : "");
                return buf;
            case Kind::patch:
                std::snprintf(buf, sizeof(buf), "patch(size=%d,varcut=%g)%s", patch.patch_size,
                              patch.variance_cutoff,
                              use_shades_of_gray ? "+shades-of-gray" : "");
                return buf;
            case Kind::net: {
                std::string s = "net(";
                s += std::to_string(fp_checkpoints.size()) + " fp folds, ";
                s += std::to_string(lab_checkpoints.size()) + " lab folds)";
                if (use_shades_of_gray) s += "+shades-of-gray";
                return s;
            }
        }
        return "?";
    }

    std::vector<std::string> checkpoint_hashes() const {
        std::vector<std::string> hashes;
        for (const auto* set : {&fp_checkpoints, &lab_checkpoints}) {
            for (const auto& ck : *set) {
                char buf[24];
                std::snprintf(buf, sizeof(buf), "%016llx",
                              static_cast<unsigned long long>(ck.content_hash()));
                hashes.emplace_back(buf);
            }
        }
        return hashes;
    }
};

// One estimator instance with its ensembles instantiated once; predict()
// is const and safe to call from multiple threads.
class Predictor {
public:
    explicit Predictor(const EstimatorSpec& spec) : spec_(spec) {
        if (spec.kind == EstimatorSpec::Kind::net) {
            if (spec.fp_checkpoints.empty() && spec.lab_checkpoints.empty()) {
                throw validation_error("net estimator needs at least one checkpoint set");
            }
            if (!spec.fp_checkpoints.empty()) fp_.emplace(spec.fp_checkpoints);
            if (!spec.lab_checkpoints.empty()) lab_.emplace(spec.lab_checkpoints);
        } else {
            spec_.bands.validate();
        }
    }

    PredictionRow predict(const PatchTensor& raw) const {
        PredictionRow out;
        const PatchTensor* img = &raw;
        PatchTensor balanced;
        if (spec_.use_shades_of_gray) {
            balanced = shades_of_gray(raw, spec_.sog_p).image;
            balanced.mask = raw.mask;
            img = &balanced;
        }

        switch (spec_.kind) {
            case EstimatorSpec::Kind::kmeans: {
                EstimatorResult r = kmeans_ita(*img, spec_.kmeans);
                out.pred_lab = r.lab;
                out.pred_ita = r.ita_degrees.degrees;
                out.pred_fp = ita_to_fitzpatrick(r.ita_degrees, spec_.bands);
                break;
            }
            case EstimatorSpec::Kind::patch: {
                EstimatorResult r = patch_ita(*img, spec_.patch);
                out.pred_lab = r.lab;
                out.pred_ita = r.ita_degrees.degrees;
                out.pred_fp = ita_to_fitzpatrick(r.ita_degrees, spec_.bands);
                break;
            }
            case EstimatorSpec::Kind::net: {
                if (fp_) out.pred_fp = fp_->predict(*img).fp;
                if (lab_) {
                    EnsemblePrediction p = lab_->predict(*img);
                    out.pred_lab = p.lab;
                    out.pred_ita = p.ita_degrees;
                }
                break;
            }
        }
        return out;
    }

private:
    EstimatorSpec spec_;
    std::optional<Ensemble> fp_;
    std::optional<Ensemble> lab_;
};

inline PredictionRow predict_image(const PatchTensor& raw, const EstimatorSpec& spec) {
    return Predictor(spec).predict(raw);
}

// Runs the estimator over manifest rows in path-sorted order. Results are
// aggregated by index, so any thread count produces identical output.
inline std::vector<PredictionRow> run_estimator(const std::string& manifest_dir,
                                                std::vector<ManifestRow> rows,
                                                const EstimatorSpec& spec, int threads = 1) {
    std::sort(rows.begin(), rows.end(), [](const ManifestRow& a, const ManifestRow& b) {
        return a.image_path < b.image_path;
    });
    Predictor predictor(spec);
    std::vector<PredictionRow> preds(rows.size());
    parallel_for_index(rows.size(), threads, [&](size_t i) {
        PatchTensor img = load_row_image(manifest_dir, rows[i]);
        PredictionRow p = predictor.predict(img);
        p.image_path = rows[i].image_path;
        p.subject_id = rows[i].subject_id;
        p.fold = rows[i].fold;
        preds[i] = std::move(p);
    });
    return preds;
}

struct AuditReport {
    std::string dataset;
    size_t n_images = 0;
    size_t n_subjects = 0;
    std::array<size_t, 6> fp_counts{};
    size_t n_with_fp = 0;
    std::string fp_source;
    double ita_bin_width = 10.0;
    std::vector<size_t> ita_counts;  // bins covering [-90, 90]
    size_t n_with_ita = 0;
    std::string estimator;
    std::vector<std::string> checkpoint_hashes;
    std::string modality_filter;
    uint64_t seed = 0;

    std::array<double, 6> fp_percent() const {
        std::array<double, 6> pct{};
        if (n_with_fp == 0) return pct;
        for (int i = 0; i < 6; ++i) {
            pct[i] = 100.0 * static_cast<double>(fp_counts[i]) / static_cast<double>(n_with_fp);
        }
        return pct;
    }
};

inline AuditReport build_audit_report(std::span<const ManifestRow> rows,
                                      std::span<const PredictionRow> preds,
                                      const EstimatorSpec& spec, const std::string& dataset,
                                      const std::string& modality_filter, uint64_t seed,
                                      double ita_bin_width = 10.0) {
    if (!(ita_bin_width > 0.0 && ita_bin_width <= 180.0)) {
        throw validation_error("ITA bin width must be in (0, 180]");
    }
    AuditReport rep;
    rep.dataset = dataset;
    rep.n_images = preds.size();
    std::set<std::string> subjects;
    for (const auto& r : rows) subjects.insert(r.subject_id);
    rep.n_subjects = subjects.size();
    rep.fp_source = spec.fp_source();
    rep.estimator = spec.describe();
    rep.checkpoint_hashes = spec.checkpoint_hashes();
    rep.modality_filter = modality_filter;
    rep.seed = seed;
    rep.ita_bin_width = ita_bin_width;
    const int nbins = static_cast<int>(std::ceil(180.0 / ita_bin_width));
    rep.ita_counts.assign(nbins, 0);

    for (const auto& p : preds) {
        if (p.pred_fp) {
            if (*p.pred_fp < 1 || *p.pred_fp > 6) {
                throw validation_error("prediction rank outside 1..6");
            }
            rep.fp_counts[*p.pred_fp - 1]++;
            rep.n_with_fp++;
        }
        if (p.pred_ita) {
            int bin = static_cast<int>(std::floor((*p.pred_ita + 90.0) / ita_bin_width));
            bin = std::min(std::max(bin, 0), nbins - 1);
            rep.ita_counts[bin]++;
            rep.n_with_ita++;
        }
    }
    return rep;
}

inline nlohmann::ordered_json audit_to_json(const AuditReport& r) {
    nlohmann::ordered_json j;
    j["dataset"] = r.dataset;
    j["n_images"] = r.n_images;
    j["n_subjects"] = r.n_subjects;
    j["modality_filter"] = r.modality_filter;
    j["estimator"] = r.estimator;
    j["checkpoint_hashes"] = r.checkpoint_hashes;
    j["seed"] = r.seed;
    j["fp_source"] = r.fp_source;
    j["n_with_fp"] = r.n_with_fp;
    auto pct = r.fp_percent();
    nlohmann::ordered_json comp;
    for (int i = 0; i < 6; ++i) {
        comp["fp" + std::to_string(i + 1)] = {{"count", r.fp_counts[i]},
                                              {"percent", pct[i]}};
    }
    j["fp_composition"] = comp;
    j["n_with_ita"] = r.n_with_ita;
    j["ita_bin_width"] = r.ita_bin_width;
    auto hist = nlohmann::ordered_json::array();
    for (size_t b = 0; b < r.ita_counts.size(); ++b) {
        double lo = -90.0 + static_cast<double>(b) * r.ita_bin_width;
        hist.push_back({{"lo", lo},
                        {"hi", std::min(90.0, lo + r.ita_bin_width)},
                        {"count", r.ita_counts[b]}});
    }
    j["ita_histogram"] = hist;
    return j;
}

// Plot-ready CSV: one composition block, one histogram block.
inline std::string audit_to_csv(const AuditReport& r) {
    std::string out = "table,key,value\n";
    auto pct = r.fp_percent();
    for (int i = 0; i < 6; ++i) {
        out += "fp_count,fp" + std::to_string(i + 1) + "," + std::to_string(r.fp_counts[i]) + "\n";
    }
    for (int i = 0; i < 6; ++i) {
        out += "fp_percent,fp" + std::to_string(i + 1) + "," + csv::format_double(pct[i]) + "\n";
    }
    for (size_t b = 0; b < r.ita_counts.size(); ++b) {
        double lo = -90.0 + static_cast<double>(b) * r.ita_bin_width;
        out += "ita_histogram," + csv::format_double(lo) + "," +
               std::to_string(r.ita_counts[b]) + "\n";
    }
    return out;
}

struct EvalOptions {
    std::string modality = "dermatoscopic";
    bool by_site = true;
    int bootstrap_resamples = 1000;
    double level = 0.95;
    uint64_t seed = 0;
};

struct EvalResult {
    std::vector<AgreementReport> reports;
    std::vector<std::string> notes;  // explicit "no data" strata and skipped metrics
};

namespace detail {

inline void add_rating_metrics(EvalResult& out, const std::vector<RatingPair>& pairs,
                               const std::string& stratum, const EvalOptions& opt) {
    if (pairs.size() < 2) {
        out.notes.push_back("no data for stratum " + stratum + " (rating metrics)");
        return;
    }
    auto add = [&](const std::string& name,
                   const std::function<double(const std::vector<RatingPair>&)>& metric) {
        double est = metric(pairs);
        BootstrapCi ci = bootstrap_ci<RatingPair>(
            pairs, metric, opt.bootstrap_resamples, opt.level,
            mix_seed(opt.seed, std::hash<std::string>{}(name + stratum)));
        // percentile intervals are widened to include the point estimate
        out.reports.push_back({name, est, std::min(ci.lo, est), std::max(ci.hi, est),
                               pairs.size(), stratum});
    };
    add("kappa_linear", [](const std::vector<RatingPair>& p) {
        return weighted_kappa(p).value;
    });
    add("mae", [](const std::vector<RatingPair>& p) { return ordinal_errors(p).mae; });
    add("within_one_pct",
        [](const std::vector<RatingPair>& p) { return ordinal_errors(p).within_one_pct; });
    add("bias", [](const std::vector<RatingPair>& p) { return ordinal_errors(p).bias; });
}

inline void add_continuous_metrics(EvalResult& out, const std::vector<ContinuousPair>& pairs,
                                   const std::string& stratum, const EvalOptions& opt) {
    if (pairs.size() < 3) {
        out.notes.push_back("no data for stratum " + stratum + " (ITA metrics)");
        return;
    }
    try {
        double est = icc3(pairs);
        BootstrapCi ci = bootstrap_ci<ContinuousPair>(
            pairs, [](const std::vector<ContinuousPair>& p) { return icc3(p); },
            opt.bootstrap_resamples, opt.level,
            mix_seed(opt.seed, std::hash<std::string>{}("icc3" + stratum)));
        out.reports.push_back({"icc3", est, std::min(ci.lo, est), std::max(ci.hi, est),
                               pairs.size(), stratum});
    } catch (const degenerate_statistics_error& e) {
        out.notes.push_back(std::string("icc3 skipped for ") + stratum + ": " + e.what());
    }
    BlandAltman ba = bland_altman(pairs);
    auto bias_metric = [](const std::vector<ContinuousPair>& p) {
        return bland_altman(p).bias;
    };
    BootstrapCi ci = bootstrap_ci<ContinuousPair>(
        pairs, bias_metric, opt.bootstrap_resamples, opt.level,
        mix_seed(opt.seed, std::hash<std::string>{}("ba_bias" + stratum)));
    out.reports.push_back({"ba_bias", ba.bias, std::min(ci.lo, ba.bias),
                           std::max(ci.hi, ba.bias), pairs.size(), stratum});
    out.reports.push_back({"ba_loa_lo", ba.loa_lo, ba.loa_lo, ba.loa_lo, pairs.size(), stratum});
    out.reports.push_back({"ba_loa_hi", ba.loa_hi, ba.loa_hi, ba.loa_hi, pairs.size(), stratum});
}

}  // namespace detail

// Joins predictions with manifest references and computes the agreement
// tables, overall and (optionally) per site.
inline EvalResult evaluate(std::span<const ManifestRow> rows,
                           std::span<const PredictionRow> preds, const EvalOptions& opt) {
    std::map<std::string, const PredictionRow*> by_path;
    for (const auto& p : preds) by_path[p.image_path] = &p;

    std::vector<ManifestRow> kept = filter_modality(rows, opt.modality);
    std::vector<RatingPair> ratings;
    std::vector<ContinuousPair> continuous;
    for (const auto& r : kept) {
        auto it = by_path.find(r.image_path);
        if (it == by_path.end()) continue;
        const PredictionRow& p = *it->second;
        if (r.fitzpatrick && p.pred_fp) {
            ratings.push_back({r.subject_id, *r.fitzpatrick, *p.pred_fp, r.site});
        }
        if (r.colorimeter && p.pred_ita) {
            continuous.push_back({r.subject_id, ita(*r.colorimeter).degrees, *p.pred_ita, r.site});
        }
    }

    EvalResult out;
    detail::add_rating_metrics(out, ratings, "overall", opt);
    detail::add_continuous_metrics(out, continuous, "overall", opt);
    if (opt.by_site) {
        std::set<std::string> sites;
        for (const auto& r : kept) {
            if (!r.site.empty()) sites.insert(r.site);
        }
        for (const auto& site : sites) {
            std::vector<RatingPair> rs;
            for (const auto& p : ratings) {
                if (p.stratum == site) rs.push_back(p);
            }
            std::vector<ContinuousPair> cs;
            for (const auto& p : continuous) {
                if (p.stratum == site) cs.push_back(p);
            }
            detail::add_rating_metrics(out, rs, site, opt);
            detail::add_continuous_metrics(out, cs, site, opt);
        }
    }
    return out;
}

// Per-class signed error table (the white-balance ablation comparison shape).
struct ClassBias {
    int fp = 1;
    size_t n = 0;
    double bias = 0.0;
    double ci_lo = 0.0;
    double ci_hi = 0.0;
};

inline std::vector<ClassBias> per_class_bias(std::span<const RatingPair> pairs,
                                             int bootstrap_resamples, uint64_t seed) {
    std::vector<ClassBias> table;
    for (int fp = 1; fp <= 6; ++fp) {
        std::vector<RatingPair> cls;
        for (const auto& p : pairs) {
            if (p.reference == fp) cls.push_back(p);
        }
        if (cls.empty()) continue;
        ClassBias cb;
        cb.fp = fp;
        cb.n = cls.size();
        cb.bias = ordinal_errors(cls).bias;
        BootstrapCi ci = bootstrap_ci<RatingPair>(
            cls, [](const std::vector<RatingPair>& p) { return ordinal_errors(p).bias; },
            bootstrap_resamples, 0.95, mix_seed(seed, static_cast<uint64_t>(fp)));
        cb.ci_lo = ci.lo;
        cb.ci_hi = ci.hi;
        table.push_back(cb);
    }
    return table;
}

inline nlohmann::ordered_json eval_to_json(const EvalResult& r, const EvalOptions& opt) {
    nlohmann::ordered_json j;
    j["modality_filter"] = opt.modality;
    j["bootstrap_resamples"] = opt.bootstrap_resamples;
    j["level"] = opt.level;
    j["seed"] = opt.seed;
    auto arr = nlohmann::ordered_json::array();
    for (const auto& rep : r.reports) {
        arr.push_back({{"metric", rep.metric},
                       {"stratum", rep.stratum},
                       {"estimate", rep.estimate},
                       {"ci_lo", rep.ci_lo},
                       {"ci_hi", rep.ci_hi},
                       {"n", rep.n}});
    }
    j["reports"] = arr;
    j["notes"] = r.notes;
    return j;
}

inline std::string eval_to_csv(const EvalResult& r) {
    std::string out = "metric,stratum,estimate,ci_lo,ci_hi,n\n";
    for (const auto& rep : r.reports) {
        out += rep.metric + "," + csv::quote(rep.stratum) + "," +
               csv::format_double(rep.estimate) + "," + csv::format_double(rep.ci_lo) + "," +
               csv::format_double(rep.ci_hi) + "," + std::to_string(rep.n) + "\n";
    }
    return out;
}

// --- swatch rendering -------------------------------------------------------

struct SwatchEntry {
    std::string name;
    std::optional<PatchTensor> thumbnail;
    std::optional<LabColor> truth;
    LabColor predicted;
};

struct SwatchResult {
    Image8 image;
    nlohmann::ordered_json sidecar;  // clamp flags per entry
};

// Grid rows of (thumbnail | truth swatch | predicted swatch); missing cells
// are neutral gray. Out-of-gamut swatches are clamped and flagged in the
// sidecar.
inline SwatchResult render_swatch_grid(std::span<const SwatchEntry> entries, int cell = 48,
                                       int gap = 4) {
    if (entries.empty()) throw validation_error("swatch grid needs at least one entry");
    const int cols = 3;
    const int width = cols * cell + (cols + 1) * gap;
    const int height = static_cast<int>(entries.size()) * cell +
                       (static_cast<int>(entries.size()) + 1) * gap;

    SwatchResult res;
    res.image.width = width;
    res.image.height = height;
    res.image.rgb.assign(static_cast<size_t>(width) * height * 3, 230);

    auto fill_cell = [&](int row, int col, const uint8_t rgb[3]) {
        int y0 = gap + row * (cell + gap);
        int x0 = gap + col * (cell + gap);
        for (int y = 0; y < cell; ++y) {
            uint8_t* p = res.image.rgb.data() +
                         ((static_cast<size_t>(y0 + y) * width) + x0) * 3;
            for (int x = 0; x < cell; ++x) {
                p[0] = rgb[0];
                p[1] = rgb[1];
                p[2] = rgb[2];
                p += 3;
            }
        }
    };
    auto blit_thumb = [&](int row, const PatchTensor& t) {
        PatchTensor small = resize_bilinear(t, cell, cell);
        Image8 q = quantize_to_8bit(small);
        int y0 = gap + row * (cell + gap);
        int x0 = gap;
        for (int y = 0; y < cell; ++y) {
            uint8_t* dst = res.image.rgb.data() +
                           ((static_cast<size_t>(y0 + y) * width) + x0) * 3;
            const uint8_t* src = q.rgb.data() + static_cast<size_t>(y) * cell * 3;
            std::copy(src, src + cell * 3, dst);
        }
    };

    auto flags = nlohmann::ordered_json::array();
    const uint8_t neutral[3] = {128, 128, 128};
    for (size_t i = 0; i < entries.size(); ++i) {
        const auto& e = entries[i];
        nlohmann::ordered_json f;
        f["name"] = e.name;
        if (e.thumbnail) blit_thumb(static_cast<int>(i), *e.thumbnail);
        else fill_cell(static_cast<int>(i), 0, neutral);
        if (e.truth) {
            SrgbConversion c = lab_to_srgb(*e.truth);
            Image8 one = quantize_to_8bit([&] {
                PatchTensor t = PatchTensor::zeros(1, 1);
                t.pixel(0, 0)[0] = static_cast<float>(c.color.r);
                t.pixel(0, 0)[1] = static_cast<float>(c.color.g);
                t.pixel(0, 0)[2] = static_cast<float>(c.color.b);
                return t;
            }());
            fill_cell(static_cast<int>(i), 1, one.rgb.data());
            f["truth_clamped"] = c.clamped;
        } else {
            fill_cell(static_cast<int>(i), 1, neutral);
        }
        SrgbConversion c = lab_to_srgb(e.predicted);
        uint8_t rgb[3] = {
            static_cast<uint8_t>(std::lround(c.color.r * 255.0)),
            static_cast<uint8_t>(std::lround(c.color.g * 255.0)),
            static_cast<uint8_t>(std::lround(c.color.b * 255.0)),
        };
        fill_cell(static_cast<int>(i), 2, rgb);
        f["predicted_clamped"] = c.clamped;
        flags.push_back(f);
    }
    res.sidecar["entries"] = flags;
    return res;
}

}  // namespace tonemeter

// Manifest and prediction CSV schemas, patient-level fold assignment,
// preprocessing, and grouped-label expansion.
#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "tonemeter/color.hpp"
#include "tonemeter/common.hpp"
#include "tonemeter/image.hpp"
#include "tonemeter/png_io.hpp"

namespace tonemeter {

inline constexpr std::array<const char*, 7> kSites = {
    "anterior torso", "posterior torso", "lateral torso",  "upper extremity",
    "lower extremity", "head/neck",      "palms/soles"};

inline bool is_known_site(const std::string& s) {
    for (const char* k : kSites) {
        if (s == k) return true;
    }
    return false;
}

// Grouped Fitzpatrick labels as shipped by DDI-style datasets.
inline const std::map<std::string, std::pair<int, int>>& grouped_fp_tokens() {
    static const std::map<std::string, std::pair<int, int>> m = {
        {"I-II", {1, 2}}, {"III-IV", {3, 4}}, {"V-VI", {5, 6}}};
    return m;
}

struct ManifestRow {
    std::string image_path;
    std::string subject_id;
    std::string site;      // empty or one of kSites
    std::string modality;  // "dermatoscopic" | "clinical"
    std::optional<int> fitzpatrick;     // 1..6
    std::string fitzpatrick_group;      // grouped token when not yet expanded
    std::optional<LabColor> colorimeter;  // mean of triplicates
    std::string lesion_mask_path;
    std::optional<int> fold;  // 0..4
};

inline constexpr const char* kManifestHeader =
    "image_path,subject_id,site,modality,fitzpatrick,"
    "colorimeter_L,colorimeter_a,colorimeter_b,lesion_mask_path,fold";

namespace csv {

// RFC-4180-style: quotes around fields containing comma/quote/newline,
// embedded quotes doubled. Paths are always quoted.
inline std::string quote(const std::string& s, bool force = false) {
    bool need = force || s.find_first_of(",\"\n\r") != std::string::npos;
    if (!need) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out += c;
    }
    out += '"';
    return out;
}

inline std::vector<std::string> split_line(const std::string& line, size_t line_no) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (quoted) {
        throw validation_error("row " + std::to_string(line_no) + ": unterminated quote");
    }
    fields.push_back(cur);
    return fields;
}

inline std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s, size_t line_no, const std::string& col) {
    double v = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
        throw validation_error("row " + std::to_string(line_no) + ": bad number in " + col +
                               ": '" + s + "'");
    }
    return v;
}

inline int parse_int(const std::string& s, size_t line_no, const std::string& col) {
    int v = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
        throw validation_error("row " + std::to_string(line_no) + ": bad integer in " + col +
                               ": '" + s + "'");
    }
    return v;
}

}  // namespace csv

// Strict schema validation; every problem is reported with its row number.
inline std::vector<ManifestRow> parse_manifest(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw validation_error("manifest is empty (no header)");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kManifestHeader) {
        throw validation_error("manifest header mismatch; expected: " +
                               std::string(kManifestHeader));
    }

    std::vector<ManifestRow> rows;
    std::vector<std::string> errors;
    size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        try {
            auto f = csv::split_line(line, line_no);
            if (f.size() != 10) {
                throw validation_error("row " + std::to_string(line_no) + ": expected 10 fields, got " +
                                       std::to_string(f.size()));
            }
            ManifestRow r;
            r.image_path = f[0];
            r.subject_id = f[1];
            r.site = f[2];
            r.modality = f[3];
            if (r.subject_id.empty()) {
                throw validation_error("row " + std::to_string(line_no) + ": empty subject_id");
            }
            if (!r.site.empty() && !is_known_site(r.site)) {
                throw validation_error("row " + std::to_string(line_no) + ": unknown site '" +
                                       r.site + "'");
            }
            if (r.modality != "dermatoscopic" && r.modality != "clinical") {
                throw validation_error("row " + std::to_string(line_no) +
                                       ": modality must be dermatoscopic or clinical");
            }
            if (!f[4].empty()) {
                if (grouped_fp_tokens().count(f[4])) {
                    r.fitzpatrick_group = f[4];
                } else {
                    int fp = csv::parse_int(f[4], line_no, "fitzpatrick");
                    if (fp < 1 || fp > 6) {
                        throw validation_error("row " + std::to_string(line_no) +
                                               ": fitzpatrick outside 1..6");
                    }
                    r.fitzpatrick = fp;
                }
            }
            int lab_present = static_cast<int>(!f[5].empty()) + static_cast<int>(!f[6].empty()) +
                              static_cast<int>(!f[7].empty());
            if (lab_present == 3) {
                r.colorimeter = LabColor{csv::parse_double(f[5], line_no, "colorimeter_L"),
                                         csv::parse_double(f[6], line_no, "colorimeter_a"),
                                         csv::parse_double(f[7], line_no, "colorimeter_b")};
            } else if (lab_present != 0) {
                throw validation_error("row " + std::to_string(line_no) +
                                       ": colorimeter Lab must be all-present or all-absent");
            }
            r.lesion_mask_path = f[8];
            if (!f[9].empty()) {
                int fold = csv::parse_int(f[9], line_no, "fold");
                if (fold < 0 || fold > 4) {
                    throw validation_error("row " + std::to_string(line_no) +
                                           ": fold outside 0..4");
                }
                r.fold = fold;
            }
            rows.push_back(std::move(r));
        } catch (const validation_error& e) {
            errors.push_back(e.what());
        }
    }
    if (!errors.empty()) {
        std::string msg = "manifest validation failed:";
        for (const auto& e : errors) msg += "\n  " + e;
        throw validation_error(msg);
    }
    return rows;
}

inline std::vector<ManifestRow> load_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw validation_error("cannot open manifest: " + path);
    return parse_manifest(f);
}

inline void write_manifest(std::ostream& out, std::span<const ManifestRow> rows) {
    out << kManifestHeader << "\n";
    for (const auto& r : rows) {
        out << csv::quote(r.image_path, true) << ',' << csv::quote(r.subject_id) << ','
            << csv::quote(r.site) << ',' << r.modality << ',';
        if (r.fitzpatrick) out << *r.fitzpatrick;
        else out << r.fitzpatrick_group;
        out << ',';
        if (r.colorimeter) {
            out << csv::format_double(r.colorimeter->L) << ','
                << csv::format_double(r.colorimeter->a) << ','
                << csv::format_double(r.colorimeter->b);
        } else {
            out << ",,";
        }
        out << ',' << csv::quote(r.lesion_mask_path, !r.lesion_mask_path.empty()) << ',';
        if (r.fold) out << *r.fold;
        out << "\n";
    }
}

inline void save_manifest(const std::vector<ManifestRow>& rows, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw validation_error("cannot open manifest for writing: " + path);
    write_manifest(f, rows);
}

// Map subject -> fold, 0..n_folds-1. Every subject lands in exactly one fold.
struct FoldAssignment {
    std::map<std::string, int> fold_of;
    int n_folds = 5;
    uint64_t seed = 0;

    int fold(const std::string& subject) const {
        auto it = fold_of.find(subject);
        if (it == fold_of.end()) throw validation_error("subject has no fold: " + subject);
        return it->second;
    }
};

// Patient-level fold split: subjects are stratified by their Fitzpatrick
// label where available, shuffled (seeded), then dealt round-robin with a
// global cursor so fold sizes differ by at most one. A function of the
// subject set and seed only; row order never matters.
inline FoldAssignment make_folds(std::span<const ManifestRow> rows, int n_folds = 5,
                                 uint64_t seed = 0) {
    if (n_folds < 1) throw validation_error("n_folds must be >= 1");

    // subject -> majority Fitzpatrick (ties to the smaller rank), 0 if none
    std::map<std::string, std::array<int, 7>> counts;
    for (const auto& r : rows) {
        auto& c = counts[r.subject_id];  // creates on first touch
        if (r.fitzpatrick) c[*r.fitzpatrick]++;
    }
    if (counts.empty()) throw validation_error("no subjects in manifest");

    std::map<int, std::vector<std::string>> strata;  // fp (0 = unlabeled) -> subjects, sorted
    for (const auto& [subject, c] : counts) {
        int best = 0, best_n = 0;
        for (int fp = 1; fp <= 6; ++fp) {
            if (c[fp] > best_n) {
                best_n = c[fp];
                best = fp;
            }
        }
        strata[best].push_back(subject);
    }

    FoldAssignment fa;
    fa.n_folds = n_folds;
    fa.seed = seed;
    Rng rng(mix_seed(seed, 0x666f6c6473ull));  // "folds"
    int cursor = 0;
    for (auto& [fp, subjects] : strata) {  // ascending stratum order
        rng.shuffle(subjects);
        for (const auto& s : subjects) {
            fa.fold_of[s] = cursor % n_folds;
            ++cursor;
        }
    }
    return fa;
}

inline std::vector<ManifestRow> apply_folds(std::vector<ManifestRow> rows,
                                            const FoldAssignment& fa) {
    for (auto& r : rows) r.fold = fa.fold(r.subject_id);
    return rows;
}

// Bilinear resize + per-channel normalization. The returned tensor is no
// longer an image (values are centered), so no range check applies.
inline PatchTensor preprocess(const PatchTensor& img, int target_size,
                              const std::array<double, 3>& norm_mean,
                              const std::array<double, 3>& norm_std) {
    if (target_size < 1) throw validation_error("preprocess target size must be positive");
    PatchTensor t = img;
    if (t.height != target_size || t.width != target_size) {
        t = resize_bilinear(t, target_size, target_size);
    }
    normalize_channels(t, norm_mean, norm_std);
    return t;
}

// Grouped labels (e.g. "V-VI") become a uniformly random member of the
// group. Per-row derived seeds keep the expansion deterministic and
// independent of processing order.
inline std::vector<ManifestRow> expand_grouped_labels(std::vector<ManifestRow> rows,
                                                      uint64_t seed) {
    for (size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].fitzpatrick_group.empty()) continue;
        auto it = grouped_fp_tokens().find(rows[i].fitzpatrick_group);
        if (it == grouped_fp_tokens().end()) {
            throw validation_error("unknown grouped label token: " + rows[i].fitzpatrick_group);
        }
        Rng rng(mix_seed(seed, 0x67726f7570ull, i));  // "group"
        rows[i].fitzpatrick =
            rng.uniform01() < 0.5 ? it->second.first : it->second.second;
        rows[i].fitzpatrick_group.clear();
    }
    return rows;
}

inline std::string resolve_path(const std::string& manifest_dir, const std::string& rel) {
    std::filesystem::path p(rel);
    if (p.is_absolute()) return rel;
    return (std::filesystem::path(manifest_dir) / p).string();
}

// Loads a row's image and attaches its lesion mask when present.
inline PatchTensor load_row_image(const std::string& manifest_dir, const ManifestRow& row) {
    PatchTensor img = read_image(resolve_path(manifest_dir, row.image_path));
    if (!row.lesion_mask_path.empty()) {
        img.mask = read_mask(resolve_path(manifest_dir, row.lesion_mask_path), img.height,
                             img.width);
    }
    return img;
}

inline std::vector<ManifestRow> filter_modality(std::span<const ManifestRow> rows,
                                                const std::string& modality) {
    if (modality == "all" || modality.empty()) return {rows.begin(), rows.end()};
    std::vector<ManifestRow> out;
    for (const auto& r : rows) {
        if (r.modality == modality) out.push_back(r);
    }
    return out;
}

// "Normal skin" filter used for lab-head training: keep rows with no lesion
// mask, or whose mask covers less than `max_lesion_fraction` of the pixels.
inline std::vector<ManifestRow> filter_normal_skin(std::span<const ManifestRow> rows,
                                                   const std::string& manifest_dir,
                                                   double max_lesion_fraction = 0.01) {
    std::vector<ManifestRow> out;
    for (const auto& r : rows) {
        if (r.lesion_mask_path.empty()) {
            out.push_back(r);
            continue;
        }
        PatchTensor img = load_row_image(manifest_dir, r);
        size_t covered = 0;
        for (uint8_t m : *img.mask) covered += m != 0;
        if (static_cast<double>(covered) < max_lesion_fraction * img.pixel_count()) {
            out.push_back(r);
        }
    }
    return out;
}

struct PredictionRow {
    std::string image_path;
    std::string subject_id;
    std::optional<int> pred_fp;
    std::optional<LabColor> pred_lab;
    std::optional<double> pred_ita;
    std::optional<int> fold;
};

inline constexpr const char* kPredictionHeader =
    "image_path,subject_id,pred_fp,pred_L,pred_a,pred_b,pred_ita,fold";

inline void write_predictions(std::ostream& out, std::span<const PredictionRow> rows) {
    out << kPredictionHeader << "\n";
    for (const auto& r : rows) {
        out << csv::quote(r.image_path, true) << ',' << csv::quote(r.subject_id) << ',';
        if (r.pred_fp) out << *r.pred_fp;
        out << ',';
        if (r.pred_lab) {
            out << csv::format_double(r.pred_lab->L) << ',' << csv::format_double(r.pred_lab->a)
                << ',' << csv::format_double(r.pred_lab->b);
        } else {
            out << ",,";
        }
        out << ',';
        if (r.pred_ita) out << csv::format_double(*r.pred_ita);
        out << ',';
        if (r.fold) out << *r.fold;
        out << "\n";
    }
}

inline void save_predictions(const std::vector<PredictionRow>& rows, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw validation_error("cannot open predictions for writing: " + path);
    write_predictions(f, rows);
}

inline std::vector<PredictionRow> load_predictions(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw validation_error("cannot open predictions: " + path);
    std::string line;
    if (!std::getline(in, line)) throw validation_error("prediction file is empty");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kPredictionHeader) {
        throw validation_error("prediction header mismatch; expected: " +
                               std::string(kPredictionHeader));
    }
    std::vector<PredictionRow> rows;
    size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto f = csv::split_line(line, line_no);
        if (f.size() != 8) {
            throw validation_error("row " + std::to_string(line_no) +
                                   ": expected 8 fields, got " + std::to_string(f.size()));
        }
        PredictionRow r;
        r.image_path = f[0];
        r.subject_id = f[1];
        if (!f[2].empty()) r.pred_fp = csv::parse_int(f[2], line_no, "pred_fp");
        int lab_present = static_cast<int>(!f[3].empty()) + static_cast<int>(!f[4].empty()) +
                          static_cast<int>(!f[5].empty());
        if (lab_present == 3) {
            r.pred_lab = LabColor{csv::parse_double(f[3], line_no, "pred_L"),
                                  csv::parse_double(f[4], line_no, "pred_a"),
                                  csv::parse_double(f[5], line_no, "pred_b")};
        } else if (lab_present != 0) {
            throw validation_error("row " + std::to_string(line_no) +
                                   ": pred Lab must be all-present or all-absent");
        }
        if (!f[6].empty()) r.pred_ita = csv::parse_double(f[6], line_no, "pred_ita");
        if (!f[7].empty()) r.fold = csv::parse_int(f[7], line_no, "fold");
        rows.push_back(std::move(r));
    }
    return rows;
}

}  // namespace tonemeter

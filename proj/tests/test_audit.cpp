#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "tonemeter/audit.hpp"
#include "tonemeter/synth.hpp"

using namespace tonemeter;

namespace {

// predictions copied straight from the manifest truth
std::vector<PredictionRow> perfect_predictions(std::span<const ManifestRow> rows) {
    std::vector<PredictionRow> preds;
    for (const auto& r : rows) {
        PredictionRow p;
        p.image_path = r.image_path;
        p.subject_id = r.subject_id;
        p.pred_fp = r.fitzpatrick;
        if (r.colorimeter) {
            p.pred_lab = r.colorimeter;
            p.pred_ita = ita(*r.colorimeter).degrees;
        }
        p.fold = r.fold;
        preds.push_back(std::move(p));
    }
    return preds;
}

}  // namespace

TEST_CASE("audit report: uniform strata yield 16.67% per class", "[audit]") {
    CorpusSpec spec;
    spec.subjects = 60;
    spec.images_per_subject = 10;
    auto entries = generate_corpus(spec, 21);
    std::vector<ManifestRow> rows;
    for (const auto& e : entries) rows.push_back(corpus_entry_row(e));
    std::vector<PredictionRow> preds = perfect_predictions(rows);

    EstimatorSpec est;  // provenance fields only; predictions are supplied
    AuditReport rep = build_audit_report(rows, preds, est, "synthetic", "all", 21);
    CHECK(rep.n_images == 600);
    CHECK(rep.n_subjects == 60);
    auto pct = rep.fp_percent();
    for (int i = 0; i < 6; ++i) CHECK(pct[i] == Catch::Approx(100.0 / 6.0).margin(1e-9));

    double pct_sum = 0.0;
    size_t hist_sum = 0;
    for (double p : pct) pct_sum += p;
    for (size_t c : rep.ita_counts) hist_sum += c;
    CHECK(pct_sum == Catch::Approx(100.0).margin(0.01));
    CHECK(hist_sum == rep.n_with_ita);
    CHECK(rep.n_with_ita == 600);
}

TEST_CASE("audit report on no data is valid and empty", "[audit]") {
    std::vector<ManifestRow> rows;
    std::vector<PredictionRow> preds;
    EstimatorSpec est;
    AuditReport rep = build_audit_report(rows, preds, est, "empty", "all", 0);
    CHECK(rep.n_images == 0);
    CHECK(rep.n_with_fp == 0);
    nlohmann::ordered_json j = audit_to_json(rep);
    CHECK(j["n_images"] == 0);
    CHECK(audit_to_csv(rep).find("fp_count") != std::string::npos);
}

TEST_CASE("audit JSON and CSV are deterministic", "[audit]") {
    CorpusSpec spec;
    spec.subjects = 6;
    spec.images_per_subject = 2;
    auto entries = generate_corpus(spec, 4);
    std::vector<ManifestRow> rows;
    for (const auto& e : entries) rows.push_back(corpus_entry_row(e));
    auto preds = perfect_predictions(rows);
    EstimatorSpec est;
    AuditReport a = build_audit_report(rows, preds, est, "d", "all", 4);
    AuditReport b = build_audit_report(rows, preds, est, "d", "all", 4);
    CHECK(audit_to_json(a).dump() == audit_to_json(b).dump());
    CHECK(audit_to_csv(a) == audit_to_csv(b));
}

TEST_CASE("ITA histogram bins cover the full range inclusively", "[audit]") {
    std::vector<ManifestRow> rows;
    std::vector<PredictionRow> preds;
    for (int i = 0; i < 3; ++i) {
        ManifestRow r;
        r.image_path = "i" + std::to_string(i) + ".png";
        r.subject_id = "s";
        r.modality = "dermatoscopic";
        rows.push_back(r);
    }
    double itas[3] = {-90.0, 0.0, 90.0};
    for (int i = 0; i < 3; ++i) {
        PredictionRow p;
        p.image_path = "i" + std::to_string(i) + ".png";
        p.subject_id = "s";
        p.pred_ita = itas[i];
        preds.push_back(p);
    }
    EstimatorSpec est;
    AuditReport rep = build_audit_report(rows, preds, est, "x", "all", 0, 10.0);
    CHECK(rep.ita_counts.front() == 1);  // -90 in the first bin
    CHECK(rep.ita_counts.back() == 1);   // +90 clamped into the last bin
    size_t total = 0;
    for (size_t c : rep.ita_counts) total += c;
    CHECK(total == 3);
}

TEST_CASE("run_estimator is identical across thread counts", "[audit]") {
    namespace fs = std::filesystem;
    CorpusSpec spec;
    spec.subjects = 4;
    spec.images_per_subject = 2;
    spec.gain_min = 0.9;
    spec.gain_max = 1.1;
    auto entries = generate_corpus(spec, 8);
    fs::path dir = fs::temp_directory_path() / "tonemeter_audit_threads";
    fs::remove_all(dir);
    std::string manifest = write_corpus(entries, dir.string());
    std::vector<ManifestRow> rows = load_manifest(manifest);

    EstimatorSpec est;
    est.kind = EstimatorSpec::Kind::kmeans;
    est.kmeans.seed = 5;
    auto p1 = run_estimator(dir.string(), rows, est, 1);
    auto p4 = run_estimator(dir.string(), rows, est, 4);
    REQUIRE(p1.size() == p4.size());
    for (size_t i = 0; i < p1.size(); ++i) {
        REQUIRE(p1[i].image_path == p4[i].image_path);
        REQUIRE(p1[i].pred_ita == p4[i].pred_ita);
        REQUIRE(p1[i].pred_lab->L == p4[i].pred_lab->L);
    }
    fs::remove_all(dir);
}

TEST_CASE("evaluate: perfect predictor scores kappa=1 and icc3=1 everywhere", "[audit]") {
    CorpusSpec spec;
    spec.subjects = 12;
    spec.images_per_subject = 3;
    auto entries = generate_corpus(spec, 31);
    std::vector<ManifestRow> rows;
    for (const auto& e : entries) rows.push_back(corpus_entry_row(e));
    auto preds = perfect_predictions(rows);

    EvalOptions opt;
    opt.modality = "dermatoscopic";
    opt.bootstrap_resamples = 100;
    opt.seed = 2;
    EvalResult res = evaluate(rows, preds, opt);
    bool saw_kappa = false, saw_icc = false;
    for (const auto& rep : res.reports) {
        if (rep.metric == "kappa_linear") {
            saw_kappa = true;
            CHECK(rep.estimate == Catch::Approx(1.0).margin(1e-12));
        }
        if (rep.metric == "icc3") {
            saw_icc = true;
            CHECK(rep.estimate == Catch::Approx(1.0).margin(1e-9));
        }
        if (rep.metric == "mae") CHECK(rep.estimate == 0.0);
        if (rep.metric == "within_one_pct") CHECK(rep.estimate == 100.0);
        CHECK(rep.ci_lo <= rep.estimate);
        CHECK(rep.estimate <= rep.ci_hi);
    }
    CHECK(saw_kappa);
    CHECK(saw_icc);
}

TEST_CASE("evaluate reports missing strata explicitly instead of NaN", "[audit]") {
    // two sites in the manifest, but only one has any data rows
    std::vector<ManifestRow> rows;
    std::vector<PredictionRow> preds;
    for (int i = 0; i < 6; ++i) {
        ManifestRow r;
        r.image_path = "i" + std::to_string(i) + ".png";
        r.subject_id = "s" + std::to_string(i / 2);
        r.modality = "dermatoscopic";
        r.site = i == 0 ? "palms/soles" : "head/neck";
        if (i > 0) r.fitzpatrick = (i % 6) + 1;
        rows.push_back(r);
        if (i > 0) {
            PredictionRow p;
            p.image_path = r.image_path;
            p.subject_id = r.subject_id;
            p.pred_fp = *r.fitzpatrick;
            preds.push_back(p);
        }
    }
    EvalOptions opt;
    opt.bootstrap_resamples = 100;
    EvalResult res = evaluate(rows, preds, opt);
    bool note_found = false;
    for (const auto& n : res.notes) {
        note_found |= n.find("palms/soles") != std::string::npos;
    }
    CHECK(note_found);
    for (const auto& rep : res.reports) {
        CHECK(std::isfinite(rep.estimate));
    }
}

TEST_CASE("per-class bias table covers the observed classes", "[audit]") {
    std::vector<RatingPair> pairs;
    for (int i = 0; i < 30; ++i) {
        int ref = (i % 3) + 1;
        pairs.push_back({"s" + std::to_string(i % 10), ref, std::min(6, ref + 1), ""});
    }
    auto table = per_class_bias(pairs, 100, 7);
    REQUIRE(table.size() == 3);
    for (const auto& row : table) {
        CHECK(row.bias == Catch::Approx(1.0));
        CHECK(row.n == 10);
    }
}

TEST_CASE("swatch grid renders reference colors and flags gamut clamps", "[audit]") {
    std::vector<SwatchEntry> entries;
    entries.push_back({"white", std::nullopt, std::nullopt, LabColor{100, 0, 0}});
    entries.push_back({"black", std::nullopt, std::nullopt, LabColor{0, 0, 0}});
    entries.push_back({"gamut", std::nullopt, LabColor{60, -120, 60}, LabColor{50, 5, 5}});

    SwatchResult res = render_swatch_grid(entries, 8, 2);
    // predicted swatch cell of row 0 (white): pixel at the cell center
    int cell = 8, gap = 2;
    int cx = gap * 3 + cell * 2 + cell / 2;
    int cy = gap + cell / 2;
    const uint8_t* white_px = res.image.rgb.data() +
                              (static_cast<size_t>(cy) * res.image.width + cx) * 3;
    CHECK(static_cast<int>(white_px[0]) == 255);
    CHECK(static_cast<int>(white_px[1]) == 255);
    CHECK(static_cast<int>(white_px[2]) == 255);

    int by = gap * 2 + cell + cell / 2;
    const uint8_t* black_px = res.image.rgb.data() +
                              (static_cast<size_t>(by) * res.image.width + cx) * 3;
    CHECK(static_cast<int>(black_px[0]) == 0);

    auto flags = res.sidecar["entries"];
    REQUIRE(flags.size() == 3);
    CHECK(flags[0]["predicted_clamped"] == false);
    CHECK(flags[2]["truth_clamped"] == true);
}

TEST_CASE("estimator spec provenance strings", "[audit]") {
    EstimatorSpec est;
    est.kind = EstimatorSpec::Kind::patch;
    est.patch.patch_size = 24;
    CHECK(est.describe().find("patch") != std::string::npos);
    CHECK(est.fp_source() == "ita-band");
    est.use_shades_of_gray = true;
    CHECK(est.describe().find("shades-of-gray") != std::string::npos);
}

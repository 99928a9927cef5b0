// tonemeter: skin-tone estimation and dataset auditing for
// dermatoscopic-style images.
//
// Subcommands: synth, train, estimate, eval, stats, audit, swatch.
// Exit codes: 0 success, 2 validation error, 3 degenerate statistics.

#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tonemeter/audit.hpp"
#include "tonemeter/checkpoint.hpp"
#include "tonemeter/dataset.hpp"
#include "tonemeter/stats.hpp"
#include "tonemeter/synth.hpp"
#include "tonemeter/train.hpp"

namespace fs = std::filesystem;
using namespace tonemeter;

namespace {

struct GlobalOpts {
    uint64_t seed = 0;
    int threads = 1;
};

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream f(path, std::ios::trunc | std::ios::binary);
    if (!f) throw validation_error("cannot open for writing: " + path);
    f.write(content.data(), static_cast<std::streamsize>(content.size()));
}

// Shared estimator flags for estimate/eval/audit.
struct EstimatorFlags {
    std::string estimator = "kmeans";
    int k = 3;
    int patch_size = 20;
    double variance_cutoff = 50.0;
    std::string wb = "none";  // "none" | "shades-of-gray:p=<p>"
    std::vector<std::string> fp_checkpoint_paths;
    std::vector<std::string> lab_checkpoint_paths;
    std::vector<double> ita_bands;  // optional override, 5 thresholds

    void add_to(CLI::App* cmd) {
        cmd->add_option("--estimator", estimator, "kmeans|patch|net")
            ->check(CLI::IsMember({"kmeans", "patch", "net"}));
        cmd->add_option("--k", k, "k-means cluster count (default 3)");
        cmd->add_option("--patch-size", patch_size, "border patch side in pixels (default 20)");
        cmd->add_option("--variance-cutoff", variance_cutoff,
                        "Lab variance cutoff for border patches (default 50)");
        cmd->add_option("--wb", wb, "white balance: none or shades-of-gray:p=6");
        cmd->add_option("--fp-checkpoints", fp_checkpoint_paths,
                        "rank-head fold checkpoints (net estimator)");
        cmd->add_option("--lab-checkpoints", lab_checkpoint_paths,
                        "lab-head fold checkpoints (net estimator)");
        cmd->add_option("--ita-bands", ita_bands,
                        "five decreasing ITA thresholds for band reports")
            ->expected(5);
    }

    EstimatorSpec build(uint64_t seed) const {
        EstimatorSpec spec;
        if (estimator == "kmeans") spec.kind = EstimatorSpec::Kind::kmeans;
        else if (estimator == "patch") spec.kind = EstimatorSpec::Kind::patch;
        else spec.kind = EstimatorSpec::Kind::net;
        spec.kmeans.k = k;
        spec.kmeans.seed = seed;
        spec.patch.patch_size = patch_size;
        spec.patch.variance_cutoff = variance_cutoff;
        if (wb == "none" || wb.empty()) {
            spec.use_shades_of_gray = false;
        } else if (wb.rfind("shades-of-gray", 0) == 0) {
            spec.use_shades_of_gray = true;
            auto at = wb.find(":p=");
            if (at != std::string::npos) {
                spec.sog_p = std::stod(wb.substr(at + 3));
            }
        } else {
            throw validation_error("unknown --wb value: " + wb);
        }
        for (const auto& p : fp_checkpoint_paths) {
            spec.fp_checkpoints.push_back(ModelCheckpoint::load(p));
        }
        for (const auto& p : lab_checkpoint_paths) {
            spec.lab_checkpoints.push_back(ModelCheckpoint::load(p));
        }
        if (!ita_bands.empty()) {
            for (size_t i = 0; i < 5; ++i) spec.bands.thresholds[i] = ita_bands[i];
            spec.bands.validate();
        }
        return spec;
    }
};

std::vector<ManifestRow> rows_from_image_dir(const std::string& dir) {
    if (!fs::is_directory(dir)) {
        throw validation_error("not a directory: " + dir);
    }
    std::vector<ManifestRow> rows;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (!e.is_regular_file() || e.path().extension() != ".png") continue;
        ManifestRow r;
        r.image_path = e.path().filename().string();
        r.subject_id = e.path().stem().string();
        r.modality = "dermatoscopic";
        rows.push_back(std::move(r));
    }
    std::sort(rows.begin(), rows.end(),
              [](const ManifestRow& a, const ManifestRow& b) { return a.image_path < b.image_path; });
    return rows;
}

nlohmann::ordered_json history_to_json(const TrainResult& res) {
    nlohmann::ordered_json j;
    j["best_epoch"] = res.best_epoch;
    j["epochs_run"] = res.epochs_run;
    auto arr = nlohmann::ordered_json::array();
    for (const auto& e : res.history) {
        arr.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss},
                       {"val_loss", e.val_loss}});
    }
    j["history"] = arr;
    return j;
}

int cmd_synth(const GlobalOpts& g, const CorpusSpec& spec, const std::string& out_dir) {
    auto entries = generate_corpus(spec, g.seed);
    std::string manifest = write_corpus(entries, out_dir);
    std::cout << "wrote " << entries.size() << " images, manifest: " << manifest << "\n";
    return 0;
}

struct TrainFlags {
    std::string head = "ordinal";
    std::string manifest_path;
    std::string out_dir;
    int folds = 5;
    int fold = -1;  // -1 = all folds
    int input_size = 64;
    int feature_dim = 64;
    double lr = 0.0;  // 0 = head default
    int batch = 0;
    int epochs = 0;
    int patience = 0;
};

int cmd_train(const GlobalOpts& g, const TrainFlags& f) {
    std::vector<ManifestRow> rows = load_manifest(f.manifest_path);
    std::string dir = fs::path(f.manifest_path).parent_path().string();
    rows = expand_grouped_labels(std::move(rows), mix_seed(g.seed, 0x657870ull));

    HeadKind head = head_kind_from_name(f.head);
    if (head == HeadKind::lab_regression) {
        // colorimeter supervision exists for normal skin only
        rows = filter_normal_skin(rows, dir);
        std::erase_if(rows, [](const ManifestRow& r) { return !r.colorimeter; });
    } else {
        std::erase_if(rows, [](const ManifestRow& r) { return !r.fitzpatrick; });
    }
    if (rows.empty()) throw validation_error("no usable training rows after filtering");

    bool have_folds = true;
    for (const auto& r : rows) have_folds &= r.fold.has_value();
    if (!have_folds) {
        FoldAssignment fa = make_folds(rows, f.folds, g.seed);
        rows = apply_folds(std::move(rows), fa);
    }

    fs::create_directories(f.out_dir);
    std::vector<int> fold_ids;
    if (f.fold >= 0) fold_ids.push_back(f.fold);
    else for (int k = 0; k < f.folds; ++k) fold_ids.push_back(k);

    for (int fold : fold_ids) {
        std::vector<TrainSample> samples;
        for (const auto& r : rows) {
            if (*r.fold == fold) continue;  // held-out fold
            TrainSample s;
            s.image = load_row_image(dir, r);
            s.subject_id = r.subject_id;
            if (r.fitzpatrick) s.fp = *r.fitzpatrick;
            if (r.colorimeter) {
                s.lab = *r.colorimeter;
                s.has_lab = true;
            }
            samples.push_back(std::move(s));
        }

        NetworkConfig net_cfg;
        net_cfg.head = head;
        net_cfg.input_size = f.input_size;
        net_cfg.feature_dim = f.feature_dim;
        net_cfg.seed = mix_seed(g.seed, 0x6e6574ull, static_cast<uint64_t>(fold));

        TrainConfig cfg = head == HeadKind::lab_regression ? TrainConfig::lab_defaults()
                                                           : TrainConfig::ordinal_defaults();
        cfg.seed = mix_seed(g.seed, 0x747267ull, static_cast<uint64_t>(fold));
        if (f.lr > 0.0) cfg.learning_rate = f.lr;
        if (f.batch > 0) cfg.batch_size = f.batch;
        if (f.epochs > 0) cfg.max_epochs = f.epochs;
        if (f.patience > 0) cfg.patience = f.patience;

        TrainResult res = train(net_cfg, samples, cfg);
        std::string base = (fs::path(f.out_dir) / (f.head + "_fold" + std::to_string(fold)))
                               .string();
        res.checkpoint.save(base + ".ckpt");
        write_text_file(base + "_history.json", history_to_json(res).dump(2) + "\n");
        std::cout << "fold " << fold << ": " << samples.size() << " samples, best epoch "
                  << res.best_epoch << " (val loss "
                  << res.history[res.best_epoch - 1].val_loss << "), saved " << base
                  << ".ckpt\n";
    }
    return 0;
}

int cmd_estimate(const GlobalOpts& g, const EstimatorFlags& ef, const std::string& manifest_path,
                 const std::string& out_csv) {
    std::vector<ManifestRow> rows = load_manifest(manifest_path);
    std::string dir = fs::path(manifest_path).parent_path().string();
    EstimatorSpec spec = ef.build(g.seed);
    std::vector<PredictionRow> preds = run_estimator(dir, rows, spec, g.threads);
    save_predictions(preds, out_csv);
    std::cout << "wrote " << preds.size() << " predictions to " << out_csv << "\n";
    return 0;
}

int cmd_eval(const GlobalOpts& g, const EstimatorFlags& ef, const std::string& manifest_path,
             const std::string& pred_path, const EvalOptions& opt, bool wb_ablation,
             const std::string& out_json, const std::string& out_csv) {
    std::vector<ManifestRow> rows = load_manifest(manifest_path);
    std::string dir = fs::path(manifest_path).parent_path().string();

    auto predictions_for = [&](bool with_wb) {
        EstimatorSpec spec = ef.build(g.seed);
        spec.use_shades_of_gray = with_wb;
        return run_estimator(dir, rows, spec, g.threads);
    };

    nlohmann::ordered_json out;
    std::string csv_text;
    if (!wb_ablation) {
        std::vector<PredictionRow> preds =
            pred_path.empty() ? predictions_for(ef.build(g.seed).use_shades_of_gray)
                              : load_predictions(pred_path);
        EvalResult res = evaluate(rows, preds, opt);
        out = eval_to_json(res, opt);
        csv_text = eval_to_csv(res);
        for (const auto& n : res.notes) std::cerr << "note: " << n << "\n";
    } else {
        // Appendix-style comparison: per-class bias without vs with
        // Shades-of-Gray, same estimator otherwise.
        out["modality_filter"] = opt.modality;
        out["seed"] = opt.seed;
        csv_text = "arm,fp,n,bias,ci_lo,ci_hi\n";
        for (bool wb : {false, true}) {
            std::vector<PredictionRow> preds = predictions_for(wb);
            std::vector<ManifestRow> kept = filter_modality(rows, opt.modality);
            std::map<std::string, const PredictionRow*> by_path;
            for (const auto& p : preds) by_path[p.image_path] = &p;
            std::vector<RatingPair> pairs;
            for (const auto& r : kept) {
                auto it = by_path.find(r.image_path);
                if (it == by_path.end() || !r.fitzpatrick || !it->second->pred_fp) continue;
                pairs.push_back({r.subject_id, *r.fitzpatrick, *it->second->pred_fp, r.site});
            }
            std::string arm = wb ? "shades_of_gray" : "no_white_balance";
            auto table = per_class_bias(pairs, opt.bootstrap_resamples,
                                        mix_seed(opt.seed, wb ? 1 : 0));
            auto rows_json = nlohmann::ordered_json::array();
            for (const auto& cb : table) {
                rows_json.push_back({{"fp", cb.fp}, {"n", cb.n}, {"bias", cb.bias},
                                     {"ci_lo", cb.ci_lo}, {"ci_hi", cb.ci_hi}});
                csv_text += arm + "," + std::to_string(cb.fp) + "," + std::to_string(cb.n) +
                            "," + csv::format_double(cb.bias) + "," +
                            csv::format_double(cb.ci_lo) + "," + csv::format_double(cb.ci_hi) +
                            "\n";
            }
            if (pairs.size() >= 2) {
                KappaResult kp = weighted_kappa(pairs);
                out[arm] = {{"per_class_bias", rows_json}, {"kappa_linear", kp.value}};
                csv_text += arm + ",kappa,," + csv::format_double(kp.value) + ",,\n";
            } else {
                out[arm] = {{"per_class_bias", rows_json}};
            }
        }
    }

    if (!out_json.empty()) write_text_file(out_json, out.dump(2) + "\n");
    if (!out_csv.empty()) write_text_file(out_csv, csv_text);
    if (out_json.empty() && out_csv.empty()) std::cout << out.dump(2) << "\n";
    return 0;
}

int cmd_stats(const GlobalOpts& g, const std::string& metric, const std::string& manifest_path,
              const std::string& pred_path, bool by_site, int bootstrap, double level,
              const std::string& out_json, const std::string& out_csv) {
    std::vector<ManifestRow> rows = load_manifest(manifest_path);
    std::vector<PredictionRow> preds = load_predictions(pred_path);
    EvalOptions opt;
    opt.modality = "all";
    opt.by_site = by_site;
    opt.bootstrap_resamples = bootstrap;
    opt.level = level;
    opt.seed = g.seed;
    EvalResult res = evaluate(rows, preds, opt);

    // keep only the requested metric family
    auto keep = [&](const std::string& name) {
        if (metric == "kappa") return name == "kappa_linear";
        if (metric == "icc3") return name == "icc3";
        if (metric == "ordinal") {
            return name == "mae" || name == "within_one_pct" || name == "bias";
        }
        if (metric == "bland-altman") return name.rfind("ba_", 0) == 0;
        throw validation_error("unknown metric: " + metric);
    };
    std::erase_if(res.reports, [&](const AgreementReport& r) { return !keep(r.metric); });

    // When the single requested metric is undefined on the overall stratum,
    // that degeneracy is the command's result.
    if (metric == "icc3") {
        bool overall = false;
        for (const auto& r : res.reports) overall |= r.stratum == "overall";
        if (!overall) {
            for (const auto& n : res.notes) {
                if (n.find("icc3 skipped for overall") != std::string::npos) {
                    throw degenerate_statistics_error(n);
                }
            }
        }
    }

    nlohmann::ordered_json out = eval_to_json(res, opt);
    if (!out_json.empty()) write_text_file(out_json, out.dump(2) + "\n");
    if (!out_csv.empty()) write_text_file(out_csv, eval_to_csv(res));
    if (out_json.empty() && out_csv.empty()) std::cout << out.dump(2) << "\n";
    return 0;
}

int cmd_audit(const GlobalOpts& g, const EstimatorFlags& ef, const std::string& manifest_path,
              const std::string& images_dir, const std::string& name,
              const std::string& modality, double ita_bin_width, const std::string& out_json,
              const std::string& out_csv) {
    std::vector<ManifestRow> rows;
    std::string dir;
    if (!manifest_path.empty()) {
        rows = load_manifest(manifest_path);
        dir = fs::path(manifest_path).parent_path().string();
    } else if (!images_dir.empty()) {
        rows = rows_from_image_dir(images_dir);
        dir = images_dir;
    } else {
        throw validation_error("audit needs --manifest or --images");
    }
    std::vector<ManifestRow> kept = filter_modality(rows, modality);
    EstimatorSpec spec = ef.build(g.seed);
    std::vector<PredictionRow> preds = run_estimator(dir, kept, spec, g.threads);
    AuditReport rep = build_audit_report(kept, preds, spec,
                                         name.empty() ? dir : name, modality, g.seed,
                                         ita_bin_width);
    nlohmann::ordered_json j = audit_to_json(rep);
    if (!out_json.empty()) write_text_file(out_json, j.dump(2) + "\n");
    if (!out_csv.empty()) write_text_file(out_csv, audit_to_csv(rep));
    if (out_json.empty() && out_csv.empty()) std::cout << j.dump(2) << "\n";
    return 0;
}

int cmd_swatch(const std::vector<std::string>& lab_strings, const std::string& pred_path,
               const std::string& manifest_path, const std::string& out_png,
               std::string sidecar_path) {
    std::vector<SwatchEntry> entries;
    for (const auto& s : lab_strings) {
        LabColor lab;
        if (std::sscanf(s.c_str(), "%lf,%lf,%lf", &lab.L, &lab.a, &lab.b) != 3) {
            throw validation_error("bad --lab value (want L,a,b): " + s);
        }
        SwatchEntry e;
        e.name = s;
        e.predicted = lab;
        entries.push_back(std::move(e));
    }
    if (!pred_path.empty()) {
        std::vector<PredictionRow> preds = load_predictions(pred_path);
        std::map<std::string, ManifestRow> by_path;
        std::string dir;
        if (!manifest_path.empty()) {
            for (auto& r : load_manifest(manifest_path)) by_path[r.image_path] = r;
            dir = fs::path(manifest_path).parent_path().string();
        }
        for (const auto& p : preds) {
            if (!p.pred_lab) continue;
            SwatchEntry e;
            e.name = p.image_path;
            e.predicted = *p.pred_lab;
            auto it = by_path.find(p.image_path);
            if (it != by_path.end()) {
                if (it->second.colorimeter) e.truth = *it->second.colorimeter;
                e.thumbnail = load_row_image(dir, it->second);
            }
            entries.push_back(std::move(e));
        }
    }
    if (entries.empty()) throw validation_error("swatch needs --lab values or --pred rows");

    SwatchResult res = render_swatch_grid(entries);
    write_png_rgb8(out_png, res.image);
    if (sidecar_path.empty()) sidecar_path = out_png + ".json";
    write_text_file(sidecar_path, res.sidecar.dump(2) + "\n");
    std::cout << "wrote " << out_png << " and " << sidecar_path << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"tonemeter: skin tone estimation and dataset auditing"};
    app.require_subcommand(1);
    app.set_config("--config", "", "key=value config file (INI style)");

    GlobalOpts g;
    app.add_option("--seed", g.seed, "global RNG seed")->capture_default_str();
    app.add_option("--threads", g.threads, "worker threads for inference")
        ->capture_default_str();

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic corpus with ground truth");
    CorpusSpec corpus;
    std::string synth_out;
    synth->add_option("--out", synth_out, "output directory")->required();
    synth->add_option("--subjects", corpus.subjects)->capture_default_str();
    synth->add_option("--images-per-subject", corpus.images_per_subject)->capture_default_str();
    synth->add_option("--size", corpus.image_size)->capture_default_str();
    synth->add_option("--gain-min", corpus.gain_min)->capture_default_str();
    synth->add_option("--gain-max", corpus.gain_max)->capture_default_str();
    synth->add_option("--cast-min", corpus.cast_min)->capture_default_str();
    synth->add_option("--cast-max", corpus.cast_max)->capture_default_str();
    synth->add_option("--ramp-min", corpus.ramp_min)->capture_default_str();
    synth->add_option("--ramp-max", corpus.ramp_max)->capture_default_str();
    synth->add_option("--noise-sigma", corpus.noise_sigma)->capture_default_str();
    synth->add_option("--lesion-prob", corpus.lesion_probability)->capture_default_str();
    bool no_stratify = false;
    synth->add_flag("--no-stratify", no_stratify, "draw melanin uniformly instead of by band");

    // train
    auto* train_cmd = app.add_subcommand("train", "train fold models on a manifest");
    TrainFlags tf;
    train_cmd->add_option("--head", tf.head, "ordinal|lab|classification")
        ->check(CLI::IsMember({"ordinal", "lab", "classification", "lab_regression"}))
        ->required();
    train_cmd->add_option("--manifest", tf.manifest_path)->required();
    train_cmd->add_option("--out", tf.out_dir, "checkpoint output directory")->required();
    train_cmd->add_option("--folds", tf.folds)->capture_default_str();
    train_cmd->add_option("--fold", tf.fold, "train a single fold (default: all)");
    train_cmd->add_option("--input-size", tf.input_size)->capture_default_str();
    train_cmd->add_option("--feature-dim", tf.feature_dim)->capture_default_str();
    train_cmd->add_option("--lr", tf.lr, "override head-default learning rate");
    train_cmd->add_option("--batch", tf.batch, "override batch size");
    train_cmd->add_option("--epochs", tf.epochs, "override max epochs");
    train_cmd->add_option("--patience", tf.patience, "override early-stopping patience");

    // estimate
    auto* estimate = app.add_subcommand("estimate", "run an estimator, write prediction CSV");
    EstimatorFlags est_flags;
    est_flags.add_to(estimate);
    std::string est_manifest, est_out;
    estimate->add_option("--manifest", est_manifest)->required();
    estimate->add_option("--out", est_out, "prediction CSV path")->required();

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "agreement tables against references");
    EstimatorFlags eval_flags;
    eval_flags.add_to(eval_cmd);
    std::string eval_manifest, eval_pred, eval_json, eval_csv;
    std::string eval_by = "site";
    EvalOptions eval_opt;
    bool wb_ablation = false;
    eval_cmd->add_option("--manifest", eval_manifest)->required();
    eval_cmd->add_option("--pred", eval_pred, "precomputed prediction CSV (skip inference)");
    eval_cmd->add_option("--modality", eval_opt.modality, "dermatoscopic|clinical|all")
        ->capture_default_str();
    eval_cmd->add_option("--by", eval_by, "stratification: site or none")
        ->check(CLI::IsMember({"site", "none"}))
        ->capture_default_str();
    eval_cmd->add_option("--bootstrap", eval_opt.bootstrap_resamples)->capture_default_str();
    eval_cmd->add_option("--level", eval_opt.level)->capture_default_str();
    eval_cmd->add_flag("--wb-ablation", wb_ablation,
                       "per-class bias table without vs with Shades-of-Gray");
    eval_cmd->add_option("--out-json", eval_json);
    eval_cmd->add_option("--out-csv", eval_csv);

    // stats
    auto* stats_cmd = app.add_subcommand("stats", "one metric family from a prediction CSV");
    std::string stats_metric, stats_manifest, stats_pred, stats_json, stats_csv;
    std::string stats_by = "site";
    int stats_bootstrap = 1000;
    double stats_level = 0.95;
    stats_cmd->add_option("--metric", stats_metric, "kappa|icc3|ordinal|bland-altman")
        ->check(CLI::IsMember({"kappa", "icc3", "ordinal", "bland-altman"}))
        ->required();
    stats_cmd->add_option("--manifest", stats_manifest, "manifest with reference labels")
        ->required();
    stats_cmd->add_option("--pred", stats_pred, "prediction CSV")->required();
    stats_cmd->add_option("--by", stats_by, "stratification: site or none")
        ->check(CLI::IsMember({"site", "none"}))
        ->capture_default_str();
    stats_cmd->add_option("--bootstrap", stats_bootstrap)->capture_default_str();
    stats_cmd->add_option("--level", stats_level)->capture_default_str();
    stats_cmd->add_option("--out-json", stats_json);
    stats_cmd->add_option("--out-csv", stats_csv);

    // audit
    auto* audit_cmd = app.add_subcommand("audit", "skin-tone composition report");
    EstimatorFlags audit_flags;
    audit_flags.add_to(audit_cmd);
    std::string audit_manifest, audit_images, audit_name, audit_json, audit_csv;
    std::string audit_modality = "all";
    double audit_bin_width = 10.0;
    audit_cmd->add_option("--manifest", audit_manifest);
    audit_cmd->add_option("--images", audit_images, "directory of PNG images");
    audit_cmd->add_option("--name", audit_name, "dataset name for the report");
    audit_cmd->add_option("--modality", audit_modality)->capture_default_str();
    audit_cmd->add_option("--ita-bin-width", audit_bin_width)->capture_default_str();
    audit_cmd->add_option("--out-json", audit_json);
    audit_cmd->add_option("--out-csv", audit_csv);

    // swatch
    auto* swatch_cmd = app.add_subcommand("swatch", "render Lab swatch comparison grid");
    std::vector<std::string> swatch_labs;
    std::string swatch_pred, swatch_manifest, swatch_out, swatch_sidecar;
    swatch_cmd->add_option("--lab", swatch_labs, "Lab triple as L,a,b (repeatable)");
    swatch_cmd->add_option("--pred", swatch_pred, "prediction CSV");
    swatch_cmd->add_option("--manifest", swatch_manifest,
                           "manifest for truth swatches and thumbnails");
    swatch_cmd->add_option("--out", swatch_out, "output PNG")->required();
    swatch_cmd->add_option("--sidecar", swatch_sidecar, "clamp-flag JSON (default <out>.json)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return 2;
    }

    try {
        if (synth->parsed()) {
            corpus.stratify_fp = !no_stratify;
            return cmd_synth(g, corpus, synth_out);
        }
        if (train_cmd->parsed()) return cmd_train(g, tf);
        if (estimate->parsed()) return cmd_estimate(g, est_flags, est_manifest, est_out);
        if (eval_cmd->parsed()) {
            eval_opt.by_site = eval_by == "site";
            eval_opt.seed = g.seed;
            return cmd_eval(g, eval_flags, eval_manifest, eval_pred, eval_opt, wb_ablation,
                            eval_json, eval_csv);
        }
        if (stats_cmd->parsed()) {
            return cmd_stats(g, stats_metric, stats_manifest, stats_pred, stats_by == "site",
                             stats_bootstrap, stats_level, stats_json, stats_csv);
        }
        if (audit_cmd->parsed()) {
            return cmd_audit(g, audit_flags, audit_manifest, audit_images, audit_name,
                             audit_modality, audit_bin_width, audit_json, audit_csv);
        }
        if (swatch_cmd->parsed()) {
            return cmd_swatch(swatch_labs, swatch_pred, swatch_manifest, swatch_out,
                              swatch_sidecar);
        }
    } catch (const degenerate_statistics_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const validation_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

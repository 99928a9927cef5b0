// End-to-end workflow through the CLI binary: synth -> train -> estimate ->
// eval -> stats -> audit -> swatch, plus the exit-code contract.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"
#include "tonemeter/dataset.hpp"

using namespace tonemeter;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void check(bool ok, const std::string& what) {
    std::printf("[%s] %s\n", ok ? "ok" : "FAIL", what.c_str());
    if (!ok) ++g_failures;
}

int run(const std::string& args) {
    std::string cmd = std::string(TONEMETER_CLI_PATH) + " " + args + " >> /tmp/cli_test.log 2>&1";
    int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

}  // namespace

int main() {
    std::remove("/tmp/cli_test.log");
    fs::path dir = fs::temp_directory_path() / "tonemeter_cli_workflow";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const std::string corpus = (dir / "corpus").string();
    const std::string manifest = corpus + "/manifest.csv";

    check(run("--seed 5 synth --out " + corpus +
              " --subjects 8 --images-per-subject 3 --size 32 --gain-min 0.9 --gain-max 1.1 "
              "--noise-sigma 0.01 --lesion-prob 0.3") == 0,
          "synth generates a corpus");
    check(fs::exists(manifest), "manifest written");

    const std::string ckpts = (dir / "ckpts").string();
    check(run("--seed 5 train --head ordinal --manifest " + manifest + " --out " + ckpts +
              " --fold 0 --input-size 16 --feature-dim 16 --lr 3e-3 --batch 16 --epochs 2") == 0,
          "train ordinal fold 0");
    check(run("--seed 5 train --head lab --manifest " + manifest + " --out " + ckpts +
              " --fold 0 --input-size 16 --feature-dim 16 --lr 3e-3 --batch 16 --epochs 2") == 0,
          "train lab fold 0");
    check(fs::exists(ckpts + "/ordinal_fold0.ckpt") && fs::exists(ckpts + "/lab_fold0.ckpt"),
          "checkpoints written");
    check(fs::exists(ckpts + "/ordinal_fold0_history.json"), "history written");

    const std::string net_pred = (dir / "net_pred.csv").string();
    check(run("estimate --estimator net --fp-checkpoints " + ckpts +
              "/ordinal_fold0.ckpt --lab-checkpoints " + ckpts + "/lab_fold0.ckpt --manifest " +
              manifest + " --out " + net_pred) == 0,
          "estimate with the net");
    {
        auto rows = load_predictions(net_pred);
        bool ok = rows.size() == 24;
        for (const auto& r : rows) ok &= r.pred_fp.has_value() && r.pred_lab.has_value();
        check(ok, "net predictions carry fp and lab");
    }

    const std::string base_pred = (dir / "kmeans_pred.csv").string();
    check(run("--seed 9 estimate --estimator kmeans --k 3 --manifest " + manifest + " --out " +
              base_pred) == 0,
          "estimate with the kmeans baseline");
    check(run("--seed 9 estimate --estimator patch --patch-size 8 --wb shades-of-gray:p=4 "
              "--manifest " +
              manifest + " --out " + (dir / "patch_pred.csv").string()) == 0,
          "estimate with patch baseline + white balance");

    const std::string eval_json = (dir / "eval.json").string();
    check(run("--seed 3 eval --manifest " + manifest + " --pred " + base_pred +
              " --modality dermatoscopic --bootstrap 100 --out-json " + eval_json +
              " --out-csv " + (dir / "eval.csv").string()) == 0,
          "eval against references");
    {
        auto j = nlohmann::json::parse(slurp(eval_json));
        bool has_kappa = false, has_icc = false;
        for (const auto& r : j["reports"]) {
            has_kappa |= r["metric"] == "kappa_linear";
            has_icc |= r["metric"] == "icc3";
        }
        check(has_kappa && has_icc && j["modality_filter"] == "dermatoscopic",
              "eval JSON has kappa and icc3 reports and records the modality filter");
    }

    check(run("--seed 3 eval --manifest " + manifest +
              " --estimator kmeans --wb-ablation --bootstrap 100 --out-json " +
              (dir / "ablation.json").string()) == 0,
          "white-balance ablation table");
    {
        auto j = nlohmann::json::parse(slurp(dir / "ablation.json"));
        check(j.contains("no_white_balance") && j.contains("shades_of_gray"),
              "ablation JSON has both arms");
    }

    check(run("--seed 3 stats --metric kappa --manifest " + manifest + " --pred " + base_pred +
              " --bootstrap 100 --out-json " + (dir / "kappa.json").string()) == 0,
          "stats --metric kappa");

    // degenerate statistics surface as exit code 3: identical colorimeter
    // references for every image make between-subject variance zero
    {
        auto rows = load_manifest(manifest);
        std::vector<PredictionRow> preds;
        for (auto& r : rows) {
            r.colorimeter = LabColor{50, 5, 10};
            PredictionRow p;
            p.image_path = r.image_path;
            p.subject_id = r.subject_id;
            p.pred_lab = LabColor{52, 5, 10};
            p.pred_ita = ita(*p.pred_lab).degrees;
            preds.push_back(p);
        }
        const std::string flat_manifest = (dir / "flat_manifest.csv").string();
        const std::string flat_pred = (dir / "flat_pred.csv").string();
        save_manifest(rows, flat_manifest);
        save_predictions(preds, flat_pred);
        check(run("stats --metric icc3 --manifest " + flat_manifest + " --pred " + flat_pred +
                  " --bootstrap 100 --by none") == 3,
              "degenerate icc3 exits with code 3");
    }

    check(run("estimate --estimator kmeans --manifest /nonexistent/manifest.csv --out " +
              (dir / "x.csv").string()) == 2,
          "missing manifest exits with code 2");
    check(run("--seed 1 audit --images " + corpus + "/images --estimator kmeans --out-json " +
              (dir / "audit_dir.json").string()) == 0,
          "audit over a bare image directory");
    {
        auto j = nlohmann::json::parse(slurp(dir / "audit_dir.json"));
        check(j["n_images"] == 24 && j["fp_source"] == "ita-band",
              "directory audit counts images and labels the rank source ita-band");
    }

    check(run("swatch --lab 60,5,20 --lab 30,10,15 --lab 100,0,0 --out " +
              (dir / "swatches.png").string()) == 0,
          "swatch grid from Lab values");
    check(fs::exists(dir / "swatches.png") && fs::exists(dir / "swatches.png.json"),
          "swatch PNG and sidecar exist");

    // config file feeds global options
    {
        const std::string cfg = (dir / "tonemeter.ini").string();
        std::ofstream f(cfg);
        f << "seed=12345\n";
        f.close();
        const std::string out = (dir / "audit_cfg.json").string();
        check(run("--config " + cfg + " audit --manifest " + manifest +
                  " --estimator kmeans --out-json " + out) == 0,
              "audit with config file");
        auto j = nlohmann::json::parse(slurp(out));
        check(j["seed"] == 12345, "config file seed lands in the report");
    }

    fs::remove_all(dir);
    std::printf("%s (%d failure%s)\n", g_failures == 0 ? "CLI WORKFLOW PASS" : "CLI WORKFLOW FAIL",
                g_failures, g_failures == 1 ? "" : "s");
    return g_failures == 0 ? 0 : 1;
}

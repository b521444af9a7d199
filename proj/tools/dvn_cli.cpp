// dvn: train, score, calibrate and evaluate a deep verifier network from an
// experiment config. Exit codes: 0 ok, 1 other failure, 2 config error,
// 3 numeric failure.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "dvn/errors.hpp"
#include "dvn/harness/config.hpp"
#include "dvn/harness/experiment.hpp"

namespace fs = std::filesystem;
using namespace dvn;
using namespace dvn::harness;

namespace {

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
};

ExperimentConfig load(const Common& c) {
    ExperimentConfig cfg = load_experiment_config(c.config);
    if (c.seed) cfg.seed = *c.seed;
    if (!c.out.empty()) cfg.output_dir = c.out;
    return cfg;
}

void print_rows(const DetectionReport& rep) {
    std::printf("delta = %.6g (target TPR %.3f, calibrated on %zu ID samples), achieved TPR %.4f\n",
                rep.threshold.delta, rep.threshold.target_tpr, rep.threshold.calibration_size, rep.achieved_tpr);
    std::printf("%-16s %6s %6s %8s %8s %8s %8s\n", "negative", "n_pos", "n_neg", "TNR95", "AUROC", "VerAcc", "AUPRin");
    for (const auto& r : rep.rows)
        std::printf("%-16s %6zu %6zu %8.4f %8.4f %8.4f %8.4f\n", r.negative_name.c_str(), r.n_pos, r.n_neg, r.tnr95,
                    r.auroc, r.ver_acc, r.aupr_in);
}

void write_sweep(Experiment& e, const DetectionReport& rep) {
    const auto grid = default_delta_grid(rep.id_test.scores, rep.negatives);
    const SweepTable t = threshold_sweep(rep.id_test.scores, rep.negatives, grid);
    std::ofstream csv(e.output_dir() / "sweep.csv");
    write_sweep_csv(csv, t);
    std::ofstream svg(e.output_dir() / "sweep.svg");
    write_sweep_svg(svg, t);
    e.note_artifact("sweep.csv");
    e.note_artifact("sweep.svg");
}

// Runs `body` against a fresh experiment; on failure leaves a manifest that
// names the failing stage.
template <typename F>
int run_verb(const Common& c, bool reuse, F&& body) {
    std::optional<Experiment> e;
    try {
        e.emplace(load(c));
        e->reuse_checkpoints(reuse);
        body(*e);
        e->write_manifest();
        return 0;
    } catch (const std::exception& ex) {
        if (e) {
            try {
                e->write_failure_manifest(ex.what());
            } catch (const std::exception&) {
            }
            std::fprintf(stderr, "dvn: stage '%s' failed: %s\n", e->current_stage().c_str(), ex.what());
        } else {
            std::fprintf(stderr, "dvn: %s\n", ex.what());
        }
        if (dynamic_cast<const ConfigError*>(&ex)) return 2;
        if (dynamic_cast<const NumericError*>(&ex)) return 3;
        return 1;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Deep verifier network toolkit"};
    app.require_subcommand(1);
    Common common;

    auto add = [&](const char* name, const char* help) {
        CLI::App* sub = app.add_subcommand(name, help);
        sub->add_option("--config", common.config, "experiment config file")->required()->check(CLI::ExistingFile);
        sub->add_option("--seed", common.seed, "override the config seed");
        sub->add_option("--out", common.out, "override the output directory");
        return sub;
    };
    CLI::App* train_clf = add("train-classifier", "train the classifier under verification");
    CLI::App* train_dvn = add("train-dvn", "train the verifier on ID training data");
    CLI::App* score = add("score", "score ID test data and every negative set");
    CLI::App* calibrate = add("calibrate", "calibrate delta on ID validation scores");
    CLI::App* attack = add("attack", "write adversarial sets built from ID test data");
    CLI::App* evaluate = add("evaluate", "score, calibrate and write detection metrics");
    CLI::App* sweep = add("sweep", "evaluate, then sweep delta and plot TPR/FPR");
    CLI::App* report = add("report", "evaluate, sweep and compare against the MSP baseline");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    if (train_clf->parsed())
        return run_verb(common, false, [](Experiment& e) {
            const Classifier& c = e.classifier();
            std::printf("classifier test accuracy %.4f, parameter hash %016llx\n", c.accuracy(e.data().test),
                        static_cast<unsigned long long>(c.parameter_hash()));
        });
    if (train_dvn->parsed())
        return run_verb(common, false, [](Experiment& e) {
            e.verifier();
            std::printf("verifier written to %s\n", (e.output_dir() / "verifier.ckpt").string().c_str());
        });
    if (calibrate->parsed())
        return run_verb(common, true, [](Experiment& e) {
            const auto& t = e.threshold();
            std::printf("delta = %.17g (target TPR %.3f, n = %zu)\n", t.delta, t.target_tpr, t.calibration_size);
        });
    if (score->parsed())
        return run_verb(common, true, [](Experiment& e) {
            e.negative_scores();
            std::printf("score dumps written to %s\n", (e.output_dir() / "scores").string().c_str());
        });
    if (attack->parsed())
        return run_verb(common, true, [](Experiment& e) {
            for (const auto& ns : e.negatives()) {
                if (ns.data.origin() != Origin::adversarial) continue;
                const fs::path rel = fs::path("adversarial") / (ns.name + ".txt");
                fs::create_directories(e.output_dir() / "adversarial");
                write_dataset(e.output_dir() / rel, ns.data);
                e.note_artifact(rel);
                std::printf("%s: %zu successful adversarial examples\n", ns.name.c_str(), ns.data.size());
            }
        });
    if (evaluate->parsed())
        return run_verb(common, true, [](Experiment& e) { print_rows(e.evaluate()); });
    if (sweep->parsed())
        return run_verb(common, true, [](Experiment& e) {
            const DetectionReport rep = e.evaluate();
            write_sweep(e, rep);
            print_rows(rep);
        });
    if (report->parsed())
        return run_verb(common, true, [](Experiment& e) {
            const DetectionReport rep = e.evaluate();
            write_sweep(e, rep);
            const auto& negs = e.negatives();
            std::printf("%-16s %10s %10s\n", "negative", "MSP AUROC", "DVN AUROC");
            for (std::size_t i = 0; i < negs.size(); ++i) {
                const auto cmp = compare_baseline_msp(e.classifier(), e.data().test, rep.id_test.scores, negs[i],
                                                      rep.negatives[i].scores);
                std::ofstream csv(e.output_dir() / ("msp_" + negs[i].name + ".csv"));
                write_comparison_csv(csv, cmp);
                std::ofstream svg(e.output_dir() / ("msp_" + negs[i].name + ".svg"));
                write_comparison_svg(svg, cmp);
                e.note_artifact("msp_" + negs[i].name + ".csv");
                e.note_artifact("msp_" + negs[i].name + ".svg");
                std::printf("%-16s %10.4f %10.4f\n", negs[i].name.c_str(), cmp.msp.auroc, cmp.dvn.auroc);
            }
            print_rows(rep);
        });
    return 1;
}

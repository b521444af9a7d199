#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dvn/classifier.hpp"
#include "dvn/dataset.hpp"
#include "dvn/harness/config.hpp"
#include "dvn/metrics.hpp"
#include "dvn/scoring.hpp"
#include "dvn/trainer.hpp"

namespace dvn::harness {

struct IdSplits {
    Dataset train;
    Dataset validation;
    Dataset test;
};

/// A negative pool ready for scoring. `labels` are the labels the verifier is
/// asked about: the classifier's prediction, or the probe labels for
/// wrong-label sets.
struct NegativeSet {
    std::string name;
    Dataset data;
    std::vector<int> labels;
};

struct ScoredPool {
    std::string name;
    Origin origin = Origin::ood;
    std::vector<double> scores;
    std::vector<int> labels;
};

struct DetectionReport {
    std::vector<MetricRow> rows;
    DecisionThreshold threshold;
    double achieved_tpr = 0.0;  // on the ID test split
    ScoredPool id_test;
    std::vector<ScoredPool> negatives;
    nlohmann::json manifest;
};

/// One experiment with lazily evaluated stages. Each stage runs at most once;
/// its wall-clock time is recorded and a failure names the stage in the
/// manifest written by `write_failure_manifest`.
class Experiment {
public:
    explicit Experiment(ExperimentConfig config);

    const ExperimentConfig& config() const { return config_; }
    const std::filesystem::path& output_dir() const { return config_.output_dir; }

    /// When set, stages load `classifier.ckpt` / `verifier.ckpt` from the
    /// output directory instead of training, provided the `.key` file next
    /// to the checkpoint matches the current data and model settings.
    void reuse_checkpoints(bool on) { reuse_ = on; }

    const IdSplits& data();
    const Classifier& classifier();
    const VerifierModel& verifier();
    const std::vector<NegativeSet>& negatives();  // OOD sets followed by attack sets
    const ScoredPool& validation_scores();
    const DecisionThreshold& threshold();
    /// Scores the ID test split and every negative set; writes scores/*.csv.
    const ScoredPool& test_scores();
    const std::vector<ScoredPool>& negative_scores();
    DetectionReport evaluate();

    ScoringOptions scoring_options() const;
    std::vector<int> scoring_labels(const Dataset& d);

    const std::string& current_stage() const { return stage_; }
    nlohmann::json manifest(std::string_view status) const;
    void note_artifact(const std::filesystem::path& relative);
    void write_manifest();
    void write_failure_manifest(std::string_view error);

private:
    template <typename F>
    auto stage(const char* name, F&& body);

    ExperimentConfig config_;
    bool reuse_ = false;
    std::string stage_ = "setup";
    std::map<std::string, double> seconds_;
    std::vector<std::string> artifacts_;
    std::string started_at_;

    std::optional<IdSplits> data_;
    std::optional<Classifier> classifier_;
    std::optional<VerifierModel> verifier_;
    std::optional<std::vector<NegativeSet>> negatives_;
    std::optional<ScoredPool> validation_;
    std::optional<DecisionThreshold> threshold_;
    std::optional<ScoredPool> test_;
    std::optional<std::vector<ScoredPool>> negative_scores_;
    std::optional<DetectionReport> report_;
};

/// Full pipeline: data, classifier, verifier, scoring, calibration on ID
/// validation data, metrics. Writes metrics.csv, scores/*.csv,
/// threshold.json, checkpoints and manifest.json under the output directory.
/// On failure writes a manifest with status "failed" naming the stage, then
/// rethrows.
DetectionReport run_experiment(const ExperimentConfig& config, bool reuse_checkpoints = false);
DetectionReport run_experiment(const std::filesystem::path& config_path);

struct SweepTable {
    std::vector<double> deltas;
    std::vector<double> id_tpr;
    std::vector<std::string> negative_names;
    std::vector<std::vector<double>> fpr;  // [negative][delta]
};

/// For each delta: TPR = fraction of ID scores >= delta, FPR = fraction of
/// each negative pool's scores >= delta.
SweepTable threshold_sweep(std::span<const double> id_scores, std::span<const ScoredPool> negatives,
                           std::span<const double> delta_grid);

/// `n` evenly spaced deltas spanning every score in the pools.
std::vector<double> default_delta_grid(std::span<const double> id_scores, std::span<const ScoredPool> negatives,
                                       int n = 41);

/// CSV `delta,id_tpr,fpr_<name>...`.
void write_sweep_csv(std::ostream& out, const SweepTable& table);
/// FPR lines on the left axis, ID TPR on the right axis.
void write_sweep_svg(std::ostream& out, const SweepTable& table);

struct DetectorRow {
    std::string detector;
    std::size_t n_pos = 0;
    std::size_t n_neg = 0;
    double auroc = 0.0;
    double aupr_in = 0.0;
    std::vector<CurvePoint> curve;
};

struct BaselineComparison {
    std::string negative_name;
    DetectorRow msp;
    DetectorRow dvn;
};

/// MSP and verifier scores on the same ID and negative samples.
BaselineComparison compare_baseline_msp(const Classifier& classifier, const Dataset& id_test,
                                        std::span<const double> id_dvn_scores, const NegativeSet& negative,
                                        std::span<const double> negative_dvn_scores);

/// CSV `detector,negative,n_pos,n_neg,auroc,aupr_in`, one row per detector.
void write_comparison_csv(std::ostream& out, const BaselineComparison& cmp);
/// ROC curves of both detectors overlaid.
void write_comparison_svg(std::ostream& out, const BaselineComparison& cmp);

}  // namespace dvn::harness

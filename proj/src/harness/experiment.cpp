#include "dvn/harness/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <limits>
#include <ostream>

#include <Eigen/Core>

#include "dvn/attacks.hpp"
#include "dvn/errors.hpp"
#include "dvn/harness/svg.hpp"
#include "dvn/rng.hpp"

#ifndef DVN_VERSION
#define DVN_VERSION "unknown"
#endif

namespace dvn::harness {

namespace fs = std::filesystem;

namespace {

std::string utc_now() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::uint64_t name_stream(std::string_view name) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : name) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::ofstream open_out(const fs::path& p) {
    fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + p.string());
    return out;
}

Dataset take_first(const Dataset& d, int limit) {
    if (limit <= 0 || static_cast<std::size_t>(limit) >= d.size()) return d;
    std::vector<LabeledSample> s(d.begin(), d.begin() + limit);
    return Dataset(std::move(s), d.num_classes(), d.origin());
}

// Hash of the settings that determine a trained model; a cached checkpoint is
// reused only when its sidecar key matches.
std::string model_key(const ExperimentConfig& c, bool with_verifier) {
    ExperimentConfig k;
    k.seed = c.seed;
    k.id = c.id;
    k.classifier_arch = c.classifier_arch;
    k.classifier_train = c.classifier_train;
    if (with_verifier) {
        k.verifier_arch = c.verifier_arch;
        k.verifier_train = c.verifier_train;
        k.ablation.disable_mi = c.ablation.disable_mi;
        k.ablation.encoder_cond_y = c.ablation.encoder_cond_y;
    }
    return config_hash(k);
}

bool cached_matches(const fs::path& ckpt, const std::string& key) {
    if (!fs::exists(ckpt)) return false;
    std::ifstream in(fs::path(ckpt).concat(".key"));
    std::string stored;
    return in >> stored && stored == key;
}

void write_key(const fs::path& ckpt, const std::string& key) {
    std::ofstream out(fs::path(ckpt).concat(".key"));
    out << key << "\n";
}

double fraction_at_least(std::span<const double> scores, double delta) {
    const auto n = std::count_if(scores.begin(), scores.end(), [&](double s) { return s >= delta; });
    return static_cast<double>(n) / static_cast<double>(scores.size());
}

}  // namespace

Experiment::Experiment(ExperimentConfig config) : config_(std::move(config)), started_at_(utc_now()) {}

template <typename F>
auto Experiment::stage(const char* name, F&& body) {
    const std::string outer = stage_;
    stage_ = name;
    const auto t0 = std::chrono::steady_clock::now();
    body();
    seconds_[name] += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    stage_ = outer;
}

void Experiment::note_artifact(const fs::path& relative) {
    const std::string s = relative.generic_string();
    if (std::find(artifacts_.begin(), artifacts_.end(), s) == artifacts_.end()) artifacts_.push_back(s);
}

const IdSplits& Experiment::data() {
    if (data_) return *data_;
    stage("data", [&] {
        const auto& id = config_.id;
        const std::uint64_t s = derive_seed(config_.seed, 1);
        Dataset all = [&] {
            switch (id.kind) {
                case IdKind::synthetic: return make_synthetic_id(id.num_classes, id.dim, id.n, id.separation, s);
                case IdKind::sector:
                    return make_sector_manifold(id.num_classes, id.dim, id.n, id.scale, s, id.split_gap);
                case IdKind::file: break;
            }
            Dataset d = read_dataset(id.path);
            if (d.origin() != Origin::in_distribution)
                throw ArgumentError("ID dataset file is tagged " + std::string(to_string(d.origin())));
            return d;
        }();
        auto parts = split(all, id.fractions, derive_seed(config_.seed, 4));
        data_ = IdSplits{std::move(parts[0]), std::move(parts[1]), std::move(parts[2])};
    });
    return *data_;
}

const Classifier& Experiment::classifier() {
    if (classifier_) return *classifier_;
    const IdSplits& d = data();
    stage("classifier", [&] {
        const fs::path cached = config_.output_dir / "classifier.ckpt";
        const std::string key = model_key(config_, false);
        fs::path source = config_.classifier_checkpoint;
        if (source.empty() && reuse_ && cached_matches(cached, key)) source = cached;
        if (!source.empty()) {
            classifier_ = load_classifier(source);
            if (classifier_->arch().input_dim != d.train.dim() || classifier_->arch().num_classes != d.train.num_classes())
                throw ArgumentError("classifier checkpoint does not match the ID data shape");
            return;
        }
        ClassifierTrainConfig tc = config_.classifier_train;
        tc.seed = derive_seed(config_.seed, 5);
        classifier_ = train_classifier(d.train, effective_classifier_arch(config_, d.train.dim(), d.train.num_classes()), tc);
        fs::create_directories(config_.output_dir);
        save_classifier(*classifier_, cached);
        write_key(cached, key);
        note_artifact("classifier.ckpt");
    });
    return *classifier_;
}

const VerifierModel& Experiment::verifier() {
    if (verifier_) return *verifier_;
    const IdSplits& d = data();
    stage("verifier", [&] {
        const fs::path cached = config_.output_dir / "verifier.ckpt";
        const std::string key = model_key(config_, true);
        fs::path source = config_.verifier_checkpoint;
        if (source.empty() && reuse_ && cached_matches(cached, key)) source = cached;
        if (!source.empty()) {
            verifier_ = load_checkpoint(source);
            if (verifier_->arch.input_dim != d.train.dim() || verifier_->arch.num_classes != d.train.num_classes())
                throw ArgumentError("verifier checkpoint does not match the ID data shape");
            return;
        }
        const VerifierArch arch = effective_verifier_arch(config_, d.train.dim(), d.train.num_classes());
        TrainResult r = train_dvn(d.train, arch, effective_verifier_train(config_));
        verifier_ = std::move(r.model);
        fs::create_directories(config_.output_dir);
        save_checkpoint(*verifier_, cached);
        write_key(cached, key);
        note_artifact("verifier.ckpt");
        auto log = open_out(config_.output_dir / "train_log.csv");
        write_train_log(log, r.log);
        note_artifact("train_log.csv");
    });
    return *verifier_;
}

std::vector<int> Experiment::scoring_labels(const Dataset& d) {
    return classifier().predict_labels(d);
}

ScoringOptions Experiment::scoring_options() const {
    ScoringOptions o;
    o.k = config_.k;
    o.seed = derive_seed(config_.seed, 3);
    o.prior = config_.ablation.disable_prior_correction ? PriorMode::standard : PriorMode::corrected;
    o.threads = config_.threads;
    return o;
}

const std::vector<NegativeSet>& Experiment::negatives() {
    if (negatives_) return *negatives_;
    const IdSplits& d = data();
    const Classifier& clf = classifier();
    stage("negatives", [&] {
        std::vector<NegativeSet> out;
        const auto& id = config_.id;
        const int dim = d.test.dim(), C = d.test.num_classes();
        for (const auto& spec : config_.negatives) {
            const std::uint64_t s = derive_seed(derive_seed(config_.seed, 6), name_stream(spec.name));
            NegativeSet ns{spec.name, d.test, {}};
            switch (spec.kind) {
                case NegativeKind::uniform:
                    ns.data = make_noise_ood(NoiseKind::uniform, spec.n, dim, s, C);
                    break;
                case NegativeKind::gaussian:
                    ns.data = make_noise_ood(NoiseKind::gaussian, spec.n, dim, s, C);
                    break;
                case NegativeKind::shifted:
                    ns.data = make_shifted_ood(C, dim, spec.n, id.separation, spec.angle_offset, s);
                    break;
                case NegativeKind::gap:
                    ns.data = make_sector_manifold(C, dim, spec.n, id.scale, s, id.split_gap, true);
                    break;
                case NegativeKind::file:
                    ns.data = read_dataset(spec.path, Origin::ood);
                    if (ns.data.origin() == Origin::in_distribution)
                        throw ArgumentError("negative set '" + spec.name + "' is tagged in_distribution");
                    if (ns.data.dim() != dim) throw ArgumentError("negative set '" + spec.name + "' has the wrong dimension");
                    break;
                case NegativeKind::wrong_label: {
                    Rng rng = make_rng(s);
                    std::uniform_int_distribution<int> shift(1, C - 1);
                    for (const auto& smp : d.test) ns.labels.push_back((smp.y + shift(rng)) % C);
                    ns.data = d.test.with_origin(Origin::ood);
                    break;
                }
            }
            if (ns.labels.empty()) ns.labels = clf.predict_labels(ns.data);
            out.push_back(std::move(ns));
        }
        for (const auto& a : config_.attacks) {
            auto attacked = attack_dataset(clf, take_first(d.test, a.limit), a.method, a.config, true);
            if (!attacked) throw NumericError("attack '" + a.name + "' produced no successful adversarial examples");
            NegativeSet ns{a.name, attacked->data, {}};
            ns.labels = attacked->data.labels();
            out.push_back(std::move(ns));
        }
        negatives_ = std::move(out);
    });
    return *negatives_;
}

const ScoredPool& Experiment::validation_scores() {
    if (validation_) return *validation_;
    const IdSplits& d = data();
    const VerifierModel& model = verifier();
    std::vector<int> labels = scoring_labels(d.validation);
    stage("calibration", [&] {
        ScoredPool p{"id_validation", d.validation.origin(), score_dataset(model, d.validation, labels, scoring_options()),
                     std::move(labels)};
        validation_ = std::move(p);
    });
    return *validation_;
}

const DecisionThreshold& Experiment::threshold() {
    if (threshold_) return *threshold_;
    const ScoredPool& val = validation_scores();
    stage("calibration", [&] {
        // refuses pools not tagged in_distribution
        threshold_ = calibrate_threshold(val.origin, val.scores, config_.target_tpr);
        auto out = open_out(config_.output_dir / "threshold.json");
        const nlohmann::json j{{"delta", threshold_->delta},
                               {"target_tpr", threshold_->target_tpr},
                               {"calibration_size", threshold_->calibration_size}};
        out << j.dump(2) << "\n";
        note_artifact("threshold.json");
    });
    return *threshold_;
}

const ScoredPool& Experiment::test_scores() {
    negative_scores();
    return *test_;
}

const std::vector<ScoredPool>& Experiment::negative_scores() {
    if (negative_scores_) return *negative_scores_;
    const IdSplits& d = data();
    const VerifierModel& model = verifier();
    const auto& negs = negatives();
    const DecisionThreshold& delta = threshold();
    const ScoredPool& val = validation_scores();
    std::vector<int> labels = scoring_labels(d.test);
    stage("scoring", [&] {
        const ScoringOptions opt = scoring_options();
        test_ = ScoredPool{"id_test", d.test.origin(), score_dataset(model, d.test, labels, opt), std::move(labels)};
        std::vector<ScoredPool> pools;
        for (const auto& ns : negs)
            pools.push_back(ScoredPool{ns.name, ns.data.origin(), score_dataset(model, ns.data, ns.labels, opt), ns.labels});
        std::vector<const ScoredPool*> all{&val, &*test_};
        for (const auto& p : pools) all.push_back(&p);
        for (const ScoredPool* p : all) {
            const fs::path rel = fs::path("scores") / (p->name + ".csv");
            auto out = open_out(config_.output_dir / rel);
            write_score_dump(out, p->scores, p->labels, delta);
            note_artifact(rel);
        }
        negative_scores_ = std::move(pools);
    });
    return *negative_scores_;
}

DetectionReport Experiment::evaluate() {
    if (report_) return *report_;
    const auto& negs = negative_scores();
    DetectionReport rep;
    rep.threshold = threshold();
    rep.id_test = test_scores();
    rep.negatives = negs;
    stage("metrics", [&] {
        rep.achieved_tpr = fraction_at_least(rep.id_test.scores, rep.threshold.delta);
        for (const auto& p : rep.negatives)
            rep.rows.push_back(evaluate_pools({rep.id_test.scores, p.scores}, "id_test", p.name, config_.target_tpr));
        auto out = open_out(config_.output_dir / "metrics.csv");
        write_metrics_csv(out, rep.rows);
        note_artifact("metrics.csv");
    });
    report_ = rep;
    report_->manifest = manifest("ok");
    return *report_;
}

nlohmann::json Experiment::manifest(std::string_view status) const {
    nlohmann::json j;
    j["status"] = status;
    j["config_hash"] = config_hash(config_);
    j["config"] = to_config_text(config_);
    j["seed"] = config_.seed;
    j["versions"] = {{"dvn", DVN_VERSION},
                     {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                   std::to_string(EIGEN_MINOR_VERSION)},
                     {"compiler", __VERSION__}};
    j["started_at"] = started_at_;
    double total = 0;
    nlohmann::json stages = nlohmann::json::object();
    for (const auto& [k, v] : seconds_) {
        stages[k] = v;
        total += v;
    }
    j["stage_seconds"] = stages;
    j["wall_clock_seconds"] = total;
    j["artifacts"] = artifacts_;
    if (threshold_)
        j["threshold"] = {{"delta", threshold_->delta},
                          {"target_tpr", threshold_->target_tpr},
                          {"calibration_size", threshold_->calibration_size}};
    if (report_) {
        j["achieved_tpr"] = report_->achieved_tpr;
        nlohmann::json pools = nlohmann::json::array();
        for (const auto& r : report_->rows) pools.push_back({{"negative", r.negative_name}, {"n_pos", r.n_pos}, {"n_neg", r.n_neg}});
        j["pools"] = pools;
    }
    return j;
}

void Experiment::write_manifest() {
    auto out = open_out(config_.output_dir / "manifest.json");
    out << manifest("ok").dump(2) << "\n";
}

void Experiment::write_failure_manifest(std::string_view error) {
    nlohmann::json j = manifest("failed");
    j["failed_stage"] = stage_;
    j["error"] = error;
    auto out = open_out(config_.output_dir / "manifest.json");
    out << j.dump(2) << "\n";
}

DetectionReport run_experiment(const ExperimentConfig& config, bool reuse_checkpoints) {
    Experiment e(config);
    e.reuse_checkpoints(reuse_checkpoints);
    try {
        DetectionReport rep = e.evaluate();
        if (config.baseline_msp) {
            const auto& negs = e.negatives();
            for (std::size_t i = 0; i < negs.size(); ++i) {
                const auto cmp = compare_baseline_msp(e.classifier(), e.data().test, rep.id_test.scores, negs[i],
                                                      rep.negatives[i].scores);
                auto csv = open_out(config.output_dir / ("msp_" + negs[i].name + ".csv"));
                write_comparison_csv(csv, cmp);
                auto svg = open_out(config.output_dir / ("msp_" + negs[i].name + ".svg"));
                write_comparison_svg(svg, cmp);
                e.note_artifact("msp_" + negs[i].name + ".csv");
                e.note_artifact("msp_" + negs[i].name + ".svg");
            }
        }
        e.write_manifest();
        rep.manifest = e.manifest("ok");
        return rep;
    } catch (const std::exception& ex) {
        e.write_failure_manifest(ex.what());
        throw;
    }
}

DetectionReport run_experiment(const fs::path& config_path) {
    return run_experiment(load_experiment_config(config_path));
}

SweepTable threshold_sweep(std::span<const double> id_scores, std::span<const ScoredPool> negatives,
                           std::span<const double> delta_grid) {
    if (delta_grid.empty()) throw ArgumentError("empty threshold grid");
    if (id_scores.empty()) throw ArgumentError("empty ID score pool");
    SweepTable t;
    t.deltas.assign(delta_grid.begin(), delta_grid.end());
    for (double d : t.deltas) {
        if (std::isnan(d)) throw ArgumentError("NaN threshold in grid");
        t.id_tpr.push_back(fraction_at_least(id_scores, d));
    }
    for (const auto& p : negatives) {
        if (p.scores.empty()) throw ArgumentError("empty negative pool '" + p.name + "'");
        t.negative_names.push_back(p.name);
        std::vector<double> f;
        for (double d : t.deltas) f.push_back(fraction_at_least(p.scores, d));
        t.fpr.push_back(std::move(f));
    }
    return t;
}

std::vector<double> default_delta_grid(std::span<const double> id_scores, std::span<const ScoredPool> negatives, int n) {
    if (n < 2) throw ArgumentError("grid needs at least two points");
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    auto take = [&](std::span<const double> s) {
        for (double v : s) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    };
    take(id_scores);
    for (const auto& p : negatives) take(p.scores);
    if (!std::isfinite(lo)) throw ArgumentError("no finite scores");
    std::vector<double> g(n);
    for (int i = 0; i < n; ++i) g[i] = lo + (hi - lo) * i / (n - 1);
    return g;
}

void write_sweep_csv(std::ostream& out, const SweepTable& t) {
    out << "delta,id_tpr";
    for (const auto& n : t.negative_names) out << ",fpr_" << n;
    out << '\n';
    char buf[32];
    for (std::size_t i = 0; i < t.deltas.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.9g", t.deltas[i]);
        out << buf;
        std::snprintf(buf, sizeof buf, "%.6f", t.id_tpr[i]);
        out << ',' << buf;
        for (const auto& f : t.fpr) {
            std::snprintf(buf, sizeof buf, "%.6f", f[i]);
            out << ',' << buf;
        }
        out << '\n';
    }
}

void write_sweep_svg(std::ostream& out, const SweepTable& t) {
    LinePlot plot;
    plot.title = "Threshold sweep";
    plot.x_label = "delta (L_k, nats)";
    plot.y_label = "FPR (negative sets)";
    plot.y2_label = "TPR (ID)";
    for (std::size_t j = 0; j < t.fpr.size(); ++j) plot.series.push_back({t.negative_names[j], t.deltas, t.fpr[j]});
    plot.series.push_back({"ID TPR", t.deltas, t.id_tpr, true, true});
    write_svg(out, plot);
}

namespace {

DetectorRow detector_row(std::string name, const ScorePools& pools) {
    DetectorRow r;
    r.detector = std::move(name);
    r.n_pos = pools.pos.size();
    r.n_neg = pools.neg.size();
    r.auroc = auroc(pools);
    r.aupr_in = aupr(pools, PositiveClass::id);
    r.curve = detection_curve(pools);
    return r;
}

}  // namespace

BaselineComparison compare_baseline_msp(const Classifier& classifier, const Dataset& id_test,
                                        std::span<const double> id_dvn_scores, const NegativeSet& negative,
                                        std::span<const double> negative_dvn_scores) {
    if (id_dvn_scores.size() != id_test.size() || negative_dvn_scores.size() != negative.data.size())
        throw ArgumentError("detector pools differ in size");
    ScorePools msp, dvn;
    for (const auto& s : id_test) msp.pos.push_back(classifier.msp_score(s.x));
    for (const auto& s : negative.data) msp.neg.push_back(classifier.msp_score(s.x));
    dvn.pos.assign(id_dvn_scores.begin(), id_dvn_scores.end());
    dvn.neg.assign(negative_dvn_scores.begin(), negative_dvn_scores.end());
    BaselineComparison c{negative.name, detector_row("msp", msp), detector_row("dvn", dvn)};
    if (c.msp.n_pos != c.dvn.n_pos || c.msp.n_neg != c.dvn.n_neg) throw ArgumentError("detector pools differ in size");
    return c;
}

void write_comparison_csv(std::ostream& out, const BaselineComparison& cmp) {
    out << "detector,negative,n_pos,n_neg,auroc,aupr_in\n";
    char buf[96];
    for (const DetectorRow* r : {&cmp.msp, &cmp.dvn}) {
        std::snprintf(buf, sizeof buf, "%zu,%zu,%.6f,%.6f", r->n_pos, r->n_neg, r->auroc, r->aupr_in);
        out << r->detector << ',' << cmp.negative_name << ',' << buf << '\n';
    }
}

void write_comparison_svg(std::ostream& out, const BaselineComparison& cmp) {
    LinePlot plot;
    plot.title = "ROC: ID test vs " + cmp.negative_name;
    plot.x_label = "FPR";
    plot.y_label = "TPR";
    for (const DetectorRow* r : {&cmp.msp, &cmp.dvn}) {
        LineSeries s;
        char buf[48];
        std::snprintf(buf, sizeof buf, " (AUROC %.3f)", r->auroc);
        s.label = r->detector + buf;
        s.x.push_back(0.0);
        s.y.push_back(0.0);
        for (const auto& p : r->curve) {
            s.x.push_back(p.fpr);
            s.y.push_back(p.tpr);
        }
        s.dashed = r == &cmp.msp;
        plot.series.push_back(std::move(s));
    }
    write_svg(out, plot);
}

}  // namespace dvn::harness

// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero when any criterion fails.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <future>
#include <iomanip>
#include <iostream>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dvn/classifier.hpp"
#include "dvn/dataset.hpp"
#include "dvn/harness/config.hpp"
#include "dvn/harness/experiment.hpp"
#include "dvn/metrics.hpp"
#include "dvn/model.hpp"
#include "dvn/oracle.hpp"
#include "dvn/scoring.hpp"
#include "dvn/trainer.hpp"
#include "support/critic_fit.hpp"
#include "support/oracles.hpp"
#include "support/temp_dir.hpp"

using namespace dvn;
namespace fs = std::filesystem;

namespace {

const fs::path kSource = DVN_SOURCE_DIR;

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v, int digits = 4) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(digits) << v;
    return os.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double mean(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

// Mean and standard error of a - b, paired.
std::pair<double, double> paired_gap(const std::vector<double>& a, const std::vector<double>& b) {
    std::vector<double> d(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
    const double m = mean(d);
    double ss = 0;
    for (double x : d) ss += (x - m) * (x - m);
    const double n = static_cast<double>(d.size());
    return {m, std::sqrt(ss / (n - 1) / n)};
}

// Experiments run in a scratch directory; the config's own output_dir is
// replaced so that acceptance never writes into the source tree.
harness::ExperimentConfig scratch_config(const fs::path& ini, const fs::path& out) {
    harness::ExperimentConfig c = harness::load_experiment_config(ini);
    c.output_dir = out;
    return c;
}

const harness::ScoredPool& pool(const harness::DetectionReport& r, std::string_view name) {
    for (const auto& p : r.negatives)
        if (p.name == name) return p;
    throw ArgumentError("no negative pool named " + std::string(name));
}

double row_auroc(const harness::DetectionReport& r, std::string_view name) {
    for (const auto& row : r.rows)
        if (row.negative_name == name) return row.auroc;
    throw ArgumentError("no metric row named " + std::string(name));
}

// Shared fixtures, built on first use.
struct Fixtures {
    testing::TempDir dir;

    std::optional<harness::Experiment> mixture;
    harness::Experiment& mixture_experiment() {
        if (!mixture) mixture.emplace(scratch_config(kSource / "configs/mixture.ini", dir / "mixture"));
        return *mixture;
    }

    std::optional<harness::Experiment> digits;
    harness::Experiment& digits_experiment() {
        if (!digits) digits.emplace(scratch_config(kSource / "configs/digits.ini", dir / "digits"));
        return *digits;
    }

    // Linear-Gaussian reference with a correlated (non-orthogonal) loading,
    // unit noise and a verifier trained on draws from it.
    LinearGaussianModel linear = make_shared_loading_model(2, 3, 2, 4.0, false, 11);
    std::optional<VerifierModel> trained_linear;
    const VerifierModel& linear_verifier() {
        if (!trained_linear) {
            const Dataset train = sample_oracle_mixture(linear, 8000, 12);
            VerifierArch a;
            a.latent_dim = 2;
            a.encoder_hidden = {64, 64};
            a.decoder_hidden = {64, 64};
            a.critic_hidden = {32};
            a.prior_hidden = {32};
            // The exact posterior depends on the class offset, so the encoder sees y.
            a.conditioning = EncoderConditioning::x_and_y;
            TrainConfig t;
            t.epochs = 60;
            t.batch_size = 64;
            t.model_step = 1e-3;
            t.seed = 13;
            trained_linear = train_dvn(train, a, t).model;
        }
        return *trained_linear;
    }
};

// ---------------------------------------------------------------------------

Outcome metric_oracle(Fixtures&) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng = make_rng(2024);
    std::uniform_int_distribution<int> size(1, 50), level(0, 12);
    std::normal_distribution<double> normal;
    std::bernoulli_distribution coin(0.5);
    int mismatches = 0;
    for (int trial = 0; trial < 200; ++trial) {
        ScorePools p;
        const bool ties = coin(rng);  // half of the pools draw from a small set of values
        const int np = size(rng), nn = size(rng);
        auto draw = [&](double shift) { return ties ? static_cast<double>(level(rng)) + shift : normal(rng) + shift; };
        for (int i = 0; i < np; ++i) p.pos.push_back(draw(ties ? 2.0 : 0.5));
        for (int i = 0; i < nn; ++i) p.neg.push_back(draw(0.0));
        mismatches += auroc(p) != oracle::auroc(p.pos, p.neg);
        mismatches += aupr(p, PositiveClass::id) != oracle::aupr_in(p.pos, p.neg);
        mismatches += aupr(p, PositiveClass::ood) != oracle::aupr_out(p.pos, p.neg);
        mismatches += tnr_at_tpr(p, 0.95) != oracle::tnr_at_tpr(p.pos, p.neg, 0.95);
        mismatches += verification_accuracy(p) != oracle::verification_accuracy(p.pos, p.neg);
    }
    const double secs = seconds_since(t0);
    return {mismatches == 0 && secs < 10.0,
            std::to_string(mismatches) + " mismatches over 200 pools x 5 metrics, " + fmt(secs, 2) + " s"};
}

Outcome iwae_consistency(Fixtures& fx) {
    const auto t0 = std::chrono::steady_clock::now();
    const LinearGaussianModel& lg = fx.linear;
    const Dataset test = sample_oracle_mixture(lg, 100, 14);
    const VerifierModel analytic = analytic_verifier(lg);
    const VerifierModel& trained = fx.linear_verifier();
    double err_analytic = 0, err_trained = 0;
    for (std::size_t i = 0; i < test.size(); ++i) {
        const double exact = exact_conditional_logpdf(lg, test[i].x, test[i].y);
        err_analytic += std::abs(iwae_score(analytic, test[i].x, test[i].y, 1000, derive_seed(15, i)).l_k - exact);
        err_trained += std::abs(iwae_score(trained, test[i].x, test[i].y, 100, derive_seed(16, i)).l_k - exact);
    }
    err_analytic /= 100;
    err_trained /= 100;
    const double secs = seconds_since(t0);
    return {err_analytic <= 0.02 && err_trained <= 0.1 && secs < 120.0,
            "mean |L_1000 - exact| analytic " + fmt(err_analytic) + ", mean |L_100 - exact| trained " +
                fmt(err_trained) + ", " + fmt(secs, 1) + " s"};
}

Outcome iwae_monotonicity(Fixtures& fx) {
    // The mixture verifier's encoder sees only x, so its bound has a visible gap.
    harness::Experiment& e = fx.mixture_experiment();
    const VerifierModel& m = e.verifier();
    const Dataset xs = make_synthetic_id(3, 2, 1000, e.config().id.separation, 17);
    std::vector<double> l1, l10, l100;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        l1.push_back(iwae_score(m, xs[i].x, xs[i].y, 1, derive_seed(18, i)).l_k);
        l10.push_back(iwae_score(m, xs[i].x, xs[i].y, 10, derive_seed(19, i)).l_k);
        l100.push_back(iwae_score(m, xs[i].x, xs[i].y, 100, derive_seed(20, i)).l_k);
    }
    const auto [g1, se1] = paired_gap(l10, l1);
    const auto [g2, se2] = paired_gap(l100, l10);
    return {g1 > -se1 && g2 > -se2, "mean L1 " + fmt(mean(l1)) + ", L10 " + fmt(mean(l10)) + ", L100 " +
                                        fmt(mean(l100)) + "; gaps " + fmt(g1) + " (SE " + fmt(se1) + "), " +
                                        fmt(g2) + " (SE " + fmt(se2) + ")"};
}

Outcome density_ratio(Fixtures&) {
    // Closed-form optimal discriminator against the true ratio.
    DiagonalGaussian p{Eigen::VectorXd::Zero(2), Eigen::VectorXd::Ones(2)};
    DiagonalGaussian q{Eigen::VectorXd::Ones(2), Eigen::VectorXd::Ones(2)};
    Rng rng = make_rng(21);
    std::normal_distribution<double> normal;
    double worst = 0;
    for (int i = 0; i < 1000; ++i) {
        const Eigen::VectorXd z = Eigen::VectorXd::NullaryExpr(2, [&] { return 1.5 * normal(rng); });
        const double d = exact_density_ratio(p, q, z).optimal_dz;
        const double got = corrected_prior_log_density(d, z), want = q.log_density(z);
        worst = std::max(worst, std::abs(got - want) / std::abs(want));
    }

    // Trained D_z: an encoder that ignores x and outputs N(1, I), so its
    // pushforward is q and the true log ratio log q/p is z1 + z2 - 1.
    VerifierArch a;
    a.input_dim = 2;
    a.num_classes = 3;
    a.latent_dim = 2;
    a.encoder_hidden = {8};
    a.prior_hidden = {32};
    VerifierModel m = make_verifier(a, 22);
    m.encoder.bias(m.encoder.num_layers() - 1).head(2).setConstant(1.0);
    const Dataset data = make_synthetic_id(3, 2, 20000, 8.0, 23);
    PriorFitConfig cfg;
    cfg.epochs = 20;
    cfg.step_size = 1e-3;
    cfg.seed = 24;
    m.prior_discriminator.params() = fit_prior_discriminator(m, data, cfg);
    double err = 0;
    for (int i = 0; i < 1000; ++i) {
        const Eigen::VectorXd z = Eigen::VectorXd::NullaryExpr(2, [&] { return normal(rng); });
        const double est = corrected_prior_log_density(m, z) - standard_normal_log_density(z);
        err += std::abs(est - (z.sum() - 1.0));
    }
    err /= 1000;
    return {worst <= 1e-9 && err <= 0.1,
            "optimal D max rel error " + fmt(worst, 12) + ", trained D mean |log-ratio error| " + fmt(err)};
}

Outcome mi_anchors(Fixtures&) {
    VerifierArch a;
    a.input_dim = 3;
    a.num_classes = 2;
    a.latent_dim = 2;
    a.encoder_hidden = {5};
    a.critic_hidden = {32};

    VerifierModel zero = make_verifier(a, 25);
    zero.critic.params().setZero();
    auto coin = [](const Eigen::VectorXd&, Rng& rng) { return std::bernoulli_distribution(0.5)(rng) ? 1 : 0; };
    const auto flat = testing::draw_pairs(1000, 2, 26, coin);
    const double i_zero = mi_estimate(zero, flat.joint, flat.marginal);

    VerifierModel indep = make_verifier(a, 27);
    const double i_indep = testing::fit_critic(indep, testing::draw_pairs(10000, 2, 28, coin),
                                               testing::draw_pairs(10000, 2, 29, coin), 20, 100, 1e-3);

    // y is the quadrant of z, a deterministic function with four outcomes.
    a.num_classes = 4;
    VerifierModel coupled = make_verifier(a, 30);
    auto quadrant = [](const Eigen::VectorXd& z, Rng&) { return (z[0] > 0 ? 1 : 0) + (z[1] > 0 ? 2 : 0); };
    const double i_coupled = testing::fit_critic(coupled, testing::draw_pairs(10000, 2, 31, quadrant),
                                                 testing::draw_pairs(10000, 2, 32, quadrant), 30, 100, 3e-3);

    const bool ok = i_zero == -2.0 * std::numbers::ln2 && i_indep >= -1.5 && i_indep <= -1.25 && i_coupled >= -0.8;
    return {ok, "T=0 " + fmt(i_zero, 12) + ", independent " + fmt(i_indep) + ", quadrant coupling " + fmt(i_coupled)};
}

Outcome gradients(Fixtures&) {
    constexpr double rtol = 1e-4, floor = 1e-6;
    double worst = 0;
    Rng data_rng = make_rng(33);
    std::normal_distribution<double> normal;
    std::vector<LabeledSample> batch;
    for (int i = 0; i < 4; ++i) batch.push_back({Eigen::VectorXd::NullaryExpr(3, [&] { return normal(data_rng); }), i % 2});

    for (auto cond : {EncoderConditioning::x_only, EncoderConditioning::x_and_y}) {
        VerifierArch a;
        a.input_dim = 3;
        a.num_classes = 2;
        a.latent_dim = 2;
        a.encoder_hidden = {5};
        a.decoder_hidden = {5};
        a.critic_hidden = {4};
        a.prior_hidden = {4};
        a.lambda = 1.5;
        a.conditioning = cond;
        VerifierModel m = make_verifier(a, 34);
        Rng rng = make_rng(35);
        m.encoder.initialize(rng, 0.5);

        ModelGradients g;
        total_loss(m, batch, 36, &g);
        auto check = [&](Mlp VerifierModel::*net, const Eigen::VectorXd& analytic, bool mi_only) {
            auto f = [&](const Eigen::VectorXd& p) {
                VerifierModel c = m;
                (c.*net).params() = p;
                const LossBreakdown l = total_loss(c, batch, 36);
                return mi_only ? a.lambda * l.mi : l.total;
            };
            worst = std::max(worst, oracle::max_relative_error(analytic, oracle::numeric_gradient(f, (m.*net).params()), floor));
        };
        check(&VerifierModel::encoder, g.encoder, false);
        check(&VerifierModel::decoder, g.decoder, false);
        check(&VerifierModel::critic, g.critic, true);

        std::vector<LabelLatentPair> joint, marginal;
        sample_mi_pairs(m, batch, 37, joint, marginal);
        Eigen::VectorXd gc;
        mi_estimate(m, joint, marginal, gc);
        auto fc = [&](const Eigen::VectorXd& p) {
            VerifierModel c = m;
            c.critic.params() = p;
            return mi_estimate(c, joint, marginal);
        };
        worst = std::max(worst, oracle::max_relative_error(gc, oracle::numeric_gradient(fc, m.critic.params()), floor));

        const Eigen::MatrixXd pz = Eigen::MatrixXd::Random(6, 2), qz = Eigen::MatrixXd::Random(6, 2).array() + 1.0;
        Eigen::VectorXd gd;
        prior_discriminator_loss(m.prior_discriminator, pz, qz, true, &gd);
        auto fd = [&](const Eigen::VectorXd& p) {
            Mlp n = m.prior_discriminator;
            n.params() = p;
            return prior_discriminator_loss(n, pz, qz, true);
        };
        worst = std::max(worst, oracle::max_relative_error(gd, oracle::numeric_gradient(fd, m.prior_discriminator.params()), floor));
    }
    return {worst < rtol, "worst relative error " + fmt(worst, 8) + " over encoder, decoder, critic and D_z"};
}

Outcome calibration(Fixtures& fx) {
    harness::Experiment& e = fx.mixture_experiment();
    const DecisionThreshold t = e.threshold();
    const Dataset fresh = make_synthetic_id(3, 2, 2000, e.config().id.separation, 9001);
    const auto labels = e.classifier().predict_labels(fresh);
    ScoringOptions opt = e.scoring_options();
    opt.seed = 9002;
    const std::vector<double> s = score_dataset(e.verifier(), fresh, labels, opt);
    std::size_t accepted = 0;
    for (double v : s) accepted += verify(v, t) == Decision::in_distribution;
    const double tpr = static_cast<double>(accepted) / 2000.0;
    return {tpr >= 0.93 && tpr <= 1.0, "delta " + fmt(t.delta) + " from " + std::to_string(t.calibration_size) +
                                           " ID validation samples, fresh-sample TPR " + fmt(tpr)};
}

Outcome mixture_detection(Fixtures& fx) {
    harness::Experiment& e = fx.mixture_experiment();
    const harness::DetectionReport r = e.evaluate();
    const double uni = row_auroc(r, "uniform"), shifted = row_auroc(r, "shifted");
    // every stage, including training done for earlier criteria
    const double secs = e.manifest("ok").at("wall_clock_seconds").get<double>();
    return {uni >= 0.95 && shifted >= 0.90 && secs < 600.0,
            "AUROC uniform " + fmt(uni) + ", shifted " + fmt(shifted) + ", pipeline " + fmt(secs, 1) + " s"};
}

Outcome ablations(Fixtures& fx) {
    // Paired seeds: every variant of one seed shares data and classifier.
    const std::vector<std::uint64_t> seeds{1, 2, 3};
    struct Variant {
        const char* name;
        harness::AblationFlags flags;
    };
    const std::vector<Variant> variants{{"full", {}},
                                        {"lambda0", {.disable_mi = true}},
                                        {"no_correction", {.disable_prior_correction = true}},
                                        {"xy_encoder", {.encoder_cond_y = true}}};
    std::vector<std::future<std::pair<double, double>>> jobs;
    for (std::uint64_t seed : seeds)
        for (const auto& v : variants) {
            harness::ExperimentConfig c =
                scratch_config(kSource / "configs/ablation.ini", fx.dir / ("ablation_" + std::string(v.name) + "_" + std::to_string(seed)));
            c.seed = seed;
            c.ablation = v.flags;
            c.threads = 1;
            jobs.push_back(std::async(std::launch::async, [c] {
                const harness::DetectionReport r = harness::run_experiment(c);
                return std::pair{row_auroc(r, "gap"), row_auroc(r, "wrong_label")};
            }));
        }
    std::vector<double> gap(variants.size()), wrong(variants.size());
    for (std::size_t i = 0; i < jobs.size(); ++i) {
        const auto [g, w] = jobs[i].get();
        gap[i % variants.size()] += g / static_cast<double>(seeds.size());
        wrong[i % variants.size()] += w / static_cast<double>(seeds.size());
    }
    const bool t5 = gap[0] > gap[1], t6 = gap[0] >= gap[2], t7 = wrong[0] >= wrong[3];
    return {t5 && t6 && t7, "gap-probe AUROC full " + fmt(gap[0]) + " vs lambda=0 " + fmt(gap[1]) +
                                " vs no correction " + fmt(gap[2]) + "; wrong-label AUROC x-only " + fmt(wrong[0]) +
                                " vs x,y encoder " + fmt(wrong[3])};
}

Outcome adversarial(Fixtures& fx) {
    harness::Experiment& e = fx.digits_experiment();
    const harness::DetectionReport r = e.evaluate();
    const double clean = mean(r.id_test.scores);
    bool ok = true;
    std::string detail = "clean mean L_k " + fmt(clean, 2);
    for (const char* name : {"fgsm", "bim"}) {
        const auto& p = pool(r, name);
        const double m = mean(p.scores), a = row_auroc(r, name);
        ok = ok && p.origin == Origin::adversarial && m < clean && a >= 0.80;
        detail += std::string(", ") + name + " mean " + fmt(m, 2) + " AUROC " + fmt(a) + " (n " +
                  std::to_string(p.scores.size()) + ")";
    }
    return {ok, detail};
}

Outcome label_consistency(Fixtures& fx) {
    bool ok = true;
    std::string detail;
    const std::vector<std::pair<const char*, harness::Experiment& (Fixtures::*)()>> setups{
        {"mixture", &Fixtures::mixture_experiment}, {"digits", &Fixtures::digits_experiment}};
    for (const auto& [name, get] : setups) {
        harness::Experiment& e = (fx.*get)();
        const Dataset& test = e.data().test;
        const int c = test.num_classes();
        Rng rng = make_rng(40);
        std::uniform_int_distribution<int> offset(1, c - 1);
        std::vector<int> wrong;
        for (const auto& s : test) wrong.push_back((s.y + offset(rng)) % c);
        const ScoringOptions opt = e.scoring_options();
        const std::vector<double> good = score_dataset(e.verifier(), test, test.labels(), opt);
        const std::vector<double> bad = score_dataset(e.verifier(), test, wrong, opt);
        const auto [gap, se] = paired_gap(good, bad);
        ok = ok && gap > 0 && gap / se >= 5.0;
        detail += (detail.empty() ? "" : "; ") + std::string(name) + " gap " + fmt(gap, 2) + " nats, " +
                  fmt(gap / se, 1) + " sigma";
    }
    return {ok, detail};
}

Outcome non_intrusive(Fixtures& fx) {
    // Fresh experiments so the hash is taken before any verifier stage runs.
    bool ok = true;
    std::string detail;
    for (const char* name : {"mixture", "digits"}) {
        harness::Experiment e(scratch_config(kSource / "configs" / (std::string(name) + ".ini"), fx.dir / ("intrusion_" + std::string(name))));
        const std::uint64_t hash = e.classifier().parameter_hash();
        const double acc = e.classifier().accuracy(e.data().test);
        e.evaluate();  // verifier training, attacks, scoring, calibration
        const std::uint64_t hash_after = e.classifier().parameter_hash();
        const double acc_after = e.classifier().accuracy(e.data().test);
        ok = ok && hash == hash_after && acc == acc_after;
        std::ostringstream os;
        os << name << " hash " << std::hex << hash << (hash == hash_after ? " unchanged" : " CHANGED") << std::dec
           << ", accuracy " << fmt(acc) << " -> " << fmt(acc_after);
        detail += (detail.empty() ? "" : "; ") + os.str();
    }
    return {ok, detail};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance checks"};
    std::vector<int> only;
    app.add_option("--only", only, "run only these criteria")->check(CLI::Range(1, 12));
    CLI11_PARSE(app, argc, argv);

    const std::vector<std::pair<const char*, std::function<Outcome(Fixtures&)>>> criteria{
        {"metric oracle equivalence", metric_oracle},
        {"IWAE consistency", iwae_consistency},
        {"IWAE monotonicity", iwae_monotonicity},
        {"density-ratio recovery", density_ratio},
        {"MI estimator anchors", mi_anchors},
        {"gradient correctness", gradients},
        {"calibration soundness", calibration},
        {"desk-scale OOD detection", mixture_detection},
        {"ablation directions", ablations},
        {"adversarial detection", adversarial},
        {"label consistency", label_consistency},
        {"non-intrusiveness", non_intrusive},
    };
    const std::set<int> selected(only.begin(), only.end());
    Fixtures fx;
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i) + 1;
        if (!selected.empty() && !selected.count(id)) continue;
        Outcome o;
        try {
            o = criteria[i].second(fx);
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += !o.pass;
        std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << std::setw(2) << id << " " << criteria[i].first
                  << ": " << o.detail << std::endl;
    }
    return failed == 0 ? 0 : 1;
}

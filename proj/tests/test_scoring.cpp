#include <doctest.h>

#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>

#include "dvn/errors.hpp"
#include "dvn/oracle.hpp"
#include "dvn/scoring.hpp"
#include "support/oracles.hpp"

using namespace dvn;

namespace {

const double kLog2Pi = std::log(2.0 * std::numbers::pi);

VerifierArch arch3() {
    VerifierArch a;
    a.input_dim = 3;
    a.num_classes = 2;
    a.latent_dim = 2;
    a.encoder_hidden = {8};
    a.decoder_hidden = {8};
    a.critic_hidden = {8};
    a.prior_hidden = {8};
    return a;
}

}  // namespace

TEST_SUITE("scoring") {

TEST_CASE("calibration takes the order statistic") {
    std::vector<double> s(100);
    std::iota(s.begin(), s.end(), 1.0);
    const DecisionThreshold t = calibrate_threshold(s, 0.95);
    CHECK(t.delta == 6.0);
    CHECK(t.calibration_size == 100);
    CHECK(std::count_if(s.begin(), s.end(), [&](double v) { return v >= t.delta; }) == 95);

    const std::vector<double> flat(37, -4.25);
    const DecisionThreshold f = calibrate_threshold(flat, 0.95);
    CHECK(f.delta == -4.25);
    CHECK(std::all_of(flat.begin(), flat.end(), [&](double v) { return verify(v, f) == Decision::in_distribution; }));

    const std::vector<double> one{3.5};
    CHECK(calibrate_threshold(one, 0.95).delta == 3.5);
}

TEST_CASE("calibration argument checks") {
    CHECK_THROWS_AS(calibrate_threshold(std::vector<double>{}, 0.95), ArgumentError);
    const std::vector<double> s{1, 2};
    CHECK_THROWS_AS(calibrate_threshold(s, 1.0), ArgumentError);
    CHECK_THROWS_AS(calibrate_threshold(s, 0.0), ArgumentError);
    CHECK_THROWS_AS(calibrate_threshold(Origin::ood, s), ArgumentError);
    CHECK_THROWS_AS(calibrate_threshold(Origin::adversarial, s), ArgumentError);
    CHECK(calibrate_threshold(Origin::in_distribution, s, 0.5).delta == 2.0);
}

TEST_CASE("calibration agrees with the largest admissible delta") {
    Rng rng = make_rng(4);
    std::normal_distribution<double> normal;
    for (int n : {1, 2, 7, 19, 20, 21, 100, 333}) {
        for (double tpr : {0.5, 0.9, 0.95, 0.99}) {
            std::vector<double> s(static_cast<std::size_t>(n));
            for (auto& v : s) v = normal(rng);
            const double delta = calibrate_threshold(s, tpr).delta;
            double best = -INFINITY;
            for (double d : s)
                if (oracle::count_at_least(s, d) >= tpr * n - 1e-9) best = std::max(best, d);
            CHECK(delta == best);
        }
    }
}

TEST_CASE("decision rule is inclusive at delta") {
    const DecisionThreshold t{2.0, 0.95, 10};
    CHECK(verify(2.0, t) == Decision::in_distribution);
    CHECK(verify(std::nextafter(2.0, 3.0), t) == Decision::in_distribution);
    CHECK(verify(2.0 + 1e-300, t) == Decision::in_distribution);
    CHECK(verify(std::nextafter(2.0, 1.0), t) == Decision::out_of_distribution);
    CHECK(verify(-std::numeric_limits<double>::infinity(), t) == Decision::out_of_distribution);
    CHECK(verify(VerifierScore{7.0, 100}, t) == Decision::in_distribution);
}

TEST_CASE("corrected prior density") {
    const Eigen::VectorXd z = Eigen::Vector2d(0.3, -1.2);
    CHECK(corrected_prior_log_density(0.5, z) == doctest::Approx(standard_normal_log_density(z)).epsilon(1e-15));
    // p(z) = 0.1 in one dimension and D = 2/3 give q(z) = 0.05.
    const double z0 = std::sqrt(-2.0 * std::log(0.1 * std::sqrt(2.0 * std::numbers::pi)));
    const Eigen::VectorXd z1 = Eigen::VectorXd::Constant(1, z0);
    CHECK(std::exp(standard_normal_log_density(z1)) == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(std::exp(corrected_prior_log_density(2.0 / 3.0, z1)) == doctest::Approx(0.05).epsilon(1e-12));
    // Saturated discriminators stay finite.
    CHECK(std::isfinite(corrected_prior_log_density(0.0, z)));
    CHECK(std::isfinite(corrected_prior_log_density(1.0, z)));
    CHECK(corrected_prior_log_density(0.0, z) == corrected_prior_log_density(kPriorProbMin, z));
}

TEST_CASE("optimal discriminator recovers the shifted density") {
    const DiagonalGaussian p{Eigen::VectorXd::Zero(1), Eigen::VectorXd::Ones(1)};
    const DiagonalGaussian q{Eigen::VectorXd::Ones(1), Eigen::VectorXd::Ones(1)};
    for (double v : {-1.0, 0.0, 1.0, 2.0}) {
        const Eigen::VectorXd z = Eigen::VectorXd::Constant(1, v);
        const double pz = oracle::normal_pdf(v, 0, 1), qz = oracle::normal_pdf(v, 1, 1);
        const double dz = pz / (pz + qz);
        const double got = std::exp(corrected_prior_log_density(dz, z));
        CHECK(std::abs(got - qz) <= 1e-9 * qz);
        CHECK(std::abs(std::exp(corrected_prior_log_density(exact_density_ratio(p, q, z).optimal_dz, z)) - qz) <=
              1e-9 * qz);
    }
}

TEST_CASE("constant decoder and standard-normal encoder give the exact likelihood") {
    VerifierModel m = make_verifier(arch3(), 5);
    const Eigen::Vector3d mu0(0.5, -1.0, 2.0);
    m.decoder.params().setZero();
    m.decoder.bias(m.decoder.num_layers() - 1) = mu0;
    m.prior_discriminator.params().setZero();
    const Eigen::Vector3d x(1.0, 1.0, -1.0);
    const double expect = -0.5 * (x - mu0).squaredNorm() - 1.5 * kLog2Pi;
    for (int k : {1, 10, 100}) {
        CHECK(iwae_score(m, x, 0, k, 3).l_k == doctest::Approx(expect).epsilon(1e-12));
        CHECK(iwae_score(m, x, 1, k, 3, PriorMode::standard).l_k == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("exact posterior makes every k exact") {
    // Orthogonal loading columns give a diagonal posterior, so the
    // closed-form encoder is the true posterior and each weight is p(x|y).
    const LinearGaussianModel lg = make_shared_loading_model(2, 3, 2, 4.0, true, 7);
    const VerifierModel v = analytic_verifier(lg);
    const Dataset d = sample_oracle_mixture(lg, 20, 3);
    for (const auto& s : d) {
        const double exact = exact_conditional_logpdf(lg, s.x, s.y);
        CHECK(iwae_score(v, s.x, s.y, 1, 1).l_k == doctest::Approx(exact).epsilon(1e-9));
        CHECK(iwae_score(v, s.x, s.y, 50, 2).l_k == doctest::Approx(exact).epsilon(1e-9));
    }
}

TEST_CASE("score is deterministic and validates its arguments") {
    const VerifierModel m = make_verifier(arch3(), 5);
    const Eigen::Vector3d x(0.1, 0.2, 0.3);
    CHECK(iwae_score(m, x, 1, 10, 4).l_k == iwae_score(m, x, 1, 10, 4).l_k);
    CHECK(iwae_score(m, x, 1, 10, 4).k == 10);
    CHECK_THROWS_AS(iwae_score(m, x, 1, 0, 4), ArgumentError);
    CHECK_THROWS_AS(iwae_score(m, x, 2, 10, 4), ArgumentError);
    CHECK_THROWS_AS(iwae_score(m, Eigen::Vector2d(0, 0), 0, 10, 4), ArgumentError);
}

TEST_CASE("scores stay finite when log weights span a thousand nats") {
    VerifierArch a = arch3();
    a.decoder_hidden = {};
    a.activation = Activation::identity;
    VerifierModel m = make_verifier(a, 5);
    // Wide posterior and a steep linear decoder: weights differ by ~1e3 nats.
    m.encoder.bias(m.encoder.num_layers() - 1).tail(2).setConstant(4.0);
    m.decoder.params().setZero();
    m.decoder.weight(0).col(0).setConstant(10.0);
    const double s = iwae_score(m, Eigen::Vector3d(3, 3, 3), 0, 100, 9).l_k;
    CHECK(std::isfinite(s));
    CHECK(s < 0);
}

TEST_CASE("batch scoring does not depend on the thread count") {
    VerifierModel m = make_verifier(arch3(), 5);
    Rng rng = make_rng(1);
    m.encoder.initialize(rng, 0.3);
    const Dataset d = make_synthetic_id(2, 3, 37, 4.0, 2);
    const auto labels = d.labels();
    ScoringOptions o;
    o.k = 20;
    o.seed = 77;
    o.threads = 1;
    const auto one = score_dataset(m, d, labels, o);
    o.threads = 4;
    const auto four = score_dataset(m, d, labels, o);
    CHECK(one == four);
    for (std::size_t i = 0; i < d.size(); ++i)
        CHECK(one[i] == iwae_score(m, d[i].x, labels[i], 20, derive_seed(77, i)).l_k);
    CHECK_THROWS_AS(score_dataset(m, d, std::vector<int>(3, 0), o), ArgumentError);
}

TEST_CASE("score dump format") {
    const std::vector<double> s{1.5, -2.0};
    const std::vector<int> y{1, 0};
    std::ostringstream os;
    write_score_dump(os, s, y, DecisionThreshold{0.0, 0.95, 2});
    CHECK(os.str() == "sample_id,y_pred,l_k,decision\n0,1,1.5,in_distribution\n1,0,-2,out_of_distribution\n");
}

}

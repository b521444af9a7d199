#include "dvn/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <thread>

#include "dvn/errors.hpp"

namespace dvn {

std::string_view to_string(Decision d) {
    return d == Decision::in_distribution ? "in_distribution" : "out_of_distribution";
}

double corrected_prior_log_density(double prior_prob, const Eigen::VectorXd& z) {
    const double d = std::clamp(prior_prob, kPriorProbMin, kPriorProbMax);
    return std::log1p(-d) - std::log(d) + standard_normal_log_density(z);
}

double corrected_prior_log_density(const VerifierModel& model, const Eigen::VectorXd& z) {
    return corrected_prior_log_density(prior_discriminator_prob(model, z), z);
}

VerifierScore iwae_score(const VerifierModel& model, const Eigen::VectorXd& x, int y, int k,
                         std::uint64_t seed, PriorMode prior) {
    if (k < 1) throw ArgumentError("k must be at least 1");
    if (y < 0 || y >= model.arch.num_classes) throw ArgumentError("label out of range");
    const GaussianPosterior post = model.arch.conditioning == EncoderConditioning::x_and_y
                                       ? encode(model, x, y)
                                       : encode(model, x);
    Rng rng = make_rng(seed);
    Eigen::MatrixXd z(k, post.dim());
    for (int i = 0; i < k; ++i) z.row(i) = reparameterized_sample(post, rng).z;

    const Eigen::MatrixXd recon = decode(model, z, y);
    Eigen::VectorXd logits;
    if (prior == PriorMode::corrected) logits = prior_logit(model, z);

    const Eigen::VectorXd xs = model.arch.input_scale * x;
    const double log_jacobian = log_input_jacobian(model.arch);
    std::vector<double> log_w(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) {
        if (!recon.row(i).allFinite())
            throw NumericError("decoder output is not finite for importance sample " + std::to_string(i));
        const Eigen::VectorXd zi = z.row(i).transpose();
        const double log_prior = prior == PriorMode::corrected
                                     ? corrected_prior_log_density(sigmoid(logits[i]), zi)
                                     : standard_normal_log_density(zi);
        log_w[static_cast<std::size_t>(i)] =
            log_prior + unit_gaussian_log_likelihood(xs, recon.row(i).transpose()) + log_jacobian -
            post.log_density(zi);
    }
    return {log_sum_exp(log_w) - std::log(static_cast<double>(k)), k};
}

std::vector<double> score_dataset(const VerifierModel& model, const Dataset& data,
                                  std::span<const int> labels, const ScoringOptions& options) {
    if (labels.size() != data.size()) throw ArgumentError("one label per sample required");
    std::vector<double> out(data.size());
    unsigned threads = options.threads ? options.threads : std::max(1u, std::thread::hardware_concurrency());
    threads = std::min<unsigned>(threads, static_cast<unsigned>(data.size()));

    auto work = [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i)
            out[i] = iwae_score(model, data[i].x, labels[i], options.k, derive_seed(options.seed, i),
                                options.prior).l_k;
    };
    if (threads <= 1) {
        work(0, data.size());
        return out;
    }
    std::vector<std::exception_ptr> errors(threads);
    {
        std::vector<std::jthread> pool;
        const std::size_t chunk = (data.size() + threads - 1) / threads;
        for (unsigned t = 0; t < threads; ++t) {
            const std::size_t b = t * chunk, e = std::min(data.size(), b + chunk);
            pool.emplace_back([&, b, e, t] {
                try {
                    work(b, e);
                } catch (...) {
                    errors[t] = std::current_exception();
                }
            });
        }
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return out;
}

DecisionThreshold calibrate_threshold(std::span<const double> id_val_scores, double target_tpr) {
    if (id_val_scores.empty()) throw ArgumentError("calibration needs at least one score");
    if (!(target_tpr > 0.0 && target_tpr < 1.0)) throw ArgumentError("target TPR must lie in (0, 1)");
    std::vector<double> sorted(id_val_scores.begin(), id_val_scores.end());
    std::sort(sorted.begin(), sorted.end());
    const auto idx = static_cast<std::size_t>(std::floor((1.0 - target_tpr) * sorted.size() + 1e-9));  // absorbs 1 - tpr rounding
    return {sorted[std::min(idx, sorted.size() - 1)], target_tpr, sorted.size()};
}

DecisionThreshold calibrate_threshold(Origin pool_origin, std::span<const double> scores,
                                      double target_tpr) {
    if (pool_origin != Origin::in_distribution)
        throw ArgumentError("thresholds are calibrated on in-distribution data only");
    return calibrate_threshold(scores, target_tpr);
}

Decision verify(double l_k, const DecisionThreshold& threshold) {
    return l_k >= threshold.delta ? Decision::in_distribution : Decision::out_of_distribution;
}

Decision verify(const VerifierScore& score, const DecisionThreshold& threshold) {
    return verify(score.l_k, threshold);
}

void write_score_dump(std::ostream& out, std::span<const double> scores, std::span<const int> labels,
                      const DecisionThreshold& threshold) {
    if (scores.size() != labels.size()) throw ArgumentError("score/label count mismatch");
    out << "sample_id,y_pred,l_k,decision\n";
    char buf[64];
    for (std::size_t i = 0; i < scores.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.17g", scores[i]);
        out << i << ',' << labels[i] << ',' << buf << ',' << to_string(verify(scores[i], threshold))
            << '\n';
    }
}

}  // namespace dvn

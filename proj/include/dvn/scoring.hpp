#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "dvn/dataset.hpp"
#include "dvn/model.hpp"

namespace dvn {

inline constexpr double kPriorProbMin = 1e-6;
inline constexpr double kPriorProbMax = 1.0 - 1e-6;

/// Which latent density multiplies the decoder likelihood in the importance
/// weights: the density-ratio corrected aggregate posterior, or N(0, I).
enum class PriorMode { corrected, standard };

struct VerifierScore {
    double l_k = 0.0;  // nats
    int k = 1;
};

struct DecisionThreshold {
    double delta = 0.0;
    double target_tpr = 0.95;
    std::size_t calibration_size = 0;
};

enum class Decision { in_distribution, out_of_distribution };

std::string_view to_string(Decision d);

/// log q(z) = log(1 - D) - log D + log p(z), with D clamped to
/// [kPriorProbMin, kPriorProbMax] and p the standard normal.
double corrected_prior_log_density(double prior_prob, const Eigen::VectorXd& z);
double corrected_prior_log_density(const VerifierModel& model, const Eigen::VectorXd& z);

/// k-sample importance-weighted estimate of log p(x|y):
///   log (1/k) sum_i q(z_i) p(x|z_i,y) / q(z_i|x),  z_i ~ q(z|x).
VerifierScore iwae_score(const VerifierModel& model, const Eigen::VectorXd& x, int y, int k,
                         std::uint64_t seed, PriorMode prior = PriorMode::corrected);

struct ScoringOptions {
    int k = 100;
    std::uint64_t seed = 0;
    PriorMode prior = PriorMode::corrected;
    unsigned threads = 0;  // 0: hardware concurrency
};

/// Scores `data` with labels `labels` (normally the classifier's predictions).
/// Sample i uses derive_seed(options.seed, i), so the result does not depend
/// on thread count or order.
std::vector<double> score_dataset(const VerifierModel& model, const Dataset& data,
                                  std::span<const int> labels, const ScoringOptions& options);

/// delta = ascending scores[floor((1 - target_tpr) * n)].
DecisionThreshold calibrate_threshold(std::span<const double> id_val_scores,
                                      double target_tpr = 0.95);

/// Calibration from a tagged pool; refuses anything but in-distribution data.
DecisionThreshold calibrate_threshold(Origin pool_origin, std::span<const double> scores,
                                      double target_tpr = 0.95);

/// in_distribution iff l_k >= delta.
Decision verify(const VerifierScore& score, const DecisionThreshold& threshold);
Decision verify(double l_k, const DecisionThreshold& threshold);

/// CSV `sample_id,y_pred,l_k,decision`.
void write_score_dump(std::ostream& out, std::span<const double> scores, std::span<const int> labels,
                      const DecisionThreshold& threshold);

}  // namespace dvn

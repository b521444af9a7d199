#pragma once

// Conditional VAE verifier: encoder q(z|x), decoder p(x|z,y) with a unit
// Gaussian output likelihood, mutual-information critic T(y,z) and the
// prior discriminator D_z(z) used to correct the latent prior at scoring
// time.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "dvn/dataset.hpp"
#include "dvn/nn.hpp"
#include "dvn/rng.hpp"

namespace dvn {

enum class EncoderConditioning { x_only, x_and_y };

std::string_view to_string(EncoderConditioning c);
EncoderConditioning conditioning_from_string(std::string_view s);

inline constexpr double kLogVarianceMin = -10.0;
inline constexpr double kLogVarianceMax = 10.0;

struct VerifierArch {
    int input_dim = 2;
    int num_classes = 2;
    int latent_dim = 16;
    std::vector<int> encoder_hidden{64, 64};
    std::vector<int> decoder_hidden{64, 64};
    std::vector<int> critic_hidden{64};
    std::vector<int> prior_hidden{64};
    Activation activation = Activation::tanh;
    EncoderConditioning conditioning = EncoderConditioning::x_only;
    double lambda = 1.0;  // weight of the mutual-information penalty
    /// Inputs are modelled as input_scale * x under the unit-variance decoder;
    /// likelihoods include d * log(input_scale) so they stay densities of x.
    double input_scale = 1.0;
};

/// d * log(input_scale): the change-of-variables term added to every
/// decoder log-likelihood.
double log_input_jacobian(const VerifierArch& arch);

/// Diagonal Gaussian q(z|x). log_variance is already clamped.
struct GaussianPosterior {
    Eigen::VectorXd mean;
    Eigen::VectorXd log_variance;

    int dim() const { return static_cast<int>(mean.size()); }
    double log_density(const Eigen::VectorXd& z) const;
    double kl_to_standard_normal() const;
};

struct LatentCode {
    Eigen::VectorXd z;
};

double standard_normal_log_density(const Eigen::VectorXd& z);

struct VerifierModel {
    VerifierArch arch;
    Mlp encoder;
    Mlp decoder;
    Mlp critic;
    Mlp prior_discriminator;  // outputs the logit of D_z
};

/// Random weights; the encoder's last layer starts at zero so that
/// q(z|x) = N(0, I) initially.
VerifierModel make_verifier(const VerifierArch& arch, std::uint64_t seed);

GaussianPosterior encode(const VerifierModel& model, const Eigen::VectorXd& x,
                         std::optional<int> y = std::nullopt);

/// Batched encoder: rows of `mean` / `log_variance` per sample.
void encode_batch(const VerifierModel& model, const Eigen::MatrixXd& x, std::span<const int> labels,
                  Eigen::MatrixXd& mean, Eigen::MatrixXd& log_variance);

LatentCode reparameterized_sample(const GaussianPosterior& post, Rng& rng);
LatentCode reparameterized_sample(const GaussianPosterior& post, std::uint64_t seed);

/// Decoder mean for each row of `z`, all conditioned on class `y`.
Eigen::MatrixXd decode(const VerifierModel& model, const Eigen::MatrixXd& z, int y);

/// Logit of D_z for each row of `z`.
Eigen::VectorXd prior_logit(const VerifierModel& model, const Eigen::MatrixXd& z);
double prior_discriminator_prob(const VerifierModel& model, const Eigen::VectorXd& z);

/// log p(x|z,y) under the unit Gaussian decoder: -||x - mean||^2 / 2 - (d/2) log 2 pi.
double unit_gaussian_log_likelihood(const Eigen::VectorXd& x, const Eigen::VectorXd& mean);

struct LossBreakdown {
    double reconstruction = 0.0;  // -E[log p(x|z,y)]
    double kl = 0.0;              // KL(q(z|x) || p(z))
    double mi = 0.0;              // critic estimate of I(y, z)
    double total = 0.0;           // reconstruction + kl + lambda * mi
};

LossBreakdown elbo_terms(const VerifierModel& model, const Eigen::VectorXd& x, int y,
                         int num_samples, std::uint64_t seed);

struct LabelLatentPair {
    int y = 0;
    Eigen::VectorXd z;
};

/// Jensen-Shannon mutual-information lower bound
///   E_joint[-softplus(-T(y,z))] - E_marginal[softplus(T(y,z))].
double mi_estimate(const VerifierModel& model, std::span<const LabelLatentPair> joint,
                   std::span<const LabelLatentPair> marginal);

/// Same estimate together with its gradient with respect to the critic.
double mi_estimate(const VerifierModel& model, std::span<const LabelLatentPair> joint,
                   std::span<const LabelLatentPair> marginal, Eigen::VectorXd& critic_grad);

/// Cyclic permutation without fixed points (identity when n < 2).
std::vector<std::size_t> derangement(std::size_t n, Rng& rng);

/// Joint pairs (y_i, z_i) and marginal pairs (y_i, z_perm(i)) for a batch,
/// with z drawn by reparameterization under `seed`.
void sample_mi_pairs(const VerifierModel& model, std::span<const LabeledSample> batch,
                     std::uint64_t seed, std::vector<LabelLatentPair>& joint,
                     std::vector<LabelLatentPair>& marginal);

struct ModelGradients {
    Eigen::VectorXd encoder;
    Eigen::VectorXd decoder;
    Eigen::VectorXd critic;  // lambda * dI/dcritic; the critic itself ascends I
};

/// Batch-averaged loss: reconstruction + kl + lambda * I, one latent draw per
/// sample. When `grads` is given, fills gradients of `total` with the critic
/// held fixed.
LossBreakdown total_loss(const VerifierModel& model, std::span<const LabeledSample> batch,
                         std::uint64_t seed, ModelGradients* grads = nullptr);

}  // namespace dvn

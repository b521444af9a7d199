#pragma once

// Linear-Gaussian reference models with closed-form conditional likelihoods
//   z ~ N(0, I_m),  x | z, y ~ N(A_y z + b_y, sigma^2 I_d)
//   =>  x | y ~ N(b_y, A_y A_y^T + sigma^2 I_d)

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "dvn/dataset.hpp"
#include "dvn/model.hpp"

namespace dvn {

struct LinearGaussianModel {
    std::vector<Eigen::MatrixXd> loadings;  // A_y, d x m
    std::vector<Eigen::VectorXd> offsets;   // b_y, d
    double noise_std = 1.0;

    int num_classes() const { return static_cast<int>(loadings.size()); }
    int dim() const { return static_cast<int>(offsets.front().size()); }
    int latent_dim() const { return static_cast<int>(loadings.front().cols()); }
    void validate() const;
};

double exact_conditional_logpdf(const LinearGaussianModel& model, const Eigen::VectorXd& x, int y);

/// n draws from p(x|y) with label y.
Dataset sample_oracle(const LinearGaussianModel& model, int y, int n, std::uint64_t seed);

/// n draws from the class-balanced mixture (sample i has class i % C).
Dataset sample_oracle_mixture(const LinearGaussianModel& model, int n, std::uint64_t seed);

struct DiagonalGaussian {
    Eigen::VectorXd mean;
    Eigen::VectorXd variance;
    double log_density(const Eigen::VectorXd& z) const;
};

struct DensityRatio {
    double ratio;       // q(z) / p(z)
    double optimal_dz;  // p(z) / (p(z) + q(z))
};

DensityRatio exact_density_ratio(const DiagonalGaussian& p, const DiagonalGaussian& q,
                                 const Eigen::VectorXd& z);

/// Random model with one loading matrix shared by all classes, unit noise and
/// class offsets spread `separation` apart. With `orthogonal_columns` the
/// loading has orthogonal columns, which makes the true posterior diagonal.
LinearGaussianModel make_shared_loading_model(int num_classes, int dim, int latent_dim,
                                              double separation, bool orthogonal_columns,
                                              std::uint64_t seed);

/// Verifier whose networks are set in closed form from a shared-loading,
/// unit-noise model: decoder mean A z + b_y, encoder q(z|x,y) with the exact
/// posterior mean and the exact posterior marginal variances, and D_z = 1/2
/// (the aggregate posterior equals the prior).
VerifierModel analytic_verifier(const LinearGaussianModel& model);

}  // namespace dvn

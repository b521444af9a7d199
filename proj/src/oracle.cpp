#include "dvn/oracle.hpp"

#include <cmath>
#include <numbers>

#include "dvn/errors.hpp"
#include "dvn/rng.hpp"

namespace dvn {

namespace {
const double kLog2Pi = std::log(2.0 * std::numbers::pi);
}

void LinearGaussianModel::validate() const {
    if (loadings.empty() || loadings.size() != offsets.size())
        throw ArgumentError("oracle needs one loading and one offset per class");
    for (std::size_t c = 0; c < loadings.size(); ++c) {
        if (loadings[c].rows() != offsets[c].size() || loadings[c].rows() != offsets[0].size() ||
            loadings[c].cols() != loadings[0].cols())
            throw ArgumentError("oracle shapes are inconsistent");
    }
    if (!(noise_std >= 0)) throw ArgumentError("noise_std must be nonnegative");
}

double exact_conditional_logpdf(const LinearGaussianModel& model, const Eigen::VectorXd& x, int y) {
    model.validate();
    if (y < 0 || y >= model.num_classes()) throw ArgumentError("label out of range");
    if (x.size() != model.dim()) throw ArgumentError("input dimension mismatch");
    const auto& a = model.loadings[static_cast<std::size_t>(y)];
    const Eigen::MatrixXd cov = a * a.transpose() +
                                model.noise_std * model.noise_std *
                                    Eigen::MatrixXd::Identity(model.dim(), model.dim());
    const Eigen::LLT<Eigen::MatrixXd> llt(cov);
    const Eigen::VectorXd diag = llt.matrixL().toDenseMatrix().diagonal();
    if (llt.info() != Eigen::Success || (diag.array() <= 1e-300).any())
        throw ArgumentError("oracle covariance is singular");
    const Eigen::VectorXd r = x - model.offsets[static_cast<std::size_t>(y)];
    const Eigen::VectorXd w = llt.matrixL().solve(r);
    const double log_det = 2.0 * diag.array().log().sum();
    return -0.5 * (w.squaredNorm() + log_det + model.dim() * kLog2Pi);
}

Dataset sample_oracle(const LinearGaussianModel& model, int y, int n, std::uint64_t seed) {
    model.validate();
    if (n < 1) throw ArgumentError("n must be positive");
    if (y < 0 || y >= model.num_classes()) throw ArgumentError("label out of range");
    Rng rng = make_rng(seed);
    std::normal_distribution<double> normal;
    std::vector<LabeledSample> out;
    out.reserve(n);
    const auto& a = model.loadings[static_cast<std::size_t>(y)];
    for (int i = 0; i < n; ++i) {
        Eigen::VectorXd z(model.latent_dim());
        for (auto& v : z) v = normal(rng);
        Eigen::VectorXd x = a * z + model.offsets[static_cast<std::size_t>(y)];
        for (auto& v : x) v += model.noise_std * normal(rng);
        out.push_back({std::move(x), y});
    }
    return Dataset(std::move(out), model.num_classes(), Origin::in_distribution);
}

Dataset sample_oracle_mixture(const LinearGaussianModel& model, int n, std::uint64_t seed) {
    model.validate();
    if (n < 1) throw ArgumentError("n must be positive");
    Rng rng = make_rng(seed);
    std::normal_distribution<double> normal;
    std::vector<LabeledSample> out;
    out.reserve(n);
    for (int i = 0; i < n; ++i) {
        const int y = i % model.num_classes();
        const auto& a = model.loadings[static_cast<std::size_t>(y)];
        Eigen::VectorXd z(model.latent_dim());
        for (auto& v : z) v = normal(rng);
        Eigen::VectorXd x = a * z + model.offsets[static_cast<std::size_t>(y)];
        for (auto& v : x) v += model.noise_std * normal(rng);
        out.push_back({std::move(x), y});
    }
    return Dataset(std::move(out), model.num_classes(), Origin::in_distribution);
}

double DiagonalGaussian::log_density(const Eigen::VectorXd& z) const {
    return -0.5 * ((z - mean).array().square() / variance.array() + variance.array().log() + kLog2Pi).sum();
}

DensityRatio exact_density_ratio(const DiagonalGaussian& p, const DiagonalGaussian& q,
                                 const Eigen::VectorXd& z) {
    const double log_ratio = q.log_density(z) - p.log_density(z);
    const double ratio = std::exp(log_ratio);
    return {ratio, 1.0 / (1.0 + ratio)};
}

LinearGaussianModel make_shared_loading_model(int num_classes, int dim, int latent_dim,
                                              double separation, bool orthogonal_columns,
                                              std::uint64_t seed) {
    if (latent_dim > dim && orthogonal_columns)
        throw ArgumentError("orthogonal columns need latent_dim <= dim");
    Rng rng = make_rng(seed);
    std::normal_distribution<double> normal;
    std::uniform_real_distribution<double> scale(0.6, 1.6);
    Eigen::MatrixXd raw(dim, latent_dim);
    for (Eigen::Index j = 0; j < raw.cols(); ++j)
        for (Eigen::Index i = 0; i < raw.rows(); ++i) raw(i, j) = normal(rng);
    Eigen::MatrixXd a = raw;
    if (orthogonal_columns) {
        const Eigen::HouseholderQR<Eigen::MatrixXd> qr(raw);
        const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(dim, latent_dim);
        a = q;
        for (Eigen::Index j = 0; j < a.cols(); ++j) a.col(j) *= scale(rng);
    }
    LinearGaussianModel m;
    m.noise_std = 1.0;
    const auto means = num_classes >= 2 ? synthetic_class_means(num_classes, dim, separation)
                                        : std::vector<Eigen::VectorXd>{Eigen::VectorXd::Zero(dim)};
    for (int c = 0; c < num_classes; ++c) {
        m.loadings.push_back(a);
        m.offsets.push_back(means[static_cast<std::size_t>(c)]);
    }
    return m;
}

VerifierModel analytic_verifier(const LinearGaussianModel& model) {
    model.validate();
    if (std::abs(model.noise_std - 1.0) > 1e-12)
        throw ArgumentError("the unit Gaussian decoder needs noise_std = 1");
    for (const auto& a : model.loadings)
        if (!a.isApprox(model.loadings.front(), 0.0))
            throw ArgumentError("closed-form verifier needs one loading shared by all classes");
    const int d = model.dim(), m = model.latent_dim(), c = model.num_classes();
    const Eigen::MatrixXd& a = model.loadings.front();

    // posterior: cov S = (I + A^T A)^-1, mean S A^T (x - b_y)
    const Eigen::MatrixXd s = (Eigen::MatrixXd::Identity(m, m) + a.transpose() * a).inverse();
    const Eigen::MatrixXd gain = s * a.transpose();

    VerifierArch arch;
    arch.input_dim = d;
    arch.num_classes = c;
    arch.latent_dim = m;
    arch.encoder_hidden = {};
    arch.decoder_hidden = {};
    arch.critic_hidden = {};
    arch.prior_hidden = {};
    arch.activation = Activation::identity;
    arch.conditioning = EncoderConditioning::x_and_y;
    VerifierModel v = make_verifier(arch, 0);

    // encoder input [x, onehot(y)] -> [mean, log_variance]
    auto ew = v.encoder.weight(0);
    auto eb = v.encoder.bias(0);
    ew.setZero();
    eb.setZero();
    ew.block(0, 0, m, d) = gain;
    for (int y = 0; y < c; ++y) ew.block(0, d + y, m, 1) = -gain * model.offsets[static_cast<std::size_t>(y)];
    eb.tail(m) = s.diagonal().array().log().matrix();

    // decoder input [z, onehot(y)] -> A z + b_y
    auto dw = v.decoder.weight(0);
    v.decoder.bias(0).setZero();
    dw.setZero();
    dw.block(0, 0, d, m) = a;
    for (int y = 0; y < c; ++y) dw.col(m + y) = model.offsets[static_cast<std::size_t>(y)];

    // D_z logit 0 everywhere
    v.prior_discriminator.params().setZero();
    v.critic.params().setZero();
    return v;
}

}  // namespace dvn

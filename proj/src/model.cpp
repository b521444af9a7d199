#include "dvn/model.hpp"

#include <cmath>
#include <numbers>

#include "dvn/errors.hpp"

namespace dvn {

namespace {

const double kLog2Pi = std::log(2.0 * std::numbers::pi);

Eigen::MatrixXd one_hot(std::span<const int> labels, int num_classes) {
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(labels.size()), num_classes);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= num_classes) throw ArgumentError("label out of range");
        m(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
    }
    return m;
}

Eigen::MatrixXd hcat(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    Eigen::MatrixXd out(a.rows(), a.cols() + b.cols());
    out << a, b;
    return out;
}

Eigen::MatrixXd encoder_input(const VerifierModel& m, const Eigen::MatrixXd& x,
                              std::span<const int> labels) {
    if (x.cols() != m.arch.input_dim) throw ArgumentError("input dimension mismatch");
    if (m.arch.conditioning == EncoderConditioning::x_only) return x;
    return hcat(x, one_hot(labels, m.arch.num_classes));
}

Eigen::MatrixXd clamp_log_variance(const Eigen::MatrixXd& raw) {
    return raw.cwiseMax(kLogVarianceMin).cwiseMin(kLogVarianceMax);
}

// Running mean: exact when every term is equal, as for a constant critic.
double mean_softplus(const Eigen::VectorXd& v, double sign) {
    double m = 0.0;
    for (Eigen::Index i = 0; i < v.size(); ++i) m += (softplus(sign * v[i]) - m) / static_cast<double>(i + 1);
    return m;
}

void pairs_to_matrices(std::span<const LabelLatentPair> pairs, int num_classes, int latent_dim,
                       Eigen::MatrixXd& input) {
    std::vector<int> labels;
    Eigen::MatrixXd z(static_cast<Eigen::Index>(pairs.size()), latent_dim);
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        if (pairs[i].z.size() != latent_dim) throw ArgumentError("latent dimension mismatch");
        labels.push_back(pairs[i].y);
        z.row(static_cast<Eigen::Index>(i)) = pairs[i].z;
    }
    input = hcat(one_hot(labels, num_classes), z);
}

}  // namespace

std::string_view to_string(EncoderConditioning c) {
    return c == EncoderConditioning::x_only ? "x_only" : "x_and_y";
}

EncoderConditioning conditioning_from_string(std::string_view s) {
    if (s == "x_only") return EncoderConditioning::x_only;
    if (s == "x_and_y") return EncoderConditioning::x_and_y;
    throw ArgumentError("unknown encoder conditioning '" + std::string(s) + "'");
}

double GaussianPosterior::log_density(const Eigen::VectorXd& z) const {
    const Eigen::ArrayXd diff = z.array() - mean.array();
    return -0.5 * (diff.square() * (-log_variance.array()).exp() + log_variance.array() + kLog2Pi).sum();
}

double GaussianPosterior::kl_to_standard_normal() const {
    return 0.5 * (mean.array().square() + log_variance.array().exp() - 1.0 - log_variance.array()).sum();
}

double standard_normal_log_density(const Eigen::VectorXd& z) {
    return -0.5 * (z.squaredNorm() + static_cast<double>(z.size()) * kLog2Pi);
}

double unit_gaussian_log_likelihood(const Eigen::VectorXd& x, const Eigen::VectorXd& mean) {
    return -0.5 * ((x - mean).squaredNorm() + static_cast<double>(x.size()) * kLog2Pi);
}

VerifierModel make_verifier(const VerifierArch& arch, std::uint64_t seed) {
    if (!(arch.input_scale > 0) || !std::isfinite(arch.input_scale))
        throw ArgumentError("input_scale must be positive and finite");
    if (arch.input_dim < 1 || arch.num_classes < 1 || arch.latent_dim < 1)
        throw ArgumentError("invalid verifier architecture");
    auto sizes = [](int in, const std::vector<int>& hidden, int out) {
        std::vector<int> s{in};
        s.insert(s.end(), hidden.begin(), hidden.end());
        s.push_back(out);
        return s;
    };
    const int enc_in = arch.input_dim +
                       (arch.conditioning == EncoderConditioning::x_and_y ? arch.num_classes : 0);
    VerifierModel m{arch,
                    Mlp(sizes(enc_in, arch.encoder_hidden, 2 * arch.latent_dim), arch.activation),
                    Mlp(sizes(arch.latent_dim + arch.num_classes, arch.decoder_hidden, arch.input_dim),
                        arch.activation),
                    Mlp(sizes(arch.num_classes + arch.latent_dim, arch.critic_hidden, 1), arch.activation),
                    Mlp(sizes(arch.latent_dim, arch.prior_hidden, 1), arch.activation)};
    Rng rng = make_rng(seed);
    m.encoder.initialize(rng);
    m.encoder.zero_last_layer();
    m.decoder.initialize(rng);
    m.critic.initialize(rng);
    m.prior_discriminator.initialize(rng);
    return m;
}

double log_input_jacobian(const VerifierArch& arch) {
    return arch.input_dim * std::log(arch.input_scale);
}

void encode_batch(const VerifierModel& model, const Eigen::MatrixXd& x, std::span<const int> labels,
                  Eigen::MatrixXd& mean, Eigen::MatrixXd& log_variance) {
    const int m = model.arch.latent_dim;
    const Eigen::MatrixXd out = model.encoder.forward(encoder_input(model, model.arch.input_scale * x, labels));
    mean = out.leftCols(m);
    log_variance = clamp_log_variance(out.rightCols(m));
}

GaussianPosterior encode(const VerifierModel& model, const Eigen::VectorXd& x, std::optional<int> y) {
    const bool wants_y = model.arch.conditioning == EncoderConditioning::x_and_y;
    if (wants_y != y.has_value())
        throw ArgumentError(wants_y ? "encoder conditioned on (x, y) needs a label"
                                    : "encoder conditioned on x only takes no label");
    if (x.size() != model.arch.input_dim) throw ArgumentError("input dimension mismatch");
    Eigen::MatrixXd mean, logvar;
    const int label[1] = {y.value_or(0)};
    encode_batch(model, x.transpose(), label, mean, logvar);
    GaussianPosterior post{mean.row(0).transpose(), logvar.row(0).transpose()};
    if (!post.mean.allFinite() || !post.log_variance.allFinite())
        throw NumericError("encoder produced non-finite posterior parameters");
    return post;
}

LatentCode reparameterized_sample(const GaussianPosterior& post, Rng& rng) {
    std::normal_distribution<double> normal;
    LatentCode code{post.mean};
    const Eigen::ArrayXd sd = (0.5 * post.log_variance.array().max(kLogVarianceMin)).exp();
    for (Eigen::Index i = 0; i < code.z.size(); ++i) code.z[i] += sd[i] * normal(rng);
    return code;
}

LatentCode reparameterized_sample(const GaussianPosterior& post, std::uint64_t seed) {
    Rng rng = make_rng(seed);
    return reparameterized_sample(post, rng);
}

Eigen::MatrixXd decode(const VerifierModel& model, const Eigen::MatrixXd& z, int y) {
    const std::vector<int> labels(static_cast<std::size_t>(z.rows()), y);
    return model.decoder.forward(hcat(z, one_hot(labels, model.arch.num_classes)));
}

Eigen::VectorXd prior_logit(const VerifierModel& model, const Eigen::MatrixXd& z) {
    return model.prior_discriminator.forward(z).col(0);
}

double prior_discriminator_prob(const VerifierModel& model, const Eigen::VectorXd& z) {
    return sigmoid(prior_logit(model, z.transpose())[0]);
}

LossBreakdown elbo_terms(const VerifierModel& model, const Eigen::VectorXd& x, int y,
                         int num_samples, std::uint64_t seed) {
    if (num_samples < 1) throw ArgumentError("num_samples must be at least 1");
    const auto post = model.arch.conditioning == EncoderConditioning::x_and_y ? encode(model, x, y)
                                                                               : encode(model, x);
    Rng rng = make_rng(seed);
    Eigen::MatrixXd z(num_samples, post.dim());
    for (int s = 0; s < num_samples; ++s) z.row(s) = reparameterized_sample(post, rng).z;
    const Eigen::MatrixXd recon = decode(model, z, y);
    LossBreakdown out;
    const Eigen::VectorXd xs = model.arch.input_scale * x;
    for (int s = 0; s < num_samples; ++s)
        out.reconstruction -= unit_gaussian_log_likelihood(xs, recon.row(s).transpose());
    out.reconstruction = out.reconstruction / num_samples - log_input_jacobian(model.arch);
    out.kl = post.kl_to_standard_normal();
    if (!std::isfinite(out.reconstruction)) throw NumericError("reconstruction term is not finite");
    if (!std::isfinite(out.kl)) throw NumericError("kl term is not finite");
    out.total = out.reconstruction + out.kl;
    return out;
}

double mi_estimate(const VerifierModel& model, std::span<const LabelLatentPair> joint,
                   std::span<const LabelLatentPair> marginal, Eigen::VectorXd& critic_grad) {
    if (joint.empty() || marginal.empty()) throw ArgumentError("mutual information needs nonempty batches");
    Eigen::MatrixXd jin, min;
    pairs_to_matrices(joint, model.arch.num_classes, model.arch.latent_dim, jin);
    pairs_to_matrices(marginal, model.arch.num_classes, model.arch.latent_dim, min);
    Mlp::Tape jt, mt;
    const Eigen::VectorXd tj = model.critic.forward(jin, jt).col(0);
    const Eigen::VectorXd tm = model.critic.forward(min, mt).col(0);
    const double nj = static_cast<double>(joint.size());
    const double nm = static_cast<double>(marginal.size());

    critic_grad = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(model.critic.num_params()));
    Eigen::MatrixXd dj = tj.unaryExpr([&](double t) { return sigmoid(-t) / nj; });
    Eigen::MatrixXd dm = tm.unaryExpr([&](double t) { return -sigmoid(t) / nm; });
    model.critic.backward(jt, dj, critic_grad);
    model.critic.backward(mt, dm, critic_grad);
    return -mean_softplus(tj, -1.0) - mean_softplus(tm, 1.0);
}

double mi_estimate(const VerifierModel& model, std::span<const LabelLatentPair> joint,
                   std::span<const LabelLatentPair> marginal) {
    if (joint.empty() || marginal.empty()) throw ArgumentError("mutual information needs nonempty batches");
    Eigen::MatrixXd jin, min;
    pairs_to_matrices(joint, model.arch.num_classes, model.arch.latent_dim, jin);
    pairs_to_matrices(marginal, model.arch.num_classes, model.arch.latent_dim, min);
    const Eigen::VectorXd tj = model.critic.forward(jin).col(0);
    const Eigen::VectorXd tm = model.critic.forward(min).col(0);
    return -mean_softplus(tj, -1.0) - mean_softplus(tm, 1.0);
}

std::vector<std::size_t> derangement(std::size_t n, Rng& rng) {
    std::vector<std::size_t> p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = i;
    // Sattolo: a single n-cycle, hence no fixed points
    for (std::size_t i = n; i-- > 1;) {
        std::uniform_int_distribution<std::size_t> pick(0, i - 1);
        std::swap(p[i], p[pick(rng)]);
    }
    return p;
}

namespace {

struct BatchDraw {
    Eigen::MatrixXd x;
    std::vector<int> labels;
    Eigen::MatrixXd eps;
    std::vector<std::size_t> perm;
};

BatchDraw draw_batch(const VerifierModel& model, std::span<const LabeledSample> batch,
                     std::uint64_t seed) {
    if (batch.empty()) throw ArgumentError("empty batch");
    BatchDraw d;
    const auto b = static_cast<Eigen::Index>(batch.size());
    d.x.resize(b, model.arch.input_dim);
    for (Eigen::Index i = 0; i < b; ++i) {
        if (batch[i].x.size() != model.arch.input_dim) throw ArgumentError("input dimension mismatch");
        d.x.row(i) = model.arch.input_scale * batch[i].x;
        d.labels.push_back(batch[i].y);
    }
    Rng rng = make_rng(seed);
    std::normal_distribution<double> normal;
    d.eps.resize(b, model.arch.latent_dim);
    for (Eigen::Index i = 0; i < b; ++i)
        for (Eigen::Index j = 0; j < d.eps.cols(); ++j) d.eps(i, j) = normal(rng);
    d.perm = derangement(batch.size(), rng);
    return d;
}

}  // namespace

void sample_mi_pairs(const VerifierModel& model, std::span<const LabeledSample> batch,
                     std::uint64_t seed, std::vector<LabelLatentPair>& joint,
                     std::vector<LabelLatentPair>& marginal) {
    const BatchDraw d = draw_batch(model, batch, seed);
    const int m = model.arch.latent_dim;
    const Eigen::MatrixXd enc_out = model.encoder.forward(encoder_input(model, d.x, d.labels));
    const Eigen::MatrixXd mean = enc_out.leftCols(m);
    const Eigen::MatrixXd logvar = clamp_log_variance(enc_out.rightCols(m));
    const Eigen::MatrixXd z = mean.array() + (0.5 * logvar.array()).exp() * d.eps.array();
    joint.clear();
    marginal.clear();
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto row = static_cast<Eigen::Index>(i);
        joint.push_back({d.labels[i], z.row(row).transpose()});
        marginal.push_back({d.labels[i], z.row(static_cast<Eigen::Index>(d.perm[i])).transpose()});
    }
}

LossBreakdown total_loss(const VerifierModel& model, std::span<const LabeledSample> batch,
                         std::uint64_t seed, ModelGradients* grads) {
    const BatchDraw d = draw_batch(model, batch, seed);
    const int m = model.arch.latent_dim;
    const int c = model.arch.num_classes;
    const double b = static_cast<double>(batch.size());
    const double lambda = model.arch.lambda;

    Mlp::Tape enc_tape, dec_tape, joint_tape, marg_tape;
    const Eigen::MatrixXd enc_out = model.encoder.forward(encoder_input(model, d.x, d.labels), enc_tape);
    const Eigen::MatrixXd mean = enc_out.leftCols(m);
    const Eigen::MatrixXd raw_logvar = enc_out.rightCols(m);
    const Eigen::MatrixXd logvar = clamp_log_variance(raw_logvar);
    const Eigen::MatrixXd sd = (0.5 * logvar.array()).exp();
    const Eigen::MatrixXd z = mean.array() + sd.array() * d.eps.array();

    const Eigen::MatrixXd labels_1h = one_hot(d.labels, c);
    const Eigen::MatrixXd recon = model.decoder.forward(hcat(z, labels_1h), dec_tape);
    const Eigen::MatrixXd resid = recon - d.x;

    Eigen::MatrixXd z_shuffled(z.rows(), m);
    for (std::size_t i = 0; i < d.perm.size(); ++i)
        z_shuffled.row(static_cast<Eigen::Index>(i)) = z.row(static_cast<Eigen::Index>(d.perm[i]));
    const Eigen::VectorXd tj = model.critic.forward(hcat(labels_1h, z), joint_tape).col(0);
    const Eigen::VectorXd tm = model.critic.forward(hcat(labels_1h, z_shuffled), marg_tape).col(0);

    LossBreakdown out;
    out.reconstruction = 0.5 * resid.squaredNorm() / b + 0.5 * model.arch.input_dim * kLog2Pi -
                         log_input_jacobian(model.arch);
    out.kl = 0.5 * (mean.array().square() + logvar.array().exp() - 1.0 - logvar.array()).sum() / b;
    out.mi = -mean_softplus(tj, -1.0) - mean_softplus(tm, 1.0);
    out.total = out.reconstruction + out.kl + lambda * out.mi;
    if (!std::isfinite(out.reconstruction)) throw NumericError("reconstruction term is not finite");
    if (!std::isfinite(out.kl)) throw NumericError("kl term is not finite");
    if (!std::isfinite(out.mi)) throw NumericError("mutual information term is not finite");

    if (grads) {
        grads->encoder = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(model.encoder.num_params()));
        grads->decoder = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(model.decoder.num_params()));
        grads->critic = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(model.critic.num_params()));

        const Eigen::MatrixXd d_dec_in = model.decoder.backward(dec_tape, resid / b, grads->decoder);
        Eigen::MatrixXd dz = d_dec_in.leftCols(m);

        const Eigen::MatrixXd dtj = tj.unaryExpr([&](double t) { return lambda * sigmoid(-t) / b; });
        const Eigen::MatrixXd dtm = tm.unaryExpr([&](double t) { return -lambda * sigmoid(t) / b; });
        const Eigen::MatrixXd d_joint = model.critic.backward(joint_tape, dtj, grads->critic);
        const Eigen::MatrixXd d_marg = model.critic.backward(marg_tape, dtm, grads->critic);
        dz += d_joint.rightCols(m);
        for (std::size_t i = 0; i < d.perm.size(); ++i)
            dz.row(static_cast<Eigen::Index>(d.perm[i])) += d_marg.row(static_cast<Eigen::Index>(i)).rightCols(m);

        Eigen::MatrixXd d_enc_out(dz.rows(), 2 * m);
        d_enc_out.leftCols(m) = dz + mean / b;
        Eigen::MatrixXd dlogvar =
            dz.array() * 0.5 * sd.array() * d.eps.array() + 0.5 * (logvar.array().exp() - 1.0) / b;
        // the clamp passes no gradient outside its range
        dlogvar.array() *= (raw_logvar.array() >= kLogVarianceMin && raw_logvar.array() <= kLogVarianceMax)
                               .cast<double>();
        d_enc_out.rightCols(m) = dlogvar;
        model.encoder.backward(enc_tape, d_enc_out, grads->encoder);
    }
    return out;
}

}  // namespace dvn

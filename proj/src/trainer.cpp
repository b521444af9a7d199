#include "dvn/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>

#include "dvn/container.hpp"
#include "dvn/errors.hpp"

namespace dvn {

void write_train_log(std::ostream& out, const TrainLog& log) {
    out << "epoch,recon,kl,mi,total,dz_acc,seconds\n";
    char buf[256];
    for (const auto& e : log.epochs) {
        std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.6f\n", e.epoch,
                      e.loss.reconstruction, e.loss.kl, e.loss.mi, e.loss.total, e.dz_accuracy,
                      e.seconds);
        out << buf;
    }
}

namespace {

struct PriorStep {
    double loss = 0.0;
    std::size_t correct = 0;
    std::size_t total = 0;
};

// One BCE gradient step of D_z on balanced prior / pushforward draws.
PriorStep prior_step(const VerifierModel& model, Eigen::VectorXd& params, RmsProp& opt,
                     std::span<const LabeledSample> batch, Rng& rng, bool prior_is_positive) {
    const int m = model.arch.latent_dim;
    const auto b = static_cast<Eigen::Index>(batch.size());
    Eigen::MatrixXd x(b, model.arch.input_dim);
    std::vector<int> labels;
    for (Eigen::Index i = 0; i < b; ++i) {
        x.row(i) = batch[static_cast<std::size_t>(i)].x;
        labels.push_back(batch[static_cast<std::size_t>(i)].y);
    }
    Eigen::MatrixXd mean, logvar;
    encode_batch(model, x, labels, mean, logvar);
    std::normal_distribution<double> normal;
    Eigen::MatrixXd prior_z(b, m), push_z(b, m);
    for (Eigen::Index i = 0; i < b; ++i)
        for (int j = 0; j < m; ++j) prior_z(i, j) = normal(rng);
    for (Eigen::Index i = 0; i < b; ++i)
        for (int j = 0; j < m; ++j) push_z(i, j) = mean(i, j) + std::exp(0.5 * logvar(i, j)) * normal(rng);

    Mlp net = model.prior_discriminator;
    net.params() = params;
    PriorStep s;
    Eigen::VectorXd grad;
    s.loss = prior_discriminator_loss(net, prior_z, push_z, prior_is_positive, &grad, &s.correct);
    s.total = static_cast<std::size_t>(2 * b);
    opt.descend(params, grad);
    return s;
}

std::vector<std::vector<std::size_t>> shuffled_batches(std::size_t n, int batch_size, Rng& rng) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t s = 0; s < n; s += static_cast<std::size_t>(batch_size))
        out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(s),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(n, s + batch_size)));
    return out;
}

std::vector<LabeledSample> gather(const Dataset& data, const std::vector<std::size_t>& idx) {
    std::vector<LabeledSample> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(data[i]);
    return out;
}

}  // namespace

double prior_discriminator_loss(const Mlp& net, const Eigen::MatrixXd& prior_z, const Eigen::MatrixXd& pushforward_z,
                                bool prior_is_positive, Eigen::VectorXd* grad, std::size_t* correct) {
    if (prior_z.rows() == 0 || pushforward_z.rows() == 0 || prior_z.cols() != pushforward_z.cols())
        throw ArgumentError("prior discriminator needs two nonempty latent batches of equal width");
    const Eigen::Index np = prior_z.rows(), n = np + pushforward_z.rows();
    Eigen::MatrixXd z(n, prior_z.cols());
    z << prior_z, pushforward_z;
    Mlp::Tape tape;
    const Eigen::VectorXd logit = net.forward(z, tape).col(0);
    Eigen::MatrixXd dlogit(n, 1);
    double loss = 0.0;
    std::size_t hits = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const bool positive = (i < np) == prior_is_positive;
        loss += positive ? softplus(-logit[i]) : softplus(logit[i]);
        dlogit(i, 0) = (sigmoid(logit[i]) - (positive ? 1.0 : 0.0)) / static_cast<double>(n);
        hits += (logit[i] > 0) == positive;
    }
    if (grad) {
        *grad = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(net.num_params()));
        net.backward(tape, dlogit, *grad);
    }
    if (correct) *correct = hits;
    return loss / static_cast<double>(n);
}

Eigen::VectorXd fit_prior_discriminator(const VerifierModel& model, const Dataset& train,
                                        const PriorFitConfig& config, double* final_accuracy) {
    if (config.epochs < 0 || config.batch_size < 1 || !(config.step_size > 0))
        throw ArgumentError("invalid prior discriminator config");
    if (train.dim() != model.arch.input_dim) throw ArgumentError("input dimension mismatch");
    Rng rng = make_rng(config.seed);
    Eigen::VectorXd params = model.prior_discriminator.params();
    RmsProp opt(static_cast<std::size_t>(params.size()), config.step_size);
    std::size_t correct = 0, total = 0;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        correct = total = 0;
        for (const auto& idx : shuffled_batches(train.size(), config.batch_size, rng)) {
            const auto batch = gather(train, idx);
            const auto s = prior_step(model, params, opt, batch, rng, config.prior_is_positive);
            if (!std::isfinite(s.loss) || !params.allFinite())
                throw TrainingError("prior discriminator loss is not finite", epoch);
            correct += s.correct;
            total += s.total;
        }
    }
    if (final_accuracy) *final_accuracy = total ? static_cast<double>(correct) / total : 0.0;
    return params;
}

TrainResult train_dvn(const Dataset& train, const VerifierArch& arch_in, const TrainConfig& config) {
    if (train.origin() != Origin::in_distribution)
        throw ArgumentError("the verifier is trained on in-distribution data only");
    if (config.epochs < 0 || config.batch_size < 1 || config.k_critic_steps < 0 ||
        config.dz_finetune_epochs < 0 || !(config.model_step > 0) || !(config.critic_step > 0) ||
        !(config.prior_step > 0) || config.lambda < 0)
        throw ArgumentError("invalid training config");
    VerifierArch arch = arch_in;
    arch.input_dim = train.dim();
    arch.num_classes = train.num_classes();
    arch.lambda = config.lambda;

    TrainResult result{make_verifier(arch, config.seed), {}};
    VerifierModel& model = result.model;
    if (config.epochs == 0) return result;

    Rng rng = make_rng(derive_seed(config.seed, 1));
    RmsProp enc_opt(model.encoder.num_params(), config.model_step);
    RmsProp dec_opt(model.decoder.num_params(), config.model_step);
    RmsProp critic_opt(model.critic.num_params(), config.critic_step);
    RmsProp prior_opt(model.prior_discriminator.num_params(), config.prior_step);

    std::uint64_t step = 0;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const auto started = std::chrono::steady_clock::now();
        EpochLog entry;
        entry.epoch = epoch;
        std::size_t nbatches = 0, correct = 0, seen = 0;
        for (const auto& idx : shuffled_batches(train.size(), config.batch_size, rng)) {
            const auto batch = gather(train, idx);
            const VerifierModel before = model;

            // (a) critic ascent on the JS mutual-information bound
            std::vector<LabelLatentPair> joint, marginal;
            for (int k = 0; k < config.k_critic_steps; ++k) {
                sample_mi_pairs(model, batch, derive_seed(config.seed, 3 * step), joint, marginal);
                Eigen::VectorXd g;
                mi_estimate(model, joint, marginal, g);
                critic_opt.ascend(model.critic.params(), g);
            }

            // (b) encoder + decoder descent with the critic fixed
            ModelGradients grads;
            LossBreakdown loss;
            try {
                loss = total_loss(model, batch, derive_seed(config.seed, 3 * step + 1), &grads);
            } catch (const NumericError& e) {
                throw DivergenceError(e.what(), epoch, before);
            }
            if (!grads.encoder.allFinite() || !grads.decoder.allFinite())
                throw DivergenceError("non-finite gradient", epoch, before);
            enc_opt.descend(model.encoder.params(), grads.encoder);
            dec_opt.descend(model.decoder.params(), grads.decoder);

            // (c) prior discriminator, interleaved
            Rng prior_rng = make_rng(derive_seed(config.seed, 3 * step + 2));
            const auto ps = prior_step(model, model.prior_discriminator.params(), prior_opt, batch,
                                       prior_rng, true);
            if (!std::isfinite(ps.loss) || !model.prior_discriminator.params().allFinite() ||
                !model.critic.params().allFinite())
                throw DivergenceError("non-finite critic or discriminator", epoch, before);
            correct += ps.correct;
            seen += ps.total;

            entry.loss.reconstruction += loss.reconstruction;
            entry.loss.kl += loss.kl;
            entry.loss.mi += loss.mi;
            entry.loss.total += loss.total;
            ++nbatches;
            ++step;
        }
        const double nb = static_cast<double>(nbatches);
        entry.loss.reconstruction /= nb;
        entry.loss.kl /= nb;
        entry.loss.mi /= nb;
        entry.loss.total /= nb;
        entry.dz_accuracy = static_cast<double>(correct) / static_cast<double>(seen);
        entry.seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        result.log.epochs.push_back(entry);
    }

    if (config.dz_finetune_epochs > 0) {
        PriorFitConfig pf;
        pf.epochs = config.dz_finetune_epochs;
        pf.batch_size = config.batch_size;
        pf.step_size = config.prior_step;
        pf.seed = derive_seed(config.seed, 0xD2);
        double acc = 0.0;
        model.prior_discriminator.params() = fit_prior_discriminator(model, train, pf, &acc);
    }
    return result;
}

namespace {

nlohmann::json arch_json(const VerifierArch& a) {
    return {{"input_dim", a.input_dim},
            {"num_classes", a.num_classes},
            {"latent_dim", a.latent_dim},
            {"encoder_hidden", a.encoder_hidden},
            {"decoder_hidden", a.decoder_hidden},
            {"critic_hidden", a.critic_hidden},
            {"prior_hidden", a.prior_hidden},
            {"activation", std::string(to_string(a.activation))},
            {"encoder_conditioning", std::string(to_string(a.conditioning))},
            {"lambda", a.lambda},
            {"input_scale", a.input_scale}};
}

}  // namespace

void save_checkpoint(const VerifierModel& model, const std::filesystem::path& path) {
    Container box;
    box.header = {{"kind", "verifier"},
                  {"arch", arch_json(model.arch)},
                  {"encoder_layers", model.encoder.sizes()},
                  {"decoder_layers", model.decoder.sizes()},
                  {"critic_layers", model.critic.sizes()},
                  {"prior_layers", model.prior_discriminator.sizes()},
                  {"encoder_output_activation",
                   std::string(to_string(model.encoder.output_activation()))}};
    box.blocks.emplace_back("encoder", model.encoder.params());
    box.blocks.emplace_back("decoder", model.decoder.params());
    box.blocks.emplace_back("critic", model.critic.params());
    box.blocks.emplace_back("prior_discriminator", model.prior_discriminator.params());
    write_container(path, box);
}

VerifierModel load_checkpoint(const std::filesystem::path& path) {
    const Container box = read_container(path);
    try {
        if (box.header.at("kind") != "verifier") throw FormatError("checkpoint is not a verifier", 0);
        const auto& j = box.header.at("arch");
        VerifierArch a;
        a.input_dim = j.at("input_dim").get<int>();
        a.num_classes = j.at("num_classes").get<int>();
        a.latent_dim = j.at("latent_dim").get<int>();
        a.encoder_hidden = j.at("encoder_hidden").get<std::vector<int>>();
        a.decoder_hidden = j.at("decoder_hidden").get<std::vector<int>>();
        a.critic_hidden = j.at("critic_hidden").get<std::vector<int>>();
        a.prior_hidden = j.at("prior_hidden").get<std::vector<int>>();
        a.activation = activation_from_string(j.at("activation").get<std::string>());
        a.conditioning = conditioning_from_string(j.at("encoder_conditioning").get<std::string>());
        a.lambda = j.at("lambda").get<double>();
        a.input_scale = j.value("input_scale", 1.0);
        if (!(a.input_scale > 0) || !std::isfinite(a.input_scale)) throw FormatError("bad input_scale", 0);
        auto net = [&](const char* layers, const char* block) {
            Mlp m(box.header.at(layers).get<std::vector<int>>(), a.activation);
            const auto& p = box.block(block);
            if (static_cast<std::size_t>(p.size()) != m.num_params())
                throw FormatError(std::string("parameter count mismatch in block ") + block, 0);
            m.params() = p;
            return m;
        };
        return VerifierModel{a, net("encoder_layers", "encoder"), net("decoder_layers", "decoder"),
                             net("critic_layers", "critic"),
                             net("prior_layers", "prior_discriminator")};
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("bad verifier header: ") + e.what(), 0);
    }
}

}  // namespace dvn

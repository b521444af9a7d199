#include "dvn/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dvn/container.hpp"
#include "dvn/errors.hpp"

namespace dvn {

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
    const double hi = logits.maxCoeff();
    Eigen::VectorXd e = (logits.array() - hi).exp();
    return e / e.sum();
}

Classifier::Classifier(const ClassifierArch& arch, const ClassifierTrainConfig& config)
    : arch_(arch), config_(config) {
    if (arch.num_classes < 2) throw ArgumentError("classifier needs at least two classes");
    int features = arch.input_dim;
    if (arch.conv) {
        const auto& c = *arch.conv;
        conv_.emplace(c.height, c.width, c.channels, c.filters, c.kernel, arch.activation);
        if (conv_->input_dim() != arch.input_dim)
            throw ArgumentError("conv geometry does not match input dimension");
        features = conv_->output_dim();
    }
    std::vector<int> sizes{features};
    sizes.insert(sizes.end(), arch.hidden.begin(), arch.hidden.end());
    sizes.push_back(arch.num_classes);
    head_ = Mlp(sizes, arch.activation);
}

void Classifier::initialize(Rng& rng) {
    if (conv_) conv_->initialize(rng);
    head_.initialize(rng);
}

Eigen::MatrixXd Classifier::logits(const Eigen::MatrixXd& inputs) const {
    if (inputs.cols() != arch_.input_dim)
        throw ArgumentError("input dimension " + std::to_string(inputs.cols()) +
                            " does not match classifier dimension " +
                            std::to_string(arch_.input_dim));
    return conv_ ? head_.forward(conv_->forward(inputs)) : head_.forward(inputs);
}

Prediction Classifier::predict(const Eigen::VectorXd& x) const {
    Eigen::MatrixXd row = x.transpose();
    Prediction p;
    p.proba = softmax(logits(row).row(0).transpose());
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < p.proba.size(); ++i)
        if (p.proba[i] > p.proba[best]) best = i;  // first maximum wins ties
    p.label = static_cast<int>(best);
    return p;
}

std::vector<int> Classifier::predict_labels(const Dataset& data) const {
    const Eigen::MatrixXd z = logits(data.features());
    std::vector<int> out(data.size());
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
        Eigen::Index best = 0;
        for (Eigen::Index j = 1; j < z.cols(); ++j)
            if (z(i, j) > z(i, best)) best = j;
        out[static_cast<std::size_t>(i)] = static_cast<int>(best);
    }
    return out;
}

double Classifier::msp_score(const Eigen::VectorXd& x) const { return predict(x).proba.maxCoeff(); }

double Classifier::loss(const Eigen::MatrixXd& inputs, std::span<const int> labels,
                        Eigen::VectorXd* grad_params, Eigen::MatrixXd* grad_inputs) const {
    if (static_cast<Eigen::Index>(labels.size()) != inputs.rows())
        throw ArgumentError("label count does not match batch size");
    Conv2d::Tape conv_tape;
    Mlp::Tape head_tape;
    const Eigen::MatrixXd features = conv_ ? conv_->forward(inputs, conv_tape) : inputs;
    const Eigen::MatrixXd z = head_.forward(features, head_tape);
    const double n = static_cast<double>(inputs.rows());

    double total = 0.0;
    Eigen::MatrixXd dz(z.rows(), z.cols());
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
        const int y = labels[static_cast<std::size_t>(i)];
        if (y < 0 || y >= arch_.num_classes) throw ArgumentError("label out of range");
        const double hi = z.row(i).maxCoeff();
        const double lse = hi + std::log((z.row(i).array() - hi).exp().sum());
        total += lse - z(i, y);
        dz.row(i) = (z.row(i).array() - lse).exp();
        dz(i, y) -= 1.0;
    }
    dz /= n;

    if (grad_params || grad_inputs) {
        Eigen::VectorXd g_head = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(head_.num_params()));
        Eigen::MatrixXd g_feat = head_.backward(head_tape, dz, g_head);
        Eigen::VectorXd g_conv;
        Eigen::MatrixXd g_in = g_feat;
        if (conv_) {
            g_conv = Eigen::VectorXd::Zero(conv_->params().size());
            g_in = conv_->backward(conv_tape, g_feat, g_conv);
        }
        if (grad_params) {
            grad_params->resize(g_conv.size() + g_head.size());
            *grad_params << g_conv, g_head;
        }
        if (grad_inputs) *grad_inputs = std::move(g_in);
    }
    return total / n;
}

Eigen::VectorXd Classifier::input_gradient(const Eigen::VectorXd& x, int y) const {
    Eigen::MatrixXd row = x.transpose();
    Eigen::MatrixXd g;
    const int labels[1] = {y};
    loss(row, labels, nullptr, &g);
    return g.row(0).transpose();
}

double Classifier::accuracy(const Dataset& data) const {
    const auto pred = predict_labels(data);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < data.size(); ++i) correct += pred[i] == data[i].y;
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

Eigen::VectorXd Classifier::flat_params() const {
    const Eigen::Index nc = conv_ ? conv_->params().size() : 0;
    Eigen::VectorXd p(nc + head_.params().size());
    if (conv_) p.head(nc) = conv_->params();
    p.tail(head_.params().size()) = head_.params();
    return p;
}

void Classifier::set_flat_params(const Eigen::VectorXd& p) {
    const Eigen::Index nc = conv_ ? conv_->params().size() : 0;
    if (p.size() != nc + head_.params().size()) throw ArgumentError("parameter count mismatch");
    if (conv_) conv_->params() = p.head(nc);
    head_.params() = p.tail(head_.params().size());
}

std::uint64_t Classifier::parameter_hash() const {
    const Eigen::VectorXd p = flat_params();
    return hash_params({p.data(), static_cast<std::size_t>(p.size())});
}

Classifier train_classifier(const Dataset& train, const ClassifierArch& arch,
                            const ClassifierTrainConfig& config) {
    if (train.origin() != Origin::in_distribution)
        throw ArgumentError("classifier must be trained on in-distribution data");
    if (train.dim() != arch.input_dim || train.num_classes() != arch.num_classes)
        throw ArgumentError("training data does not match classifier architecture");
    if (config.epochs < 0 || config.batch_size < 1 || !(config.step_size > 0))
        throw ArgumentError("invalid classifier training config");

    Rng rng = make_rng(config.seed);
    Classifier c(arch, config);
    c.initialize(rng);
    if (config.epochs == 0) return c;

    const Eigen::MatrixXd x = train.features();
    const std::vector<int> y = train.labels();
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);

    Eigen::VectorXd params = c.flat_params();
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t end = std::min(order.size(), start + config.batch_size);
            Eigen::MatrixXd xb(static_cast<Eigen::Index>(end - start), x.cols());
            std::vector<int> yb;
            for (std::size_t k = start; k < end; ++k) {
                xb.row(static_cast<Eigen::Index>(k - start)) = x.row(static_cast<Eigen::Index>(order[k]));
                yb.push_back(y[order[k]]);
            }
            Eigen::VectorXd grad;
            const double l = c.loss(xb, yb, &grad);
            if (!std::isfinite(l) || !grad.allFinite())
                throw TrainingError("classifier loss is not finite", epoch);
            params -= config.step_size * grad;
            c.set_flat_params(params);
        }
    }
    return c;
}

namespace {

nlohmann::json arch_to_json(const ClassifierArch& a) {
    nlohmann::json j{{"input_dim", a.input_dim},
                     {"num_classes", a.num_classes},
                     {"hidden", a.hidden},
                     {"activation", std::string(to_string(a.activation))}};
    if (a.conv)
        j["conv"] = {{"height", a.conv->height}, {"width", a.conv->width},
                     {"channels", a.conv->channels}, {"filters", a.conv->filters},
                     {"kernel", a.conv->kernel}};
    return j;
}

ClassifierArch arch_from_json(const nlohmann::json& j) {
    ClassifierArch a;
    a.input_dim = j.at("input_dim").get<int>();
    a.num_classes = j.at("num_classes").get<int>();
    a.hidden = j.at("hidden").get<std::vector<int>>();
    a.activation = activation_from_string(j.at("activation").get<std::string>());
    if (j.contains("conv")) {
        const auto& c = j["conv"];
        a.conv = ConvSpec{c.at("height").get<int>(), c.at("width").get<int>(),
                          c.at("channels").get<int>(), c.at("filters").get<int>(),
                          c.at("kernel").get<int>()};
    }
    return a;
}

}  // namespace

void save_classifier(const Classifier& c, const std::filesystem::path& path) {
    Container box;
    const auto& cfg = c.config();
    box.header = {{"kind", "classifier"},
                  {"arch", arch_to_json(c.arch())},
                  {"config",
                   {{"epochs", cfg.epochs},
                    {"batch_size", cfg.batch_size},
                    {"step_size", cfg.step_size},
                    {"seed", cfg.seed}}}};
    box.blocks.emplace_back("params", c.flat_params());
    write_container(path, box);
}

Classifier load_classifier(const std::filesystem::path& path) {
    const Container box = read_container(path);
    try {
        if (box.header.at("kind") != "classifier")
            throw FormatError("checkpoint is not a classifier", 0);
        const auto& j = box.header.at("config");
        ClassifierTrainConfig cfg{j.at("epochs").get<int>(), j.at("batch_size").get<int>(),
                                  j.at("step_size").get<double>(),
                                  j.at("seed").get<std::uint64_t>()};
        Classifier c(arch_from_json(box.header.at("arch")), cfg);
        c.set_flat_params(box.block("params"));
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("bad classifier header: ") + e.what(), 0);
    }
}

}  // namespace dvn

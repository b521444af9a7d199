#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "dvn/dataset.hpp"
#include "dvn/nn.hpp"

namespace dvn {

struct ConvSpec {
    int height = 8;
    int width = 8;
    int channels = 1;
    int filters = 8;
    int kernel = 3;
};

struct ClassifierArch {
    int input_dim = 2;
    int num_classes = 2;
    std::vector<int> hidden{32, 32};
    std::optional<ConvSpec> conv;  // convolutional stem for image-like inputs
    Activation activation = Activation::tanh;
};

struct ClassifierTrainConfig {
    int epochs = 20;
    int batch_size = 32;
    double step_size = 0.05;
    std::uint64_t seed = 0;
};

struct Prediction {
    int label = 0;
    Eigen::VectorXd proba;
};

/// The model under verification. Immutable after training; all members are
/// const and thread-safe.
class Classifier {
public:
    Classifier(const ClassifierArch& arch, const ClassifierTrainConfig& config);

    const ClassifierArch& arch() const { return arch_; }
    const ClassifierTrainConfig& config() const { return config_; }

    Eigen::MatrixXd logits(const Eigen::MatrixXd& inputs) const;
    Prediction predict(const Eigen::VectorXd& x) const;
    std::vector<int> predict_labels(const Dataset& data) const;
    /// Maximum softmax probability; larger means more in-distribution.
    double msp_score(const Eigen::VectorXd& x) const;

    /// Mean cross-entropy over the rows and, optionally, its gradient.
    double loss(const Eigen::MatrixXd& inputs, std::span<const int> labels,
                Eigen::VectorXd* grad_params = nullptr,
                Eigen::MatrixXd* grad_inputs = nullptr) const;
    Eigen::VectorXd input_gradient(const Eigen::VectorXd& x, int y) const;

    double accuracy(const Dataset& data) const;

    /// Concatenated parameters: conv stem (if any) then the dense head.
    Eigen::VectorXd flat_params() const;
    void set_flat_params(const Eigen::VectorXd& p);
    std::uint64_t parameter_hash() const;

    void initialize(Rng& rng);

private:
    ClassifierArch arch_;
    ClassifierTrainConfig config_;
    std::optional<Conv2d> conv_;
    Mlp head_;
};

Eigen::VectorXd softmax(const Eigen::VectorXd& logits);

/// Mini-batch SGD on cross-entropy with a fixed step size.
Classifier train_classifier(const Dataset& train, const ClassifierArch& arch,
                            const ClassifierTrainConfig& config);

void save_classifier(const Classifier& c, const std::filesystem::path& path);
Classifier load_classifier(const std::filesystem::path& path);

}  // namespace dvn

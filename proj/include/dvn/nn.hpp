#pragma once

// Small fully connected and convolutional layers with hand-written
// backpropagation. Batches are row-major in the sense that each row of an
// input matrix is one sample.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "dvn/rng.hpp"

namespace dvn {

enum class Activation { identity, tanh, relu, sigmoid };

std::string_view to_string(Activation a);
Activation activation_from_string(std::string_view s);

/// Multilayer perceptron over a single flat parameter vector.
///
/// Layer l stores an out x in weight matrix (column-major) followed by an
/// out-sized bias. Hidden layers use `hidden`, the last layer `output`.
class Mlp {
public:
    struct Tape {
        std::vector<Eigen::MatrixXd> inputs;  // input to each layer
        std::vector<Eigen::MatrixXd> pre;     // pre-activation of each layer
    };

    Mlp() = default;
    Mlp(std::vector<int> sizes, Activation hidden, Activation output = Activation::identity);

    /// Glorot-uniform weights scaled by `gain`, zero biases.
    void initialize(Rng& rng, double gain = 1.0);
    void zero_last_layer();

    int input_dim() const { return sizes_.front(); }
    int output_dim() const { return sizes_.back(); }
    std::size_t num_layers() const { return sizes_.size() - 1; }
    const std::vector<int>& sizes() const { return sizes_; }
    Activation hidden_activation() const { return hidden_; }
    Activation output_activation() const { return output_; }

    std::size_t num_params() const { return static_cast<std::size_t>(params_.size()); }
    Eigen::VectorXd& params() { return params_; }
    const Eigen::VectorXd& params() const { return params_; }

    Eigen::Map<Eigen::MatrixXd> weight(std::size_t layer);
    Eigen::Map<const Eigen::MatrixXd> weight(std::size_t layer) const;
    Eigen::Map<Eigen::VectorXd> bias(std::size_t layer);
    Eigen::Map<const Eigen::VectorXd> bias(std::size_t layer) const;

    Eigen::MatrixXd forward(const Eigen::MatrixXd& input) const;
    Eigen::MatrixXd forward(const Eigen::MatrixXd& input, Tape& tape) const;

    /// Accumulates d(loss)/d(params) into `grad` and returns d(loss)/d(input).
    Eigen::MatrixXd backward(const Tape& tape, const Eigen::MatrixXd& grad_output,
                             Eigen::VectorXd& grad) const;

private:
    std::size_t weight_offset(std::size_t layer) const { return offsets_[layer]; }

    std::vector<int> sizes_;
    std::vector<std::size_t> offsets_;
    Activation hidden_ = Activation::tanh;
    Activation output_ = Activation::identity;
    Eigen::VectorXd params_;
};

/// Valid (no padding), stride-1 2-d convolution over channel-major flattened
/// images, followed by an activation. Output is flattened the same way.
class Conv2d {
public:
    struct Tape {
        Eigen::MatrixXd input;
        Eigen::MatrixXd pre;
    };

    Conv2d() = default;
    Conv2d(int height, int width, int channels, int filters, int kernel, Activation act);

    void initialize(Rng& rng, double gain = 1.0);

    int input_dim() const { return height_ * width_ * channels_; }
    int output_dim() const { return out_height() * out_width() * filters_; }
    int out_height() const { return height_ - kernel_ + 1; }
    int out_width() const { return width_ - kernel_ + 1; }
    int height() const { return height_; }
    int width() const { return width_; }
    int channels() const { return channels_; }
    int filters() const { return filters_; }
    int kernel() const { return kernel_; }
    Activation activation() const { return act_; }

    Eigen::VectorXd& params() { return params_; }
    const Eigen::VectorXd& params() const { return params_; }

    Eigen::MatrixXd forward(const Eigen::MatrixXd& input) const;
    Eigen::MatrixXd forward(const Eigen::MatrixXd& input, Tape& tape) const;
    Eigen::MatrixXd backward(const Tape& tape, const Eigen::MatrixXd& grad_output,
                             Eigen::VectorXd& grad) const;

private:
    double& w(int f, int c, int i, int j) {
        return params_[((f * channels_ + c) * kernel_ + i) * kernel_ + j];
    }
    double w(int f, int c, int i, int j) const {
        return params_[((f * channels_ + c) * kernel_ + i) * kernel_ + j];
    }
    std::size_t bias_offset() const {
        return static_cast<std::size_t>(filters_) * channels_ * kernel_ * kernel_;
    }
    Eigen::MatrixXd convolve(const Eigen::MatrixXd& input) const;

    int height_ = 0, width_ = 0, channels_ = 0, filters_ = 0, kernel_ = 0;
    Activation act_ = Activation::tanh;
    Eigen::VectorXd params_;
};

/// RMSProp without momentum. One instance per parameter vector.
class RmsProp {
public:
    RmsProp() = default;
    RmsProp(std::size_t n, double step_size, double decay = 0.99, double epsilon = 1e-8);

    /// params -= step * grad / sqrt(avg(grad^2) + eps)
    void descend(Eigen::VectorXd& params, const Eigen::VectorXd& grad);
    /// params += step * grad / sqrt(avg(grad^2) + eps)
    void ascend(Eigen::VectorXd& params, const Eigen::VectorXd& grad);

    double step_size() const { return step_; }
    void set_step_size(double s) { step_ = s; }

private:
    void update(Eigen::VectorXd& params, const Eigen::VectorXd& grad, double sign);

    Eigen::VectorXd mean_square_;
    double step_ = 1e-3;
    double decay_ = 0.99;
    double eps_ = 1e-8;
    std::int64_t t_ = 0;
};

double softplus(double v);
double sigmoid(double v);
double log_sigmoid(double v);

/// Numerically stable log(sum(exp(v))). Returns -inf for an all -inf input.
double log_sum_exp(std::span<const double> v);

/// FNV-1a over the little-endian bytes of the values.
std::uint64_t hash_params(std::span<const double> values, std::uint64_t h = 0xcbf29ce484222325ull);

}  // namespace dvn

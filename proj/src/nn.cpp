#include "dvn/nn.hpp"

#include <bit>
#include <cmath>
#include <limits>

#include "dvn/errors.hpp"

namespace dvn {

std::string_view to_string(Activation a) {
    switch (a) {
        case Activation::identity: return "identity";
        case Activation::tanh: return "tanh";
        case Activation::relu: return "relu";
        case Activation::sigmoid: return "sigmoid";
    }
    return "identity";
}

Activation activation_from_string(std::string_view s) {
    if (s == "identity") return Activation::identity;
    if (s == "tanh") return Activation::tanh;
    if (s == "relu") return Activation::relu;
    if (s == "sigmoid") return Activation::sigmoid;
    throw ArgumentError("unknown activation '" + std::string(s) + "'");
}

double softplus(double v) {
    // log(1 + e^v) without overflow
    return v > 0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
}

double sigmoid(double v) {
    if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
}

double log_sigmoid(double v) { return -softplus(-v); }

double log_sum_exp(std::span<const double> v) {
    double hi = -std::numeric_limits<double>::infinity();
    for (double x : v) hi = std::max(hi, x);
    if (!std::isfinite(hi)) return hi;
    double acc = 0.0;
    for (double x : v) acc += std::exp(x - hi);
    return hi + std::log(acc);
}

std::uint64_t hash_params(std::span<const double> values, std::uint64_t h) {
    for (double v : values) {
        auto bits = std::bit_cast<std::uint64_t>(v);
        for (int i = 0; i < 8; ++i) {
            h ^= (bits >> (8 * i)) & 0xffu;
            h *= 0x100000001b3ull;
        }
    }
    return h;
}

namespace {

void apply(Activation a, Eigen::MatrixXd& m) {
    switch (a) {
        case Activation::identity: break;
        case Activation::tanh: m = m.array().tanh(); break;
        case Activation::relu: m = m.array().max(0.0); break;
        case Activation::sigmoid: m = m.unaryExpr([](double v) { return sigmoid(v); }); break;
    }
}

// grad *= act'(pre), in place
void apply_derivative(Activation a, const Eigen::MatrixXd& pre, Eigen::MatrixXd& grad) {
    switch (a) {
        case Activation::identity: break;
        case Activation::tanh:
            grad.array() *= 1.0 - pre.array().tanh().square();
            break;
        case Activation::relu:
            grad.array() *= (pre.array() > 0.0).cast<double>();
            break;
        case Activation::sigmoid:
            grad.array() *= pre.unaryExpr([](double v) {
                const double s = sigmoid(v);
                return s * (1.0 - s);
            }).array();
            break;
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// Mlp

Mlp::Mlp(std::vector<int> sizes, Activation hidden, Activation output)
    : sizes_(std::move(sizes)), hidden_(hidden), output_(output) {
    if (sizes_.size() < 2) throw ArgumentError("Mlp needs at least an input and an output size");
    for (int s : sizes_)
        if (s <= 0) throw ArgumentError("Mlp layer sizes must be positive");
    std::size_t offset = 0;
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
        offsets_.push_back(offset);
        offset += static_cast<std::size_t>(sizes_[l + 1]) * (sizes_[l] + 1);
    }
    params_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(offset));
}

void Mlp::initialize(Rng& rng, double gain) {
    for (std::size_t l = 0; l < num_layers(); ++l) {
        const double limit = gain * std::sqrt(6.0 / (sizes_[l] + sizes_[l + 1]));
        std::uniform_real_distribution<double> u(-limit, limit);
        auto w = weight(l);
        for (Eigen::Index j = 0; j < w.cols(); ++j)
            for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = u(rng);
        bias(l).setZero();
    }
}

void Mlp::zero_last_layer() {
    weight(num_layers() - 1).setZero();
    bias(num_layers() - 1).setZero();
}

Eigen::Map<Eigen::MatrixXd> Mlp::weight(std::size_t l) {
    return {params_.data() + offsets_[l], sizes_[l + 1], sizes_[l]};
}
Eigen::Map<const Eigen::MatrixXd> Mlp::weight(std::size_t l) const {
    return {params_.data() + offsets_[l], sizes_[l + 1], sizes_[l]};
}
Eigen::Map<Eigen::VectorXd> Mlp::bias(std::size_t l) {
    return {params_.data() + offsets_[l] + static_cast<std::size_t>(sizes_[l + 1]) * sizes_[l],
            sizes_[l + 1]};
}
Eigen::Map<const Eigen::VectorXd> Mlp::bias(std::size_t l) const {
    return {params_.data() + offsets_[l] + static_cast<std::size_t>(sizes_[l + 1]) * sizes_[l],
            sizes_[l + 1]};
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& input) const {
    if (input.cols() != input_dim())
        throw ArgumentError("Mlp input has " + std::to_string(input.cols()) + " columns, expected " +
                            std::to_string(input_dim()));
    Eigen::MatrixXd h = input;
    for (std::size_t l = 0; l < num_layers(); ++l) {
        Eigen::MatrixXd pre = h * weight(l).transpose();
        pre.rowwise() += bias(l).transpose();
        apply(l + 1 == num_layers() ? output_ : hidden_, pre);
        h = std::move(pre);
    }
    return h;
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& input, Tape& tape) const {
    if (input.cols() != input_dim())
        throw ArgumentError("Mlp input has " + std::to_string(input.cols()) + " columns, expected " +
                            std::to_string(input_dim()));
    tape.inputs.assign(num_layers(), {});
    tape.pre.assign(num_layers(), {});
    Eigen::MatrixXd h = input;
    for (std::size_t l = 0; l < num_layers(); ++l) {
        tape.inputs[l] = h;
        Eigen::MatrixXd pre = h * weight(l).transpose();
        pre.rowwise() += bias(l).transpose();
        tape.pre[l] = pre;
        apply(l + 1 == num_layers() ? output_ : hidden_, pre);
        h = std::move(pre);
    }
    return h;
}

Eigen::MatrixXd Mlp::backward(const Tape& tape, const Eigen::MatrixXd& grad_output,
                              Eigen::VectorXd& grad) const {
    if (grad.size() != params_.size()) grad = Eigen::VectorXd::Zero(params_.size());
    Eigen::MatrixXd g = grad_output;
    for (std::size_t l = num_layers(); l-- > 0;) {
        apply_derivative(l + 1 == num_layers() ? output_ : hidden_, tape.pre[l], g);
        Eigen::Map<Eigen::MatrixXd> gw(grad.data() + offsets_[l], sizes_[l + 1], sizes_[l]);
        Eigen::Map<Eigen::VectorXd> gb(
            grad.data() + offsets_[l] + static_cast<std::size_t>(sizes_[l + 1]) * sizes_[l],
            sizes_[l + 1]);
        gw.noalias() += g.transpose() * tape.inputs[l];
        gb.noalias() += g.colwise().sum().transpose();
        g = g * weight(l);
    }
    return g;
}

// ---------------------------------------------------------------------------
// Conv2d

Conv2d::Conv2d(int height, int width, int channels, int filters, int kernel, Activation act)
    : height_(height), width_(width), channels_(channels), filters_(filters), kernel_(kernel),
      act_(act) {
    if (height <= 0 || width <= 0 || channels <= 0 || filters <= 0 || kernel <= 0 ||
        kernel > height || kernel > width)
        throw ArgumentError("invalid Conv2d geometry");
    params_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(bias_offset() + filters));
}

void Conv2d::initialize(Rng& rng, double gain) {
    const int fan_in = channels_ * kernel_ * kernel_;
    const int fan_out = filters_ * kernel_ * kernel_;
    const double limit = gain * std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> u(-limit, limit);
    for (std::size_t i = 0; i < bias_offset(); ++i) params_[static_cast<Eigen::Index>(i)] = u(rng);
    params_.tail(filters_).setZero();
}

Eigen::MatrixXd Conv2d::convolve(const Eigen::MatrixXd& input) const {
    if (input.cols() != input_dim()) throw ArgumentError("Conv2d input dimension mismatch");
    const int oh = out_height(), ow = out_width();
    Eigen::MatrixXd out(input.rows(), output_dim());
    for (Eigen::Index n = 0; n < input.rows(); ++n) {
        for (int f = 0; f < filters_; ++f) {
            const double b = params_[static_cast<Eigen::Index>(bias_offset()) + f];
            for (int r = 0; r < oh; ++r) {
                for (int c = 0; c < ow; ++c) {
                    double acc = b;
                    for (int ch = 0; ch < channels_; ++ch)
                        for (int i = 0; i < kernel_; ++i)
                            for (int j = 0; j < kernel_; ++j)
                                acc += w(f, ch, i, j) *
                                       input(n, (ch * height_ + r + i) * width_ + c + j);
                    out(n, (f * oh + r) * ow + c) = acc;
                }
            }
        }
    }
    return out;
}

Eigen::MatrixXd Conv2d::forward(const Eigen::MatrixXd& input) const {
    Eigen::MatrixXd out = convolve(input);
    apply(act_, out);
    return out;
}

Eigen::MatrixXd Conv2d::forward(const Eigen::MatrixXd& input, Tape& tape) const {
    tape.input = input;
    tape.pre = convolve(input);
    Eigen::MatrixXd out = tape.pre;
    apply(act_, out);
    return out;
}

Eigen::MatrixXd Conv2d::backward(const Tape& tape, const Eigen::MatrixXd& grad_output,
                                 Eigen::VectorXd& grad) const {
    if (grad.size() != params_.size()) grad = Eigen::VectorXd::Zero(params_.size());
    Eigen::MatrixXd g = grad_output;
    apply_derivative(act_, tape.pre, g);
    const int oh = out_height(), ow = out_width();
    Eigen::MatrixXd gin = Eigen::MatrixXd::Zero(tape.input.rows(), input_dim());
    auto gw = [&](int f, int c, int i, int j) -> double& {
        return grad[((f * channels_ + c) * kernel_ + i) * kernel_ + j];
    };
    for (Eigen::Index n = 0; n < g.rows(); ++n) {
        for (int f = 0; f < filters_; ++f) {
            for (int r = 0; r < oh; ++r) {
                for (int c = 0; c < ow; ++c) {
                    const double go = g(n, (f * oh + r) * ow + c);
                    if (go == 0.0) continue;
                    grad[static_cast<Eigen::Index>(bias_offset()) + f] += go;
                    for (int ch = 0; ch < channels_; ++ch)
                        for (int i = 0; i < kernel_; ++i)
                            for (int j = 0; j < kernel_; ++j) {
                                const Eigen::Index idx = (ch * height_ + r + i) * width_ + c + j;
                                gw(f, ch, i, j) += go * tape.input(n, idx);
                                gin(n, idx) += go * w(f, ch, i, j);
                            }
                }
            }
        }
    }
    return gin;
}

// ---------------------------------------------------------------------------
// RmsProp

RmsProp::RmsProp(std::size_t n, double step_size, double decay, double epsilon)
    : mean_square_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n))),
      step_(step_size), decay_(decay), eps_(epsilon) {}

void RmsProp::update(Eigen::VectorXd& params, const Eigen::VectorXd& grad, double sign) {
    if (grad.size() != params.size() || mean_square_.size() != params.size())
        throw ArgumentError("RmsProp size mismatch");
    ++t_;
    mean_square_ = decay_ * mean_square_ + (1.0 - decay_) * grad.cwiseAbs2();
    // bias-corrected running mean square, so the first steps are not inflated
    const double correction = 1.0 - std::pow(decay_, static_cast<double>(t_));
    params.array() += sign * step_ * grad.array() /
                      ((mean_square_.array() / correction).sqrt() + eps_);
}

void RmsProp::descend(Eigen::VectorXd& params, const Eigen::VectorXd& grad) {
    update(params, grad, -1.0);
}

void RmsProp::ascend(Eigen::VectorXd& params, const Eigen::VectorXd& grad) {
    update(params, grad, +1.0);
}

}  // namespace dvn

#pragma once

// Dense numeric kernel: linear layers, GeLU, dropout, MSE and AdamW.
//
// Everything is a free function over explicit state, templated on the scalar
// type. Training runs in double; float is used only for on-disk features.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "mmreg/error.hpp"
#include "mmreg/rng.hpp"

namespace mmreg {

using Index = Eigen::Index;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using MatrixD = Matrix<double>;
using RowVectorD = RowVector<double>;

template <typename Derived>
std::string shape_str(const Eigen::EigenBase<Derived>& m) {
    std::ostringstream os;
    os << '[' << m.rows() << "x" << m.cols() << ']';
    return os.str();
}

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
    return m.derived().array().isFinite().all();
}

/// Checked-mode guard: rejects NaN/Inf with the offending position.
template <typename Derived>
void require_finite(const Eigen::DenseBase<Derived>& m, std::string_view what) {
    for (Index r = 0; r < m.rows(); ++r)
        for (Index c = 0; c < m.cols(); ++c)
            if (!std::isfinite(static_cast<double>(m(r, c))))
                throw DataError(std::string(what) + ": non-finite value at (" + std::to_string(r) + ", " +
                                std::to_string(c) + ")");
}

// ---------------------------------------------------------------------------
// Linear layer
// ---------------------------------------------------------------------------

/// y = x * weight + bias, weight stored in x out. Bias is a 1 x out row, optional.
template <typename Scalar>
struct LinearParams {
    Matrix<Scalar> weight;
    std::optional<Matrix<Scalar>> bias;
    Matrix<Scalar> grad_weight;
    Matrix<Scalar> grad_bias;

    LinearParams() = default;
    LinearParams(Index in_dim, Index out_dim, bool with_bias)
        : weight(Matrix<Scalar>::Zero(in_dim, out_dim)),
          grad_weight(Matrix<Scalar>::Zero(in_dim, out_dim)) {
        if (with_bias) {
            bias = Matrix<Scalar>::Zero(1, out_dim);
            grad_bias = Matrix<Scalar>::Zero(1, out_dim);
        }
    }

    Index in_dim() const noexcept { return weight.rows(); }
    Index out_dim() const noexcept { return weight.cols(); }
    bool has_bias() const noexcept { return bias.has_value(); }

    void zero_grad() {
        grad_weight.setZero(weight.rows(), weight.cols());
        if (bias) grad_bias.setZero(1, bias->cols());
    }
};

/// Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)); biases zeroed.
template <typename Scalar>
void init_fan_uniform(LinearParams<Scalar>& p, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(p.in_dim() + p.out_dim()));
    for (Index r = 0; r < p.weight.rows(); ++r)
        for (Index c = 0; c < p.weight.cols(); ++c)
            p.weight(r, c) = static_cast<Scalar>(rng.uniform(-bound, bound));
    if (p.bias) p.bias->setZero();
    p.zero_grad();
}

template <typename Scalar>
Matrix<Scalar> linear_forward(const Matrix<Scalar>& x, const LinearParams<Scalar>& p) {
    if (x.cols() != p.in_dim())
        throw ShapeError("linear_forward: input " + shape_str(x) + " incompatible with weight " +
                         shape_str(p.weight));
    Matrix<Scalar> out(x.rows(), p.out_dim());
    out.noalias() = x * p.weight;
    if (p.bias) out.rowwise() += p.bias->row(0);
    return out;
}

/// Returns grad_x and accumulates weight/bias gradients into `p`.
/// With `want_grad_x` false only the parameter gradients are produced.
template <typename Scalar>
Matrix<Scalar> linear_backward(const Matrix<Scalar>& x, LinearParams<Scalar>& p, const Matrix<Scalar>& grad_out,
                               bool want_grad_x = true) {
    if (x.cols() != p.in_dim() || grad_out.cols() != p.out_dim() || grad_out.rows() != x.rows())
        throw ShapeError("linear_backward: input " + shape_str(x) + ", grad_out " + shape_str(grad_out) +
                         ", weight " + shape_str(p.weight));
    if (p.grad_weight.rows() != p.in_dim() || p.grad_weight.cols() != p.out_dim()) p.zero_grad();
    p.grad_weight.noalias() += x.transpose() * grad_out;
    if (p.bias) p.grad_bias += grad_out.colwise().sum();
    if (!want_grad_x) return {};
    Matrix<Scalar> grad_x(x.rows(), x.cols());
    grad_x.noalias() = grad_out * p.weight.transpose();
    return grad_x;
}

// ---------------------------------------------------------------------------
// GeLU (exact erf form)
// ---------------------------------------------------------------------------

template <typename Scalar>
Scalar gelu(Scalar x) {
    // x * Phi(x); erfc keeps the negative tail accurate.
    return x * Scalar(0.5) * std::erfc(-x * Scalar(std::numbers::sqrt2 / 2));
}

template <typename Scalar>
Scalar gelu_derivative(Scalar x) {
    const Scalar cdf = Scalar(0.5) * std::erfc(-x * Scalar(std::numbers::sqrt2 / 2));
    const Scalar pdf = std::exp(Scalar(-0.5) * x * x) * Scalar(std::numbers::inv_sqrtpi / std::numbers::sqrt2);
    return cdf + x * pdf;
}

template <typename Scalar>
Matrix<Scalar> gelu(const Matrix<Scalar>& x) {
    return x.unaryExpr([](Scalar v) { return gelu(v); });
}

template <typename Scalar>
Matrix<Scalar> gelu_backward(const Matrix<Scalar>& x, const Matrix<Scalar>& grad_out) {
    if (x.rows() != grad_out.rows() || x.cols() != grad_out.cols())
        throw ShapeError("gelu_backward: input " + shape_str(x) + " vs grad " + shape_str(grad_out));
    return grad_out.cwiseProduct(x.unaryExpr([](Scalar v) { return gelu_derivative(v); }));
}

// ---------------------------------------------------------------------------
// Inverted dropout
// ---------------------------------------------------------------------------

template <typename Scalar>
struct DropoutMask {
    Matrix<Scalar> keep;  // 0/1 per element
    Scalar scale = Scalar(1);
};

template <typename Scalar>
struct DropoutResult {
    Matrix<Scalar> output;
    DropoutMask<Scalar> mask;
};

inline void check_dropout_rate(double rate, std::string_view what = "dropout rate") {
    if (!(rate >= 0.0 && rate < 1.0))
        throw ConfigError(std::string(what) + " must lie in [0, 1), got " + std::to_string(rate));
}

/// Training: each element dropped with probability `rate`, survivors scaled by
/// 1/(1-rate). Inference or rate 0: identity with an all-ones mask, no draws.
template <typename Scalar>
DropoutResult<Scalar> dropout(const Matrix<Scalar>& x, double rate, Rng& rng, bool training) {
    check_dropout_rate(rate);
    DropoutResult<Scalar> r;
    if (!training || rate == 0.0) {
        r.output = x;
        r.mask.keep = Matrix<Scalar>::Ones(x.rows(), x.cols());
        r.mask.scale = Scalar(1);
        return r;
    }
    r.mask.keep.resize(x.rows(), x.cols());
    Scalar* k = r.mask.keep.data();
    for (Index i = 0; i < x.size(); ++i) k[i] = rng.uniform() < rate ? Scalar(0) : Scalar(1);
    r.mask.scale = Scalar(1.0 / (1.0 - rate));
    r.output = x.cwiseProduct(r.mask.keep) * r.mask.scale;
    return r;
}

template <typename Scalar>
Matrix<Scalar> dropout_backward(const Matrix<Scalar>& grad_out, const DropoutMask<Scalar>& mask) {
    if (grad_out.rows() != mask.keep.rows() || grad_out.cols() != mask.keep.cols())
        throw ShapeError("dropout_backward: grad " + shape_str(grad_out) + " vs mask " + shape_str(mask.keep));
    return grad_out.cwiseProduct(mask.keep) * mask.scale;
}

// ---------------------------------------------------------------------------
// MSE loss
// ---------------------------------------------------------------------------

template <typename Scalar>
struct LossResult {
    Scalar loss = Scalar(0);
    Matrix<Scalar> grad;
};

/// Mean of squared differences over all entries; grad = 2(pred - label) / count.
template <typename Scalar>
LossResult<Scalar> mse_loss(const Matrix<Scalar>& pred, const Matrix<Scalar>& label) {
    if (pred.rows() != label.rows() || pred.cols() != label.cols())
        throw ShapeError("mse_loss: prediction " + shape_str(pred) + " vs label " + shape_str(label));
    if (pred.size() == 0) throw ShapeError("mse_loss: empty input");
    const Scalar count = static_cast<Scalar>(pred.size());
    const Matrix<Scalar> diff = pred - label;
    LossResult<Scalar> r;
    Scalar sum = 0;
    for (Index i = 0; i < diff.rows(); ++i)
        for (Index j = 0; j < diff.cols(); ++j) sum += diff(i, j) * diff(i, j);
    r.loss = sum / count;
    r.grad = diff * (Scalar(2) / count);
    return r;
}

// ---------------------------------------------------------------------------
// AdamW
// ---------------------------------------------------------------------------

struct AdamWConfig {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

template <typename Scalar>
struct AdamWState {
    AdamWConfig config;
    std::uint64_t step_count = 0;
    std::vector<Matrix<Scalar>> first_moment;
    std::vector<Matrix<Scalar>> second_moment;
};

/// One parameter tensor and its gradient.
template <typename Scalar>
struct ParamSlot {
    Matrix<Scalar>* value;
    const Matrix<Scalar>* grad;
};

/// Decoupled weight decay:
///   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2
///   theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta)
/// Moments are created zeroed on the first call.
template <typename Scalar>
void adamw_step(std::span<const ParamSlot<Scalar>> params, AdamWState<Scalar>& state) {
    if (state.first_moment.empty()) {
        for (const auto& p : params) {
            state.first_moment.push_back(Matrix<Scalar>::Zero(p.value->rows(), p.value->cols()));
            state.second_moment.push_back(Matrix<Scalar>::Zero(p.value->rows(), p.value->cols()));
        }
    }
    if (state.first_moment.size() != params.size())
        throw ShapeError("adamw_step: state tracks " + std::to_string(state.first_moment.size()) +
                         " tensors, got " + std::to_string(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& p = params[i];
        if (p.grad->rows() != p.value->rows() || p.grad->cols() != p.value->cols() ||
            state.first_moment[i].rows() != p.value->rows() || state.first_moment[i].cols() != p.value->cols())
            throw ShapeError("adamw_step: tensor " + std::to_string(i) + " value " + shape_str(*p.value) +
                             ", grad " + shape_str(*p.grad) + ", moment " + shape_str(state.first_moment[i]));
    }

    const auto& cfg = state.config;
    ++state.step_count;
    const double t = static_cast<double>(state.step_count);
    const Scalar b1 = Scalar(cfg.beta1), b2 = Scalar(cfg.beta2);
    const Scalar bc1 = Scalar(1.0 - std::pow(cfg.beta1, t));
    const Scalar bc2 = Scalar(1.0 - std::pow(cfg.beta2, t));
    const Scalar lr = Scalar(cfg.learning_rate), eps = Scalar(cfg.eps), wd = Scalar(cfg.weight_decay);

    for (std::size_t i = 0; i < params.size(); ++i) {
        auto theta = params[i].value->array();
        const auto g = params[i].grad->array();
        auto m = state.first_moment[i].array();
        auto v = state.second_moment[i].array();
        m = b1 * m + (Scalar(1) - b1) * g;
        v = b2 * v + (Scalar(1) - b2) * g * g;
        theta -= lr * ((m / bc1) / ((v / bc2).sqrt() + eps) + wd * theta);
    }
}

}  // namespace mmreg

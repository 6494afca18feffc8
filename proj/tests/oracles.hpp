#pragma once

// Reference implementations written as plain loops, independent of the Eigen
// expressions used by the library.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "mmreg/model.hpp"

namespace oracle {

using mmreg::Index;
using mmreg::MatrixD;

inline MatrixD random_matrix(Index rows, Index cols, mmreg::Rng& rng, double scale = 1.0) {
    MatrixD m(rows, cols);
    for (Index i = 0; i < rows; ++i)
        for (Index j = 0; j < cols; ++j) m(i, j) = scale * rng.uniform(-1.0, 1.0);
    return m;
}

inline MatrixD matmul(const MatrixD& a, const MatrixD& b) {
    MatrixD c(a.rows(), b.cols());
    for (Index i = 0; i < a.rows(); ++i)
        for (Index j = 0; j < b.cols(); ++j) {
            double s = 0.0;
            for (Index k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
            c(i, j) = s;
        }
    return c;
}

inline MatrixD linear(const MatrixD& x, const mmreg::LinearParams<double>& p) {
    MatrixD y = matmul(x, p.weight);
    if (p.bias)
        for (Index i = 0; i < y.rows(); ++i)
            for (Index j = 0; j < y.cols(); ++j) y(i, j) += (*p.bias)(0, j);
    return y;
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

inline MatrixD gelu(const MatrixD& x) {
    MatrixD y(x.rows(), x.cols());
    for (Index i = 0; i < x.size(); ++i) y.data()[i] = gelu(x.data()[i]);
    return y;
}

/// Weighted basis sum: out_j = sum_i a_i * c_i[j], with a = GeLU(x K + b) and
/// c_i the i-th row of the shared Values matrix.
inline MatrixD weighted_basis_sum(const MatrixD& x, const mmreg::LinearParams<double>& keys, const MatrixD& values) {
    const MatrixD a = gelu(linear(x, keys));
    MatrixD out = MatrixD::Zero(x.rows(), values.cols());
    for (Index n = 0; n < x.rows(); ++n)
        for (Index i = 0; i < values.rows(); ++i)
            for (Index j = 0; j < values.cols(); ++j) out(n, j) += a(n, i) * values(i, j);
    return out;
}

/// Fusion with dropout off: [audio | video | text] blocks.
inline MatrixD fusion(const mmreg::MscmlpInput<double>& in, const mmreg::MscmlpParams<double>& p) {
    const MatrixD a = weighted_basis_sum(in.audio, p.keys_audio, p.values.weight);
    const MatrixD v = weighted_basis_sum(in.video, p.keys_video, p.values.weight);
    const MatrixD t = weighted_basis_sum(in.text, p.keys_text, p.values.weight);
    const Index d = a.cols();
    MatrixD out(a.rows(), 3 * d);
    for (Index n = 0; n < a.rows(); ++n)
        for (Index j = 0; j < d; ++j) {
            out(n, j) = a(n, j);
            out(n, d + j) = v(n, j);
            out(n, 2 * d + j) = t(n, j);
        }
    return out;
}

inline MatrixD pool_max(const MatrixD& seq) {
    MatrixD out(1, seq.cols());
    for (Index j = 0; j < seq.cols(); ++j) {
        double m = seq(0, j);
        for (Index i = 1; i < seq.rows(); ++i)
            if (seq(i, j) > m) m = seq(i, j);
        out(0, j) = m;
    }
    return out;
}

/// Sum in long double, one rounding at the end: the library's declared definition.
inline MatrixD pool_mean(const MatrixD& seq) {
    MatrixD out(1, seq.cols());
    for (Index j = 0; j < seq.cols(); ++j) {
        long double s = 0;
        for (Index i = 0; i < seq.rows(); ++i) s += seq(i, j);
        out(0, j) = static_cast<double>(s / seq.rows());
    }
    return out;
}

/// Flat mean over all R*H rows.
inline mmreg::ScoreVector flat_mean(const MatrixD& rows) {
    mmreg::ScoreVector y;
    for (Index d = 0; d < rows.cols(); ++d) {
        long double s = 0;
        for (Index r = 0; r < rows.rows(); ++r) s += rows(r, d);
        y(d) = static_cast<double>(s / rows.rows());
    }
    return y;
}

inline double mse(const MatrixD& pred, const MatrixD& label) {
    double s = 0.0;
    for (Index i = 0; i < pred.rows(); ++i)
        for (Index d = 0; d < pred.cols(); ++d) {
            const double e = pred(i, d) - label(i, d);
            s += e * e;
        }
    return s / static_cast<double>(pred.size());
}

/// Central differences of `loss` with respect to every entry of `x`.
inline MatrixD numeric_grad(MatrixD& x, const std::function<double()>& loss, double step = 1e-5) {
    MatrixD g(x.rows(), x.cols());
    for (Index i = 0; i < x.size(); ++i) {
        const double saved = x.data()[i];
        x.data()[i] = saved + step;
        const double up = loss();
        x.data()[i] = saved - step;
        const double down = loss();
        x.data()[i] = saved;
        g.data()[i] = (up - down) / (2.0 * step);
    }
    return g;
}

/// max |a - b| relative to max |b|. The floor keeps the test absolute (1e-10 at tol 1e-6) when
/// dropout leaves a gradient near zero and central-difference round-off dominates.
inline double rel_err(const MatrixD& analytic, const MatrixD& numeric) {
    const double scale = std::max(numeric.cwiseAbs().maxCoeff(), 1e-4);
    return (analytic - numeric).cwiseAbs().maxCoeff() / scale;
}

/// Scalar Adam with decoupled decay, stepped by hand.
struct AdamTrace {
    std::vector<double> theta;
};

inline AdamTrace adamw_scalar(double theta, const std::function<double(double)>& grad, int steps, double lr, double b1,
                              double b2, double eps, double wd) {
    AdamTrace t;
    double m = 0.0, v = 0.0;
    for (int k = 1; k <= steps; ++k) {
        const double g = grad(theta);
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        const double mhat = m / (1.0 - std::pow(b1, k));
        const double vhat = v / (1.0 - std::pow(b2, k));
        theta = theta - lr * (mhat / (std::sqrt(vhat) + eps) + wd * theta);
        t.theta.push_back(theta);
    }
    return t;
}

}  // namespace oracle

#pragma once

// Ensemble of independent FFN regression heads and the two-level mean:
// heads are averaged per response, responses are averaged per subject.

#include <array>
#include <string_view>
#include <vector>

#include "mmreg/numkernel.hpp"

namespace mmreg {

inline constexpr Index kScoreDims = 5;

/// Column order of every score vector, report and csv.
inline constexpr std::array<std::string_view, kScoreDims> kScoreNames = {
    "integrity", "collegiality", "social_versatility", "development_orientation", "overall_hireability"};

inline constexpr std::array<std::string_view, kScoreDims> kScoreShortNames = {"Integr", "Colleg", "Soc", "Dev",
                                                                             "Hirea"};

using ScoreVector = Eigen::Matrix<double, 1, kScoreDims>;

inline constexpr double kScoreMin = 1.0;
inline constexpr double kScoreMax = 5.0;

/// linear -> GeLU -> dropout -> linear, no output activation.
template <typename Scalar>
struct RegressionHead {
    LinearParams<Scalar> hidden;
    LinearParams<Scalar> output;

    RegressionHead() = default;
    RegressionHead(Index in_dim, Index hidden_dim) : hidden(in_dim, hidden_dim, true), output(hidden_dim, kScoreDims, true) {}

    void zero_grad() {
        hidden.zero_grad();
        output.zero_grad();
    }
};

template <typename Scalar>
struct EnsembleParams {
    std::vector<RegressionHead<Scalar>> heads;

    /// Every head draws its weights from its own split of `rng`. Output biases
    /// start at the middle of the score range.
    static EnsembleParams init(Index head_count, Index in_dim, Index hidden_dim, Rng& rng) {
        if (head_count < 1) throw ConfigError("head count must be >= 1, got " + std::to_string(head_count));
        EnsembleParams e;
        e.heads.reserve(static_cast<std::size_t>(head_count));
        for (Index i = 0; i < head_count; ++i) {
            Rng head_rng = rng.split();
            RegressionHead<Scalar> h(in_dim, hidden_dim);
            init_fan_uniform(h.hidden, head_rng);
            init_fan_uniform(h.output, head_rng);
            h.output.bias->setConstant(static_cast<Scalar>((kScoreMin + kScoreMax) / 2));
            e.heads.push_back(std::move(h));
        }
        return e;
    }

    Index head_count() const noexcept { return static_cast<Index>(heads.size()); }
    Index in_dim() const noexcept { return heads.empty() ? 0 : heads.front().hidden.in_dim(); }
    Index hidden_dim() const noexcept { return heads.empty() ? 0 : heads.front().hidden.out_dim(); }

    void zero_grad() {
        for (auto& h : heads) h.zero_grad();
    }
};

template <typename Scalar>
struct HeadCache {
    Matrix<Scalar> pre;     // hidden pre-activation
    Matrix<Scalar> hidden;  // after GeLU and dropout
    DropoutMask<Scalar> mask;
};

template <typename Scalar>
struct HeadForward {
    Matrix<Scalar> scores;  // N x 5
    HeadCache<Scalar> cache;
};

template <typename Scalar>
HeadForward<Scalar> head_forward(const Matrix<Scalar>& x, const RegressionHead<Scalar>& head, double dropout_rate,
                                 Rng& rng, bool training) {
    if (x.cols() != head.hidden.in_dim())
        throw ShapeError("head_forward: input " + shape_str(x) + " vs head input dim " +
                         std::to_string(head.hidden.in_dim()));
    HeadForward<Scalar> out;
    out.cache.pre = linear_forward(x, head.hidden);
    auto dropped = dropout(gelu(out.cache.pre), dropout_rate, rng, training);
    out.cache.hidden = std::move(dropped.output);
    out.cache.mask = std::move(dropped.mask);
    out.scores = linear_forward(out.cache.hidden, head.output);
    return out;
}

template <typename Scalar>
Matrix<Scalar> head_backward(const Matrix<Scalar>& x, const Matrix<Scalar>& grad_scores, const HeadCache<Scalar>& cache,
                             RegressionHead<Scalar>& head, bool want_grad_x = true) {
    const Matrix<Scalar> grad_hidden = linear_backward(cache.hidden, head.output, grad_scores);
    const Matrix<Scalar> grad_pre = gelu_backward(cache.pre, dropout_backward(grad_hidden, cache.mask));
    return linear_backward(x, head.hidden, grad_pre, want_grad_x);
}

/// Head outputs for R responses x H heads; row k*H + i holds head i on response k.
template <typename Scalar>
struct PredictionBlock {
    Index responses = 0;
    Index heads = 0;
    Matrix<Scalar> scores;  // (R*H) x 5

    PredictionBlock() = default;
    PredictionBlock(Index r, Index h) : responses(r), heads(h), scores(Matrix<Scalar>::Zero(r * h, kScoreDims)) {}

    auto at(Index response, Index head) { return scores.row(response * heads + head); }
    auto at(Index response, Index head) const { return scores.row(response * heads + head); }
};

/// y = (1/R)(1/H) sum_k sum_i block(k, i), heads summed inner, responses outer.
///
/// The outer sum and the division run in long double: duplicated responses
/// then sum exactly, so R copies of one response reproduce the single-response
/// result bit for bit.
template <typename Scalar>
RowVector<Scalar> aggregate(const PredictionBlock<Scalar>& block) {
    if (block.responses < 1 || block.heads < 1)
        throw DataError("aggregate: need at least one response and one head, got R=" +
                        std::to_string(block.responses) + ", H=" + std::to_string(block.heads));
    if (block.scores.rows() != block.responses * block.heads || block.scores.cols() != kScoreDims)
        throw ShapeError("aggregate: block " + shape_str(block.scores) + " does not match R=" +
                         std::to_string(block.responses) + ", H=" + std::to_string(block.heads));
    RowVector<Scalar> y(kScoreDims);
    const long double count = static_cast<long double>(block.responses) * static_cast<long double>(block.heads);
    for (Index d = 0; d < kScoreDims; ++d) {
        long double outer = 0;
        for (Index k = 0; k < block.responses; ++k) {
            Scalar inner = 0;
            for (Index i = 0; i < block.heads; ++i) inner += block.at(k, i)(d);
            outer += static_cast<long double>(inner);
        }
        y(d) = static_cast<Scalar>(outer / count);
    }
    return y;
}

inline ScoreVector clamp_scores(const ScoreVector& s) { return s.cwiseMax(kScoreMin).cwiseMin(kScoreMax); }

}  // namespace mmreg

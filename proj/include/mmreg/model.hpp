#pragma once

// Full network over subjects: pooled inputs -> fusion -> heads -> two-level
// mean. A batch holds `responses` consecutive rows per subject.

#include <vector>

#include "mmreg/ensemble.hpp"
#include "mmreg/mscmlp.hpp"

namespace mmreg {

struct ModelShape {
    ModalityDims dims;
    Index basis_count = 768;
    Index shared_dim = 768;
    Index head_count = 32;
    Index hidden_dim = 256;

    bool operator==(const ModelShape&) const = default;
};

struct DropoutConfig {
    double temporal = 0.3;
    double text = 0.1;
    double adapter = 0.2;
    double head = 0.2;

    FusionDropout fusion() const { return {temporal, text, adapter}; }
    void validate() const {
        check_dropout_rate(temporal, "dropout_temporal");
        check_dropout_rate(text, "dropout_text");
        check_dropout_rate(adapter, "dropout_adapter");
        check_dropout_rate(head, "dropout_head");
    }
    bool operator==(const DropoutConfig&) const = default;
};

template <typename Scalar>
struct FusionModel {
    MscmlpParams<Scalar> fusion;
    EnsembleParams<Scalar> ensemble;

    /// Fusion and each head draw from separate splits of Rng(seed).
    static FusionModel init(const ModelShape& shape, std::uint64_t seed) {
        if (shape.basis_count < 1 || shape.shared_dim < 1 || shape.hidden_dim < 1)
            throw ConfigError("basis_count, shared_dim and hidden_dim must be >= 1");
        Rng root(seed);
        Rng fusion_rng = root.split();
        Rng heads_rng = root.split();
        FusionModel m;
        m.fusion = MscmlpParams<Scalar>::init(shape.dims, shape.basis_count, shape.shared_dim, fusion_rng);
        m.ensemble = EnsembleParams<Scalar>::init(shape.head_count, 3 * shape.shared_dim, shape.hidden_dim, heads_rng);
        return m;
    }

    ModelShape shape() const {
        return {fusion.dims(), fusion.basis_count(), fusion.shared_dim(), ensemble.head_count(),
                ensemble.hidden_dim()};
    }

    void zero_grad() {
        fusion.zero_grad();
        ensemble.zero_grad();
    }

    /// Fixed traversal order shared by the optimizer and checkpoints.
    template <typename Fn>
    void for_each_linear(Fn&& fn) {
        fn("fusion.keys_audio", fusion.keys_audio);
        fn("fusion.keys_video", fusion.keys_video);
        fn("fusion.keys_text", fusion.keys_text);
        fn("fusion.values", fusion.values);
        for (std::size_t i = 0; i < ensemble.heads.size(); ++i) {
            const std::string prefix = "heads." + std::to_string(i);
            fn(prefix + ".hidden", ensemble.heads[i].hidden);
            fn(prefix + ".output", ensemble.heads[i].output);
        }
    }
    template <typename Fn>
    void for_each_linear(Fn&& fn) const {
        const_cast<FusionModel*>(this)->for_each_linear(
            [&](const std::string& name, const LinearParams<Scalar>& p) { fn(name, p); });
    }

    std::vector<ParamSlot<Scalar>> param_slots() {
        std::vector<ParamSlot<Scalar>> slots;
        for_each_linear([&](const std::string&, LinearParams<Scalar>& p) {
            slots.push_back({&p.weight, &p.grad_weight});
            if (p.bias) slots.push_back({&*p.bias, &p.grad_bias});
        });
        return slots;
    }

    bool operator==(const FusionModel& other) const {
        bool same = shape() == other.shape();
        if (!same) return false;
        std::vector<const LinearParams<Scalar>*> mine, theirs;
        for_each_linear([&](const std::string&, const LinearParams<Scalar>& p) { mine.push_back(&p); });
        other.for_each_linear([&](const std::string&, const LinearParams<Scalar>& p) { theirs.push_back(&p); });
        for (std::size_t i = 0; i < mine.size(); ++i) {
            if (mine[i]->weight != theirs[i]->weight) return false;
            if (mine[i]->has_bias() != theirs[i]->has_bias()) return false;
            if (mine[i]->bias && *mine[i]->bias != *theirs[i]->bias) return false;
        }
        return true;
    }
};

template <typename Scalar>
struct SubjectForward {
    Index responses = 0;
    Matrix<Scalar> subject_scores;  // n_subjects x 5
    Matrix<Scalar> fused;
    MscmlpCache<Scalar> fusion_cache;
    std::vector<HeadCache<Scalar>> head_caches;
};

/// `input` holds n_subjects * responses rows, subject-major.
/// Head h draws its dropout from its own split of `rng`.
template <typename Scalar>
SubjectForward<Scalar> forward_subjects(const MscmlpInput<Scalar>& input, Index responses,
                                        const FusionModel<Scalar>& model, const DropoutConfig& drop, Rng& rng,
                                        bool training) {
    if (responses < 1 || input.rows() % responses != 0)
        throw ShapeError("forward_subjects: " + std::to_string(input.rows()) + " rows not divisible into " +
                         std::to_string(responses) + " responses per subject");
    const Index n_subjects = input.rows() / responses;
    const Index h_count = model.ensemble.head_count();

    SubjectForward<Scalar> out;
    out.responses = responses;
    auto fused = mscmlp_forward(input, model.fusion, drop.fusion(), rng, training);
    out.fused = std::move(fused.fused);
    out.fusion_cache = std::move(fused.cache);

    std::vector<Matrix<Scalar>> head_scores;
    head_scores.reserve(static_cast<std::size_t>(h_count));
    out.head_caches.reserve(static_cast<std::size_t>(h_count));
    for (const auto& head : model.ensemble.heads) {
        Rng head_rng = rng.split();
        auto hf = head_forward(out.fused, head, drop.head, head_rng, training);
        head_scores.push_back(std::move(hf.scores));
        out.head_caches.push_back(std::move(hf.cache));
    }

    out.subject_scores.resize(n_subjects, kScoreDims);
    PredictionBlock<Scalar> block(responses, h_count);
    for (Index s = 0; s < n_subjects; ++s) {
        for (Index k = 0; k < responses; ++k)
            for (Index i = 0; i < h_count; ++i)
                block.at(k, i) = head_scores[static_cast<std::size_t>(i)].row(s * responses + k);
        out.subject_scores.row(s) = aggregate(block);
    }
    return out;
}

/// Accumulates parameter gradients for d(loss)/d(subject_scores).
template <typename Scalar>
void backward_subjects(const Matrix<Scalar>& grad_subject_scores, const SubjectForward<Scalar>& fwd,
                       FusionModel<Scalar>& model) {
    const Index responses = fwd.responses;
    const Index n_subjects = fwd.subject_scores.rows();
    if (grad_subject_scores.rows() != n_subjects || grad_subject_scores.cols() != kScoreDims)
        throw ShapeError("backward_subjects: grad " + shape_str(grad_subject_scores) + " vs scores " +
                         shape_str(fwd.subject_scores));
    const Index h_count = model.ensemble.head_count();
    const Scalar weight = Scalar(1) / static_cast<Scalar>(responses * h_count);

    // Every (response, head) output receives grad_subject / (R * H).
    Matrix<Scalar> grad_scores(n_subjects * responses, kScoreDims);
    for (Index s = 0; s < n_subjects; ++s)
        for (Index k = 0; k < responses; ++k) grad_scores.row(s * responses + k) = grad_subject_scores.row(s) * weight;

    Matrix<Scalar> grad_fused = Matrix<Scalar>::Zero(fwd.fused.rows(), fwd.fused.cols());
    for (Index i = 0; i < h_count; ++i) {
        const auto u = static_cast<std::size_t>(i);
        grad_fused += head_backward(fwd.fused, grad_scores, fwd.head_caches[u], model.ensemble.heads[u]);
    }
    mscmlp_backward(grad_fused, fwd.fusion_cache, model.fusion, /*input_grads=*/false);
}

}  // namespace mmreg

#pragma once

// Multimodal shared-compression MLP.
//
// Each modality m has its own "Keys" layer producing activation scores
//     a_m = GeLU(f_m * W_m + b_m)                      (N x C)
// and all modalities share one bias-free "Values" layer whose C rows are
// basis vectors c_i in the shared space:
//     f'_m = sum_i a_m[i] * c_i = a_m * Values         (N x shared_dim)
// The fused feature is concat(f'_audio, f'_video, f'_text).
//
// Dropout: `temporal` on the pooled audio/video inputs, `text` on the text
// input, `adapter` on the fused output.

#include <array>

#include "mmreg/numkernel.hpp"
#include "mmreg/pooling.hpp"

namespace mmreg {

struct FusionDropout {
    double temporal = 0.3;
    double text = 0.1;
    double adapter = 0.2;
};

template <typename Scalar>
struct MscmlpParams {
    LinearParams<Scalar> keys_audio;
    LinearParams<Scalar> keys_video;
    LinearParams<Scalar> keys_text;
    LinearParams<Scalar> values;  // C x shared_dim, no bias

    MscmlpParams() = default;
    MscmlpParams(const ModalityDims& dims, Index basis_count, Index shared_dim)
        : keys_audio(dims.audio, basis_count, true),
          keys_video(dims.video, basis_count, true),
          keys_text(dims.text, basis_count, true),
          values(basis_count, shared_dim, false) {}

    static MscmlpParams init(const ModalityDims& dims, Index basis_count, Index shared_dim, Rng& rng) {
        MscmlpParams p(dims, basis_count, shared_dim);
        init_fan_uniform(p.keys_audio, rng);
        init_fan_uniform(p.keys_video, rng);
        init_fan_uniform(p.keys_text, rng);
        init_fan_uniform(p.values, rng);
        return p;
    }

    Index basis_count() const noexcept { return values.in_dim(); }
    Index shared_dim() const noexcept { return values.out_dim(); }
    Index fused_dim() const noexcept { return 3 * shared_dim(); }
    ModalityDims dims() const { return {keys_video.in_dim(), keys_audio.in_dim(), keys_text.in_dim()}; }

    void validate() const {
        const Index c = basis_count();
        if (keys_audio.out_dim() != c || keys_video.out_dim() != c || keys_text.out_dim() != c)
            throw ShapeError("mscmlp: keys output dims (" + std::to_string(keys_audio.out_dim()) + ", " +
                             std::to_string(keys_video.out_dim()) + ", " + std::to_string(keys_text.out_dim()) +
                             ") must all equal basis count " + std::to_string(c));
        if (values.has_bias()) throw ShapeError("mscmlp: values layer must not carry a bias");
        if (!keys_audio.has_bias() || !keys_video.has_bias() || !keys_text.has_bias())
            throw ShapeError("mscmlp: keys layers require biases");
    }

    void zero_grad() {
        keys_audio.zero_grad();
        keys_video.zero_grad();
        keys_text.zero_grad();
        values.zero_grad();
    }
};

/// Pooled inputs, one row per response.
template <typename Scalar>
struct MscmlpInput {
    Matrix<Scalar> audio;
    Matrix<Scalar> video;
    Matrix<Scalar> text;

    Index rows() const noexcept { return audio.rows(); }
};

template <typename Scalar>
struct ModalityCache {
    DropoutMask<Scalar> input_mask;
    Matrix<Scalar> input;        // after input dropout
    Matrix<Scalar> pre;          // Keys pre-activation
    Matrix<Scalar> activation;   // a = GeLU(pre)
};

template <typename Scalar>
struct MscmlpCache {
    ModalityCache<Scalar> audio;
    ModalityCache<Scalar> video;
    ModalityCache<Scalar> text;
    DropoutMask<Scalar> adapter_mask;
};

template <typename Scalar>
struct MscmlpForward {
    Matrix<Scalar> fused;  // N x 3*shared_dim
    MscmlpCache<Scalar> cache;
};

namespace detail {

template <typename Scalar>
Matrix<Scalar> encode_modality(const Matrix<Scalar>& x, const LinearParams<Scalar>& keys,
                               const LinearParams<Scalar>& values, double rate, Rng& rng, bool training,
                               ModalityCache<Scalar>& cache) {
    auto dropped = dropout(x, rate, rng, training);
    cache.input_mask = std::move(dropped.mask);
    cache.input = std::move(dropped.output);
    cache.pre = linear_forward(cache.input, keys);
    cache.activation = gelu(cache.pre);
    return linear_forward(cache.activation, values);
}

}  // namespace detail

template <typename Scalar>
MscmlpForward<Scalar> mscmlp_forward(const MscmlpInput<Scalar>& in, const MscmlpParams<Scalar>& p,
                                     const FusionDropout& drop, Rng& rng, bool training) {
    const Index n = in.audio.rows();
    if (in.video.rows() != n || in.text.rows() != n)
        throw ShapeError("mscmlp_forward: row counts audio " + std::to_string(n) + ", video " +
                         std::to_string(in.video.rows()) + ", text " + std::to_string(in.text.rows()));
    if (in.audio.cols() != p.keys_audio.in_dim() || in.video.cols() != p.keys_video.in_dim() ||
        in.text.cols() != p.keys_text.in_dim())
        throw ShapeError("mscmlp_forward: inputs audio " + shape_str(in.audio) + ", video " + shape_str(in.video) +
                         ", text " + shape_str(in.text) + " vs keys in-dims (" +
                         std::to_string(p.keys_audio.in_dim()) + ", " + std::to_string(p.keys_video.in_dim()) + ", " +
                         std::to_string(p.keys_text.in_dim()) + ")");

    MscmlpForward<Scalar> out;
    const Index d = p.shared_dim();
    Matrix<Scalar> fused(n, 3 * d);
    fused.middleCols(0, d) =
        detail::encode_modality(in.audio, p.keys_audio, p.values, drop.temporal, rng, training, out.cache.audio);
    fused.middleCols(d, d) =
        detail::encode_modality(in.video, p.keys_video, p.values, drop.temporal, rng, training, out.cache.video);
    fused.middleCols(2 * d, d) =
        detail::encode_modality(in.text, p.keys_text, p.values, drop.text, rng, training, out.cache.text);

    auto adapted = dropout(fused, drop.adapter, rng, training);
    out.cache.adapter_mask = std::move(adapted.mask);
    out.fused = std::move(adapted.output);
    return out;
}

/// Gradients w.r.t. the pooled inputs (before input dropout).
template <typename Scalar>
struct MscmlpInputGrad {
    Matrix<Scalar> audio;
    Matrix<Scalar> video;
    Matrix<Scalar> text;
};

/// Accumulates into the gradients held by `p`. The Values gradient receives
/// one contribution per modality, summed in audio, video, text order.
/// With `input_grads` false the returned matrices are empty.
template <typename Scalar>
MscmlpInputGrad<Scalar> mscmlp_backward(const Matrix<Scalar>& grad_fused, const MscmlpCache<Scalar>& cache,
                                        MscmlpParams<Scalar>& p, bool input_grads = true) {
    const Index d = p.shared_dim();
    if (grad_fused.cols() != 3 * d || grad_fused.rows() != cache.audio.activation.rows())
        throw ShapeError("mscmlp_backward: grad " + shape_str(grad_fused) + " vs expected [" +
                         std::to_string(cache.audio.activation.rows()) + "x" + std::to_string(3 * d) + "]");
    if (cache.audio.activation.cols() != p.basis_count())
        throw ShapeError("mscmlp_backward: cache built with basis count " +
                         std::to_string(cache.audio.activation.cols()) + ", params have " +
                         std::to_string(p.basis_count()));

    const Matrix<Scalar> g = dropout_backward(grad_fused, cache.adapter_mask);
    auto back = [&](const ModalityCache<Scalar>& c, LinearParams<Scalar>& keys, Index offset) {
        const Matrix<Scalar> slice = g.middleCols(offset, d);
        const Matrix<Scalar> grad_act = linear_backward(c.activation, p.values, slice);
        const Matrix<Scalar> grad_pre = gelu_backward(c.pre, grad_act);
        Matrix<Scalar> grad_in = linear_backward(c.input, keys, grad_pre, input_grads);
        return input_grads ? dropout_backward(grad_in, c.input_mask) : grad_in;
    };
    MscmlpInputGrad<Scalar> out;
    out.audio = back(cache.audio, p.keys_audio, 0);
    out.video = back(cache.video, p.keys_video, d);
    out.text = back(cache.text, p.keys_text, 2 * d);
    return out;
}

}  // namespace mmreg

#pragma once

// Temporal pooling of per-frame (video) and per-patch (audio) feature
// sequences into one vector per modality per response. Text arrives as a
// single already-pooled vector and passes through.

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

#include "mmreg/numkernel.hpp"

namespace mmreg {

enum class Modality : std::uint8_t { video = 0, audio = 1, text = 2 };

inline constexpr std::array<Modality, 3> kModalities = {Modality::video, Modality::audio, Modality::text};

constexpr std::string_view to_string(Modality m) {
    switch (m) {
        case Modality::video: return "video";
        case Modality::audio: return "audio";
        case Modality::text: return "text";
    }
    return "?";
}

/// Declared feature widths per modality.
struct ModalityDims {
    Index video = 1152;
    Index audio = 768;
    Index text = 4096;

    Index operator[](Modality m) const {
        switch (m) {
            case Modality::video: return video;
            case Modality::audio: return audio;
            case Modality::text: return text;
        }
        return 0;
    }
    Index total() const { return video + audio + text; }
    bool operator==(const ModalityDims&) const = default;
};

template <typename Scalar>
struct FeatureSequence {
    Modality modality = Modality::video;
    Matrix<Scalar> data;  // length x dim

    Index length() const noexcept { return data.rows(); }
    Index dim() const noexcept { return data.cols(); }
};

enum class PoolMode : std::uint8_t { max, mean };

constexpr std::string_view to_string(PoolMode m) { return m == PoolMode::max ? "max" : "mean"; }

struct PoolingConfig {
    PoolMode video = PoolMode::max;
    PoolMode audio = PoolMode::max;
    bool operator==(const PoolingConfig&) const = default;
};

template <typename Scalar>
RowVector<Scalar> pool_max(const FeatureSequence<Scalar>& seq) {
    if (seq.length() < 1)
        throw DataError("pool_max: empty " + std::string(to_string(seq.modality)) + " sequence");
    return seq.data.colwise().maxCoeff();
}

/// Column means accumulated in long double, so a constant column returns
/// its value exactly for any realistic sequence length.
template <typename Scalar>
RowVector<Scalar> pool_mean(const FeatureSequence<Scalar>& seq) {
    if (seq.length() < 1)
        throw DataError("pool_mean: empty " + std::string(to_string(seq.modality)) + " sequence");
    RowVector<Scalar> out(seq.dim());
    const long double n = static_cast<long double>(seq.length());
    for (Index c = 0; c < seq.dim(); ++c) {
        long double sum = 0;
        for (Index r = 0; r < seq.length(); ++r) sum += static_cast<long double>(seq.data(r, c));
        out(c) = static_cast<Scalar>(sum / n);
    }
    return out;
}

template <typename Scalar>
RowVector<Scalar> pool(const FeatureSequence<Scalar>& seq, PoolMode mode) {
    return mode == PoolMode::max ? pool_max(seq) : pool_mean(seq);
}

template <typename Scalar>
struct PooledResponse {
    RowVector<Scalar> video;
    RowVector<Scalar> audio;
    RowVector<Scalar> text;
};

/// Pools one response's three modalities. `where` names the response in errors.
template <typename Scalar>
PooledResponse<Scalar> pool_response(const FeatureSequence<Scalar>& video, const FeatureSequence<Scalar>& audio,
                                     const FeatureSequence<Scalar>& text, const PoolingConfig& cfg,
                                     const ModalityDims& dims, std::string_view where = "response") {
    auto check = [&](const FeatureSequence<Scalar>& s, Modality m) {
        if (s.dim() != dims[m])
            throw DataError(std::string(where) + ": " + std::string(to_string(m)) + " features have dim " +
                            std::to_string(s.dim()) + ", manifest declares " + std::to_string(dims[m]));
        if (s.length() < 1)
            throw DataError(std::string(where) + ": empty " + std::string(to_string(m)) + " sequence");
    };
    check(video, Modality::video);
    check(audio, Modality::audio);
    check(text, Modality::text);
    if (text.length() != 1)
        throw DataError(std::string(where) + ": text must be a single vector, got length " +
                        std::to_string(text.length()));
    return {pool(video, cfg.video), pool(audio, cfg.audio), text.data.row(0)};
}

}  // namespace mmreg

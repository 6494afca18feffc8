#include "mmreg/predict.hpp"

#include <algorithm>

namespace mmreg {

bool PooledSet::fully_labeled() const {
    return std::all_of(labeled.begin(), labeled.end(), [](bool b) { return b; });
}

std::vector<ScoreVector> PooledSet::label_list() const {
    std::vector<ScoreVector> out;
    out.reserve(size());
    for (Index i = 0; i < labels.rows(); ++i) out.emplace_back(labels.row(i));
    return out;
}

PooledSet pool_subjects(std::span<const SubjectRecord> subjects, const PoolingConfig& cfg, const ModalityDims& dims) {
    const Index n = static_cast<Index>(subjects.size());
    const Index R = kResponsesPerSubject;
    PooledSet set;
    set.inputs.audio.resize(n * R, dims.audio);
    set.inputs.video.resize(n * R, dims.video);
    set.inputs.text.resize(n * R, dims.text);
    set.labels = MatrixD::Zero(n, kScoreDims);
    for (Index s = 0; s < n; ++s) {
        const auto& rec = subjects[static_cast<std::size_t>(s)];
        const auto pooled = pool_subject(rec, cfg, dims);
        set.inputs.audio.middleRows(s * R, R) = pooled.audio;
        set.inputs.video.middleRows(s * R, R) = pooled.video;
        set.inputs.text.middleRows(s * R, R) = pooled.text;
        set.ids.push_back(rec.subject_id);
        set.labeled.push_back(rec.label.has_value());
        if (rec.label) set.labels.row(s) = *rec.label;
    }
    return set;
}

PooledSet subset(const PooledSet& set, std::span<const std::size_t> indices) {
    const Index R = kResponsesPerSubject;
    const Index n = static_cast<Index>(indices.size());
    PooledSet out;
    out.inputs.audio.resize(n * R, set.inputs.audio.cols());
    out.inputs.video.resize(n * R, set.inputs.video.cols());
    out.inputs.text.resize(n * R, set.inputs.text.cols());
    out.labels.resize(n, kScoreDims);
    for (Index j = 0; j < n; ++j) {
        const auto i = indices[static_cast<std::size_t>(j)];
        if (i >= set.size()) throw DataError("subset: index " + std::to_string(i) + " out of range");
        const Index src = static_cast<Index>(i);
        out.inputs.audio.middleRows(j * R, R) = set.inputs.audio.middleRows(src * R, R);
        out.inputs.video.middleRows(j * R, R) = set.inputs.video.middleRows(src * R, R);
        out.inputs.text.middleRows(j * R, R) = set.inputs.text.middleRows(src * R, R);
        out.labels.row(j) = set.labels.row(src);
        out.ids.push_back(set.ids[i]);
        out.labeled.push_back(set.labeled[i]);
    }
    return out;
}

namespace {

MatrixD predict_raw(const FusionModel<double>& model, const PooledSet& set, std::size_t chunk) {
    const Index R = kResponsesPerSubject;
    const Index n = static_cast<Index>(set.size());
    const Index step = std::max<Index>(1, static_cast<Index>(chunk));
    MatrixD out(n, kScoreDims);
    Rng unused(0);  // inference draws nothing
    for (Index start = 0; start < n; start += step) {
        const Index count = std::min(step, n - start);
        MscmlpInput<double> batch{set.inputs.audio.middleRows(start * R, count * R),
                                  set.inputs.video.middleRows(start * R, count * R),
                                  set.inputs.text.middleRows(start * R, count * R)};
        const auto fwd = forward_subjects(batch, R, model, DropoutConfig{}, unused, /*training=*/false);
        out.middleRows(start, count) = fwd.subject_scores;
    }
    return out;
}

}  // namespace

std::vector<ScoreVector> predict(const FusionModel<double>& model, const PooledSet& set, bool clamp, std::size_t chunk) {
    const MatrixD raw = predict_raw(model, set, chunk);
    std::vector<ScoreVector> out;
    out.reserve(set.size());
    for (Index i = 0; i < raw.rows(); ++i) {
        ScoreVector s = raw.row(i);
        out.push_back(clamp ? clamp_scores(s) : s);
    }
    return out;
}

std::vector<ScoreVector> predict_ensemble(std::span<const FusionModel<double>* const> models, const PooledSet& set,
                                          bool clamp, std::size_t chunk) {
    if (models.empty()) throw ConfigError("predict_ensemble: no models");
    std::vector<MatrixD> raw;
    for (const auto* m : models) raw.push_back(predict_raw(*m, set, chunk));
    std::vector<ScoreVector> out;
    out.reserve(set.size());
    const long double count = static_cast<long double>(models.size());
    for (Index i = 0; i < static_cast<Index>(set.size()); ++i) {
        ScoreVector s;
        for (Index d = 0; d < kScoreDims; ++d) {
            long double sum = 0;
            for (const auto& r : raw) sum += static_cast<long double>(r(i, d));
            s(d) = static_cast<double>(sum / count);
        }
        out.push_back(clamp ? clamp_scores(s) : s);
    }
    return out;
}

ScoreVector predict_subject(const SubjectRecord& record, const FusionModel<double>& model, const PoolingConfig& pooling,
                            bool clamp) {
    const ModalityDims dims = model.fusion.dims();
    for (const auto& r : record.responses) {
        for (Modality m : kModalities) {
            const auto& seq = m == Modality::video ? r.video : m == Modality::audio ? r.audio : r.text;
            if (seq.length() < 1)
                throw DataError("subject " + record.subject_id + " q" + std::to_string(r.question_index) + ": missing " +
                                std::string(to_string(m)) + " features");
        }
    }
    const auto input = pool_subject(record, pooling, dims);
    Rng unused(0);
    const auto fwd = forward_subjects(input, kResponsesPerSubject, model, DropoutConfig{}, unused, false);
    ScoreVector s = fwd.subject_scores.row(0);
    return clamp ? clamp_scores(s) : s;
}

}  // namespace mmreg

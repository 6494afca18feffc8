#pragma once

#include <span>
#include <string>
#include <vector>

#include "mmreg/dataio.hpp"
#include "mmreg/model.hpp"

namespace mmreg {

/// Pooled inputs for a list of subjects: kResponsesPerSubject rows each, in
/// question-index order, plus labels where present.
struct PooledSet {
    std::vector<std::string> ids;
    MscmlpInput<double> inputs;
    MatrixD labels;  // n x 5, zero rows where unlabeled
    std::vector<bool> labeled;

    std::size_t size() const noexcept { return ids.size(); }
    bool fully_labeled() const;
    std::vector<ScoreVector> label_list() const;
};

PooledSet pool_subjects(std::span<const SubjectRecord> subjects, const PoolingConfig& cfg, const ModalityDims& dims);
PooledSet subset(const PooledSet& set, std::span<const std::size_t> indices);

/// Inference-mode predictions, computed `chunk` subjects at a time.
std::vector<ScoreVector> predict(const FusionModel<double>& model, const PooledSet& set, bool clamp,
                                 std::size_t chunk = 64);

/// Raw predictions of several models averaged per subject, then optionally clamped.
std::vector<ScoreVector> predict_ensemble(std::span<const FusionModel<double>* const> models, const PooledSet& set,
                                          bool clamp, std::size_t chunk = 64);

/// Full pipeline for one subject: pool, fuse, heads, two-level mean. No dropout.
ScoreVector predict_subject(const SubjectRecord& record, const FusionModel<double>& model, const PoolingConfig& pooling,
                            bool clamp);

}  // namespace mmreg

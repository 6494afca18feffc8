#pragma once

// Training: subject-level MSE on the two-level-mean prediction, AdamW,
// best-validation checkpointing with early stopping, and K-fold ensembles.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmreg/evaluator.hpp"
#include "mmreg/predict.hpp"

namespace mmreg {

struct TrainConfig {
    double lr = 1e-4;
    std::size_t batch_size = 64;
    int max_epochs = 100;
    int early_stop_patience = 10;  // <= 0 disables early stopping
    int k = 5;
    std::uint64_t seed = 0;
    Index head_count = 32;
    Index hidden_dim = 256;
    Index basis_count = 768;
    Index shared_dim = 768;
    PoolingConfig pooling;
    DropoutConfig dropout;
    bool clamp = true;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
    std::optional<double> target_train_mse;  // stop once train MSE drops below

    void validate() const;
    ModelShape shape(const ModalityDims& dims) const { return {dims, basis_count, shared_dim, head_count, hidden_dim}; }
    AdamWConfig adamw() const { return {lr, beta1, beta2, eps, weight_decay}; }

    nlohmann::json to_json() const;
    /// Overlays `doc` on `base`; unknown keys raise ConfigError.
    static TrainConfig from_json(const nlohmann::json& doc, const TrainConfig& base);
    static TrainConfig from_json(const nlohmann::json& doc) { return from_json(doc, TrainConfig{}); }

    bool operator==(const TrainConfig&) const = default;
};

/// Every key TrainConfig::to_json emits, in a fixed order.
std::vector<std::string> train_config_keys();

PoolMode parse_pool_mode(std::string_view s);

// --- checkpoints -----------------------------------------------------------

struct Checkpoint {
    TrainConfig config;
    FusionModel<double> model;
    Rng::State rng;
    std::uint32_t epoch = 0;
    double best_val_mse = 0.0;
};

inline constexpr std::uint16_t kCheckpointVersion = 1;

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes, const std::string& origin = "checkpoint",
                                  const std::optional<ModelShape>& expected = std::nullopt);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
/// With `expected`, a shape mismatch is rejected naming both values.
Checkpoint load_checkpoint(const std::filesystem::path& path, const std::optional<ModelShape>& expected = std::nullopt);

// --- training --------------------------------------------------------------

struct TrainResult {
    Checkpoint checkpoint;  // best validation epoch (last epoch without a validation set)
    RunReport report;       // scores of that checkpoint on the validation set
};

/// `stream` selects the shuffle/dropout streams; initialization depends only on cfg.seed.
TrainResult train(const PooledSet& train_set, const PooledSet& val_set, const ModalityDims& dims, const TrainConfig& cfg,
                  std::uint64_t stream = 0);

TrainResult train(const Dataset& data, const TrainConfig& cfg);

/// Seeded shuffle, then position i goes to fold i % k.
std::vector<std::vector<std::size_t>> make_folds(std::size_t n, int k, std::uint64_t seed);

struct KFoldResult {
    std::vector<Checkpoint> models;
    std::vector<std::vector<std::size_t>> folds;
    std::vector<ScoreVector> out_of_fold;  // each subject scored by the model that held it out
    RunReport report;                       // out-of-fold scores, one FoldRecord per fold

    std::vector<const FusionModel<double>*> model_ptrs() const;
};

KFoldResult train_kfold(const PooledSet& pool, const ModalityDims& dims, const TrainConfig& cfg);

// --- ablation harnesses ----------------------------------------------------

struct HeadSweepRow {
    Index heads = 0;
    double val_mse = 0.0;
    int best_epoch = 0;
};

std::vector<HeadSweepRow> sweep_heads(const Dataset& data, const TrainConfig& cfg, std::span<const Index> head_counts);
std::string render_head_sweep_csv(std::span<const HeadSweepRow> rows, Index default_heads = 32);

struct PoolingAblationRow {
    PoolingConfig pooling;
    double val_mse = 0.0;
    std::optional<double> test_mse;
};

/// Trains once per {mean, max} x {video, audio} combination.
std::vector<PoolingAblationRow> ablate_pooling(const Dataset& data, const TrainConfig& cfg);
std::string render_pooling_table(std::span<const PoolingAblationRow> rows);
std::string render_pooling_csv(std::span<const PoolingAblationRow> rows);

}  // namespace mmreg

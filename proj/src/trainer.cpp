#include "mmreg/trainer.hpp"

#include <algorithm>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>

namespace mmreg {

namespace {

constexpr std::uint64_t kStreamSalt = 0x3c6ef372fe94f82bULL;
constexpr std::uint64_t kFoldSalt = 0xa54ff53a5f1d36f1ULL;

// Stored snapshots carry no gradient buffers; linear_backward reallocates them on demand.
void release_grads(FusionModel<double>& model) {
    model.for_each_linear([](const std::string&, LinearParams<double>& p) {
        p.grad_weight.resize(0, 0);
        p.grad_bias.resize(0, 0);
    });
}

FusionModel<double> snapshot(const FusionModel<double>& model) {
    FusionModel<double> copy = model;
    release_grads(copy);
    return copy;
}

double mean_mse(const FusionModel<double>& model, const PooledSet& set, bool clamp) {
    const auto preds = predict(model, set, clamp);
    const auto labels = set.label_list();
    return evaluate(preds, labels).mean_mse;
}

void require_labels(const PooledSet& set, const char* what) {
    if (!set.fully_labeled()) throw DataError(std::string(what) + " contains unlabeled subjects");
}

std::string fmt_g(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

TrainResult train(const PooledSet& train_set, const PooledSet& val_set, const ModalityDims& dims, const TrainConfig& cfg,
                  std::uint64_t stream) {
    cfg.validate();
    if (train_set.size() == 0) throw DataError("train split is empty");
    require_labels(train_set, "train split");
    const bool has_val = val_set.size() > 0;
    if (has_val) require_labels(val_set, "validation split");

    const Index R = kResponsesPerSubject;
    FusionModel<double> model = FusionModel<double>::init(cfg.shape(dims), cfg.seed);
    Rng stream_rng(Rng::mix(cfg.seed ^ kStreamSalt) + stream);
    Rng shuffle_rng = stream_rng.split();
    Rng drop_rng = stream_rng.split();
    AdamWState<double> opt;
    opt.config = cfg.adamw();
    model.zero_grad();
    const auto slots = model.param_slots();

    RunReport report;
    auto record = [&](int epoch) {
        EpochRecord rec{epoch, mean_mse(model, train_set, cfg.clamp), std::nullopt};
        if (has_val) rec.val_mse = mean_mse(model, val_set, cfg.clamp);
        if (!std::isfinite(rec.train_mse) || (rec.val_mse && !std::isfinite(*rec.val_mse)))
            throw NumericError("non-finite evaluation MSE at epoch " + std::to_string(epoch));
        report.history.push_back(rec);
        return rec;
    };

    const EpochRecord first = record(0);
    Checkpoint best{cfg, snapshot(model), drop_rng.state(), 0, has_val ? *first.val_mse : first.train_mse};
    int since_best = 0;
    double last_finite_loss = std::numeric_limits<double>::quiet_NaN();

    std::vector<std::size_t> order(train_set.size());
    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        shuffle(order.begin(), order.end(), shuffle_rng);

        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t count = std::min(cfg.batch_size, order.size() - start);
            const PooledSet batch = subset(train_set, std::span(order).subspan(start, count));
            model.zero_grad();
            const auto fwd = forward_subjects(batch.inputs, R, model, cfg.dropout, drop_rng, /*training=*/true);
            const auto loss = mse_loss(fwd.subject_scores, batch.labels);
            if (!std::isfinite(loss.loss))
                throw NumericError("training diverged at epoch " + std::to_string(epoch) +
                                   ", last finite loss " + fmt_g(last_finite_loss));
            last_finite_loss = loss.loss;
            backward_subjects(loss.grad, fwd, model);
            adamw_step<double>(slots, opt);
        }

        const EpochRecord rec = record(epoch);
        if (has_val) {
            if (*rec.val_mse < best.best_val_mse) {
                best = {cfg, snapshot(model), drop_rng.state(), static_cast<std::uint32_t>(epoch), *rec.val_mse};
                since_best = 0;
            } else {
                ++since_best;
            }
        } else {
            best = {cfg, snapshot(model), drop_rng.state(), static_cast<std::uint32_t>(epoch), rec.train_mse};
        }
        if (cfg.target_train_mse && rec.train_mse < *cfg.target_train_mse) break;
        if (has_val && cfg.early_stop_patience > 0 && since_best >= cfg.early_stop_patience) break;
    }

    const PooledSet& scored = has_val ? val_set : train_set;
    RunReport final_report = evaluate(predict(best.model, scored, cfg.clamp), scored.label_list(), has_val ? "val" : "train");
    final_report.config = cfg.to_json();
    final_report.seed = cfg.seed;
    final_report.best_epoch = static_cast<int>(best.epoch);
    final_report.history = std::move(report.history);
    return {std::move(best), std::move(final_report)};
}

TrainResult train(const Dataset& data, const TrainConfig& cfg) {
    const PooledSet train_set = pool_subjects(data.train, cfg.pooling, data.dims);
    const PooledSet val_set = pool_subjects(data.val, cfg.pooling, data.dims);
    return train(train_set, val_set, data.dims, cfg);
}

std::vector<std::vector<std::size_t>> make_folds(std::size_t n, int k, std::uint64_t seed) {
    if (k < 2) throw ConfigError("k must be >= 2, got " + std::to_string(k));
    if (static_cast<std::size_t>(k) > n)
        throw ConfigError("k=" + std::to_string(k) + " exceeds the pool size of " + std::to_string(n) + " subjects");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed ^ kFoldSalt);
    shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<std::size_t>> folds(static_cast<std::size_t>(k));
    for (std::size_t i = 0; i < n; ++i) folds[i % folds.size()].push_back(order[i]);
    for (auto& f : folds) std::sort(f.begin(), f.end());
    return folds;
}

std::vector<const FusionModel<double>*> KFoldResult::model_ptrs() const {
    std::vector<const FusionModel<double>*> out;
    for (const auto& c : models) out.push_back(&c.model);
    return out;
}

KFoldResult train_kfold(const PooledSet& pool, const ModalityDims& dims, const TrainConfig& cfg) {
    cfg.validate();
    require_labels(pool, "k-fold pool");
    KFoldResult result;
    result.folds = make_folds(pool.size(), cfg.k, cfg.seed);
    result.out_of_fold.resize(pool.size());

    for (std::size_t f = 0; f < result.folds.size(); ++f) {
        const auto& held = result.folds[f];
        std::vector<bool> is_held(pool.size(), false);
        for (auto i : held) is_held[i] = true;
        std::vector<std::size_t> rest;
        for (std::size_t i = 0; i < pool.size(); ++i)
            if (!is_held[i]) rest.push_back(i);

        const PooledSet val_set = subset(pool, held);
        auto fold = train(subset(pool, rest), val_set, dims, cfg, f + 1);
        const auto preds = predict(fold.checkpoint.model, val_set, cfg.clamp);
        for (std::size_t j = 0; j < held.size(); ++j) result.out_of_fold[held[j]] = preds[j];

        FoldRecord rec;
        rec.fold = static_cast<int>(f);
        rec.subject_ids = val_set.ids;
        rec.val_mse = fold.report.mean_mse;
        rec.best_epoch = fold.report.best_epoch;
        result.report.folds.push_back(std::move(rec));
        result.models.push_back(std::move(fold.checkpoint));
    }

    auto folds = std::move(result.report.folds);
    result.report = evaluate(result.out_of_fold, pool.label_list(), "oof");
    result.report.folds = std::move(folds);
    result.report.config = cfg.to_json();
    result.report.seed = cfg.seed;
    return result;
}

std::vector<HeadSweepRow> sweep_heads(const Dataset& data, const TrainConfig& cfg, std::span<const Index> head_counts) {
    if (data.val.empty()) throw DataError("sweep-heads needs a labeled validation split");
    const PooledSet train_set = pool_subjects(data.train, cfg.pooling, data.dims);
    const PooledSet val_set = pool_subjects(data.val, cfg.pooling, data.dims);
    std::vector<HeadSweepRow> rows;
    for (Index h : head_counts) {
        TrainConfig c = cfg;
        c.head_count = h;
        const auto r = train(train_set, val_set, data.dims, c);
        rows.push_back({h, r.report.mean_mse, r.report.best_epoch});
    }
    return rows;
}

std::string render_head_sweep_csv(std::span<const HeadSweepRow> rows, Index default_heads) {
    std::ostringstream out;
    out << "heads,val_mse,best_epoch,default\n";
    for (const auto& r : rows)
        out << r.heads << ',' << fmt_g(r.val_mse) << ',' << r.best_epoch << ',' << (r.heads == default_heads ? 1 : 0)
            << '\n';
    return out.str();
}

std::vector<PoolingAblationRow> ablate_pooling(const Dataset& data, const TrainConfig& cfg) {
    if (data.val.empty()) throw DataError("pooling ablation needs a labeled validation split");
    std::vector<PoolingAblationRow> rows;
    for (PoolMode video : {PoolMode::mean, PoolMode::max}) {
        for (PoolMode audio : {PoolMode::mean, PoolMode::max}) {
            TrainConfig c = cfg;
            c.pooling = {video, audio};
            const auto r = train(data, c);
            PoolingAblationRow row{c.pooling, r.report.mean_mse, std::nullopt};
            const PooledSet test_set = pool_subjects(data.test, c.pooling, data.dims);
            if (test_set.size() > 0 && test_set.fully_labeled())
                row.test_mse = evaluate(predict(r.checkpoint.model, test_set, c.clamp), test_set.label_list(), "test")
                                   .mean_mse;
            rows.push_back(row);
        }
    }
    return rows;
}

namespace {

std::string pool_label(PoolMode m) { return m == PoolMode::max ? "Max pooling" : "Mean pooling"; }

}  // namespace

std::string render_pooling_table(std::span<const PoolingAblationRow> rows) {
    std::ostringstream out;
    char line[160];
    std::snprintf(line, sizeof line, "%-14s %-14s %-14s %10s %10s\n", "Video", "Audio", "Text", "Val MSE", "Test MSE");
    out << line;
    for (const auto& r : rows) {
        const std::string test = r.test_mse ? [&] {
            char b[32];
            std::snprintf(b, sizeof b, "%.6f", *r.test_mse);
            return std::string(b);
        }()
                                            : std::string("-");
        std::snprintf(line, sizeof line, "%-14s %-14s %-14s %10.6f %10s\n", pool_label(r.pooling.video).c_str(),
                      pool_label(r.pooling.audio).c_str(), "single vector", r.val_mse, test.c_str());
        out << line;
    }
    return out.str();
}

std::string render_pooling_csv(std::span<const PoolingAblationRow> rows) {
    std::ostringstream out;
    out << "video_pool,audio_pool,text,val_mse,test_mse\n";
    for (const auto& r : rows)
        out << to_string(r.pooling.video) << ',' << to_string(r.pooling.audio) << ",single," << fmt_g(r.val_mse) << ','
            << (r.test_mse ? fmt_g(*r.test_mse) : std::string()) << '\n';
    return out.str();
}

}  // namespace mmreg

#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <iterator>
#include <set>

#include "../temp_dir.hpp"
#include "mmreg/trainer.hpp"

using namespace mmreg;
namespace fs = std::filesystem;

namespace {

TrainConfig tiny_config() {
    TrainConfig c;
    c.basis_count = 8;
    c.shared_dim = 6;
    c.head_count = 4;
    c.hidden_dim = 8;
    c.lr = 1e-3;
    c.batch_size = 8;
    c.max_epochs = 6;
    c.seed = 3;
    return c;
}

struct Fixture {
    test::TempDir dir;
    Dataset data;
    PooledSet train_set, val_set;

    explicit Fixture(std::size_t n = 24, double noise = 0.3) {
        SynthSpec s;
        s.n_subjects = n;
        s.seed = 17;
        s.noise = noise;
        s.dims = {12, 8, 16};
        data = load_dataset(gen_synthetic(s, dir.path()).manifest_path);
        train_set = pool_subjects(data.train, PoolingConfig{}, data.dims);
        val_set = pool_subjects(data.val, PoolingConfig{}, data.dims);
    }
};

std::vector<std::uint8_t> read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("TrainConfig defaults") {
    const TrainConfig c;
    CHECK(c.lr == 1e-4);
    CHECK(c.batch_size == 64);
    CHECK(c.head_count == 32);
    CHECK(c.hidden_dim == 256);
    CHECK(c.basis_count == 768);
    CHECK(c.k == 5);
    CHECK(c.dropout.temporal == 0.3);
    CHECK(c.dropout.text == 0.1);
    CHECK(c.dropout.adapter == 0.2);
    CHECK(c.dropout.head == 0.2);
    CHECK(c.pooling.video == PoolMode::max);
    CHECK(c.pooling.audio == PoolMode::max);
}

TEST_CASE("TrainConfig JSON round trip, overlay and rejection of unknown keys") {
    TrainConfig c = tiny_config();
    c.pooling.video = PoolMode::mean;
    c.target_train_mse = 0.01;
    CHECK(TrainConfig::from_json(c.to_json()) == c);

    const auto overlay = TrainConfig::from_json({{"lr", 0.5}}, c);
    CHECK(overlay.lr == 0.5);
    CHECK(overlay.head_count == c.head_count);

    CHECK_THROWS_WITH_AS(TrainConfig::from_json({{"learning_rate", 0.1}}), doctest::Contains("learning_rate"),
                         ConfigError);
    CHECK_THROWS_AS(TrainConfig::from_json({{"dropout_head", 1.0}}), ConfigError);
    CHECK_THROWS_AS(TrainConfig::from_json({{"batch_size", 0}}), ConfigError);
    CHECK_THROWS_AS(TrainConfig::from_json({{"k", 1}}), ConfigError);
    CHECK_THROWS_AS(TrainConfig::from_json({{"video_pool", "median"}}), ConfigError);
    CHECK_THROWS_AS(TrainConfig::from_json({{"lr", "fast"}}), ConfigError);
}

TEST_CASE("training is bit-reproducible for a fixed seed") {
    Fixture f;
    const auto a = train(f.train_set, f.val_set, f.data.dims, tiny_config());
    const auto b = train(f.train_set, f.val_set, f.data.dims, tiny_config());
    CHECK(a.report == b.report);
    CHECK(a.checkpoint.model == b.checkpoint.model);
    CHECK(serialize_checkpoint(a.checkpoint) == serialize_checkpoint(b.checkpoint));

    TrainConfig off = tiny_config();
    off.dropout = {0.0, 0.0, 0.0, 0.0};
    CHECK(train(f.train_set, f.val_set, f.data.dims, off).report ==
          train(f.train_set, f.val_set, f.data.dims, off).report);

    TrainConfig other = tiny_config();
    other.seed = 4;
    CHECK_FALSE(train(f.train_set, f.val_set, f.data.dims, other).report == a.report);
}

TEST_CASE("report logs every epoch and scores the best-validation checkpoint") {
    Fixture f;
    TrainConfig c = tiny_config();
    c.early_stop_patience = 0;
    const auto r = train(f.train_set, f.val_set, f.data.dims, c);
    REQUIRE(r.report.history.size() == static_cast<std::size_t>(c.max_epochs) + 1);
    double best = r.report.history.front().val_mse.value();
    int best_epoch = 0;
    for (const auto& e : r.report.history)
        if (*e.val_mse < best) {
            best = *e.val_mse;
            best_epoch = e.epoch;
        }
    CHECK(r.report.best_epoch == best_epoch);
    CHECK(r.report.mean_mse == best);
    CHECK(r.checkpoint.best_val_mse == best);
    const auto again = evaluate(predict(r.checkpoint.model, f.val_set, c.clamp), f.val_set.label_list());
    CHECK(again.mean_mse == r.report.mean_mse);
    CHECK(r.report.config == c.to_json());
}

TEST_CASE("lr 0 leaves the parameters at their initial values") {
    Fixture f;
    TrainConfig c = tiny_config();
    c.lr = 0.0;
    c.early_stop_patience = 0;
    const auto r = train(f.train_set, f.val_set, f.data.dims, c);
    CHECK(r.checkpoint.model == FusionModel<double>::init(c.shape(f.data.dims), c.seed));
    for (const auto& e : r.report.history) CHECK(e.val_mse == r.report.history.front().val_mse);
}

TEST_CASE("early stopping honours patience") {
    Fixture f;
    TrainConfig c = tiny_config();
    c.lr = 0.0;  // val never improves after epoch 0
    c.max_epochs = 50;
    c.early_stop_patience = 3;
    const auto r = train(f.train_set, f.val_set, f.data.dims, c);
    CHECK(r.report.history.back().epoch == 3);
    CHECK(r.report.best_epoch == 0);
}

TEST_CASE("training on a noiseless set drives train MSE down") {
    Fixture f(24, 0.0);
    TrainConfig c = tiny_config();
    c.max_epochs = 60;
    c.early_stop_patience = 0;
    c.dropout = {0.0, 0.0, 0.0, 0.0};
    const auto r = train(f.train_set, f.val_set, f.data.dims, c);
    CHECK(r.report.history.back().train_mse < 0.25 * r.report.history.front().train_mse);
}

TEST_CASE("divergence aborts with the epoch and last finite loss") {
    Fixture f;
    TrainConfig c = tiny_config();
    c.lr = 1e250;
    c.batch_size = 1;
    c.weight_decay = 0.0;
    try {
        train(f.train_set, f.val_set, f.data.dims, c);
        FAIL("expected divergence");
    } catch (const NumericError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("epoch 1") != std::string::npos);
        CHECK(msg.find("last finite loss") != std::string::npos);
    }
}

TEST_CASE("training needs labeled, non-empty data") {
    Fixture f;
    CHECK_THROWS_AS(train(PooledSet{}, f.val_set, f.data.dims, tiny_config()), DataError);
    const PooledSet test_set = pool_subjects(f.data.test, PoolingConfig{}, f.data.dims);
    PooledSet unlabeled = test_set;
    unlabeled.labeled[0] = false;
    CHECK_THROWS_AS(train(unlabeled, f.val_set, f.data.dims, tiny_config()), DataError);
}

TEST_CASE("checkpoint: save, load, save is byte-identical and predictions are bit-exact") {
    Fixture f;
    const auto r = train(f.train_set, f.val_set, f.data.dims, tiny_config());
    test::TempDir dir;
    save_checkpoint(r.checkpoint, dir / "a.mmck");
    const auto loaded = load_checkpoint(dir / "a.mmck");
    save_checkpoint(loaded, dir / "b.mmck");
    CHECK(read_bytes(dir / "a.mmck") == read_bytes(dir / "b.mmck"));
    CHECK(loaded.config == r.checkpoint.config);
    CHECK(loaded.rng == r.checkpoint.rng);
    CHECK(loaded.epoch == r.checkpoint.epoch);
    CHECK(loaded.best_val_mse == r.checkpoint.best_val_mse);

    const PooledSet test_set = pool_subjects(f.data.test, PoolingConfig{}, f.data.dims);
    const auto before = predict(r.checkpoint.model, test_set, false);
    const auto after = predict(loaded.model, test_set, false);
    REQUIRE(before.size() == after.size());
    for (std::size_t i = 0; i < before.size(); ++i) CHECK(before[i] == after[i]);
}

TEST_CASE("checkpoint: corruption and shape mismatches give structured errors") {
    Fixture f;
    TrainConfig c = tiny_config();
    c.max_epochs = 0;
    const auto r = train(f.train_set, f.val_set, f.data.dims, c);
    const auto bytes = serialize_checkpoint(r.checkpoint);

    SUBCASE("truncated tensor") {
        auto cut = bytes;
        cut.resize(cut.size() - 12);
        CHECK_THROWS_WITH_AS(deserialize_checkpoint(cut), doctest::Contains("truncated"), ParseError);
    }
    SUBCASE("tensor length field corrupted") {
        // the last tensor is heads.3.output.bias, 1 x 5: bump its column count
        auto bad = bytes;
        const std::size_t cols_at = bad.size() - 5 * 8 - 4;
        bad[cols_at] = 6;
        CHECK_THROWS_WITH_AS(deserialize_checkpoint(bad), doctest::Contains("heads.3.output.bias"), ParseError);
    }
    SUBCASE("bad magic and version") {
        auto bad = bytes;
        bad[0] = 'X';
        CHECK_THROWS_AS(deserialize_checkpoint(bad), ParseError);
        bad = bytes;
        bad[4] = 2;
        CHECK_THROWS_WITH_AS(deserialize_checkpoint(bad), doctest::Contains("version"), ParseError);
    }
    SUBCASE("trailing bytes") {
        auto extra = bytes;
        extra.push_back(0);
        CHECK_THROWS_AS(deserialize_checkpoint(extra), ParseError);
    }
    SUBCASE("different basis count is rejected naming both values") {
        ModelShape expected = r.checkpoint.model.shape();
        expected.basis_count = 16;
        try {
            deserialize_checkpoint(bytes, "ckpt", expected);
            FAIL("expected a shape mismatch");
        } catch (const DataError& e) {
            const std::string msg = e.what();
            CHECK(msg.find("basis_count=8") != std::string::npos);
            CHECK(msg.find("basis_count=16") != std::string::npos);
        }
    }
}

TEST_CASE("k-fold partition: deterministic, disjoint, exhaustive, balanced") {
    for (std::size_t n : {5u, 13u, 64u}) {
        for (int k : {2, 3, 5}) {
            if (static_cast<std::size_t>(k) > n) continue;
            const auto folds = make_folds(n, k, 9);
            CHECK(folds == make_folds(n, k, 9));
            std::set<std::size_t> seen;
            std::size_t lo = n, hi = 0;
            for (const auto& f : folds) {
                lo = std::min(lo, f.size());
                hi = std::max(hi, f.size());
                for (auto i : f) CHECK(seen.insert(i).second);
            }
            CHECK(seen.size() == n);
            CHECK(hi - lo <= 1);
        }
    }
    CHECK_FALSE(make_folds(30, 5, 1) == make_folds(30, 5, 2));
    CHECK_THROWS_AS(make_folds(3, 4, 0), ConfigError);
    CHECK_THROWS_AS(make_folds(10, 1, 0), ConfigError);
}

TEST_CASE("k-fold with zero epochs from one init equals the single model") {
    Fixture f;
    TrainConfig c = tiny_config();
    c.max_epochs = 0;
    c.k = 2;
    const auto kf = train_kfold(f.train_set, f.data.dims, c);
    REQUIRE(kf.models.size() == 2);
    const auto single = FusionModel<double>::init(c.shape(f.data.dims), c.seed);
    const auto ens = predict_ensemble(kf.model_ptrs(), f.val_set, false);
    const auto one = predict(single, f.val_set, false);
    for (std::size_t i = 0; i < ens.size(); ++i) CHECK(ens[i] == one[i]);
}

TEST_CASE("k-fold report lists every subject exactly once") {
    Fixture f;
    TrainConfig c = tiny_config();
    c.max_epochs = 2;
    c.k = 5;
    const auto kf = train_kfold(f.train_set, f.data.dims, c);
    CHECK(kf.report.folds.size() == 5);
    std::multiset<std::string> ids;
    for (const auto& fold : kf.report.folds) ids.insert(fold.subject_ids.begin(), fold.subject_ids.end());
    CHECK(ids.size() == f.train_set.size());
    for (const auto& id : f.train_set.ids) CHECK(ids.count(id) == 1);
    CHECK(kf.report.split == "oof");
    CHECK(kf.report.n_subjects == f.train_set.size());

    c.k = static_cast<int>(f.train_set.size()) + 1;
    CHECK_THROWS_AS(train_kfold(f.train_set, f.data.dims, c), ConfigError);
}

TEST_CASE("head sweep and pooling ablation harnesses") {
    Fixture f;
    TrainConfig c = tiny_config();
    c.max_epochs = 2;
    const std::vector<Index> heads{1, 4, 32};
    const auto rows = sweep_heads(f.data, c, heads);
    REQUIRE(rows.size() == 3);
    const std::string csv = render_head_sweep_csv(rows, 32);
    CHECK(csv.rfind("heads,val_mse,best_epoch,default\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
    CHECK(csv.find("\n32,") != std::string::npos);
    CHECK(csv.substr(csv.find("\n32,")).find(",1\n") != std::string::npos);

    const auto ablation = ablate_pooling(f.data, c);
    REQUIRE(ablation.size() == 4);
    CHECK(ablation[0].pooling == PoolingConfig{PoolMode::mean, PoolMode::mean});
    CHECK(ablation[1].pooling == PoolingConfig{PoolMode::mean, PoolMode::max});
    CHECK(ablation[2].pooling == PoolingConfig{PoolMode::max, PoolMode::mean});
    CHECK(ablation[3].pooling == PoolingConfig{PoolMode::max, PoolMode::max});
    for (const auto& row : ablation) CHECK(row.test_mse.has_value());
    const std::string table = render_pooling_table(ablation);
    CHECK(table.find("Video") != std::string::npos);
    CHECK(table.find("Val MSE") != std::string::npos);
    CHECK(table.find("Test MSE") != std::string::npos);
    CHECK(std::count(table.begin(), table.end(), '\n') == 5);
}

}  // TEST_SUITE

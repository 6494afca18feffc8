#include <doctest.h>

#include <array>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <set>
#include <sys/wait.h>

#include "../temp_dir.hpp"
#include "mmreg/trainer.hpp"

using namespace mmreg;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code = -1;
    std::string out;
};

Run run(const std::string& args) {
    const std::string cmd = std::string(MMREG_CLI_PATH) + " " + args + " 2>/dev/null";
    Run r;
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    std::array<char, 4096> buf{};
    std::size_t n = 0;
    while ((n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) r.out.append(buf.data(), n);
    const int status = pclose(pipe);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

const std::string kTiny =
    " --basis_count 8 --shared_dim 6 --head_count 4 --hidden_dim 8 --batch_size 8 --seed 3";

std::string gen(const test::TempDir& dir, std::size_t n = 24, double noise = 0.3) {
    const fs::path out = dir / "data";
    const auto r = run("gen-synth --subjects " + std::to_string(n) + " --seed 17 --noise " + std::to_string(noise) +
                       " --video_dim 12 --audio_dim 8 --text_dim 16 --out " + out.string());
    REQUIRE(r.code == 0);
    return (out / "manifest.json").string();
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("gen-synth twice writes identical trees") {
    test::TempDir a, b;
    gen(a);
    gen(b);
    std::size_t files = 0;
    for (const auto& e : fs::recursive_directory_iterator(a / "data")) {
        if (!e.is_regular_file()) continue;
        ++files;
        CHECK(slurp(e.path()) == slurp(b / "data" / fs::relative(e.path(), a / "data")));
    }
    CHECK(files > 24 * 6);
}

TEST_CASE("exit codes: config 1, data 2, numeric 3") {
    test::TempDir dir;
    const std::string manifest = gen(dir);
    const std::string out = " --output_dir " + (dir / "o").string();
    CHECK(run("train --manifest " + manifest + " --lr -1" + out).code == 1);
    CHECK(run("train --manifest " + manifest + " --no_such_flag 1" + out).code == 1);
    CHECK(run("train --manifest " + (dir / "missing.json").string() + out).code == 2);
    CHECK(run("train --manifest " + manifest + " --basis_count 8 --shared_dim 6 --head_count 4 --hidden_dim 8 --batch_size 1 --lr 1e250 --weight_decay 0" + out).code == 3);

    std::ofstream(dir / "bad.json") << R"({"learning_rate": 0.1})";
    CHECK(run("train --manifest " + manifest + " --config " + (dir / "bad.json").string() + out).code == 1);
}

TEST_CASE("flags override the config file and the echo names each source") {
    test::TempDir dir;
    std::ofstream(dir / "c.json") << R"({"lr": 0.01, "head_count": 7})";
    const auto r = run("config --config " + (dir / "c.json").string() + " --lr 0.5");
    REQUIRE(r.code == 0);
    const auto doc = nlohmann::json::parse(r.out);
    CHECK(doc["lr"] == 0.5);
    CHECK(doc["head_count"] == 7);
    CHECK(doc["batch_size"] == 64);
    CHECK(doc["sources"]["lr"] == "flag");
    CHECK(doc["sources"]["head_count"] == "file");
    CHECK(doc["sources"]["batch_size"] == "default");
}

TEST_CASE("train, predict and eval agree on the validation MSE") {
    test::TempDir dir;
    const std::string manifest = gen(dir);
    const fs::path out = dir / "o";
    REQUIRE(run("train --manifest " + manifest + kTiny + " --max_epochs 4 --output_dir " + out.string()).code == 0);
    const RunReport report = parse_report(slurp(out / "report.json"));
    REQUIRE(run("predict --manifest " + manifest + " --checkpoint " + (out / "checkpoint.mmck").string() +
                " --split val --out " + (dir / "p.csv").string())
                .code == 0);
    REQUIRE(run("eval --manifest " + manifest + " --predictions " + (dir / "p.csv").string() +
                " --split val --out " + (dir / "e.json").string())
                .code == 0);
    const RunReport ev = parse_report(slurp(dir / "e.json"));
    CHECK(std::abs(ev.mean_mse - report.mean_mse) < 1e-9);
    for (std::size_t d = 0; d < 5; ++d) CHECK(std::abs(ev.per_dim_mse[d] - report.per_dim_mse[d]) < 1e-9);
}

TEST_CASE("train with lr 0 saves the initial parameters") {
    test::TempDir dir;
    const std::string manifest = gen(dir);
    const fs::path out = dir / "o";
    REQUIRE(run("train --manifest " + manifest + kTiny + " --lr 0 --max_epochs 3 --output_dir " + out.string()).code ==
            0);
    const auto ckpt = load_checkpoint(out / "checkpoint.mmck");
    CHECK(ckpt.model == FusionModel<double>::init(ckpt.model.shape(), 3));
}

TEST_CASE("kfold report lists every pooled subject exactly once") {
    test::TempDir dir;
    const std::string manifest = gen(dir, 30);
    const fs::path out = dir / "o";
    REQUIRE(run("kfold --manifest " + manifest + kTiny + " --k 5 --max_epochs 1 --output_dir " + out.string()).code ==
            0);
    const RunReport report = parse_report(slurp(out / "kfold_report.json"));
    CHECK(report.folds.size() == 5);
    const Dataset data = load_dataset(manifest);
    std::multiset<std::string> ids;
    for (const auto& f : report.folds) ids.insert(f.subject_ids.begin(), f.subject_ids.end());
    CHECK(ids.size() == data.train.size() + data.val.size());
    for (const auto* split : {&data.train, &data.val})
        for (const auto& s : *split) CHECK(ids.count(s.subject_id) == 1);
    for (int f = 0; f < 5; ++f) CHECK(fs::exists(out / ("fold_" + std::to_string(f) + ".mmck")));
}

TEST_CASE("ablate-pooling and sweep-heads write their tables") {
    test::TempDir dir;
    const std::string manifest = gen(dir);
    const fs::path out = dir / "o";
    const auto a = run("ablate-pooling --manifest " + manifest + kTiny + " --max_epochs 1 --output_dir " + out.string());
    REQUIRE(a.code == 0);
    CHECK(a.out.find("Mean pooling") != std::string::npos);
    const std::string csv = slurp(out / "pooling_ablation.csv");
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);

    const auto s = run("sweep-heads --manifest " + manifest + kTiny + " --max_epochs 1 --values 1,2 --output_dir " +
                       out.string());
    REQUIRE(s.code == 0);
    CHECK(slurp(out / "sweep_heads.csv").rfind("heads,val_mse,best_epoch,default\n", 0) == 0);
    CHECK(run("sweep-heads --manifest " + manifest + " --values 0,x --output_dir " + out.string()).code == 1);
}

}  // TEST_SUITE

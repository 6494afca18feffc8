// mmreg: synthesize data, train, cross-validate, predict, evaluate and run ablations.
//
// Training commands read an optional --config JSON file whose keys are the
// TrainConfig keys plus "manifest" and "output_dir". Every key is also a flag
// of the same name; flags win over the file, the file wins over defaults.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>

#include "mmreg/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mmreg;

namespace {

// Echoed alongside the config keys; accepted and ignored on input so a report's
// config block can be fed back verbatim.
constexpr const char* kSourcesKey = "sources";

struct ConfigFlags {
    std::string config_path;
    std::map<std::string, std::string> values;  // key -> raw flag text
    std::string manifest;
    std::string output_dir;
};

void add_config_flags(CLI::App& cmd, ConfigFlags& flags) {
    cmd.add_option("--config", flags.config_path, "JSON config file");
    cmd.add_option("--manifest", flags.manifest, "dataset manifest");
    cmd.add_option("--output_dir,--output-dir", flags.output_dir, "output directory (default $MMREG_OUTPUT_DIR or ./mmreg_out)");
    for (const auto& key : train_config_keys()) {
        std::string names = "--" + key;
        std::string dashed = key;
        std::replace(dashed.begin(), dashed.end(), '_', '-');
        if (dashed != key) names += ",--" + dashed;
        cmd.add_option(names, flags.values[key], "TrainConfig." + key);
    }
}

json flag_value(const std::string& raw) {
    try {
        return json::parse(raw);
    } catch (const json::exception&) {
        return raw;  // bare strings such as pooling modes
    }
}

struct Resolved {
    TrainConfig train;
    fs::path manifest;
    fs::path output_dir;
    json echo;  // resolved config + per-key source
};

Resolved resolve(const CLI::App& cmd, const ConfigFlags& flags, bool need_manifest = true) {
    json file_doc = json::object();
    if (!flags.config_path.empty()) {
        std::ifstream in(flags.config_path);
        if (!in) throw ConfigError("cannot open config file " + flags.config_path);
        try {
            file_doc = json::parse(in);
        } catch (const json::exception& e) {
            throw ConfigError("config file " + flags.config_path + " is not valid JSON: " + e.what());
        }
        if (!file_doc.is_object()) throw ConfigError("config file must hold a JSON object");
    }

    json sources = json::object();
    json train_doc = json::object();
    Resolved r;
    std::string manifest, output_dir;
    for (const auto& [key, value] : file_doc.items()) {
        if (key == kSourcesKey) continue;
        if (key == "manifest" || key == "output_dir") {
            if (!value.is_string()) throw ConfigError("config key '" + key + "' must be a string");
            (key == "manifest" ? manifest : output_dir) = value.get<std::string>();
        } else {
            train_doc[key] = value;
        }
        sources[key] = "file";
    }
    for (const auto& [key, raw] : flags.values) {
        if (cmd.count("--" + key) == 0) continue;
        train_doc[key] = flag_value(raw);
        sources[key] = "flag";
    }
    if (cmd.count("--manifest")) {
        manifest = flags.manifest;
        sources["manifest"] = "flag";
    }
    if (cmd.count("--output_dir")) {
        output_dir = flags.output_dir;
        sources["output_dir"] = "flag";
    }
    if (output_dir.empty()) {
        const char* env = std::getenv("MMREG_OUTPUT_DIR");
        output_dir = env && *env ? env : "mmreg_out";
        sources["output_dir"] = env && *env ? "env" : "default";
    }
    if (need_manifest && manifest.empty()) throw ConfigError("no manifest given (--manifest or config key 'manifest')");

    r.train = TrainConfig::from_json(train_doc);
    r.manifest = manifest;
    r.output_dir = output_dir;
    r.echo = r.train.to_json();
    r.echo["manifest"] = manifest;
    r.echo["output_dir"] = output_dir;
    for (const auto& [key, _] : r.echo.items())
        if (!sources.contains(key)) sources[key] = "default";
    r.echo[kSourcesKey] = sources;
    return r;
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out << text;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt_g(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

PooledSet pool_split(const Dataset& data, std::string_view split, const PoolingConfig& pooling) {
    if (split == "train+val") {
        std::vector<SubjectRecord> both = data.train;
        both.insert(both.end(), data.val.begin(), data.val.end());
        return pool_subjects(both, pooling, data.dims);
    }
    return pool_subjects(data.split(parse_split(split)), pooling, data.dims);
}

std::vector<Index> parse_index_list(const std::string& text) {
    std::vector<Index> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            const long long v = std::stoll(item, &used);
            if (used != item.size() || v < 1) throw std::invalid_argument(item);
            out.push_back(static_cast<Index>(v));
        } catch (const std::exception&) {
            throw ConfigError("bad entry '" + item + "' in list '" + text + "' (expected positive integers)");
        }
    }
    if (out.empty()) throw ConfigError("empty list");
    return out;
}

// --- predictions csv -------------------------------------------------------

std::string predictions_csv(const std::vector<std::string>& ids, const std::vector<ScoreVector>& preds) {
    std::string out = "subject_id";
    for (auto name : kScoreNames) out += "," + std::string(name);
    out += '\n';
    for (std::size_t i = 0; i < ids.size(); ++i) {
        out += ids[i];
        for (Index d = 0; d < kScoreDims; ++d) out += "," + fmt_g(preds[i](d));
        out += '\n';
    }
    return out;
}

std::map<std::string, ScoreVector> read_predictions_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open predictions " + path.string());
    std::string line;
    std::getline(in, line);
    if (line.rfind("subject_id,", 0) != 0) throw DataError(path.string() + ": missing subject_id header");
    std::map<std::string, ScoreVector> out;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string id, cell;
        std::getline(ss, id, ',');
        ScoreVector s;
        for (Index d = 0; d < kScoreDims; ++d) {
            if (!std::getline(ss, cell, ','))
                throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected 5 scores");
            try {
                s(d) = std::stod(cell);
            } catch (const std::exception&) {
                throw DataError(path.string() + ":" + std::to_string(line_no) + ": bad number '" + cell + "'");
            }
        }
        if (!out.emplace(id, s).second) throw DataError(path.string() + ": duplicate subject " + id);
    }
    return out;
}

// --- commands --------------------------------------------------------------

struct GenSynthArgs {
    SynthSpec spec;
    std::string out;
};

int run_gen_synth(const GenSynthArgs& a) {
    fs::path out = a.out;
    if (out.empty()) {
        const char* env = std::getenv("MMREG_OUTPUT_DIR");
        out = fs::path(env && *env ? env : "mmreg_out") / "synth";
    }
    const auto r = gen_synthetic(a.spec, out);
    std::cout << "manifest " << r.manifest_path.string() << "\n"
              << "subjects train=" << r.train << " val=" << r.val << " test=" << r.test << "\n"
              << "oracle_floor " << fmt_g(r.oracle_floor) << "\n";
    return 0;
}

int run_train(const CLI::App& cmd, const ConfigFlags& flags, const std::string& format) {
    const auto t0 = std::chrono::steady_clock::now();
    const Resolved cfg = resolve(cmd, flags);
    const Dataset data = load_dataset(cfg.manifest);
    for (const auto& w : data.warnings) std::cerr << "warning: " << w << "\n";
    auto result = train(data, cfg.train);
    result.report.config = cfg.echo;
    result.report.wall_seconds = seconds_since(t0);
    save_checkpoint(result.checkpoint, cfg.output_dir / "checkpoint.mmck");
    emit_report(result.report, ReportFormat::structured, cfg.output_dir / "report.json");
    std::cout << render_report(result.report, parse_report_format(format));
    return 0;
}

int run_kfold(const CLI::App& cmd, const ConfigFlags& flags, const std::string& pool_name, const std::string& format) {
    const auto t0 = std::chrono::steady_clock::now();
    const Resolved cfg = resolve(cmd, flags);
    if (pool_name != "train" && pool_name != "train+val") throw ConfigError("--pool must be train or train+val");
    const Dataset data = load_dataset(cfg.manifest);
    const PooledSet pool = pool_split(data, pool_name, cfg.train.pooling);
    auto result = train_kfold(pool, data.dims, cfg.train);
    result.report.config = cfg.echo;
    result.report.config["pool"] = pool_name;
    result.report.wall_seconds = seconds_since(t0);
    for (std::size_t f = 0; f < result.models.size(); ++f)
        save_checkpoint(result.models[f], cfg.output_dir / ("fold_" + std::to_string(f) + ".mmck"));
    emit_report(result.report, ReportFormat::structured, cfg.output_dir / "kfold_report.json");
    std::cout << render_report(result.report, parse_report_format(format));
    return 0;
}

struct PredictArgs {
    std::string manifest;
    std::vector<std::string> checkpoints;
    std::string split = "val";
    std::string out;
    bool no_clamp = false;
};

int run_predict(const PredictArgs& a) {
    if (a.checkpoints.empty()) throw ConfigError("at least one --checkpoint is required");
    const Dataset data = load_dataset(a.manifest);
    std::vector<Checkpoint> ckpts;
    for (const auto& path : a.checkpoints) {
        const auto expected = ckpts.empty() ? std::nullopt : std::optional<ModelShape>(ckpts.front().model.shape());
        ckpts.push_back(load_checkpoint(path, expected));
    }
    if (ckpts.front().model.fusion.dims() != data.dims)
        throw DataError("checkpoint feature dims do not match the manifest");
    const auto& cfg = ckpts.front().config;
    for (const auto& c : ckpts)
        if (c.config.pooling != cfg.pooling) throw ConfigError("checkpoints disagree on pooling");
    const bool clamp = cfg.clamp && !a.no_clamp;
    const PooledSet set = pool_split(data, a.split, cfg.pooling);
    std::vector<const FusionModel<double>*> models;
    for (const auto& c : ckpts) models.push_back(&c.model);
    const auto preds = models.size() == 1 ? predict(*models.front(), set, clamp) : predict_ensemble(models, set, clamp);
    const std::string csv = predictions_csv(set.ids, preds);
    if (a.out.empty())
        std::cout << csv;
    else
        write_text(a.out, csv);
    return 0;
}

struct EvalArgs {
    std::string manifest;
    std::string predictions;
    std::string split = "val";
    std::string format = "table";
    std::string out;
};

int run_eval(const EvalArgs& a) {
    const Manifest manifest = read_manifest(a.manifest);
    const auto preds = read_predictions_csv(a.predictions);
    std::vector<ScoreVector> p, y;
    for (const auto& s : manifest.subjects) {
        const bool wanted = a.split == "train+val" ? s.split != Split::test : s.split == parse_split(a.split);
        if (!wanted) continue;
        if (!s.labels) throw DataError("subject " + s.subject_id + " has no labels");
        const auto it = preds.find(s.subject_id);
        if (it == preds.end()) throw DataError("no prediction for subject " + s.subject_id);
        p.push_back(it->second);
        y.push_back(*s.labels);
    }
    if (p.empty()) throw DataError("split '" + a.split + "' has no subjects");
    RunReport report = evaluate(p, y, a.split);
    report.config = {{"manifest", a.manifest}, {"predictions", a.predictions}};
    if (!a.out.empty()) emit_report(report, ReportFormat::structured, a.out);
    std::cout << render_report(report, parse_report_format(a.format));
    return 0;
}

int run_sweep_heads(const CLI::App& cmd, const ConfigFlags& flags, const std::string& values) {
    const Resolved cfg = resolve(cmd, flags);
    const auto heads = parse_index_list(values);
    const Dataset data = load_dataset(cfg.manifest);
    const auto rows = sweep_heads(data, cfg.train, heads);
    const std::string csv = render_head_sweep_csv(rows, TrainConfig{}.head_count);
    write_text(cfg.output_dir / "sweep_heads.csv", csv);
    std::cout << csv;
    return 0;
}

int run_ablate_pooling(const CLI::App& cmd, const ConfigFlags& flags, const std::string& format) {
    const Resolved cfg = resolve(cmd, flags);
    const Dataset data = load_dataset(cfg.manifest);
    const auto rows = ablate_pooling(data, cfg.train);
    write_text(cfg.output_dir / "pooling_ablation.csv", render_pooling_csv(rows));
    if (format == "csv")
        std::cout << render_pooling_csv(rows);
    else
        std::cout << render_pooling_table(rows);
    return 0;
}

int run_config(const CLI::App& cmd, const ConfigFlags& flags) {
    std::cout << resolve(cmd, flags, false).echo.dump(2) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"mmreg: multimodal multi-label regression"};
    app.require_subcommand(1);

    GenSynthArgs gen;
    auto* gen_cmd = app.add_subcommand("gen-synth", "write a planted-model synthetic dataset");
    gen_cmd->add_option("--subjects", gen.spec.n_subjects, "number of subjects")->capture_default_str();
    gen_cmd->add_option("--seed", gen.spec.seed, "generator seed")->capture_default_str();
    gen_cmd->add_option("--noise", gen.spec.noise, "label noise std")->capture_default_str();
    gen_cmd->add_option("--out", gen.out, "output directory");
    gen_cmd->add_option("--video_dim,--video-dim", gen.spec.dims.video)->capture_default_str();
    gen_cmd->add_option("--audio_dim,--audio-dim", gen.spec.dims.audio)->capture_default_str();
    gen_cmd->add_option("--text_dim,--text-dim", gen.spec.dims.text)->capture_default_str();
    gen_cmd->add_option("--min_length,--min-length", gen.spec.min_length)->capture_default_str();
    gen_cmd->add_option("--max_length,--max-length", gen.spec.max_length)->capture_default_str();
    gen_cmd->add_option("--latent_dim,--latent-dim", gen.spec.latent_dim)->capture_default_str();

    std::string format = "table";
    auto add_format = [&](CLI::App* cmd) {
        cmd->add_option("--format", format, "table, json or csv")->capture_default_str();
    };

    ConfigFlags train_flags;
    auto* train_cmd = app.add_subcommand("train", "train one model on the train split, early-stopping on val");
    add_config_flags(*train_cmd, train_flags);
    add_format(train_cmd);

    ConfigFlags kfold_flags;
    std::string pool_name = "train+val";
    auto* kfold_cmd = app.add_subcommand("kfold", "K-fold cross-validation over a subject pool");
    add_config_flags(*kfold_cmd, kfold_flags);
    kfold_cmd->add_option("--pool", pool_name, "train+val or train")->capture_default_str();
    add_format(kfold_cmd);

    PredictArgs pred;
    auto* pred_cmd = app.add_subcommand("predict", "write per-subject scores; several checkpoints are averaged");
    pred_cmd->add_option("--manifest", pred.manifest)->required();
    pred_cmd->add_option("--checkpoint", pred.checkpoints)->required();
    pred_cmd->add_option("--split", pred.split, "train, val, test or train+val")->capture_default_str();
    pred_cmd->add_option("--out", pred.out, "csv path (stdout if omitted)");
    pred_cmd->add_flag("--no_clamp,--no-clamp", pred.no_clamp, "skip clamping to [1, 5]");

    EvalArgs ev;
    auto* eval_cmd = app.add_subcommand("eval", "score a predictions csv against manifest labels");
    eval_cmd->add_option("--manifest", ev.manifest)->required();
    eval_cmd->add_option("--predictions", ev.predictions)->required();
    eval_cmd->add_option("--split", ev.split)->capture_default_str();
    eval_cmd->add_option("--format", ev.format)->capture_default_str();
    eval_cmd->add_option("--out", ev.out, "also write the structured report here");

    ConfigFlags sweep_flags;
    std::string sweep_values = "4,8,16,32,64,128";
    auto* sweep_cmd = app.add_subcommand("sweep-heads", "train once per head count, csv of val MSE");
    add_config_flags(*sweep_cmd, sweep_flags);
    sweep_cmd->add_option("--values", sweep_values, "comma-separated head counts")->capture_default_str();

    ConfigFlags ablate_flags;
    auto* ablate_cmd = app.add_subcommand("ablate-pooling", "train the four video/audio pooling combinations");
    add_config_flags(*ablate_cmd, ablate_flags);
    add_format(ablate_cmd);

    ConfigFlags show_flags;
    auto* show_cmd = app.add_subcommand("config", "print the resolved configuration");
    add_config_flags(*show_cmd, show_flags);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return static_cast<int>(ErrorKind::config);
    }

    try {
        if (*gen_cmd) return run_gen_synth(gen);
        if (*train_cmd) return run_train(*train_cmd, train_flags, format);
        if (*kfold_cmd) return run_kfold(*kfold_cmd, kfold_flags, pool_name, format);
        if (*pred_cmd) return run_predict(pred);
        if (*eval_cmd) return run_eval(ev);
        if (*sweep_cmd) return run_sweep_heads(*sweep_cmd, sweep_flags, sweep_values);
        if (*ablate_cmd) return run_ablate_pooling(*ablate_cmd, ablate_flags, format);
        if (*show_cmd) return run_config(*show_cmd, show_flags);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.exit_code();
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return static_cast<int>(ErrorKind::data);
    }
    return 0;
}

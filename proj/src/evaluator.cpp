#include "mmreg/evaluator.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "mmreg/error.hpp"

namespace mmreg {

using nlohmann::json;

RunReport evaluate(std::span<const ScoreVector> predictions, std::span<const ScoreVector> labels, std::string split) {
    if (predictions.size() != labels.size())
        throw DataError("evaluate: " + std::to_string(predictions.size()) + " predictions vs " +
                        std::to_string(labels.size()) + " labels");
    if (predictions.empty()) throw DataError("evaluate: no subjects to score");

    RunReport r;
    r.split = std::move(split);
    r.n_subjects = predictions.size();
    const double n = static_cast<double>(predictions.size());
    double total = 0.0;
    for (Index d = 0; d < kScoreDims; ++d) {
        double sum = 0.0;
        for (std::size_t i = 0; i < predictions.size(); ++i) {
            const double e = predictions[i](d) - labels[i](d);
            sum += e * e;
        }
        r.per_dim_mse[static_cast<std::size_t>(d)] = sum / n;
        total += sum / n;
    }
    r.mean_mse = total / static_cast<double>(kScoreDims);
    return r;
}

ReportFormat parse_report_format(std::string_view name) {
    if (name == "table" || name == "human" || name == "human-table") return ReportFormat::human_table;
    if (name == "json" || name == "structured" || name == "structured-text") return ReportFormat::structured;
    if (name == "csv") return ReportFormat::csv;
    throw ConfigError("unknown report format '" + std::string(name) + "' (expected table, json or csv)");
}

namespace {

std::string fixed4(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

std::string exact(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string render_table(const RunReport& r) {
    std::ostringstream os;
    os << "split: " << r.split << "  subjects: " << r.n_subjects << '\n';
    os << "Split ";
    for (auto name : kScoreShortNames) os << "  " << std::string(6 - std::min<std::size_t>(6, name.size()), ' ') << name;
    os << "    Mean\n";
    os << std::string(5 - std::min<std::size_t>(5, r.split.size()), ' ') << r.split.substr(0, 5) << ' ';
    for (double v : r.per_dim_mse) os << "  " << fixed4(v);
    os << "  " << fixed4(r.mean_mse) << '\n';
    if (!r.folds.empty()) {
        os << "folds:\n";
        for (const auto& f : r.folds)
            os << "  fold " << f.fold << ": " << f.subject_ids.size() << " held out, val MSE " << fixed4(f.val_mse)
               << " (best epoch " << f.best_epoch << ")\n";
    }
    if (!r.history.empty()) os << "best epoch: " << r.best_epoch << " of " << r.history.back().epoch << '\n';
    return os.str();
}

std::string render_csv(const RunReport& r) {
    std::ostringstream os;
    os << kCsvHeader << '\n';
    for (double v : r.per_dim_mse) os << exact(v) << ',';
    os << exact(r.mean_mse) << '\n';
    return os.str();
}

}  // namespace

json report_to_json(const RunReport& r) {
    json doc;
    doc["split"] = r.split;
    doc["n_subjects"] = r.n_subjects;
    json dims = json::object();
    for (std::size_t d = 0; d < r.per_dim_mse.size(); ++d) dims[std::string(kScoreNames[d])] = r.per_dim_mse[d];
    doc["per_dimension_mse"] = dims;
    doc["mean_mse"] = r.mean_mse;
    doc["config"] = r.config;
    doc["seed"] = r.seed;
    doc["best_epoch"] = r.best_epoch;
    json hist = json::array();
    for (const auto& e : r.history) {
        json je = {{"epoch", e.epoch}, {"train_mse", e.train_mse}};
        je["val_mse"] = e.val_mse ? json(*e.val_mse) : json(nullptr);
        hist.push_back(std::move(je));
    }
    doc["history"] = std::move(hist);
    json folds = json::array();
    for (const auto& f : r.folds)
        folds.push_back({{"fold", f.fold}, {"subject_ids", f.subject_ids}, {"val_mse", f.val_mse}, {"best_epoch", f.best_epoch}});
    doc["folds"] = std::move(folds);
    if (r.wall_seconds) doc["wall_seconds"] = *r.wall_seconds;
    return doc;
}

RunReport report_from_json(const json& doc) {
    try {
        RunReport r;
        r.split = doc.at("split").get<std::string>();
        r.n_subjects = doc.at("n_subjects").get<std::size_t>();
        const auto& dims = doc.at("per_dimension_mse");
        for (std::size_t d = 0; d < r.per_dim_mse.size(); ++d)
            r.per_dim_mse[d] = dims.at(std::string(kScoreNames[d])).get<double>();
        r.mean_mse = doc.at("mean_mse").get<double>();
        r.config = doc.value("config", json::object());
        r.seed = doc.value("seed", std::uint64_t{0});
        r.best_epoch = doc.value("best_epoch", 0);
        for (const auto& je : doc.value("history", json::array())) {
            EpochRecord e;
            e.epoch = je.at("epoch").get<int>();
            e.train_mse = je.at("train_mse").get<double>();
            if (!je.at("val_mse").is_null()) e.val_mse = je.at("val_mse").get<double>();
            r.history.push_back(e);
        }
        for (const auto& jf : doc.value("folds", json::array())) {
            FoldRecord f;
            f.fold = jf.at("fold").get<int>();
            f.subject_ids = jf.at("subject_ids").get<std::vector<std::string>>();
            f.val_mse = jf.at("val_mse").get<double>();
            f.best_epoch = jf.value("best_epoch", 0);
            r.folds.push_back(std::move(f));
        }
        if (doc.contains("wall_seconds")) r.wall_seconds = doc["wall_seconds"].get<double>();
        return r;
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed report: ") + e.what());
    }
}

RunReport parse_report(std::string_view text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw DataError(std::string("report is not valid JSON: ") + e.what());
    }
    return report_from_json(doc);
}

std::string render_report(const RunReport& report, ReportFormat format) {
    switch (format) {
        case ReportFormat::human_table: return render_table(report);
        case ReportFormat::structured: return report_to_json(report).dump(2) + "\n";
        case ReportFormat::csv: return render_csv(report);
    }
    return {};
}

void emit_report(const RunReport& report, ReportFormat format, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write report " + path.string());
    out << render_report(report, format);
    if (!out) throw DataError("write failed for " + path.string());
}

}  // namespace mmreg

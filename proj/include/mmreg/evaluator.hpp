#pragma once

// Per-dimension MSE and report rendering (human table, JSON, csv).

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmreg/ensemble.hpp"

namespace mmreg {

struct EpochRecord {
    int epoch = 0;
    double train_mse = 0.0;
    std::optional<double> val_mse;
    bool operator==(const EpochRecord&) const = default;
};

struct FoldRecord {
    int fold = 0;
    std::vector<std::string> subject_ids;  // held out in this fold
    double val_mse = 0.0;
    int best_epoch = 0;
    bool operator==(const FoldRecord&) const = default;
};

struct RunReport {
    std::string split;
    std::size_t n_subjects = 0;
    std::array<double, kScoreDims> per_dim_mse{};
    double mean_mse = 0.0;
    nlohmann::json config = nlohmann::json::object();
    std::uint64_t seed = 0;
    int best_epoch = 0;
    std::vector<EpochRecord> history;
    std::vector<FoldRecord> folds;
    std::optional<double> wall_seconds;

    bool operator==(const RunReport&) const = default;
};

/// MSE_d = (1/n) sum_i (pred_id - label_id)^2; mean_mse is the unweighted mean over d.
RunReport evaluate(std::span<const ScoreVector> predictions, std::span<const ScoreVector> labels,
                   std::string split = "val");

enum class ReportFormat { human_table, structured, csv };

ReportFormat parse_report_format(std::string_view name);

std::string render_report(const RunReport& report, ReportFormat format);
void emit_report(const RunReport& report, ReportFormat format, const std::filesystem::path& path);

nlohmann::json report_to_json(const RunReport& report);
RunReport report_from_json(const nlohmann::json& doc);
RunReport parse_report(std::string_view structured_text);

inline constexpr std::string_view kCsvHeader =
    "integrity,collegiality,social_versatility,development_orientation,overall_hireability,mean";

}  // namespace mmreg

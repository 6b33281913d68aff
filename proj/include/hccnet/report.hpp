#pragma once

#include "hccnet/metrics.hpp"

#include <filesystem>
#include <optional>

namespace hccnet {

class ReportSchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Writes metrics.json, metrics.csv, reliability.svg and gain.svg into `dir`.
void emit_report(const MetricsReport& report, const std::filesystem::path& dir);

/// Reads a metrics.json (or a directory containing one).
MetricsReport load_report(const std::filesystem::path& path);

std::string metrics_csv(const MetricsReport& report);
std::string reliability_svg(const BinnedCalibration& calibration, const std::string& title);
std::string gain_svg(const std::map<std::string, GainCurve>& curves, const std::vector<std::string>& metrics);

struct ComparisonRow {
  std::string metric;
  double baseline = 0.0;
  double finetuned = 0.0;
  std::optional<double> relative_change;  // nullopt when the baseline is 0
};

/// (finetuned − baseline) / baseline on the aggregate means.
std::vector<ComparisonRow> compare_reports(const MetricsReport& baseline, const MetricsReport& finetuned);

/// Markdown table; undefined changes print as "undefined".
std::string render_comparison(const std::vector<ComparisonRow>& rows, const std::string& baseline_label,
                              const std::string& finetuned_label);

nlohmann::json comparison_json(const std::vector<ComparisonRow>& rows);

}  // namespace hccnet

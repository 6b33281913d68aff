#pragma once

#include <json.hpp>

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace hccnet {

struct Prediction {
  std::string patient_id;
  double score = 0.5;  // positive-class probability
  int label = 0;
};

/// Scores of one model run on the test split.
struct PredictionSet {
  std::uint64_t seed = 0;
  std::vector<Prediction> items;

  std::vector<double> scores() const;
  std::vector<int> labels() const;
  /// Throws on scores outside [0,1], labels outside {0,1} or duplicate ids.
  void validate() const;
};

struct ThresholdMetrics {
  double accuracy = 0, precision = 0, recall = 0, f1 = 0;
  bool precision_undefined = false;  // no predicted positives
  bool recall_undefined = false;     // no actual positives
};

ThresholdMetrics threshold_metrics(const std::vector<double>& scores, const std::vector<int>& labels,
                                   double threshold = 0.5);

/// Mann-Whitney statistic, ties credited 0.5.
double auroc(const std::vector<double>& scores, const std::vector<int>& labels);

/// Average precision, one step per distinct score: Σ (R_i − R_{i−1})·P_i.
double auprc(const std::vector<double>& scores, const std::vector<int>& labels);

struct CalibrationBin {
  std::size_t count = 0;
  double confidence = 0.0;  // mean score
  double accuracy = 0.0;    // fraction of positives
};

struct BinnedCalibration {
  std::vector<CalibrationBin> bins;
  double ece = 0.0;
  double mce = 0.0;
};

/// Equal-width bins on [0,1]; a score of exactly 1 falls into the last bin.
BinnedCalibration reliability(const std::vector<double>& scores, const std::vector<int>& labels,
                              std::size_t n_bins = 10);

double brier(const std::vector<double>& scores, const std::vector<int>& labels);

enum class GainNormalization {
  Total,       // g_i = Σ_{k≤i} m_(k) / Σ m
  RunningMean  // g_i = Σ_{k≤i} m_(k) / i
};

struct GainCurve {
  std::vector<double> values;  // ascending
  std::vector<double> gains;
  std::vector<double> expected;  // i/n
  double mae = 0.0;
  bool degenerate = false;  // all values zero
};

GainCurve cumulative_gain(std::vector<double> values, GainNormalization mode = GainNormalization::Total);
inline double cumulative_gain_mae(const std::vector<double>& values,
                                  GainNormalization mode = GainNormalization::Total) {
  return cumulative_gain(values, mode).mae;
}

inline const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> names{"accuracy", "precision", "recall", "f1",  "auroc",
                                              "auprc",    "ece",       "mce",    "brier"};
  return names;
}

struct RunMetrics {
  std::uint64_t seed = 0;
  std::map<std::string, double> values;
  std::vector<std::string> flags;  // e.g. "precision_undefined"
};

RunMetrics score_run(const PredictionSet& preds, std::size_t n_bins = 10);

struct Summary {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, 0 for a single run
};

Summary summarize(const std::vector<double>& values);

inline constexpr int kReportSchemaVersion = 1;

struct MetricsReport {
  int schema_version = kReportSchemaVersion;
  std::string label;  // e.g. "finetune" or "baseline"
  std::vector<RunMetrics> runs;
  std::map<std::string, Summary> aggregate;
  std::map<std::string, GainCurve> gains;  // per metric, across runs
  BinnedCalibration calibration;            // pooled over every run
  std::vector<PredictionSet> predictions;
};

/// Scores each run and fills aggregates, gain curves and pooled calibration.
MetricsReport build_report(const std::string& label, const std::vector<PredictionSet>& runs, std::size_t n_bins = 10,
                           GainNormalization gain_mode = GainNormalization::Total);

/// Recomputes aggregates from `runs` alone.
std::map<std::string, Summary> aggregate_runs(const std::vector<RunMetrics>& runs);

void to_json(nlohmann::json& j, const MetricsReport& r);
void from_json(const nlohmann::json& j, MetricsReport& r);

}  // namespace hccnet

#pragma once

#include "hccnet/augment.hpp"
#include "hccnet/cohort.hpp"
#include "hccnet/metrics.hpp"
#include "hccnet/optim.hpp"
#include "hccnet/pretrain.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>

namespace hccnet {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct BackbonePretrainConfig {
  OptimizerConfig optim;
  Index global_crop = 72;
  Index local_crop = 48;
  double ema_momentum = 0.9995;
  DinoHeadConfig head;
};

struct EncoderPretrainConfig {
  OptimizerConfig optim;
  Index crop = 72;
  double shuffle_probability = 2.0 / 3.0;
};

struct FinetuneConfig {
  OptimizerConfig optim;
  Index baseline_warmup_steps = 40;
  std::optional<double> positive_weight;  // nullopt = N_neg / N_pos
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  Index crop = 72;
};

struct EvaluateConfig {
  Index crop = 72;
  std::size_t calibration_bins = 10;
  GainNormalization gain_mode = GainNormalization::Total;
};

struct RunConfig {
  std::string variant = "P";
  std::optional<Index> base_channels;  // shrinks C for desk-scale runs
  std::uint64_t seed = 0;
  Index max_sequence_length = 8;
  double dropout = 0.2;
  double dev_fraction = 0.75;
  std::uint64_t split_seed = 0;

  std::filesystem::path out = "run";
  std::optional<std::filesystem::path> cohort_dir, checkpoint_dir, report_dir;

  SyntheticConfig data;
  AugmentConfig augment;
  BackbonePretrainConfig backbone;
  EncoderPretrainConfig encoder;
  FinetuneConfig finetune;
  EvaluateConfig evaluate;

  std::filesystem::path cohort_path() const { return cohort_dir.value_or(out / "cohort"); }
  std::filesystem::path checkpoint_path() const { return checkpoint_dir.value_or(out / "checkpoints"); }
  std::filesystem::path report_path() const { return report_dir.value_or(out / "reports"); }
  std::filesystem::path log_path() const { return out / "logs"; }

  /// Throws ConfigError on any invalid field.
  void validate() const;
};

/// Default hyperparameters for a variant (encoder warmup depends on it).
RunConfig default_config(const std::string& variant = "P");

nlohmann::json to_json(const RunConfig& c);

/// Defaults for the file's variant, overlaid with the file's sections.
RunConfig config_from_json(const nlohmann::json& j);

/// Command-line overrides applied after the config file.
struct Overrides {
  std::optional<std::string> variant;
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out;
  std::optional<Index> steps;
  std::optional<Index> batch_size;
};

enum class Stage { GenData, PretrainBackbone, PretrainEncoder, Finetune, Baseline, Evaluate, Report };

/// Loads `config_file` (when given), applies `flags` to the section of
/// `stage`, validates and returns the result.
RunConfig resolve_config(const std::optional<std::filesystem::path>& config_file, const Overrides& flags, Stage stage);

}  // namespace hccnet

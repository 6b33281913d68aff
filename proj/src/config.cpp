#include "hccnet/config.hpp"

#include <cmath>
#include <fstream>

namespace hccnet {

using nlohmann::json;

namespace {

std::string gain_mode_name(GainNormalization m) {
  return m == GainNormalization::Total ? "total" : "running_mean";
}

GainNormalization parse_gain_mode(const std::string& s) {
  if (s == "total") return GainNormalization::Total;
  if (s == "running_mean") return GainNormalization::RunningMean;
  throw ConfigError("unknown gain normalization '" + s + "' (expected total or running_mean)");
}

// Keeps the warmup share of a schedule when its length is overridden.
void rescale_steps(OptimizerConfig& o, Index steps, Index* extra_warmup = nullptr) {
  const double share = double(o.warmup_steps) / double(o.total_steps);
  if (extra_warmup) *extra_warmup = std::llround(double(steps) * double(*extra_warmup) / double(o.total_steps));
  o.total_steps = steps;
  o.warmup_steps = std::llround(double(steps) * share);
}

}  // namespace

RunConfig default_config(const std::string& variant) {
  RunConfig c;
  c.variant = variant;
  const Variant v = parse_variant(variant);

  auto& b = c.backbone.optim;
  b.base_lr = 4e-4;
  b.batch_size = 128;
  b.total_steps = 32000;
  b.warmup_steps = 1600;
  b.weight_decay = 5e-2;
  b.max_weight_decay = 5e-1;
  b.clip_norm = 1.0;

  auto& e = c.encoder.optim;
  e.base_lr = 1e-4;
  e.batch_size = 32;
  e.total_steps = 8000;
  e.warmup_steps = (v == Variant::F || v == Variant::P) ? 400 : 800;
  e.weight_decay = 5e-2;
  e.max_weight_decay = 5e-1;
  e.clip_norm = 1.0;

  auto& f = c.finetune.optim;
  f.base_lr = 1e-4;
  f.batch_size = 32;
  f.total_steps = 400;
  f.warmup_steps = 20;
  f.weight_decay = 1e-5;
  f.max_weight_decay = 1e-5;
  f.clip_norm = 3.0;
  f.label_smoothing = 0.1;
  c.finetune.baseline_warmup_steps = 40;
  return c;
}

void RunConfig::validate() const {
  try {
    const Variant v = parse_variant(variant);
    model_config(v, Index(data.series_labels.size()), base_channels);
    data.validate();
    augment.validate();
    backbone.optim.validate();
    backbone.head.validate();
    encoder.optim.validate();
    finetune.optim.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& ex) {
    throw ConfigError(ex.what());
  }
  if (max_sequence_length < 1) throw ConfigError("max_sequence_length must be at least 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  if (!(dev_fraction > 0.0 && dev_fraction < 1.0)) throw ConfigError("dev_fraction must lie in (0, 1)");
  if (!(backbone.ema_momentum >= 0.0 && backbone.ema_momentum <= 1.0)) throw ConfigError("ema momentum must lie in [0, 1]");
  if (!(encoder.shuffle_probability >= 0.0 && encoder.shuffle_probability <= 1.0))
    throw ConfigError("shuffle probability must lie in [0, 1]");
  if (finetune.baseline_warmup_steps < 0 || finetune.baseline_warmup_steps > finetune.optim.total_steps)
    throw ConfigError("baseline warmup must lie within the fine-tuning schedule");
  if (finetune.positive_weight && !(*finetune.positive_weight > 0.0))
    throw ConfigError("explicit positive-class weight must be positive");
  if (finetune.seeds.empty()) throw ConfigError("need at least one fine-tuning seed");
  if (evaluate.calibration_bins < 1) throw ConfigError("need at least one calibration bin");
  for (Index crop : {backbone.global_crop, backbone.local_crop, encoder.crop, finetune.crop, evaluate.crop}) {
    if (crop < 3 || crop % 3 != 0) throw ConfigError("crop sizes must be positive multiples of 3");
    for (Index d : data.dims)
      if (crop > d) throw ConfigError("crop size " + std::to_string(crop) + " exceeds the volume size");
  }
}

json to_json(const RunConfig& c) {
  json data, augment, head;
  to_json(data, c.data);
  to_json(augment, c.augment);
  to_json(head, c.backbone.head);
  json bopt, eopt, fopt;
  to_json(bopt, c.backbone.optim);
  to_json(eopt, c.encoder.optim);
  to_json(fopt, c.finetune.optim);
  json paths = {{"out", c.out.string()}};
  if (c.cohort_dir) paths["cohort"] = c.cohort_dir->string();
  if (c.checkpoint_dir) paths["checkpoints"] = c.checkpoint_dir->string();
  if (c.report_dir) paths["reports"] = c.report_dir->string();
  return json{
      {"variant", c.variant},
      {"base_channels", c.base_channels ? json(*c.base_channels) : json(nullptr)},
      {"seed", c.seed},
      {"max_sequence_length", c.max_sequence_length},
      {"dropout", c.dropout},
      {"dev_fraction", c.dev_fraction},
      {"split_seed", c.split_seed},
      {"paths", paths},
      {"data", data},
      {"augment", augment},
      {"pretrain_backbone",
       {{"optimizer", bopt},
        {"global_crop", c.backbone.global_crop},
        {"local_crop", c.backbone.local_crop},
        {"ema_momentum", c.backbone.ema_momentum},
        {"head", head}}},
      {"pretrain_encoder",
       {{"optimizer", eopt}, {"crop", c.encoder.crop}, {"shuffle_probability", c.encoder.shuffle_probability}}},
      {"finetune",
       {{"optimizer", fopt},
        {"baseline_warmup_steps", c.finetune.baseline_warmup_steps},
        {"positive_weight", c.finetune.positive_weight ? json(*c.finetune.positive_weight) : json("auto")},
        {"seeds", c.finetune.seeds},
        {"crop", c.finetune.crop}}},
      {"evaluate",
       {{"crop", c.evaluate.crop},
        {"calibration_bins", c.evaluate.calibration_bins},
        {"gain_normalization", gain_mode_name(c.evaluate.gain_mode)}}}};
}

RunConfig config_from_json(const json& j) {
  try {
    RunConfig c = default_config(j.value("variant", std::string("P")));
    if (j.contains("base_channels") && !j["base_channels"].is_null()) c.base_channels = j["base_channels"].get<Index>();
    c.seed = j.value("seed", c.seed);
    c.max_sequence_length = j.value("max_sequence_length", c.max_sequence_length);
    c.dropout = j.value("dropout", c.dropout);
    c.dev_fraction = j.value("dev_fraction", c.dev_fraction);
    c.split_seed = j.value("split_seed", c.split_seed);
    if (j.contains("paths")) {
      const auto& p = j["paths"];
      if (p.contains("out")) c.out = p["out"].get<std::string>();
      if (p.contains("cohort")) c.cohort_dir = p["cohort"].get<std::string>();
      if (p.contains("checkpoints")) c.checkpoint_dir = p["checkpoints"].get<std::string>();
      if (p.contains("reports")) c.report_dir = p["reports"].get<std::string>();
    }
    if (j.contains("data")) from_json(j["data"], c.data);
    if (j.contains("augment")) from_json(j["augment"], c.augment);
    if (j.contains("pretrain_backbone")) {
      const auto& s = j["pretrain_backbone"];
      if (s.contains("optimizer")) from_json(s["optimizer"], c.backbone.optim);
      if (s.contains("head")) from_json(s["head"], c.backbone.head);
      c.backbone.global_crop = s.value("global_crop", c.backbone.global_crop);
      c.backbone.local_crop = s.value("local_crop", c.backbone.local_crop);
      c.backbone.ema_momentum = s.value("ema_momentum", c.backbone.ema_momentum);
    }
    if (j.contains("pretrain_encoder")) {
      const auto& s = j["pretrain_encoder"];
      if (s.contains("optimizer")) from_json(s["optimizer"], c.encoder.optim);
      c.encoder.crop = s.value("crop", c.encoder.crop);
      c.encoder.shuffle_probability = s.value("shuffle_probability", c.encoder.shuffle_probability);
    }
    if (j.contains("finetune")) {
      const auto& s = j["finetune"];
      if (s.contains("optimizer")) from_json(s["optimizer"], c.finetune.optim);
      c.finetune.baseline_warmup_steps = s.value("baseline_warmup_steps", c.finetune.baseline_warmup_steps);
      if (s.contains("positive_weight")) {
        const auto& w = s["positive_weight"];
        if (w.is_string()) {
          if (w.get<std::string>() != "auto") throw ConfigError("positive_weight must be a number or \"auto\"");
          c.finetune.positive_weight.reset();
        } else {
          c.finetune.positive_weight = w.get<double>();
        }
      }
      if (s.contains("seeds")) c.finetune.seeds = s["seeds"].get<std::vector<std::uint64_t>>();
      c.finetune.crop = s.value("crop", c.finetune.crop);
    }
    if (j.contains("evaluate")) {
      const auto& s = j["evaluate"];
      c.evaluate.crop = s.value("crop", c.evaluate.crop);
      c.evaluate.calibration_bins = s.value("calibration_bins", c.evaluate.calibration_bins);
      if (s.contains("gain_normalization")) c.evaluate.gain_mode = parse_gain_mode(s["gain_normalization"]);
    }
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

RunConfig resolve_config(const std::optional<std::filesystem::path>& config_file, const Overrides& flags, Stage stage) {
  json j = json::object();
  if (config_file) {
    std::ifstream is(*config_file);
    if (!is) throw ConfigError("cannot read config file " + config_file->string());
    try {
      is >> j;
    } catch (const json::exception& e) {
      throw ConfigError("config file is not valid JSON: " + std::string(e.what()));
    }
  }
  if (flags.variant) j["variant"] = *flags.variant;
  RunConfig c = config_from_json(j);
  if (flags.out) c.out = *flags.out;
  if (flags.seed) {
    switch (stage) {
      case Stage::GenData: c.data.seed = *flags.seed; break;
      case Stage::Finetune:
      case Stage::Baseline:
      case Stage::Evaluate: c.finetune.seeds = {*flags.seed}; break;
      default: c.seed = *flags.seed;
    }
  }
  if (flags.steps && *flags.steps < 1) throw ConfigError("--steps must be at least 1");
  if (flags.batch_size && *flags.batch_size < 1) throw ConfigError("--batch-size must be at least 1");
  OptimizerConfig* target = nullptr;
  switch (stage) {
    case Stage::PretrainBackbone: target = &c.backbone.optim; break;
    case Stage::PretrainEncoder: target = &c.encoder.optim; break;
    case Stage::Finetune:
    case Stage::Baseline: target = &c.finetune.optim; break;
    default: break;
  }
  if (target) {
    if (flags.steps)
      rescale_steps(*target, *flags.steps, target == &c.finetune.optim ? &c.finetune.baseline_warmup_steps : nullptr);
    if (flags.batch_size) target->batch_size = *flags.batch_size;
  }
  c.validate();
  return c;
}

}  // namespace hccnet

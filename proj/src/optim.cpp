#include "hccnet/optim.hpp"

#include "hccnet/ops.hpp"

#include <numbers>

namespace hccnet {

using nlohmann::json;

void OptimizerConfig::validate() const {
  if (batch_size < 1) throw std::invalid_argument("batch size must be at least 1");
  if (total_steps < 1 || warmup_steps < 0 || warmup_steps > total_steps)
    throw std::invalid_argument("need 0 <= warmup <= total steps");
  if (!(clip_norm > 0.0)) throw std::invalid_argument("gradient clip must be positive");
  if (!(label_smoothing >= 0.0 && label_smoothing < 0.5)) throw std::invalid_argument("label smoothing must lie in [0, 0.5)");
  if (base_lr <= 0.0 || min_lr < 0.0) throw std::invalid_argument("learning rates must be positive");
}

void to_json(json& j, const OptimizerConfig& c) {
  j = json{{"base_lr", c.base_lr},           {"batch_size", c.batch_size},
           {"warmup_steps", c.warmup_steps}, {"total_steps", c.total_steps},
           {"min_lr", c.min_lr},             {"weight_decay", c.weight_decay},
           {"max_weight_decay", c.max_weight_decay}, {"clip_norm", c.clip_norm},
           {"label_smoothing", c.label_smoothing},   {"beta1", c.beta1},
           {"beta2", c.beta2},               {"eps", c.eps}};
}

void from_json(const json& j, OptimizerConfig& c) {
  const OptimizerConfig d = c;
  c.base_lr = j.value("base_lr", d.base_lr);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.warmup_steps = j.value("warmup_steps", d.warmup_steps);
  c.total_steps = j.value("total_steps", d.total_steps);
  c.min_lr = j.value("min_lr", d.min_lr);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.max_weight_decay = j.value("max_weight_decay", d.max_weight_decay);
  c.clip_norm = j.value("clip_norm", d.clip_norm);
  c.label_smoothing = j.value("label_smoothing", d.label_smoothing);
  c.beta1 = j.value("beta1", d.beta1);
  c.beta2 = j.value("beta2", d.beta2);
  c.eps = j.value("eps", d.eps);
}

double scaled_base_lr(double alpha, Index batch_size) {
  if (batch_size < 1) throw std::invalid_argument("batch size must be at least 1");
  return alpha * std::sqrt(double(batch_size)) / std::sqrt(128.0);
}

double lr_at_step(Index step, const OptimizerConfig& cfg) {
  const double peak = scaled_base_lr(cfg.base_lr, cfg.batch_size);
  if (step < cfg.warmup_steps) return peak * double(step) / double(cfg.warmup_steps);
  const Index span = cfg.total_steps - cfg.warmup_steps;
  if (span <= 0 || step == cfg.warmup_steps) return peak;
  if (step >= cfg.total_steps) return cfg.min_lr;
  const double progress = std::min(1.0, double(step - cfg.warmup_steps) / double(span));
  return cfg.min_lr + (peak - cfg.min_lr) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

double wd_at_step(Index step, const OptimizerConfig& cfg) {
  if (cfg.weight_decay == cfg.max_weight_decay || step <= 0) return cfg.weight_decay;
  if (step >= cfg.total_steps) return cfg.max_weight_decay;
  const double progress = std::clamp(double(step) / double(cfg.total_steps), 0.0, 1.0);
  return cfg.max_weight_decay +
         (cfg.weight_decay - cfg.max_weight_decay) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

double ema_momentum_at_step(Index step, Index total_steps, double base) {
  const double progress = total_steps > 0 ? std::clamp(double(step) / double(total_steps), 0.0, 1.0) : 1.0;
  return 1.0 - (1.0 - base) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

std::optional<double> resolve_positive_weight(const std::vector<int>& labels) {
  std::size_t pos = 0;
  for (int y : labels) pos += y == 1;
  if (pos == 0) return std::nullopt;
  return double(labels.size() - pos) / double(pos);
}

double class_balanced_bce(const std::vector<double>& probs, const std::vector<int>& labels, double omega,
                          double smoothing) {
  if (probs.empty() || probs.size() != labels.size()) throw std::invalid_argument("empty or misaligned batch");
  double total = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double t = labels[i] * (1.0 - smoothing) + smoothing / 2.0;
    total -= omega * t * std::log(probs[i]) + (1.0 - t) * std::log1p(-probs[i]);
  }
  return total / double(probs.size());
}

LossAndGrad class_balanced_bce_logits(const std::vector<double>& logits, const std::vector<int>& labels, double omega,
                                      double smoothing) {
  if (logits.empty() || logits.size() != labels.size()) throw std::invalid_argument("empty or misaligned batch");
  LossAndGrad out;
  out.dlogits.resize(logits.size());
  const double n = double(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double z = logits[i];
    const double t = labels[i] * (1.0 - smoothing) + smoothing / 2.0;
    // ln p = −softplus(−z), ln(1−p) = −softplus(z)
    out.loss += omega * t * ops::softplus(-z) + (1.0 - t) * ops::softplus(z);
    const double p = ops::sigmoid(z);
    out.dlogits[i] = (-omega * t * (1.0 - p) + (1.0 - t) * p) / n;
  }
  out.loss /= n;
  return out;
}

}  // namespace hccnet

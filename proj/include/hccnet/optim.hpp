#pragma once

#include "hccnet/core.hpp"

#include <json.hpp>

#include <cmath>
#include <optional>

namespace hccnet {

struct OptimizerConfig {
  double base_lr = 4e-4;       // α, the rate at the reference batch size 128
  Index batch_size = 128;      // effective batch size b
  Index warmup_steps = 1600;
  Index total_steps = 32000;
  double min_lr = 1e-6;
  double weight_decay = 5e-2;
  double max_weight_decay = 5e-1;
  double clip_norm = 1.0;
  double label_smoothing = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
};

void to_json(nlohmann::json& j, const OptimizerConfig& c);
void from_json(const nlohmann::json& j, OptimizerConfig& c);

/// η = α·sqrt(b)/sqrt(128).
double scaled_base_lr(double alpha, Index batch_size);

/// Linear warmup to η then cosine decay to min_lr at total_steps.
double lr_at_step(Index step, const OptimizerConfig& cfg);

/// Cosine ramp from weight_decay (step 0) to max_weight_decay (final step);
/// constant when both are equal.
double wd_at_step(Index step, const OptimizerConfig& cfg);

/// EMA momentum: cosine ascent from `base` to 1 over the run.
double ema_momentum_at_step(Index step, Index total_steps, double base = 0.9995);

/// Decoupled-weight-decay Adam. Decay touches only decay-eligible tensors;
/// tensors outside `trainable` are left untouched.
template <typename Scalar>
class AdamW {
 public:
  AdamW() = default;
  AdamW(const ParameterStore<Scalar>& store, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (std::size_t h = 0; h < store.size(); ++h) {
      m_.push_back(Vec<Scalar>::Zero(store.value(h).size()));
      v_.push_back(Vec<Scalar>::Zero(store.value(h).size()));
    }
  }

  Index step_count() const { return t_; }
  Vec<Scalar>& first_moment(std::size_t h) { return m_[h]; }
  Vec<Scalar>& second_moment(std::size_t h) { return v_[h]; }
  void set_step_count(Index t) { t_ = t; }

  /// Clips `grads` in place to global norm `clip` (when clip > 0), then
  /// updates. Returns the pre-clip global norm over trainable tensors.
  double step(ParameterStore<Scalar>& store, Gradients<Scalar>& grads, double lr, double wd, double clip,
              const std::vector<bool>* trainable = nullptr) {
    if (grads.size() != store.size() || m_.size() != store.size())
      throw ShapeError("gradient buffers are not aligned with the parameter store");
    auto active = [&](std::size_t h) { return !trainable || (*trainable)[h]; };
    double sq = 0.0;
    for (std::size_t h = 0; h < store.size(); ++h) {
      if (grads[h].size() != store.value(h).size()) throw ShapeError("gradient shape mismatch for " + store.info(h).name);
      if (active(h)) sq += double(grads[h].squaredNorm());
    }
    const double norm = std::sqrt(sq);
    if (clip > 0.0 && norm > clip) {
      const Scalar f = Scalar(clip / norm);
      for (std::size_t h = 0; h < store.size(); ++h)
        if (active(h)) grads[h] *= f;
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, double(t_));
    const double bc2 = 1.0 - std::pow(beta2_, double(t_));
    const Scalar b1 = Scalar(beta1_), b2 = Scalar(beta2_);
    for (std::size_t h = 0; h < store.size(); ++h) {
      if (!active(h)) continue;
      auto& p = store.value(h);
      const auto& g = grads[h];
      if (store.info(h).decay_eligible && wd != 0.0) p *= Scalar(1.0 - lr * wd);
      m_[h] = b1 * m_[h] + (Scalar(1) - b1) * g;
      v_[h] = b2 * v_[h] + (Scalar(1) - b2) * g.cwiseAbs2();
      const Scalar step_size = Scalar(lr / bc1);
      const Scalar denom_scale = Scalar(1.0 / std::sqrt(bc2));
      p.array() -= step_size * m_[h].array() / (v_[h].array().sqrt() * denom_scale + Scalar(eps_));
    }
    return norm;
  }

 private:
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  Index t_ = 0;
  std::vector<Vec<Scalar>> m_, v_;
};

// ---- losses ----------------------------------------------------------------

/// Positive-class weight ω = N_neg / N_pos; nullopt when there are no positives.
std::optional<double> resolve_positive_weight(const std::vector<int>& labels);

/// Mean of −[ω·ỹ·ln p + (1−ỹ)·ln(1−p)] with ỹ = y(1−ε) + ε/2.
double class_balanced_bce(const std::vector<double>& probs, const std::vector<int>& labels, double omega,
                          double smoothing);

struct LossAndGrad {
  double loss = 0.0;
  std::vector<double> dlogits;
};

/// Same loss evaluated from logits, with dL/dlogit per example.
LossAndGrad class_balanced_bce_logits(const std::vector<double>& logits, const std::vector<int>& labels, double omega,
                                      double smoothing);

}  // namespace hccnet

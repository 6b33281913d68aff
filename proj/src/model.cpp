#include "hccnet/model.hpp"

#include <cmath>

namespace hccnet {

Variant parse_variant(const std::string& tag) {
  if (tag == "F" || tag == "f") return Variant::F;
  if (tag == "P" || tag == "p") return Variant::P;
  if (tag == "N" || tag == "n") return Variant::N;
  if (tag == "T" || tag == "t") return Variant::T;
  throw std::invalid_argument("unknown variant '" + tag + "' (expected F, P, N or T)");
}

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::F: return "F";
    case Variant::P: return "P";
    case Variant::N: return "N";
    case Variant::T: return "T";
  }
  return "?";
}

BackboneConfig backbone_config(Variant v, Index input_channels) {
  BackboneConfig c;
  c.input_channels = input_channels;
  switch (v) {
    case Variant::F: c.base_channels = 48; c.blocks = {2, 2, 6, 2}; break;
    case Variant::P: c.base_channels = 64; c.blocks = {2, 2, 6, 2}; break;
    case Variant::N: c.base_channels = 80; c.blocks = {2, 2, 8, 2}; break;
    case Variant::T: c.base_channels = 96; c.blocks = {3, 3, 9, 3}; break;
  }
  return c;
}

void EncoderConfig::validate() const {
  if (hidden < 2 || hidden % 2 != 0) throw std::invalid_argument("encoder hidden size must be even");
  if (heads < 1 || hidden % heads != 0) throw std::invalid_argument("hidden size must be divisible by heads");
  if (layers < 0 || ff_dim < 1) throw std::invalid_argument("invalid encoder depth or width");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("dropout must lie in [0, 1)");
  if (max_length < 1) throw std::invalid_argument("max sequence length must be at least 1");
}

EncoderConfig encoder_config(Variant v) {
  EncoderConfig c;
  c.hidden = backbone_config(v, 1).embedding_dim();
  c.heads = c.hidden / 128;
  c.ff_dim = 4 * c.hidden;
  c.layers = (v == Variant::F || v == Variant::P) ? 4 : 6;
  return c;
}

ModelConfig model_config(Variant v, Index input_channels, std::optional<Index> base_channels) {
  ModelConfig m;
  m.variant = v;
  m.backbone = backbone_config(v, input_channels);
  m.encoder = encoder_config(v);
  if (base_channels) {
    if (*base_channels < 16 || *base_channels % 16 != 0)
      throw std::invalid_argument("base_channels override must be a positive multiple of 16");
    m.backbone.base_channels = *base_channels;
    m.encoder.hidden = m.backbone.embedding_dim();
    m.encoder.heads = m.encoder.hidden / 128;
    m.encoder.ff_dim = 4 * m.encoder.hidden;
  }
  return m;
}

Eigen::VectorXd compute_time_deltas(const std::vector<double>& timestamps, double anchor) {
  Eigen::VectorXd d(Index(timestamps.size()) + 1);
  d[0] = 0.0;
  for (std::size_t i = 0; i < timestamps.size(); ++i) {
    const double gap = anchor - timestamps[i];
    if (!(gap >= 0.0)) throw std::invalid_argument("visit lies after the anchor (negative time distance)");
    d[Index(i) + 1] = std::sqrt(gap);
  }
  return d;
}

Eigen::VectorXd compute_time_deltas(const LabeledSequence& seq) {
  std::vector<double> ts;
  for (const auto* v : seq.visits) ts.push_back(v->timestamp);
  return compute_time_deltas(ts, seq.anchor);
}

}  // namespace hccnet

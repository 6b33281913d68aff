#pragma once

#include "hccnet/encoder.hpp"

#include <optional>

namespace hccnet {

struct ModelConfig {
  Variant variant = Variant::P;
  BackboneConfig backbone;
  EncoderConfig encoder;
};

/// Variant geometry; `base_channels` shrinks C (and with it H = 8C, A = H/128).
ModelConfig model_config(Variant v, Index input_channels, std::optional<Index> base_channels = std::nullopt);

template <typename Scalar>
struct SequenceCache {
  std::vector<BackboneCache<Scalar>> visits;
  EncoderCache<Scalar> encoder;
  PoolerCache<Scalar> pooler;
  std::vector<std::size_t> order;  // visit embedding placed in token slot i+1
};

/// Backbone F, [cls] token, encoder G and pooling head φ in one parameter
/// store under the prefixes "backbone.", "encoder.", "cls_token", "pooler.".
class SequenceModel {
 public:
  SequenceModel() = default;

  template <typename Scalar>
  SequenceModel(const ModelConfig& cfg, ParameterStore<Scalar>& s)
      : cfg_(cfg), backbone_(cfg.backbone, s), encoder_(cfg.encoder, s) {
    if (cfg.backbone.embedding_dim() != cfg.encoder.hidden)
      throw ShapeError("backbone embedding dim must equal encoder hidden size");
    cls_ = s.add({"encoder.cls_token", {cfg.encoder.hidden}, InitKind::Normal, false, true});
    pooler_ = PoolerHead(s, cfg.encoder.hidden);
  }

  const ModelConfig& config() const { return cfg_; }
  const Backbone& backbone() const { return backbone_; }
  const Encoder& encoder() const { return encoder_; }
  const PoolerHead& pooler() const { return pooler_; }
  std::size_t cls_handle() const { return cls_; }

  /// Logit from precomputed visit embeddings (hidden × visits). `order`
  /// optionally permutes which embedding sits in each chronological slot;
  /// the positional encodings always follow `deltas` slot order.
  template <typename Scalar>
  Scalar forward_embeddings(const ParameterStore<Scalar>& s, const Mat<Scalar>& embeddings,
                            const Eigen::VectorXd& deltas, Rng* dropout_rng, SequenceCache<Scalar>* cache = nullptr,
                            const std::vector<std::size_t>* order = nullptr) const {
    const Index n = embeddings.cols();
    Mat<Scalar> placed(embeddings.rows(), n);
    for (Index i = 0; i < n; ++i) placed.col(i) = embeddings.col(order ? Index((*order)[std::size_t(i)]) : i);
    Mat<Scalar> pe = sinusoidal_pe<Scalar>(deltas, cfg_.encoder.hidden);
    Mat<Scalar> tokens = assemble_sequence<Scalar>(placed, s.value(cls_), pe);
    Mat<Scalar> out = encoder_.forward(s, tokens, tokens.cols(), dropout_rng, cache ? &cache->encoder : nullptr);
    if (cache) {
      cache->order.resize(std::size_t(n));
      for (Index i = 0; i < n; ++i) cache->order[std::size_t(i)] = order ? (*order)[std::size_t(i)] : std::size_t(i);
    }
    return pooler_.forward(s, Vec<Scalar>(out.col(0)), cache ? &cache->pooler : nullptr);
  }

  /// Returns dL/dembeddings (hidden × visits, in the caller's embedding order).
  template <typename Scalar>
  Mat<Scalar> backward_embeddings(const ParameterStore<Scalar>& s, const SequenceCache<Scalar>& c, Scalar dlogit,
                                  Gradients<Scalar>& g) const {
    Vec<Scalar> dcls = pooler_.backward(s, c.pooler, dlogit, g);
    const Index T = Index(c.order.size()) + 1;
    Mat<Scalar> dout = Mat<Scalar>::Zero(cfg_.encoder.hidden, T);
    dout.col(0) = dcls;
    Mat<Scalar> dtokens = encoder_.backward(s, c.encoder, dout, g);
    g[cls_] += dtokens.col(0);
    Mat<Scalar> demb(cfg_.encoder.hidden, T - 1);
    for (Index i = 0; i + 1 < T; ++i) demb.col(Index(c.order[std::size_t(i)])) = dtokens.col(i + 1);
    return demb;
  }

  /// End-to-end logit for a chronological list of visit volumes.
  template <typename Scalar>
  Scalar forward(const ParameterStore<Scalar>& s, const std::vector<Volume>& visits, const Eigen::VectorXd& deltas,
                 Rng* dropout_rng, SequenceCache<Scalar>* cache = nullptr) const {
    Mat<Scalar> emb(cfg_.encoder.hidden, Index(visits.size()));
    if (cache) cache->visits.resize(visits.size());
    for (std::size_t i = 0; i < visits.size(); ++i)
      emb.col(Index(i)) = backbone_.forward(s, to_feature_map<Scalar>(visits[i]), cache ? &cache->visits[i] : nullptr);
    return forward_embeddings(s, emb, deltas, dropout_rng, cache);
  }

  template <typename Scalar>
  void backward(const ParameterStore<Scalar>& s, const SequenceCache<Scalar>& c, Scalar dlogit,
                Gradients<Scalar>& g) const {
    Mat<Scalar> demb = backward_embeddings(s, c, dlogit, g);
    for (std::size_t i = 0; i < c.visits.size(); ++i)
      backbone_.backward(s, c.visits[i], Vec<Scalar>(demb.col(Index(i))), g);
  }

 private:
  ModelConfig cfg_;
  Backbone backbone_;
  Encoder encoder_;
  std::size_t cls_ = 0;
  PoolerHead pooler_;
};

/// Handles whose names start with any of `prefixes`.
template <typename Scalar>
std::vector<bool> select_prefixes(const ParameterStore<Scalar>& s, const std::vector<std::string>& prefixes) {
  std::vector<bool> mask(s.size(), false);
  for (std::size_t h = 0; h < s.size(); ++h)
    for (const auto& p : prefixes)
      if (s.info(h).name.rfind(p, 0) == 0) mask[h] = true;
  return mask;
}

}  // namespace hccnet

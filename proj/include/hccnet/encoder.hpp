#pragma once

// Time-aware Pre-LN Transformer encoder and the pooling head. Token matrices
// are hidden × tokens (one token per column); slot 0 is the [cls] token.

#include "hccnet/backbone.hpp"

#include <algorithm>
#include <cmath>

namespace hccnet {

struct EncoderConfig {
  Index hidden = 512;     // H
  Index layers = 4;       // L
  Index heads = 4;        // A
  Index ff_dim = 2048;
  double dropout = 0.2;
  Index max_length = 8;   // visits, excluding [cls]

  Index head_dim() const { return hidden / heads; }
  void validate() const;
};

/// Encoder geometry for a variant: H = 8C, A = H/128, feed-forward 4H.
EncoderConfig encoder_config(Variant v);

// ---- positional information ------------------------------------------------

/// Δt per token: 0 for [cls], then sqrt(anchor − t_i) per retained visit.
Eigen::VectorXd compute_time_deltas(const LabeledSequence& seq);
Eigen::VectorXd compute_time_deltas(const std::vector<double>& timestamps, double anchor);

/// hidden × tokens; column i holds sin/cos(u_i / 10000^(2k/H)) in rows 2k / 2k+1.
template <typename Scalar>
Mat<Scalar> sinusoidal_pe(const Eigen::VectorXd& deltas, Index hidden) {
  if (hidden % 2 != 0) throw std::invalid_argument("positional encoding needs an even hidden size");
  Mat<Scalar> pe(hidden, deltas.size());
  for (Index t = 0; t < deltas.size(); ++t)
    for (Index k = 0; k < hidden / 2; ++k) {
      const double arg = deltas[t] / std::pow(10000.0, double(2 * k) / double(hidden));
      pe(2 * k, t) = static_cast<Scalar>(std::sin(arg));
      pe(2 * k + 1, t) = static_cast<Scalar>(std::cos(arg));
    }
  return pe;
}

/// Prepends the [cls] token to the visit embeddings and adds the encodings.
template <typename Scalar>
Mat<Scalar> assemble_sequence(const Mat<Scalar>& embeddings, const Vec<Scalar>& cls_token, const Mat<Scalar>& pe) {
  if (embeddings.cols() + 1 != pe.cols() || embeddings.rows() != pe.rows() || cls_token.size() != pe.rows())
    throw ShapeError("embedding count + 1 must equal the positional-encoding row count");
  Mat<Scalar> tokens(pe.rows(), pe.cols());
  tokens.col(0) = cls_token;
  tokens.rightCols(embeddings.cols()) = embeddings;
  return tokens + pe;
}

/// Right-padded group of token matrices with per-sequence valid lengths.
template <typename Scalar>
struct SequenceBatch {
  std::vector<Mat<Scalar>> tokens;  // each hidden × padded_length
  std::vector<Index> lengths;       // valid tokens including [cls]
  Index padded_length = 0;

  /// true where the slot holds a real token.
  std::vector<bool> mask(std::size_t i) const {
    std::vector<bool> m(static_cast<std::size_t>(padded_length), false);
    for (Index t = 0; t < lengths[i]; ++t) m[static_cast<std::size_t>(t)] = true;
    return m;
  }
};

template <typename Scalar>
SequenceBatch<Scalar> pad_sequences(const std::vector<Mat<Scalar>>& sequences) {
  SequenceBatch<Scalar> b;
  for (const auto& s : sequences) b.padded_length = std::max(b.padded_length, s.cols());
  for (const auto& s : sequences) {
    Mat<Scalar> t = Mat<Scalar>::Zero(s.rows(), b.padded_length);
    t.leftCols(s.cols()) = s;
    b.tokens.push_back(std::move(t));
    b.lengths.push_back(s.cols());
  }
  return b;
}

// ---- encoder ---------------------------------------------------------------

template <typename Scalar>
struct EncoderLayerCache {
  Mat<Scalar> input, normed1, qkv, context, attn_mask, mid, normed2, hidden, activated, ff_mask;
  std::vector<Mat<Scalar>> probs;  // per head, tokens × tokens (query, key)
  ops::LayerNormCache<Scalar> norm1, norm2;
};

template <typename Scalar>
struct EncoderCache {
  std::vector<EncoderLayerCache<Scalar>> layers;
  ops::LayerNormCache<Scalar> final_norm;
  Index valid = 0;
  std::vector<Index> order;  // internal slot -> caller column
};

/// Slot order used inside the encoder: [cls] first, the other valid tokens
/// sorted lexicographically by value, padding last. Attention sums then run
/// in an order that does not depend on how the caller arranged the tokens,
/// so jointly permuted inputs give bit-identical outputs.
template <typename Scalar>
std::vector<Index> canonical_token_order(const Mat<Scalar>& tokens, Index valid) {
  std::vector<Index> order(static_cast<std::size_t>(tokens.cols()));
  for (Index i = 0; i < tokens.cols(); ++i) order[static_cast<std::size_t>(i)] = i;
  auto less = [&](Index a, Index b) {
    const Scalar* pa = tokens.col(a).data();
    const Scalar* pb = tokens.col(b).data();
    return std::lexicographical_compare(pa, pa + tokens.rows(), pb, pb + tokens.rows());
  };
  if (valid > 2) std::stable_sort(order.begin() + 1, order.begin() + valid, less);
  return order;
}

struct EncoderLayer {
  NormHandles norm1, norm2;
  LinearHandles qkv, out, ff1, ff2;

  template <typename Scalar>
  static EncoderLayer add(ParameterStore<Scalar>& s, const std::string& p, const EncoderConfig& c) {
    EncoderLayer l;
    l.norm1 = NormHandles::add(s, p + ".norm1", c.hidden);
    l.qkv = LinearHandles::add(s, p + ".attn.in_proj", c.hidden, 3 * c.hidden);
    l.out = LinearHandles::add(s, p + ".attn.out_proj", c.hidden, c.hidden);
    l.norm2 = NormHandles::add(s, p + ".norm2", c.hidden);
    l.ff1 = LinearHandles::add(s, p + ".ff.linear1", c.hidden, c.ff_dim);
    l.ff2 = LinearHandles::add(s, p + ".ff.linear2", c.ff_dim, c.hidden);
    return l;
  }
};

/// Stack of Pre-LN layers followed by a final layer norm. Keys at or beyond
/// the valid length are never attended to.
class Encoder {
 public:
  Encoder() = default;

  template <typename Scalar>
  Encoder(const EncoderConfig& cfg, ParameterStore<Scalar>& s, const std::string& prefix = "encoder") : cfg_(cfg) {
    cfg.validate();
    for (Index l = 0; l < cfg.layers; ++l)
      layers_.push_back(EncoderLayer::add(s, prefix + ".layers." + std::to_string(l), cfg));
    final_norm_ = NormHandles::add(s, prefix + ".final_norm", cfg.hidden);
  }

  const EncoderConfig& config() const { return cfg_; }

  /// `rng` enables dropout (training mode); pass nullptr for evaluation.
  template <typename Scalar>
  Mat<Scalar> forward(const ParameterStore<Scalar>& s, const Mat<Scalar>& tokens, Index valid, Rng* rng,
                      EncoderCache<Scalar>* cache = nullptr) const {
    if (tokens.rows() != cfg_.hidden) throw ShapeError("token width differs from encoder hidden size");
    if (valid < 1 || valid > tokens.cols()) throw std::invalid_argument("valid token count out of range");
    const std::vector<Index> order = canonical_token_order(tokens, valid);
    Mat<Scalar> x(tokens.rows(), tokens.cols());
    for (Index i = 0; i < x.cols(); ++i) x.col(i) = tokens.col(order[static_cast<std::size_t>(i)]);
    if (cache) {
      cache->layers.resize(layers_.size());
      cache->valid = valid;
      cache->order = order;
    }
    for (std::size_t l = 0; l < layers_.size(); ++l)
      x = layer_forward(s, layers_[l], x, valid, rng, cache ? &cache->layers[l] : nullptr);
    Mat<Scalar> y = apply_norm(s, final_norm_, x, cache ? &cache->final_norm : nullptr);
    Mat<Scalar> out(y.rows(), y.cols());
    for (Index i = 0; i < y.cols(); ++i) out.col(order[static_cast<std::size_t>(i)]) = y.col(i);
    return out;
  }

  /// Returns dL/dtokens.
  template <typename Scalar>
  Mat<Scalar> backward(const ParameterStore<Scalar>& s, const EncoderCache<Scalar>& c, const Mat<Scalar>& dy,
                       Gradients<Scalar>& g) const {
    Mat<Scalar> d(dy.rows(), dy.cols());
    for (Index i = 0; i < d.cols(); ++i) d.col(i) = dy.col(c.order[static_cast<std::size_t>(i)]);
    Mat<Scalar> dx = apply_norm_backward(s, final_norm_, d, c.final_norm, g);
    for (std::size_t l = layers_.size(); l-- > 0;) dx = layer_backward(s, layers_[l], c.layers[l], dx, c.valid, g);
    Mat<Scalar> out(dx.rows(), dx.cols());
    for (Index i = 0; i < dx.cols(); ++i) out.col(c.order[static_cast<std::size_t>(i)]) = dx.col(i);
    return out;
  }

 private:
  template <typename Scalar>
  Mat<Scalar> layer_forward(const ParameterStore<Scalar>& s, const EncoderLayer& L, const Mat<Scalar>& x, Index valid,
                            Rng* rng, EncoderLayerCache<Scalar>* c) const {
    const Index H = cfg_.hidden, T = x.cols(), dh = cfg_.head_dim();
    const Scalar scale = Scalar(1) / std::sqrt(Scalar(dh));
    ops::LayerNormCache<Scalar> nc1, nc2;
    Mat<Scalar> n1 = apply_norm(s, L.norm1, x, c ? &nc1 : nullptr);
    Mat<Scalar> qkv = apply_linear(s, L.qkv, n1);
    Mat<Scalar> context(H, T);
    std::vector<Mat<Scalar>> probs(static_cast<std::size_t>(cfg_.heads));
    for (Index h = 0; h < cfg_.heads; ++h) {
      auto q = qkv.middleRows(h * dh, dh);
      auto k = qkv.middleRows(H + h * dh, dh).leftCols(valid);
      auto v = qkv.middleRows(2 * H + h * dh, dh).leftCols(valid);
      Mat<Scalar> scores = (q.transpose() * k) * scale;  // T × valid
      Mat<Scalar> p(T, valid);
      for (Index i = 0; i < T; ++i) {
        const Scalar m = scores.row(i).maxCoeff();
        p.row(i) = (scores.row(i).array() - m).exp();
        p.row(i) /= p.row(i).sum();
      }
      context.middleRows(h * dh, dh).noalias() = v * p.transpose();
      probs[static_cast<std::size_t>(h)] = std::move(p);
    }
    Mat<Scalar> attn = apply_linear(s, L.out, context);
    Mat<Scalar> attn_mask, ff_mask;
    if (rng && cfg_.dropout > 0.0) {
      attn_mask = ops::dropout_mask<Scalar>(H, T, cfg_.dropout, *rng);
      attn = attn.cwiseProduct(attn_mask);
    }
    Mat<Scalar> mid = x + attn;
    Mat<Scalar> n2 = apply_norm(s, L.norm2, mid, c ? &nc2 : nullptr);
    Mat<Scalar> hid = apply_linear(s, L.ff1, n2);
    Mat<Scalar> act = ops::gelu(hid);
    Mat<Scalar> ff = apply_linear(s, L.ff2, act);
    if (rng && cfg_.dropout > 0.0) {
      ff_mask = ops::dropout_mask<Scalar>(H, T, cfg_.dropout, *rng);
      ff = ff.cwiseProduct(ff_mask);
    }
    Mat<Scalar> y = mid + ff;
    if (c) {
      c->input = x;
      c->normed1 = std::move(n1);
      c->qkv = std::move(qkv);
      c->context = std::move(context);
      c->probs = std::move(probs);
      c->attn_mask = std::move(attn_mask);
      c->mid = std::move(mid);
      c->normed2 = std::move(n2);
      c->hidden = std::move(hid);
      c->activated = std::move(act);
      c->ff_mask = std::move(ff_mask);
      c->norm1 = std::move(nc1);
      c->norm2 = std::move(nc2);
    }
    return y;
  }

  template <typename Scalar>
  Mat<Scalar> layer_backward(const ParameterStore<Scalar>& s, const EncoderLayer& L, const EncoderLayerCache<Scalar>& c,
                             const Mat<Scalar>& dy, Index valid, Gradients<Scalar>& g) const {
    const Index H = cfg_.hidden, T = dy.cols(), dh = cfg_.head_dim();
    const Scalar scale = Scalar(1) / std::sqrt(Scalar(dh));
    // Feed-forward branch.
    Mat<Scalar> dff = c.ff_mask.size() ? Mat<Scalar>(dy.cwiseProduct(c.ff_mask)) : dy;
    Mat<Scalar> dact = apply_linear_backward(s, L.ff2, dff, c.activated, g);
    Mat<Scalar> dhid = ops::gelu_backward(dact, c.hidden);
    Mat<Scalar> dn2 = apply_linear_backward(s, L.ff1, dhid, c.normed2, g);
    Mat<Scalar> dmid = dy + apply_norm_backward(s, L.norm2, dn2, c.norm2, g);
    // Attention branch.
    Mat<Scalar> dattn = c.attn_mask.size() ? Mat<Scalar>(dmid.cwiseProduct(c.attn_mask)) : dmid;
    Mat<Scalar> dcontext = apply_linear_backward(s, L.out, dattn, c.context, g);
    Mat<Scalar> dqkv = Mat<Scalar>::Zero(3 * H, T);
    for (Index h = 0; h < cfg_.heads; ++h) {
      const auto& p = c.probs[static_cast<std::size_t>(h)];
      auto q = c.qkv.middleRows(h * dh, dh);
      auto k = c.qkv.middleRows(H + h * dh, dh).leftCols(valid);
      auto v = c.qkv.middleRows(2 * H + h * dh, dh).leftCols(valid);
      auto dctx = dcontext.middleRows(h * dh, dh);
      dqkv.middleRows(2 * H + h * dh, dh).leftCols(valid).noalias() = dctx * p;
      Mat<Scalar> dp = dctx.transpose() * v;  // T × valid
      Mat<Scalar> ds = p.cwiseProduct(dp);
      Vec<Scalar> row_dot = ds.rowwise().sum();
      ds -= p.cwiseProduct(row_dot.replicate(1, valid));
      ds *= scale;
      dqkv.middleRows(h * dh, dh).noalias() = k * ds.transpose();
      dqkv.middleRows(H + h * dh, dh).leftCols(valid).noalias() = q * ds;
    }
    Mat<Scalar> dn1 = apply_linear_backward(s, L.qkv, dqkv, c.normed1, g);
    return dmid + apply_norm_backward(s, L.norm1, dn1, c.norm1, g);
  }

  EncoderConfig cfg_;
  std::vector<EncoderLayer> layers_;
  NormHandles final_norm_;
};

// ---- pooling head ----------------------------------------------------------

template <typename Scalar>
struct PoolerCache {
  Mat<Scalar> input, pre_tanh, activated, normed;
  ops::LayerNormCache<Scalar> norm;
};

/// linear(H→H) → tanh → layer norm → linear(H→1); returns the logit.
struct PoolerHead {
  LinearHandles dense, classifier;
  NormHandles norm;

  PoolerHead() = default;
  template <typename Scalar>
  PoolerHead(ParameterStore<Scalar>& s, Index hidden, const std::string& prefix = "pooler") {
    dense = LinearHandles::add(s, prefix + ".dense", hidden, hidden);
    norm = NormHandles::add(s, prefix + ".norm", hidden);
    classifier = LinearHandles::add(s, prefix + ".classifier", hidden, 1);
  }

  template <typename Scalar>
  Scalar forward(const ParameterStore<Scalar>& s, const Vec<Scalar>& e_cls, PoolerCache<Scalar>* c = nullptr) const {
    Mat<Scalar> x = e_cls;
    Mat<Scalar> z = apply_linear(s, dense, x);
    Mat<Scalar> t = z.array().tanh();
    ops::LayerNormCache<Scalar> nc;
    Mat<Scalar> n = apply_norm(s, norm, t, c ? &nc : nullptr);
    const Scalar logit = apply_linear(s, classifier, n)(0, 0);
    if (c) {
      c->input = std::move(x);
      c->pre_tanh = std::move(z);
      c->activated = std::move(t);
      c->normed = std::move(n);
      c->norm = std::move(nc);
    }
    return logit;
  }

  /// dL/de_cls from dL/dlogit.
  template <typename Scalar>
  Vec<Scalar> backward(const ParameterStore<Scalar>& s, const PoolerCache<Scalar>& c, Scalar dlogit,
                       Gradients<Scalar>& g) const {
    Mat<Scalar> dl(1, 1);
    dl(0, 0) = dlogit;
    Mat<Scalar> dn = apply_linear_backward(s, classifier, dl, c.normed, g);
    Mat<Scalar> dt = apply_norm_backward(s, norm, dn, c.norm, g);
    Mat<Scalar> dz = dt.cwiseProduct((Scalar(1) - c.activated.array().square()).matrix());
    return apply_linear_backward(s, dense, dz, c.input, g).col(0);
  }
};

/// σ(φ(e_cls)); stays strictly inside (0, 1) for finite logits.
template <typename Scalar>
Scalar pool_and_classify(const ParameterStore<Scalar>& s, const PoolerHead& head, const Vec<Scalar>& e_cls) {
  return ops::probability(head.forward(s, e_cls));
}

}  // namespace hccnet

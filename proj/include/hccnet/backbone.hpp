#pragma once

// 3D ConvNeXt feature extractor. Feature maps are stored channels × voxels
// (one voxel per column, z-major then y then x), so pointwise convolutions
// are plain GEMMs and layer norm acts column-wise.

#include "hccnet/ops.hpp"
#include "hccnet/volume.hpp"

#include <array>
#include <string>

namespace hccnet {

enum class Variant { F, P, N, T };

Variant parse_variant(const std::string& tag);
std::string variant_name(Variant v);

struct BackboneConfig {
  Index base_channels = 64;             // C
  std::array<Index, 4> blocks{2, 2, 6, 2};  // B
  Index input_channels = 1;

  Index embedding_dim() const { return 8 * base_channels; }
  Index stage_channels(int stage) const { return base_channels << stage; }
};

BackboneConfig backbone_config(Variant v, Index input_channels);

template <typename Scalar>
struct FeatureMap {
  Mat<Scalar> values;  // channels × voxels
  Dims3 dims{0, 0, 0};

  Index channels() const { return values.rows(); }
};

template <typename Scalar>
FeatureMap<Scalar> to_feature_map(const Volume& v) {
  FeatureMap<Scalar> f;
  f.dims = v.dims;
  f.values = Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
                 v.data.data(), v.channels, v.voxels())
                 .template cast<Scalar>();
  return f;
}

namespace conv {

/// Output extent of a non-overlapping k-stride-k convolution: floor(d/k),
/// but never below 1 (missing taps read zeros).
inline Dims3 patch_dims(const Dims3& in, Index k) {
  return {std::max<Index>(1, in[0] / k), std::max<Index>(1, in[1] / k), std::max<Index>(1, in[2] / k)};
}

/// Gathers k³ non-overlapping patches into columns; row = tap * C + channel.
template <typename Scalar>
Mat<Scalar> patchify(const Mat<Scalar>& x, const Dims3& in, Index k, Dims3& out) {
  out = patch_dims(in, k);
  const Index c = x.rows();
  Mat<Scalar> p = Mat<Scalar>::Zero(k * k * k * c, voxel_count(out));
  for (Index oz = 0, o = 0; oz < out[0]; ++oz)
    for (Index oy = 0; oy < out[1]; ++oy)
      for (Index ox = 0; ox < out[2]; ++ox, ++o)
        for (Index kz = 0, tap = 0; kz < k; ++kz)
          for (Index ky = 0; ky < k; ++ky)
            for (Index kx = 0; kx < k; ++kx, ++tap) {
              const Index z = oz * k + kz, y = oy * k + ky, xx = ox * k + kx;
              if (z >= in[0] || y >= in[1] || xx >= in[2]) continue;
              p.block(tap * c, o, c, 1) = x.col((z * in[1] + y) * in[2] + xx);
            }
  return p;
}

/// Adjoint of `patchify`.
template <typename Scalar>
Mat<Scalar> unpatchify(const Mat<Scalar>& dp, const Dims3& in, Index k, const Dims3& out, Index c) {
  Mat<Scalar> dx = Mat<Scalar>::Zero(c, voxel_count(in));
  for (Index oz = 0, o = 0; oz < out[0]; ++oz)
    for (Index oy = 0; oy < out[1]; ++oy)
      for (Index ox = 0; ox < out[2]; ++ox, ++o)
        for (Index kz = 0, tap = 0; kz < k; ++kz)
          for (Index ky = 0; ky < k; ++ky)
            for (Index kx = 0; kx < k; ++kx, ++tap) {
              const Index z = oz * k + kz, y = oy * k + ky, xx = ox * k + kx;
              if (z >= in[0] || y >= in[1] || xx >= in[2]) continue;
              dx.col((z * in[1] + y) * in[2] + xx) += dp.block(tap * c, o, c, 1);
            }
  return dx;
}

// Visits every (tap, output run, input run) triple of a 3³ depthwise
// convolution with zero padding 1. Runs are contiguous along x.
template <typename F>
void for_each_depthwise_run(const Dims3& d, F&& f) {
  for (Index kz = -1, tap = 0; kz <= 1; ++kz)
    for (Index ky = -1; ky <= 1; ++ky)
      for (Index kx = -1; kx <= 1; ++kx, ++tap) {
        const Index x0 = std::max<Index>(0, -kx), x1 = std::min<Index>(d[2], d[2] - kx);
        if (x1 <= x0) continue;
        for (Index z = 0; z < d[0]; ++z) {
          const Index sz = z + kz;
          if (sz < 0 || sz >= d[0]) continue;
          for (Index y = 0; y < d[1]; ++y) {
            const Index sy = y + ky;
            if (sy < 0 || sy >= d[1]) continue;
            const Index out = (z * d[1] + y) * d[2] + x0;
            const Index in = (sz * d[1] + sy) * d[2] + x0 + kx;
            f(tap, out, in, x1 - x0);
          }
        }
      }
}

/// Depthwise 3³ convolution, padding 1; `w` is channels × 27.
template <typename Scalar, typename W>
Mat<Scalar> depthwise3(const Mat<Scalar>& x, const Dims3& d, const W& w, const Vec<Scalar>& bias) {
  Mat<Scalar> y = bias.replicate(1, x.cols());
  for_each_depthwise_run(d, [&](Index tap, Index out, Index in, Index len) {
    y.middleCols(out, len).array() += x.middleCols(in, len).array().colwise() * w.col(tap).array();
  });
  return y;
}

template <typename Scalar, typename W>
Mat<Scalar> depthwise3_backward(const Mat<Scalar>& dy, const Mat<Scalar>& x, const Dims3& d, const W& w,
                                Eigen::Map<Mat<Scalar>> dw, Vec<Scalar>& dbias) {
  dbias += dy.rowwise().sum();
  Mat<Scalar> dx = Mat<Scalar>::Zero(x.rows(), x.cols());
  for_each_depthwise_run(d, [&](Index tap, Index out, Index in, Index len) {
    dx.middleCols(in, len).array() += dy.middleCols(out, len).array().colwise() * w.col(tap).array();
    dw.col(tap) += (x.middleCols(in, len).cwiseProduct(dy.middleCols(out, len))).rowwise().sum();
  });
  return dx;
}

}  // namespace conv

// ---- layers ----------------------------------------------------------------

/// Handles of one LayerNorm's parameters.
struct NormHandles {
  std::size_t scale = 0, shift = 0;

  template <typename Scalar>
  static NormHandles add(ParameterStore<Scalar>& s, const std::string& name, Index n) {
    return {s.add_norm_scale(name + ".weight", n), s.add_norm_shift(name + ".bias", n)};
  }
};

template <typename Scalar>
Mat<Scalar> apply_norm(const ParameterStore<Scalar>& s, const NormHandles& h, const Mat<Scalar>& x,
                       ops::LayerNormCache<Scalar>* cache) {
  return ops::layer_norm(x, s.value(h.scale), s.value(h.shift), cache);
}

template <typename Scalar>
Mat<Scalar> apply_norm_backward(const ParameterStore<Scalar>& s, const NormHandles& h, const Mat<Scalar>& dy,
                                const ops::LayerNormCache<Scalar>& cache, Gradients<Scalar>& g) {
  return ops::layer_norm_backward(dy, s.value(h.scale), cache, g[h.scale], g[h.shift]);
}

struct LinearHandles {
  std::size_t weight = 0, bias = 0;

  template <typename Scalar>
  static LinearHandles add(ParameterStore<Scalar>& s, const std::string& name, Index in, Index out) {
    return {s.add_weight(name + ".weight", {out, in}), s.add_bias(name + ".bias", out)};
  }
};

template <typename Scalar>
Mat<Scalar> apply_linear(const ParameterStore<Scalar>& s, const LinearHandles& h, const Mat<Scalar>& x) {
  return ops::linear(x, s.matrix(h.weight), s.value(h.bias));
}

template <typename Scalar>
Mat<Scalar> apply_linear_backward(const ParameterStore<Scalar>& s, const LinearHandles& h, const Mat<Scalar>& dy,
                                  const Mat<Scalar>& x, Gradients<Scalar>& g) {
  return ops::linear_backward(dy, x, s.matrix(h.weight), g.matrix(h.weight), &g[h.bias]);
}

/// Patchify stem: 3³ stride-3 convolution followed by channel layer norm.
struct StemLayer {
  std::size_t weight = 0, bias = 0;  // weight [C, 3, 3, 3, Cin]
  NormHandles norm;

  template <typename Scalar>
  static StemLayer add(ParameterStore<Scalar>& s, const std::string& p, Index in, Index out) {
    StemLayer l;
    l.weight = s.add_weight(p + ".conv.weight", {out, 3, 3, 3, in});
    l.bias = s.add_bias(p + ".conv.bias", out);
    l.norm = NormHandles::add(s, p + ".norm", out);
    return l;
  }

  template <typename Scalar>
  struct Cache {
    Mat<Scalar> patches;
    Dims3 in_dims, out_dims;
    ops::LayerNormCache<Scalar> norm;
  };

  template <typename Scalar>
  FeatureMap<Scalar> forward(const ParameterStore<Scalar>& s, const FeatureMap<Scalar>& x,
                             Cache<Scalar>* cache) const {
    for (Index d : x.dims)
      if (d % 3 != 0) throw ShapeError("stem input dims must be divisible by 3");
    Dims3 out;
    Mat<Scalar> p = conv::patchify(x.values, x.dims, 3, out);
    Mat<Scalar> y = ops::linear(p, s.matrix(weight), s.value(bias));
    FeatureMap<Scalar> r;
    r.dims = out;
    r.values = apply_norm(s, norm, y, cache ? &cache->norm : nullptr);
    if (cache) {
      cache->patches = std::move(p);
      cache->in_dims = x.dims;
      cache->out_dims = out;
    }
    return r;
  }

  template <typename Scalar>
  void backward(const ParameterStore<Scalar>& s, const Cache<Scalar>& c, const Mat<Scalar>& dy,
                Gradients<Scalar>& g) const {
    Mat<Scalar> dconv = apply_norm_backward(s, norm, dy, c.norm, g);
    g.matrix(weight).noalias() += dconv * c.patches.transpose();
    g[bias] += dconv.rowwise().sum();
    // The input image needs no gradient.
  }
};

/// 3D ConvNeXt block: dw3³ → LN → 1³ (4C) → GELU → 1³ (C) → + residual.
struct ConvNextBlock {
  std::size_t dw_weight = 0, dw_bias = 0;  // dw weight [3, 3, 3, C]
  NormHandles norm;
  LinearHandles expand, project;
  Index channels = 0;

  template <typename Scalar>
  static ConvNextBlock add(ParameterStore<Scalar>& s, const std::string& p, Index c) {
    ConvNextBlock b;
    b.channels = c;
    b.dw_weight = s.add_weight(p + ".dwconv.weight", {3, 3, 3, c});
    b.dw_bias = s.add_bias(p + ".dwconv.bias", c);
    b.norm = NormHandles::add(s, p + ".norm", c);
    b.expand = LinearHandles::add(s, p + ".pwconv1", c, 4 * c);
    b.project = LinearHandles::add(s, p + ".pwconv2", 4 * c, c);
    return b;
  }

  template <typename Scalar>
  struct Cache {
    Mat<Scalar> input, normed, hidden, activated;
    ops::LayerNormCache<Scalar> norm;
    Dims3 dims;
  };

  template <typename Scalar>
  Eigen::Map<const Mat<Scalar>> depthwise_kernel(const ParameterStore<Scalar>& s) const {
    return {s.value(dw_weight).data(), channels, 27};
  }

  template <typename Scalar>
  FeatureMap<Scalar> forward(const ParameterStore<Scalar>& s, const FeatureMap<Scalar>& x,
                             Cache<Scalar>* cache) const {
    if (x.channels() != channels) throw ShapeError("ConvNeXt block channel mismatch");
    Mat<Scalar> r = conv::depthwise3(x.values, x.dims, depthwise_kernel(s), s.value(dw_bias));
    ops::LayerNormCache<Scalar> nc;
    Mat<Scalar> n = apply_norm(s, norm, r, cache ? &nc : nullptr);
    Mat<Scalar> h = apply_linear(s, expand, n);
    Mat<Scalar> a = ops::gelu(h);
    FeatureMap<Scalar> y;
    y.dims = x.dims;
    y.values = apply_linear(s, project, a);
    y.values += x.values;
    if (cache) {
      cache->input = x.values;
      cache->normed = std::move(n);
      cache->hidden = std::move(h);
      cache->activated = std::move(a);
      cache->norm = std::move(nc);
      cache->dims = x.dims;
    }
    return y;
  }

  template <typename Scalar>
  Mat<Scalar> backward(const ParameterStore<Scalar>& s, const Cache<Scalar>& c, const Mat<Scalar>& dy,
                       Gradients<Scalar>& g) const {
    Mat<Scalar> da = apply_linear_backward(s, project, dy, c.activated, g);
    Mat<Scalar> dh = ops::gelu_backward(da, c.hidden);
    Mat<Scalar> dn = apply_linear_backward(s, expand, dh, c.normed, g);
    Mat<Scalar> dr = apply_norm_backward(s, norm, dn, c.norm, g);
    Eigen::Map<Mat<Scalar>> dw(g[dw_weight].data(), channels, 27);
    Mat<Scalar> dx = conv::depthwise3_backward(dr, c.input, c.dims, depthwise_kernel(s), dw, g[dw_bias]);
    dx += dy;
    return dx;
  }
};

/// Stage transition: LN then 2³ stride-2 convolution doubling channels.
struct DownsampleLayer {
  NormHandles norm;
  std::size_t weight = 0, bias = 0;  // weight [2C, 2, 2, 2, C]
  Index in_channels = 0;

  template <typename Scalar>
  static DownsampleLayer add(ParameterStore<Scalar>& s, const std::string& p, Index c) {
    DownsampleLayer l;
    l.in_channels = c;
    l.norm = NormHandles::add(s, p + ".norm", c);
    l.weight = s.add_weight(p + ".conv.weight", {2 * c, 2, 2, 2, c});
    l.bias = s.add_bias(p + ".conv.bias", 2 * c);
    return l;
  }

  template <typename Scalar>
  struct Cache {
    ops::LayerNormCache<Scalar> norm;
    Mat<Scalar> patches;
    Dims3 in_dims, out_dims;
  };

  template <typename Scalar>
  FeatureMap<Scalar> forward(const ParameterStore<Scalar>& s, const FeatureMap<Scalar>& x,
                             Cache<Scalar>* cache) const {
    if (x.channels() != in_channels) throw ShapeError("downsample channel mismatch");
    ops::LayerNormCache<Scalar> nc;
    Mat<Scalar> n = apply_norm(s, norm, x.values, cache ? &nc : nullptr);
    Dims3 out;
    Mat<Scalar> p = conv::patchify(n, x.dims, 2, out);
    FeatureMap<Scalar> y;
    y.dims = out;
    y.values = ops::linear(p, s.matrix(weight), s.value(bias));
    if (cache) {
      cache->norm = std::move(nc);
      cache->patches = std::move(p);
      cache->in_dims = x.dims;
      cache->out_dims = out;
    }
    return y;
  }

  template <typename Scalar>
  Mat<Scalar> backward(const ParameterStore<Scalar>& s, const Cache<Scalar>& c, const Mat<Scalar>& dy,
                       Gradients<Scalar>& g) const {
    Mat<Scalar> dp = ops::linear_backward(dy, c.patches, s.matrix(weight), g.matrix(weight), &g[bias]);
    Mat<Scalar> dn = conv::unpatchify(dp, c.in_dims, 2, c.out_dims, in_channels);
    return apply_norm_backward(s, norm, dn, c.norm, g);
  }
};

// ---- full backbone ---------------------------------------------------------

template <typename Scalar>
struct BackboneCache {
  typename StemLayer::Cache<Scalar> stem;
  std::vector<typename ConvNextBlock::Cache<Scalar>> blocks;
  std::vector<typename DownsampleLayer::Cache<Scalar>> downsamples;
  Index pooled_voxels = 0;
  Index final_channels = 0;
  ops::LayerNormCache<Scalar> head_norm;
};

/// Stem → stage 1 → (downsample → stage)×3 → global average pool → LN.
class Backbone {
 public:
  Backbone() = default;

  template <typename Scalar>
  Backbone(const BackboneConfig& cfg, ParameterStore<Scalar>& store, const std::string& prefix = "backbone")
      : cfg_(cfg) {
    for (Index b : cfg.blocks)
      if (b < 1) throw std::invalid_argument("each stage needs at least one block");
    stem_ = StemLayer::add(store, prefix + ".stem", cfg.input_channels, cfg.base_channels);
    for (int stage = 0; stage < 4; ++stage) {
      const Index c = cfg.stage_channels(stage);
      if (stage > 0)
        downsamples_.push_back(
            DownsampleLayer::add(store, prefix + ".downsample" + std::to_string(stage), c / 2));
      for (Index b = 0; b < cfg.blocks[stage]; ++b)
        blocks_.push_back(ConvNextBlock::add(
            store, prefix + ".stages." + std::to_string(stage) + ".blocks." + std::to_string(b), c));
    }
    head_norm_ = NormHandles::add(store, prefix + ".head_norm", cfg.embedding_dim());
  }

  const BackboneConfig& config() const { return cfg_; }
  Index embedding_dim() const { return cfg_.embedding_dim(); }

  template <typename Scalar>
  Vec<Scalar> forward(const ParameterStore<Scalar>& s, const FeatureMap<Scalar>& input,
                      BackboneCache<Scalar>* cache = nullptr) const {
    if (input.channels() != cfg_.input_channels)
      throw ShapeError("backbone expects " + std::to_string(cfg_.input_channels) + " input channels");
    if (cache) {
      cache->blocks.resize(blocks_.size());
      cache->downsamples.resize(downsamples_.size());
    }
    FeatureMap<Scalar> x = stem_.forward(s, input, cache ? &cache->stem : nullptr);
    std::size_t block = 0;
    for (int stage = 0; stage < 4; ++stage) {
      if (stage > 0)
        x = downsamples_[stage - 1].forward(s, x, cache ? &cache->downsamples[stage - 1] : nullptr);
      for (Index b = 0; b < cfg_.blocks[stage]; ++b, ++block)
        x = blocks_[block].forward(s, x, cache ? &cache->blocks[block] : nullptr);
    }
    Mat<Scalar> pooled = x.values.rowwise().mean();
    if (cache) {
      cache->pooled_voxels = x.values.cols();
      cache->final_channels = x.values.rows();
    }
    Mat<Scalar> e = apply_norm(s, head_norm_, pooled, cache ? &cache->head_norm : nullptr);
    return e.col(0);
  }

  template <typename Scalar>
  Vec<Scalar> embed(const ParameterStore<Scalar>& s, const Volume& v) const {
    return forward<Scalar>(s, to_feature_map<Scalar>(v), nullptr);
  }

  template <typename Scalar>
  void backward(const ParameterStore<Scalar>& s, const BackboneCache<Scalar>& c, const Vec<Scalar>& d_embedding,
                Gradients<Scalar>& g) const {
    Mat<Scalar> dpool = apply_norm_backward(s, head_norm_, Mat<Scalar>(d_embedding), c.head_norm, g);
    Mat<Scalar> dx = dpool.col(0).replicate(1, c.pooled_voxels) / Scalar(c.pooled_voxels);
    std::size_t block = blocks_.size();
    for (int stage = 3; stage >= 0; --stage) {
      for (Index b = 0; b < cfg_.blocks[stage]; ++b) {
        --block;
        dx = blocks_[block].backward(s, c.blocks[block], dx, g);
      }
      if (stage > 0) dx = downsamples_[stage - 1].backward(s, c.downsamples[stage - 1], dx, g);
    }
    stem_.backward(s, c.stem, dx, g);
  }

  const StemLayer& stem() const { return stem_; }
  const std::vector<ConvNextBlock>& blocks() const { return blocks_; }
  const std::vector<DownsampleLayer>& downsamples() const { return downsamples_; }

 private:
  BackboneConfig cfg_;
  StemLayer stem_;
  std::vector<ConvNextBlock> blocks_;
  std::vector<DownsampleLayer> downsamples_;
  NormHandles head_norm_;
};

/// Sum of tensor element counts.
template <typename Scalar>
Index count_params(const ParameterStore<Scalar>& store) {
  return store.parameter_count();
}

/// Builds the backbone for a variant and initializes it: weights N(0, 0.02),
/// biases 0, norm scales 1.
template <typename Scalar = float>
std::pair<Backbone, ParameterStore<Scalar>> build_backbone(Variant v, Index input_channels, std::uint64_t seed) {
  ParameterStore<Scalar> store;
  Backbone net(backbone_config(v, input_channels), store);
  store.initialize(seed);
  return {std::move(net), std::move(store)};
}

}  // namespace hccnet

#pragma once

// Column-wise building blocks shared by the backbone, the encoder and the
// heads. Every activation matrix stores one sample (voxel or token) per
// column, features along rows.

#include "hccnet/core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <type_traits>

namespace hccnet::ops {

inline constexpr double kNormEps = 1e-6;

template <typename Scalar>
struct LayerNormCache {
  Mat<Scalar> normalized;   // x̂
  RowVec<Scalar> inv_std;   // 1/σ per column
};

/// Normalizes each column over its rows, then applies gamma/beta.
template <typename Scalar>
Mat<Scalar> layer_norm(const Mat<Scalar>& x, const Vec<Scalar>& gamma, const Vec<Scalar>& beta,
                       LayerNormCache<Scalar>* cache = nullptr) {
  const Index rows = x.rows();
  RowVec<Scalar> mean = x.colwise().mean();
  Mat<Scalar> centered = x.rowwise() - mean;
  RowVec<Scalar> var = centered.cwiseAbs2().colwise().sum() / Scalar(rows);
  RowVec<Scalar> inv_std = (var.array() + Scalar(kNormEps)).rsqrt();
  Mat<Scalar> xhat = centered.array().rowwise() * inv_std.array();
  Mat<Scalar> y = (xhat.array().colwise() * gamma.array()).colwise() + beta.array();
  if (cache) {
    cache->normalized = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

template <typename Scalar>
Mat<Scalar> layer_norm_backward(const Mat<Scalar>& dy, const Vec<Scalar>& gamma,
                                const LayerNormCache<Scalar>& cache, Vec<Scalar>& dgamma,
                                Vec<Scalar>& dbeta) {
  const auto& xhat = cache.normalized;
  dgamma += (dy.cwiseProduct(xhat)).rowwise().sum();
  dbeta += dy.rowwise().sum();
  Mat<Scalar> dxhat = dy.array().colwise() * gamma.array();
  RowVec<Scalar> mean_dxhat = dxhat.colwise().mean();
  RowVec<Scalar> mean_dxhat_xhat = dxhat.cwiseProduct(xhat).colwise().mean();
  Mat<Scalar> dx = dxhat.rowwise() - mean_dxhat;
  dx.array() -= xhat.array().rowwise() * mean_dxhat_xhat.array();
  return dx.array().rowwise() * cache.inv_std.array();
}

template <typename Scalar>
  requires std::is_floating_point_v<Scalar>
Scalar gelu(Scalar x) {
  return Scalar(0.5) * x * (Scalar(1) + std::erf(x * Scalar(M_SQRT1_2)));
}

template <typename Scalar>
  requires std::is_floating_point_v<Scalar>
Scalar gelu_grad(Scalar x) {
  const Scalar cdf = Scalar(0.5) * (Scalar(1) + std::erf(x * Scalar(M_SQRT1_2)));
  const Scalar pdf = std::exp(Scalar(-0.5) * x * x) * Scalar(0.3989422804014327);
  return cdf + x * pdf;
}

template <typename Derived>
auto gelu(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  return x.unaryExpr([](Scalar v) { return gelu(v); });
}

/// dL/dx given dL/dy and the pre-activation x.
template <typename Scalar>
Mat<Scalar> gelu_backward(const Mat<Scalar>& dy, const Mat<Scalar>& x) {
  return dy.cwiseProduct(x.unaryExpr([](Scalar v) { return gelu_grad(v); }));
}

/// y = W x + b, W row-major (out × in).
template <typename Scalar, typename W>
Mat<Scalar> linear(const Mat<Scalar>& x, const W& weight, const Vec<Scalar>& bias) {
  Mat<Scalar> y = weight * x;
  y.colwise() += bias;
  return y;
}

template <typename Scalar, typename W>
Mat<Scalar> linear_backward(const Mat<Scalar>& dy, const Mat<Scalar>& x, const W& weight,
                            Eigen::Map<MatR<Scalar>> dweight, Vec<Scalar>* dbias) {
  dweight.noalias() += dy * x.transpose();
  if (dbias) *dbias += dy.rowwise().sum();
  return weight.transpose() * dy;
}

/// Numerically stable softmax of a vector.
template <typename Scalar>
Vec<Scalar> softmax(const Vec<Scalar>& z) {
  Vec<Scalar> e = (z.array() - z.maxCoeff()).exp();
  return e / e.sum();
}

template <typename Scalar>
Vec<Scalar> log_softmax(const Vec<Scalar>& z) {
  const Scalar m = z.maxCoeff();
  const Scalar lse = m + std::log((z.array() - m).exp().sum());
  return z.array() - lse;
}

template <typename Scalar>
Scalar sigmoid(Scalar z) {
  if (z >= 0) return Scalar(1) / (Scalar(1) + std::exp(-z));
  const Scalar e = std::exp(z);
  return e / (Scalar(1) + e);
}

/// sigmoid clamped to [eps, 1 - eps] so probabilities never reach 0 or 1.
template <typename Scalar>
Scalar probability(Scalar z) {
  constexpr Scalar eps = std::numeric_limits<Scalar>::epsilon();
  if (std::isnan(z)) return Scalar(0.5);
  return std::clamp(sigmoid(z), eps, Scalar(1) - eps);
}

/// log(1 + exp(z)) without overflow.
template <typename Scalar>
Scalar softplus(Scalar z) {
  return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

/// Inverted dropout mask: entries are 0 or 1/(1-p).
template <typename Scalar>
Mat<Scalar> dropout_mask(Index rows, Index cols, double p, Rng& rng) {
  Mat<Scalar> mask(rows, cols);
  std::bernoulli_distribution keep(1.0 - p);
  const Scalar scale = Scalar(1.0 / (1.0 - p));
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) mask(i, j) = keep(rng) ? scale : Scalar(0);
  return mask;
}

}  // namespace hccnet::ops

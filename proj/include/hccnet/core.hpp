#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace hccnet {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using MatR = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVec = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using Index = Eigen::Index;
using Rng = std::mt19937_64;

/// Raised when tensor shapes or channel counts disagree.
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// How a tensor is initialized by `ParameterStore::initialize`.
enum class InitKind { Normal, Zeros, Ones };

struct TensorInfo {
  std::string name;
  std::vector<Index> shape;
  InitKind init = InitKind::Normal;
  bool decay_eligible = false;  // convolution / linear weights only
  bool ema_mirrored = true;

  Index numel() const {
    Index n = 1;
    for (Index d : shape) n *= d;
    return n;
  }
};

/// Named collection of learnable tensors. Names are unique and shapes are
/// fixed once a tensor is added; values live in flat vectors whose layout is
/// row-major over `shape`.
template <typename Scalar>
class ParameterStore {
 public:
  using Handle = std::size_t;

  Handle add(TensorInfo info) {
    if (lookup_.count(info.name)) throw std::invalid_argument("duplicate tensor name: " + info.name);
    Handle h = infos_.size();
    lookup_.emplace(info.name, h);
    values_.emplace_back(Vec<Scalar>::Zero(info.numel()));
    infos_.push_back(std::move(info));
    return h;
  }

  Handle add_weight(const std::string& name, std::vector<Index> shape) {
    return add({name, std::move(shape), InitKind::Normal, true, true});
  }
  Handle add_bias(const std::string& name, Index n) {
    return add({name, {n}, InitKind::Zeros, false, true});
  }
  Handle add_norm_scale(const std::string& name, Index n) {
    return add({name, {n}, InitKind::Ones, false, true});
  }
  Handle add_norm_shift(const std::string& name, Index n) {
    return add({name, {n}, InitKind::Zeros, false, true});
  }

  std::size_t size() const { return infos_.size(); }
  bool contains(const std::string& name) const { return lookup_.count(name) != 0; }
  Handle handle(const std::string& name) const {
    auto it = lookup_.find(name);
    if (it == lookup_.end()) throw std::out_of_range("no tensor named " + name);
    return it->second;
  }

  const TensorInfo& info(Handle h) const { return infos_[h]; }
  const std::vector<TensorInfo>& infos() const { return infos_; }

  Vec<Scalar>& value(Handle h) { return values_[h]; }
  const Vec<Scalar>& value(Handle h) const { return values_[h]; }
  Vec<Scalar>& value(const std::string& name) { return values_[handle(name)]; }
  const Vec<Scalar>& value(const std::string& name) const { return values_[handle(name)]; }

  /// Row-major matrix view of a tensor (rows = first dim, cols = the rest).
  Eigen::Map<const MatR<Scalar>> matrix(Handle h) const {
    const auto& s = infos_[h].shape;
    Index rows = s.empty() ? 1 : s.front();
    return {values_[h].data(), rows, values_[h].size() / rows};
  }
  Eigen::Map<MatR<Scalar>> matrix(Handle h) {
    const auto& s = infos_[h].shape;
    Index rows = s.empty() ? 1 : s.front();
    return {values_[h].data(), rows, values_[h].size() / rows};
  }

  Index parameter_count() const {
    Index n = 0;
    for (const auto& i : infos_) n += i.numel();
    return n;
  }

  /// Weights ~ N(0, std), biases and norm shifts 0, norm scales 1.
  void initialize(std::uint64_t seed, Scalar stddev = Scalar(0.02)) {
    Rng rng(seed);
    for (Handle h = 0; h < size(); ++h) initialize_tensor(h, rng, stddev);
  }

  void initialize_tensor(Handle h, Rng& rng, Scalar stddev = Scalar(0.02)) {
    std::normal_distribution<double> normal(0.0, static_cast<double>(stddev));
    auto& v = values_[h];
    switch (infos_[h].init) {
      case InitKind::Normal:
        for (Index i = 0; i < v.size(); ++i) v[i] = static_cast<Scalar>(normal(rng));
        break;
      case InitKind::Zeros:
        v.setZero();
        break;
      case InitKind::Ones:
        v.setOnes();
        break;
    }
  }

  template <typename Other>
  ParameterStore<Other> cast() const {
    ParameterStore<Other> out;
    for (Handle h = 0; h < size(); ++h) {
      out.add(infos_[h]);
      out.value(h) = values_[h].template cast<Other>();
    }
    return out;
  }

 private:
  std::vector<TensorInfo> infos_;
  std::vector<Vec<Scalar>> values_;
  std::unordered_map<std::string, Handle> lookup_;
};

/// Gradient buffers aligned one-to-one with a ParameterStore.
template <typename Scalar>
class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(const ParameterStore<Scalar>& store) { resize_like(store); }

  void resize_like(const ParameterStore<Scalar>& store) {
    grads_.resize(store.size());
    shapes_.resize(store.size());
    for (std::size_t h = 0; h < store.size(); ++h) {
      grads_[h] = Vec<Scalar>::Zero(store.value(h).size());
      const auto& s = store.info(h).shape;
      shapes_[h] = s.empty() ? 1 : s.front();
    }
  }

  void zero() {
    for (auto& g : grads_) g.setZero();
  }

  std::size_t size() const { return grads_.size(); }
  Vec<Scalar>& operator[](std::size_t h) { return grads_[h]; }
  const Vec<Scalar>& operator[](std::size_t h) const { return grads_[h]; }

  Eigen::Map<MatR<Scalar>> matrix(std::size_t h) {
    return {grads_[h].data(), shapes_[h], grads_[h].size() / shapes_[h]};
  }

  Scalar squared_norm() const {
    Scalar s(0);
    for (const auto& g : grads_) s += g.squaredNorm();
    return s;
  }

  void scale(Scalar f) {
    for (auto& g : grads_) g *= f;
  }

  Gradients& operator+=(const Gradients& o) {
    for (std::size_t h = 0; h < grads_.size(); ++h) grads_[h] += o.grads_[h];
    return *this;
  }

 private:
  std::vector<Vec<Scalar>> grads_;
  std::vector<Index> shapes_;
};

}  // namespace hccnet

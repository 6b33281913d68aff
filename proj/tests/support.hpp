#pragma once

// Helpers shared by the unit tests and the acceptance binary: a central
// finite-difference gradient checker and brute-force metric oracles.

#include "hccnet/core.hpp"
#include "hccnet/volume.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>

namespace hccnet::testing {

struct GradCheck {
  double worst = 0.0;  // largest norm-wise relative error over all groups
  std::string worst_group;
  std::size_t entries = 0;
};

/// Norm-wise relative error ||a − n|| / max(||a||, ||n||) of one group of
/// gradient entries. Both vectors zero counts as a perfect match.
inline double relative_error(const Eigen::VectorXd& analytic, const Eigen::VectorXd& numeric) {
  const double scale = std::max(analytic.norm(), numeric.norm());
  if (scale == 0.0) return 0.0;
  return (analytic - numeric).norm() / scale;
}

/// Central differences of `loss` with respect to each tensor of `store`.
/// Tensors larger than `max_entries` are checked on a seeded random subset.
inline void check_parameters(ParameterStore<double>& store, const Gradients<double>& analytic,
                             const std::function<double()>& loss, GradCheck& out, std::size_t max_entries = 0,
                             double h = 1e-5, std::uint64_t seed = 1) {
  Rng rng(seed);
  for (std::size_t t = 0; t < store.size(); ++t) {
    auto& v = store.value(t);
    std::vector<Index> idx(std::size_t(v.size()));
    for (Index i = 0; i < v.size(); ++i) idx[std::size_t(i)] = i;
    if (max_entries && idx.size() > max_entries) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(max_entries);
    }
    Eigen::VectorXd a(Index(idx.size())), n(Index(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const Index i = idx[k];
      const double saved = v[i];
      v[i] = saved + h;
      const double up = loss();
      v[i] = saved - h;
      const double down = loss();
      v[i] = saved;
      n[Index(k)] = (up - down) / (2.0 * h);
      a[Index(k)] = analytic[t][i];
    }
    const double err = relative_error(a, n);
    out.entries += idx.size();
    if (err > out.worst) {
      out.worst = err;
      out.worst_group = store.info(t).name;
    }
  }
}

/// Same check for a free input matrix.
inline void check_input(Eigen::MatrixXd& x, const Eigen::MatrixXd& analytic, const std::function<double()>& loss,
                        GradCheck& out, const std::string& name, double h = 1e-5) {
  Eigen::VectorXd a(x.size()), n(x.size());
  for (Index i = 0; i < x.size(); ++i) {
    const double saved = x.data()[i];
    x.data()[i] = saved + h;
    const double up = loss();
    x.data()[i] = saved - h;
    const double down = loss();
    x.data()[i] = saved;
    n[i] = (up - down) / (2.0 * h);
    a[i] = analytic.data()[i];
  }
  const double err = relative_error(a, n);
  out.entries += std::size_t(x.size());
  if (err > out.worst) {
    out.worst = err;
    out.worst_group = name;
  }
}

// ---- metric oracles -----------------------------------------------------------

/// O(n²) pair counting, ties worth one half.
inline double auroc_oracle(const std::vector<double>& s, const std::vector<int>& y) {
  double correct = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[i] != 1 || y[j] != 0) continue;
      pairs += 1.0;
      if (s[i] > s[j]) correct += 1.0;
      else if (s[i] == s[j]) correct += 0.5;
    }
  return correct / pairs;
}

/// Evaluates precision and recall at every distinct threshold directly.
inline double auprc_oracle(const std::vector<double>& s, const std::vector<int>& y) {
  std::vector<double> thresholds = s;
  std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  double pos = 0.0;
  for (int v : y) pos += v;
  double area = 0.0, prev_recall = 0.0;
  for (double t : thresholds) {
    double tp = 0.0, predicted = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i)
      if (s[i] >= t) {
        predicted += 1.0;
        tp += y[i];
      }
    const double recall = tp / pos;
    area += (recall - prev_recall) * (tp / predicted);
    prev_recall = recall;
  }
  return area;
}

/// Random prediction set with deliberate ties (scores on a coarse grid).
inline void random_prediction_set(Rng& rng, std::vector<double>& s, std::vector<int>& y) {
  std::uniform_int_distribution<int> size(2, 50), grid(0, 10), coin(0, 1);
  const int n = size(rng);
  s.clear();
  y.clear();
  for (int i = 0; i < n; ++i) {
    s.push_back(grid(rng) / 10.0);
    y.push_back(coin(rng));
  }
  y[0] = 1;
  y[1] = 0;
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("hccnet_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline Volume random_volume(Index channels, Dims3 dims, Rng& rng) {
  Volume v(channels, dims);
  std::normal_distribution<float> n(0.f, 1.f);
  for (Index i = 0; i < v.data.size(); ++i) v.data[i] = n(rng);
  return v;
}

}  // namespace hccnet::testing

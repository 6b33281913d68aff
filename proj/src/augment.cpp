#include "hccnet/augment.hpp"

#include <algorithm>

namespace hccnet {

using nlohmann::json;

void AugmentConfig::validate() const {
  for (double p : {p_flip, p_rot90, p_intensity})
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("augmentation probabilities must lie in [0, 1]");
  if (!(scale_range[0] > 0.0 && scale_range[1] >= scale_range[0]))
    throw std::invalid_argument("scale_range must be a positive interval");
  if (shift_range[1] < shift_range[0]) throw std::invalid_argument("shift_range is reversed");
}

void to_json(json& j, const AugmentConfig& c) {
  j = json{{"p_flip", c.p_flip},
           {"p_rot90", c.p_rot90},
           {"p_intensity", c.p_intensity},
           {"scale_range", c.scale_range},
           {"shift_range", c.shift_range}};
}

void from_json(const json& j, AugmentConfig& c) {
  AugmentConfig d;
  c.p_flip = j.value("p_flip", d.p_flip);
  c.p_rot90 = j.value("p_rot90", d.p_rot90);
  c.p_intensity = j.value("p_intensity", d.p_intensity);
  c.scale_range = j.value("scale_range", d.scale_range);
  c.shift_range = j.value("shift_range", d.shift_range);
}

Volume crop_at(const Volume& v, const std::array<Index, 3>& origin, Index s) {
  for (int a = 0; a < 3; ++a)
    if (s > v.dims[a] || origin[a] < 0 || origin[a] + s > v.dims[a])
      throw std::invalid_argument("crop of edge " + std::to_string(s) + " does not fit the volume");
  Volume out(v.channels, {s, s, s}, v.spacing);
  for (Index c = 0; c < v.channels; ++c)
    for (Index z = 0; z < s; ++z)
      for (Index y = 0; y < s; ++y) {
        const float* src = v.data.data() + v.offset(c, origin[0] + z, origin[1] + y, origin[2]);
        std::copy(src, src + s, out.data.data() + out.offset(c, z, y, 0));
      }
  return out;
}

Volume random_crop(const Volume& v, Index s, Rng& rng) {
  for (Index d : v.dims)
    if (s > d) throw std::invalid_argument("crop larger than volume");
  std::array<Index, 3> origin{};
  for (int a = 0; a < 3; ++a) {
    std::uniform_int_distribution<Index> pick(0, v.dims[a] - s);
    origin[a] = pick(rng);
  }
  return crop_at(v, origin, s);
}

Volume central_crop(const Volume& v, Index s) {
  std::array<Index, 3> origin{};
  for (int a = 0; a < 3; ++a) {
    if (s > v.dims[a]) throw std::invalid_argument("crop larger than volume");
    origin[a] = (v.dims[a] - s) / 2;
  }
  return crop_at(v, origin, s);
}

Volume sample_series(const StudyVisit& visit, Rng& rng) {
  if (visit.series.empty()) throw std::invalid_argument("visit has no series");
  std::uniform_int_distribution<std::size_t> pick(0, visit.series.size() - 1);
  return visit.series[pick(rng)];
}

Volume stack_series(const StudyVisit& visit) {
  if (visit.series.empty()) throw std::invalid_argument("visit has no series");
  const auto& first = visit.series.front();
  Volume out(static_cast<Index>(visit.series.size()), first.dims, first.spacing);
  const Index n = first.voxels();
  for (std::size_t c = 0; c < visit.series.size(); ++c) {
    const auto& s = visit.series[c];
    if (s.dims != first.dims || s.channels != 1) throw ShapeError("series dims differ; cannot stack");
    out.data.segment(static_cast<Index>(c) * n, n) = s.data;
  }
  return out;
}

Volume intensity_shift_scale(Volume v, const AugmentConfig& cfg, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const bool apply = unit(rng) < cfg.p_intensity;
  const double a = cfg.scale_range[0] + (cfg.scale_range[1] - cfg.scale_range[0]) * unit(rng);
  const double b = cfg.shift_range[0] + (cfg.shift_range[1] - cfg.shift_range[0]) * unit(rng);
  if (!apply) return v;
  const double range = double(v.data.maxCoeff()) - double(v.data.minCoeff());
  v.data = (v.data.array() * float(a) + float(b * range)).matrix();
  return v;
}

Volume flip(const Volume& v, int axis) {
  Volume out(v.channels, v.dims, v.spacing);
  const auto& d = v.dims;
  for (Index c = 0; c < v.channels; ++c)
    for (Index z = 0; z < d[0]; ++z)
      for (Index y = 0; y < d[1]; ++y)
        for (Index x = 0; x < d[2]; ++x) {
          std::array<Index, 3> src{z, y, x};
          src[axis] = d[axis] - 1 - src[axis];
          out.at(c, z, y, x) = v.at(c, src[0], src[1], src[2]);
        }
  return out;
}

Volume rot90(const Volume& v, int axis, int quarter_turns) {
  const int k = ((quarter_turns % 4) + 4) % 4;
  if (k == 0) return v;
  const int p = axis == 0 ? 1 : 0;
  const int q = axis == 2 ? 1 : 2;
  if (v.dims[p] != v.dims[q]) throw ShapeError("rotation requires a square plane");
  const Index n = v.dims[p];
  Volume out(v.channels, v.dims, v.spacing);
  const auto& d = v.dims;
  for (Index c = 0; c < v.channels; ++c)
    for (Index z = 0; z < d[0]; ++z)
      for (Index y = 0; y < d[1]; ++y)
        for (Index x = 0; x < d[2]; ++x) {
          std::array<Index, 3> src{z, y, x};
          Index i = src[p], j = src[q];
          for (int t = 0; t < k; ++t) {
            const Index ni = n - 1 - j, nj = i;
            i = ni;
            j = nj;
          }
          src[p] = i;
          src[q] = j;
          out.at(c, z, y, x) = v.at(c, src[0], src[1], src[2]);
        }
  return out;
}

Volume random_flip_rot90(Volume v, const AugmentConfig& cfg, Rng& rng) {
  if (cfg.p_rot90 > 0.0 && !(v.dims[0] == v.dims[1] && v.dims[1] == v.dims[2]))
    throw ShapeError("random rotations need a cubic volume");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int axis = 0; axis < 3; ++axis)
    if (unit(rng) < cfg.p_flip) v = flip(v, axis);
  const bool rotate = unit(rng) < cfg.p_rot90;
  std::uniform_int_distribution<int> pick_axis(0, 2);
  const int axis = pick_axis(rng);
  const int turns = unit(rng) < 0.5 ? 1 : -1;
  if (rotate) v = rot90(v, axis, turns);
  return v;
}

namespace {

Volume augmented_view(const StudyVisit& visit, Index s, const AugmentConfig& cfg, Rng& rng) {
  Volume view = random_crop(sample_series(visit, rng), s, rng);
  view = intensity_shift_scale(std::move(view), cfg, rng);
  return random_flip_rot90(std::move(view), cfg, rng);
}

}  // namespace

MultiCropViews multi_crop(const StudyVisit& visit, const AugmentConfig& cfg, Rng& rng, ViewSpec global,
                          ViewSpec local) {
  MultiCropViews views;
  for (auto& g : views.global) g = augmented_view(visit, global.crop_size, cfg, rng);
  for (auto& l : views.local) l = augmented_view(visit, local.crop_size, cfg, rng);
  return views;
}

Volume sequence_view(const StudyVisit& visit, Index crop, const AugmentConfig& cfg, Rng& rng) {
  Volume view = random_crop(stack_series(visit), crop, rng);
  view = intensity_shift_scale(std::move(view), cfg, rng);
  return random_flip_rot90(std::move(view), cfg, rng);
}

}  // namespace hccnet

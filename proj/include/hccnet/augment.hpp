#pragma once

#include "hccnet/volume.hpp"

#include <json.hpp>

namespace hccnet {

enum class ViewKind { Global, Local };

struct ViewSpec {
  Index crop_size = 72;
  ViewKind kind = ViewKind::Global;

  static ViewSpec global(Index s = 72) { return {s, ViewKind::Global}; }
  static ViewSpec local(Index s = 48) { return {s, ViewKind::Local}; }
};

struct AugmentConfig {
  double p_flip = 0.5;
  double p_rot90 = 0.5;
  double p_intensity = 1.0;
  std::array<double, 2> scale_range{0.9, 1.1};
  std::array<double, 2> shift_range{-0.1, 0.1};  // fraction of the volume's intensity range

  void validate() const;
};

void to_json(nlohmann::json& j, const AugmentConfig& c);
void from_json(const nlohmann::json& j, AugmentConfig& c);

/// Cube crop with origin `origin` (z, y, x).
Volume crop_at(const Volume& v, const std::array<Index, 3>& origin, Index s);

/// Uniform random cube crop of edge `s`; throws when `s` exceeds any dim.
Volume random_crop(const Volume& v, Index s, Rng& rng);

/// Deterministic centered crop (floor on odd remainders).
Volume central_crop(const Volume& v, Index s);

/// One series chosen uniformly, returned unmodified.
Volume sample_series(const StudyVisit& visit, Rng& rng);

/// All series concatenated as channels, in series order.
Volume stack_series(const StudyVisit& visit);

/// With probability p_intensity: v*a + b*range(v), a ~ U(scale), b ~ U(shift).
Volume intensity_shift_scale(Volume v, const AugmentConfig& cfg, Rng& rng);

Volume flip(const Volume& v, int axis);
/// Rotates by `quarter_turns` * 90 degrees in the plane orthogonal to `axis`.
Volume rot90(const Volume& v, int axis, int quarter_turns);

/// Independent flips per axis, then at most one quarter-turn rotation.
Volume random_flip_rot90(Volume v, const AugmentConfig& cfg, Rng& rng);

struct MultiCropViews {
  std::array<Volume, 2> global;
  std::array<Volume, 2> local;
};

/// Two global and two local single-series views, each independently augmented.
MultiCropViews multi_crop(const StudyVisit& visit, const AugmentConfig& cfg, Rng& rng,
                          ViewSpec global = ViewSpec::global(), ViewSpec local = ViewSpec::local());

/// Training view for the sequence stages: stacked series, random crop,
/// intensity jitter, flips and rotations.
Volume sequence_view(const StudyVisit& visit, Index crop, const AugmentConfig& cfg, Rng& rng);

}  // namespace hccnet

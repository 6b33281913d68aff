#pragma once

#include "hccnet/core.hpp"

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace hccnet {

/// Spatial extent (depth, height, width) in voxels.
using Dims3 = std::array<Index, 3>;

inline Index voxel_count(const Dims3& d) { return d[0] * d[1] * d[2]; }

/// Multi-channel scalar field. `data` is channel-major, then depth, height,
/// width (x fastest).
struct Volume {
  Index channels = 1;
  Dims3 dims{0, 0, 0};
  std::array<float, 3> spacing{1.f, 1.f, 1.f};
  Eigen::VectorXf data;

  Volume() = default;
  Volume(Index channels, Dims3 dims, std::array<float, 3> spacing = {1.f, 1.f, 1.f});

  Index voxels() const { return voxel_count(dims); }
  Index offset(Index c, Index z, Index y, Index x) const {
    return ((c * dims[0] + z) * dims[1] + y) * dims[2] + x;
  }
  float& at(Index c, Index z, Index y, Index x) { return data[offset(c, z, y, x)]; }
  float at(Index c, Index z, Index y, Index x) const { return data[offset(c, z, y, x)]; }

  /// View of one channel as a flat vector.
  Eigen::Map<const Eigen::VectorXf> channel(Index c) const {
    return {data.data() + c * voxels(), voxels()};
  }

  /// Throws std::invalid_argument when the size or finiteness invariant fails.
  void validate() const;

  bool operator==(const Volume& o) const;
};

/// One imaging visit: several co-registered single-channel series.
struct StudyVisit {
  double timestamp = 0.0;  // months since the patient's first visit
  std::vector<Volume> series;
  std::vector<std::string> series_labels;

  const Dims3& dims() const { return series.front().dims; }
  void validate() const;
};

struct PatientRecord {
  std::string patient_id;
  std::vector<StudyVisit> visits;
  std::optional<double> diagnosis_date;

  void validate() const;
};

/// Fine-tuning unit derived from a PatientRecord.
struct LabeledSequence {
  std::string patient_id;
  std::vector<const StudyVisit*> visits;  // non-owning, chronological
  int label = 0;
  double anchor = 0.0;
};

// ---- .lsv file format ------------------------------------------------------

class VolumeFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class MalformedHeaderError : public VolumeFormatError {
 public:
  using VolumeFormatError::VolumeFormatError;
};
class TruncatedPayloadError : public VolumeFormatError {
 public:
  using VolumeFormatError::VolumeFormatError;
};
class DimensionOverflowError : public VolumeFormatError {
 public:
  using VolumeFormatError::VolumeFormatError;
};

void save_volume(const Volume& v, const std::filesystem::path& path);
Volume load_volume(const std::filesystem::path& path);

// ---- record subsetting -----------------------------------------------------

/// Applies the fine-tuning label rule: diagnosed records keep only visits
/// strictly before the diagnosis. Returns nullopt when nothing remains.
std::optional<LabeledSequence> subset_for_finetune(const PatientRecord& record);

/// Keeps the `max_len` most recent visits.
LabeledSequence truncate_sequence(LabeledSequence seq, std::size_t max_len = 8);

/// Patient-level split; |dev| = round(dev_fraction * n).
std::pair<std::vector<PatientRecord>, std::vector<PatientRecord>> split_dataset(
    const std::vector<PatientRecord>& records, double dev_fraction, std::uint64_t seed);

}  // namespace hccnet

#pragma once

#include "hccnet/volume.hpp"

#include <json.hpp>

namespace hccnet {

/// Parameters of the deterministic longitudinal cohort simulator.
struct SyntheticConfig {
  std::size_t patient_count = 60;
  double positive_fraction = 0.25;
  std::size_t visits_min = 1;
  std::size_t visits_max = 4;
  // Diagnosed patients get at least this many visits so that at least two
  // remain after the diagnostic visit is dropped.
  std::size_t positive_visits_min = 3;
  double interval_min = 1.0;   // months
  double interval_max = 24.0;  // months
  Dims3 dims{72, 72, 72};
  std::array<float, 3> spacing{1.5f, 1.5f, 1.5f};
  std::vector<std::string> series_labels{"b0", "b150", "b400", "b800"};
  double lesion_amplitude = 1.5;
  double lesion_radius = 6.0;  // voxels
  double growth_exponent = 0.5;
  double noise_level = 0.05;
  std::uint64_t seed = 7;

  void validate() const;
};

void to_json(nlohmann::json& j, const SyntheticConfig& c);
void from_json(const nlohmann::json& j, SyntheticConfig& c);

/// Ellipsoidal lesion precursor placed in a diagnosed patient.
struct Lesion {
  std::array<double, 3> center{};
  std::array<double, 3> radii{};

  bool contains(Index z, Index y, Index x) const;
};

/// Generates the cohort. Pure function of `cfg`; each patient draws from its
/// own stream seeded by (seed, patient index).
std::vector<PatientRecord> generate_cohort(const SyntheticConfig& cfg);

/// Lesion geometry per patient (nullopt for undiagnosed patients); matches
/// what `generate_cohort` renders for the same config.
std::vector<std::optional<Lesion>> synthetic_lesions(const SyntheticConfig& cfg);

/// Lesion contrast multiplier at time t in [t_first, t_diagnosis].
double lesion_contrast(double t, double t_first, double t_diagnosis, double growth_exponent);

// ---- on-disk cohort --------------------------------------------------------

/// Writes `manifest.json` plus one `.lsv` per series under `dir`.
void save_cohort(const std::vector<PatientRecord>& records, const std::filesystem::path& dir,
                 const nlohmann::json& extra = {});
std::vector<PatientRecord> load_cohort(const std::filesystem::path& dir);

}  // namespace hccnet

#include "hccnet/cohort.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace hccnet {

using nlohmann::json;

void SyntheticConfig::validate() const {
  if (patient_count == 0) throw std::invalid_argument("patient_count must be positive");
  if (!(positive_fraction >= 0.0 && positive_fraction <= 1.0))
    throw std::invalid_argument("positive_fraction must lie in [0, 1]");
  if (visits_min < 1 || visits_max < visits_min)
    throw std::invalid_argument("need 1 <= visits_min <= visits_max");
  if (positive_visits_min < 2) throw std::invalid_argument("positive_visits_min must be at least 2");
  if (!(interval_min > 0.0 && interval_max >= interval_min))
    throw std::invalid_argument("need 0 < interval_min <= interval_max");
  for (Index d : dims)
    if (d < 3 || d % 3 != 0) throw std::invalid_argument("volume dims must be positive multiples of 3");
  if (series_labels.empty()) throw std::invalid_argument("at least one series label is required");
  std::vector<std::string> sorted = series_labels;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
    throw std::invalid_argument("series labels must be unique");
  if (lesion_amplitude < 0.0 || lesion_radius <= 0.0 || growth_exponent <= 0.0 || noise_level < 0.0)
    throw std::invalid_argument("lesion/noise parameters out of range");
}

void to_json(json& j, const SyntheticConfig& c) {
  j = json{{"patient_count", c.patient_count},
           {"positive_fraction", c.positive_fraction},
           {"visits_min", c.visits_min},
           {"visits_max", c.visits_max},
           {"positive_visits_min", c.positive_visits_min},
           {"interval_min", c.interval_min},
           {"interval_max", c.interval_max},
           {"dims", c.dims},
           {"spacing", c.spacing},
           {"series_labels", c.series_labels},
           {"lesion_amplitude", c.lesion_amplitude},
           {"lesion_radius", c.lesion_radius},
           {"growth_exponent", c.growth_exponent},
           {"noise_level", c.noise_level},
           {"seed", c.seed}};
}

void from_json(const json& j, SyntheticConfig& c) {
  SyntheticConfig d;
  c.patient_count = j.value("patient_count", d.patient_count);
  c.positive_fraction = j.value("positive_fraction", d.positive_fraction);
  c.visits_min = j.value("visits_min", d.visits_min);
  c.visits_max = j.value("visits_max", d.visits_max);
  c.positive_visits_min = j.value("positive_visits_min", d.positive_visits_min);
  c.interval_min = j.value("interval_min", d.interval_min);
  c.interval_max = j.value("interval_max", d.interval_max);
  c.dims = j.value("dims", d.dims);
  c.spacing = j.value("spacing", d.spacing);
  c.series_labels = j.value("series_labels", d.series_labels);
  c.lesion_amplitude = j.value("lesion_amplitude", d.lesion_amplitude);
  c.lesion_radius = j.value("lesion_radius", d.lesion_radius);
  c.growth_exponent = j.value("growth_exponent", d.growth_exponent);
  c.noise_level = j.value("noise_level", d.noise_level);
  c.seed = j.value("seed", d.seed);
}

bool Lesion::contains(Index z, Index y, Index x) const {
  const double dz = (double(z) - center[0]) / radii[0];
  const double dy = (double(y) - center[1]) / radii[1];
  const double dx = (double(x) - center[2]) / radii[2];
  return dz * dz + dy * dy + dx * dx <= 1.0;
}

double lesion_contrast(double t, double t_first, double t_diagnosis, double growth_exponent) {
  if (t_diagnosis <= t_first) return 1.0;
  const double progress = std::clamp((t - t_first) / (t_diagnosis - t_first), 0.0, 1.0);
  return std::pow(progress, growth_exponent);
}

namespace {

std::uint64_t patient_seed(std::uint64_t seed, std::size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), 0x5eedu};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (std::uint64_t(out[1]) << 32) | out[0];
}

std::vector<bool> positive_flags(const SyntheticConfig& cfg) {
  const auto n_pos = static_cast<std::size_t>(
      std::llround(double(cfg.patient_count) * cfg.positive_fraction));
  std::vector<std::size_t> order(cfg.patient_count);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(cfg.seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<bool> flags(cfg.patient_count, false);
  for (std::size_t i = 0; i < n_pos; ++i) flags[order[i]] = true;
  return flags;
}

struct Bump {
  std::array<double, 3> center;
  double width;
  double amplitude;
};

// Per-patient random draws, in the order they are consumed.
struct PatientPlan {
  std::array<double, 3> organ_center;
  std::array<double, 3> organ_radii;
  std::vector<Bump> texture;
  std::optional<Lesion> lesion;
  std::vector<double> timestamps;
};

PatientPlan plan_patient(const SyntheticConfig& cfg, bool positive, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  PatientPlan plan;
  for (int a = 0; a < 3; ++a) {
    const double d = double(cfg.dims[a]);
    plan.organ_center[a] = d * (0.5 + 0.06 * (unit(rng) - 0.5));
    plan.organ_radii[a] = d * (0.36 + 0.06 * unit(rng));
  }
  for (int b = 0; b < 6; ++b) {
    Bump bump;
    for (int a = 0; a < 3; ++a) bump.center[a] = double(cfg.dims[a]) * unit(rng);
    bump.width = double(cfg.dims[0]) * (0.12 + 0.1 * unit(rng));
    bump.amplitude = 0.3 * (unit(rng) - 0.5);
    plan.texture.push_back(bump);
  }
  // Lesion drawn for every patient so the stream layout is label-independent.
  Lesion lesion;
  for (int a = 0; a < 3; ++a) {
    const double r = cfg.lesion_radius * (0.8 + 0.4 * unit(rng));
    lesion.radii[a] = r;
    const double lo = plan.organ_center[a] - 0.5 * plan.organ_radii[a];
    const double hi = plan.organ_center[a] + 0.5 * plan.organ_radii[a];
    lesion.center[a] = lo + (hi - lo) * unit(rng);
  }
  if (positive) plan.lesion = lesion;

  std::uniform_int_distribution<std::size_t> count(
      positive ? std::max(cfg.visits_min, cfg.positive_visits_min) : cfg.visits_min,
      positive ? std::max(cfg.visits_max, cfg.positive_visits_min) : cfg.visits_max);
  const std::size_t n_visits = count(rng);
  std::uniform_real_distribution<double> gap(cfg.interval_min, cfg.interval_max);
  double t = 0.0;
  for (std::size_t v = 0; v < n_visits; ++v) {
    if (v > 0) t += std::round(gap(rng) * 10.0) / 10.0;
    plan.timestamps.push_back(t);
  }
  return plan;
}

}  // namespace

std::vector<std::optional<Lesion>> synthetic_lesions(const SyntheticConfig& cfg) {
  cfg.validate();
  const auto flags = positive_flags(cfg);
  std::vector<std::optional<Lesion>> out;
  for (std::size_t p = 0; p < cfg.patient_count; ++p) {
    Rng rng(patient_seed(cfg.seed, p));
    out.push_back(plan_patient(cfg, flags[p], rng).lesion);
  }
  return out;
}

std::vector<PatientRecord> generate_cohort(const SyntheticConfig& cfg) {
  cfg.validate();
  const auto flags = positive_flags(cfg);
  const Dims3 dims = cfg.dims;
  const Index n_vox = voxel_count(dims);
  const std::size_t n_series = cfg.series_labels.size();

  std::vector<PatientRecord> records;
  records.reserve(cfg.patient_count);
  for (std::size_t p = 0; p < cfg.patient_count; ++p) {
    Rng rng(patient_seed(cfg.seed, p));
    const PatientPlan plan = plan_patient(cfg, flags[p], rng);

    // Shared anatomy: soft ellipsoidal organ with smooth texture on a dim background.
    Eigen::VectorXf anatomy(n_vox);
    Eigen::VectorXf lesion_field = Eigen::VectorXf::Zero(n_vox);
    for (Index z = 0, i = 0; z < dims[0]; ++z)
      for (Index y = 0; y < dims[1]; ++y)
        for (Index x = 0; x < dims[2]; ++x, ++i) {
          const std::array<double, 3> pos{double(z), double(y), double(x)};
          double r2 = 0.0;
          for (int a = 0; a < 3; ++a) {
            const double d = (pos[a] - plan.organ_center[a]) / plan.organ_radii[a];
            r2 += d * d;
          }
          const double organ = 1.0 / (1.0 + std::exp((std::sqrt(r2) - 1.0) * 12.0));
          double texture = 0.0;
          for (const auto& b : plan.texture) {
            double d2 = 0.0;
            for (int a = 0; a < 3; ++a) d2 += (pos[a] - b.center[a]) * (pos[a] - b.center[a]);
            texture += b.amplitude * std::exp(-d2 / (2.0 * b.width * b.width));
          }
          anatomy[i] = static_cast<float>(0.1 + organ * (0.8 + texture));
          if (plan.lesion) {
            double l2 = 0.0;
            for (int a = 0; a < 3; ++a) {
              const double d = (pos[a] - plan.lesion->center[a]) / plan.lesion->radii[a];
              l2 += d * d;
            }
            lesion_field[i] = static_cast<float>(1.0 / (1.0 + std::exp((std::sqrt(l2) - 1.0) * 8.0)));
          }
        }

    PatientRecord record;
    std::ostringstream id;
    id << "P" << std::setw(4) << std::setfill('0') << p;
    record.patient_id = id.str();
    const double t_first = plan.timestamps.front();
    const double t_diag = plan.timestamps.back();
    if (flags[p]) record.diagnosis_date = t_diag;

    std::normal_distribution<float> noise(0.f, static_cast<float>(cfg.noise_level));
    for (double t : plan.timestamps) {
      StudyVisit visit;
      visit.timestamp = t;
      visit.series_labels = cfg.series_labels;
      const double contrast =
          plan.lesion ? cfg.lesion_amplitude * lesion_contrast(t, t_first, t_diag, cfg.growth_exponent) : 0.0;
      for (std::size_t s = 0; s < n_series; ++s) {
        // Diffusion-like remapping: tissue signal decays with the series index
        // while the lesion (restricted diffusion) stays comparatively bright.
        const double frac = n_series > 1 ? double(s) / double(n_series - 1) : 0.0;
        const float tissue_gain = static_cast<float>(std::exp(-0.7 * frac));
        const float lesion_gain = static_cast<float>(contrast * (1.0 - 0.2 * frac));
        Volume vol(1, dims, cfg.spacing);
        vol.data = anatomy * tissue_gain + lesion_field * lesion_gain;
        for (Index i = 0; i < n_vox; ++i) vol.data[i] += noise(rng);
        visit.series.push_back(std::move(vol));
      }
      record.visits.push_back(std::move(visit));
    }
    records.push_back(std::move(record));
  }
  return records;
}

// ---- manifest --------------------------------------------------------------

void save_cohort(const std::vector<PatientRecord>& records, const std::filesystem::path& dir,
                 const json& extra) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  json manifest;
  manifest["format"] = "lsv-cohort";
  manifest["version"] = 1;
  if (!extra.is_null()) manifest["config"] = extra;
  json patients = json::array();
  for (const auto& r : records) {
    json pj;
    pj["id"] = r.patient_id;
    pj["diagnosis_date"] = r.diagnosis_date ? json(*r.diagnosis_date) : json(nullptr);
    json visits = json::array();
    fs::create_directories(dir / r.patient_id);
    for (std::size_t v = 0; v < r.visits.size(); ++v) {
      const auto& visit = r.visits[v];
      json vj;
      vj["timestamp"] = visit.timestamp;
      json series = json::array();
      for (std::size_t s = 0; s < visit.series.size(); ++s) {
        const std::string rel = r.patient_id + "/v" + std::to_string(v) + "_" + visit.series_labels[s] + ".lsv";
        save_volume(visit.series[s], dir / rel);
        series.push_back({{"label", visit.series_labels[s]}, {"path", rel}});
      }
      vj["series"] = std::move(series);
      visits.push_back(std::move(vj));
    }
    pj["visits"] = std::move(visits);
    patients.push_back(std::move(pj));
  }
  manifest["patients"] = std::move(patients);
  std::ofstream os(dir / "manifest.json");
  if (!os) throw std::runtime_error("cannot write manifest in " + dir.string());
  os << manifest.dump(2) << "\n";
}

std::vector<PatientRecord> load_cohort(const std::filesystem::path& dir) {
  std::ifstream is(dir / "manifest.json");
  if (!is) throw std::runtime_error("missing cohort manifest in " + dir.string());
  const json manifest = json::parse(is);
  if (manifest.value("format", "") != "lsv-cohort")
    throw std::runtime_error("not a cohort manifest: " + (dir / "manifest.json").string());
  std::vector<PatientRecord> records;
  for (const auto& pj : manifest.at("patients")) {
    PatientRecord r;
    r.patient_id = pj.at("id").get<std::string>();
    if (!pj.at("diagnosis_date").is_null()) r.diagnosis_date = pj.at("diagnosis_date").get<double>();
    for (const auto& vj : pj.at("visits")) {
      StudyVisit visit;
      visit.timestamp = vj.at("timestamp").get<double>();
      for (const auto& sj : vj.at("series")) {
        visit.series_labels.push_back(sj.at("label").get<std::string>());
        visit.series.push_back(load_volume(dir / sj.at("path").get<std::string>()));
      }
      r.visits.push_back(std::move(visit));
    }
    r.validate();
    records.push_back(std::move(r));
  }
  return records;
}

}  // namespace hccnet

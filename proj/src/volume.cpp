#include "hccnet/volume.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>

namespace hccnet {

static_assert(std::endian::native == std::endian::little, "the .lsv writer assumes a little-endian host");

Volume::Volume(Index channels_, Dims3 dims_, std::array<float, 3> spacing_)
    : channels(channels_), dims(dims_), spacing(spacing_),
      data(Eigen::VectorXf::Zero(channels_ * voxel_count(dims_))) {}

void Volume::validate() const {
  if (channels < 1 || dims[0] < 1 || dims[1] < 1 || dims[2] < 1)
    throw std::invalid_argument("volume extents must be positive");
  if (data.size() != channels * voxels())
    throw std::invalid_argument("volume data length does not match channels*d*h*w");
  if (!data.allFinite()) throw std::invalid_argument("volume contains non-finite intensities");
}

bool Volume::operator==(const Volume& o) const {
  return channels == o.channels && dims == o.dims && spacing == o.spacing &&
         data.size() == o.data.size() &&
         std::memcmp(data.data(), o.data.data(), sizeof(float) * data.size()) == 0;
}

void StudyVisit::validate() const {
  if (series.empty()) throw std::invalid_argument("visit has no series");
  if (series_labels.size() != series.size())
    throw std::invalid_argument("series_labels length differs from series count");
  std::set<std::string> unique(series_labels.begin(), series_labels.end());
  if (unique.size() != series_labels.size()) throw std::invalid_argument("duplicate series label");
  for (const auto& s : series) {
    s.validate();
    if (s.channels != 1) throw std::invalid_argument("series volumes must be single-channel");
    if (s.dims != series.front().dims || s.spacing != series.front().spacing)
      throw std::invalid_argument("series differ in dims or spacing");
  }
}

void PatientRecord::validate() const {
  for (std::size_t i = 0; i < visits.size(); ++i) {
    visits[i].validate();
    if (i > 0 && !(visits[i].timestamp > visits[i - 1].timestamp))
      throw std::invalid_argument("visit timestamps must be strictly increasing");
  }
  if (diagnosis_date && !visits.empty() && *diagnosis_date < visits.front().timestamp)
    throw std::invalid_argument("diagnosis date precedes the first visit");
}

// ---- .lsv ------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'L', 'S', 'V', '1'};
constexpr std::size_t kHeaderBytes = 4 + 4 * 4 + 3 * 4;

template <typename T>
void put(std::ostream& os, T value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(const char* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

}  // namespace

void save_volume(const Volume& v, const std::filesystem::path& path) {
  v.validate();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
  os.write(kMagic, 4);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(v.channels));
  for (Index d : v.dims) put<std::uint32_t>(os, static_cast<std::uint32_t>(d));
  for (float s : v.spacing) put<float>(os, s);
  os.write(reinterpret_cast<const char*>(v.data.data()),
           static_cast<std::streamsize>(sizeof(float) * v.data.size()));
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

Volume load_volume(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open for reading: " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (bytes.size() < kHeaderBytes || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw MalformedHeaderError("malformed .lsv header: " + path.string());

  const char* p = bytes.data() + 4;
  std::array<std::uint32_t, 4> ext{};
  for (auto& e : ext) {
    e = get<std::uint32_t>(p);
    p += 4;
  }
  if (std::any_of(ext.begin(), ext.end(), [](std::uint32_t e) { return e == 0; }))
    throw MalformedHeaderError("zero extent in .lsv header: " + path.string());

  // 64-bit products cannot overflow for u32 factors until the last multiply.
  unsigned __int128 count = 1;
  for (auto e : ext) count *= e;
  const unsigned __int128 payload = count * sizeof(float);
  if (payload > static_cast<unsigned __int128>(std::numeric_limits<std::int64_t>::max()))
    throw DimensionOverflowError("volume extents overflow: " + path.string());

  Volume v;
  v.channels = ext[0];
  v.dims = {Index(ext[1]), Index(ext[2]), Index(ext[3])};
  for (auto& s : v.spacing) {
    s = get<float>(p);
    p += 4;
  }
  const std::size_t need = static_cast<std::size_t>(payload);
  if (bytes.size() - kHeaderBytes < need)
    throw TruncatedPayloadError("truncated .lsv payload: " + path.string());
  v.data.resize(static_cast<Index>(count));
  std::memcpy(v.data.data(), p, need);
  return v;
}

// ---- subsetting ------------------------------------------------------------

std::optional<LabeledSequence> subset_for_finetune(const PatientRecord& record) {
  LabeledSequence seq;
  seq.patient_id = record.patient_id;
  if (record.diagnosis_date) {
    seq.label = 1;
    seq.anchor = *record.diagnosis_date;
    for (const auto& v : record.visits)
      if (v.timestamp < *record.diagnosis_date) seq.visits.push_back(&v);
  } else {
    seq.label = 0;
    for (const auto& v : record.visits) seq.visits.push_back(&v);
    if (!seq.visits.empty()) seq.anchor = seq.visits.back()->timestamp;
  }
  if (seq.visits.empty()) return std::nullopt;
  return seq;
}

LabeledSequence truncate_sequence(LabeledSequence seq, std::size_t max_len) {
  if (max_len < 1) throw std::invalid_argument("max_len must be at least 1");
  if (seq.visits.size() > max_len)
    seq.visits.erase(seq.visits.begin(), seq.visits.end() - static_cast<std::ptrdiff_t>(max_len));
  return seq;
}

std::pair<std::vector<PatientRecord>, std::vector<PatientRecord>> split_dataset(
    const std::vector<PatientRecord>& records, double dev_fraction, std::uint64_t seed) {
  if (!(dev_fraction > 0.0 && dev_fraction < 1.0))
    throw std::invalid_argument("dev_fraction must lie in (0, 1)");
  if (records.empty()) throw std::invalid_argument("cannot split an empty record list");
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_dev = static_cast<std::size_t>(std::llround(dev_fraction * double(records.size())));
  std::vector<std::size_t> dev_idx(order.begin(), order.begin() + n_dev);
  std::vector<std::size_t> test_idx(order.begin() + n_dev, order.end());
  // Keep cohort order inside each part.
  std::sort(dev_idx.begin(), dev_idx.end());
  std::sort(test_idx.begin(), test_idx.end());
  std::pair<std::vector<PatientRecord>, std::vector<PatientRecord>> out;
  for (auto i : dev_idx) out.first.push_back(records[i]);
  for (auto i : test_idx) out.second.push_back(records[i]);
  return out;
}

}  // namespace hccnet

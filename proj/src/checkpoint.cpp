#include "hccnet/checkpoint.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

namespace hccnet {

using nlohmann::json;

void to_json(json& j, const CheckpointManifest& m) {
  json tensors = json::array();
  for (const auto& t : m.tensors)
    tensors.push_back({{"name", t.name},
                       {"shape", t.shape},
                       {"offset", t.offset},
                       {"decay", t.decay_eligible},
                       {"ema", t.ema_mirrored}});
  j = json{{"format_version", m.format_version},
           {"variant", m.variant},
           {"stage", m.stage},
           {"step", m.step},
           {"seed", m.seed},
           {"tensors", std::move(tensors)},
           {"config", m.config}};
}

void from_json(const json& j, CheckpointManifest& m) {
  m.format_version = j.at("format_version").get<std::uint32_t>();
  m.variant = j.at("variant").get<std::string>();
  m.stage = j.at("stage").get<std::string>();
  m.step = j.at("step").get<Index>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.config = j.value("config", json());
  m.tensors.clear();
  for (const auto& t : j.at("tensors")) {
    TensorEntry e;
    e.name = t.at("name").get<std::string>();
    e.shape = t.at("shape").get<std::vector<Index>>();
    e.offset = t.at("offset").get<std::uint64_t>();
    e.decay_eligible = t.value("decay", false);
    e.ema_mirrored = t.value("ema", true);
    m.tensors.push_back(std::move(e));
  }
}

namespace {

constexpr char kMagic[4] = {'L', 'S', 'C', 'K'};

Index numel(const std::vector<Index>& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

}  // namespace

void save_checkpoint(const ParameterStore<float>& store, CheckpointManifest manifest,
                     const std::filesystem::path& path) {
  manifest.format_version = kCheckpointVersion;
  manifest.tensors.clear();
  std::uint64_t offset = 0;
  for (std::size_t h = 0; h < store.size(); ++h) {
    const auto& info = store.info(h);
    manifest.tensors.push_back({info.name, info.shape, offset, info.decay_eligible, info.ema_mirrored});
    offset += sizeof(float) * std::uint64_t(info.numel());
  }
  const std::string text = json(manifest).dump();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path.string());
  os.write(kMagic, 4);
  const std::uint32_t version = kCheckpointVersion;
  const std::uint64_t length = text.size();
  os.write(reinterpret_cast<const char*>(&version), 4);
  os.write(reinterpret_cast<const char*>(&length), 8);
  os.write(text.data(), std::streamsize(text.size()));
  for (std::size_t h = 0; h < store.size(); ++h)
    os.write(reinterpret_cast<const char*>(store.value(h).data()),
             std::streamsize(sizeof(float) * std::size_t(store.value(h).size())));
  if (!os) throw std::runtime_error("checkpoint write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw CheckpointError("not a checkpoint file: " + path.string());
  std::uint32_t version;
  std::uint64_t length;
  std::memcpy(&version, bytes.data() + 4, 4);
  std::memcpy(&length, bytes.data() + 8, 8);
  if (version != kCheckpointVersion)
    throw CheckpointVersionError("checkpoint version " + std::to_string(version) + " is not supported");
  if (length > bytes.size() - 16) throw CheckpointError("truncated checkpoint manifest: " + path.string());

  Checkpoint ck;
  try {
    ck.manifest = json::parse(bytes.begin() + 16, bytes.begin() + 16 + std::ptrdiff_t(length)).get<CheckpointManifest>();
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint manifest: ") + e.what());
  }
  const std::uint64_t payload_size = bytes.size() - 16 - length;
  const char* payload = bytes.data() + 16 + length;

  std::vector<std::pair<std::uint64_t, std::uint64_t>> spans;
  for (const auto& t : ck.manifest.tensors) {
    const std::uint64_t size = sizeof(float) * std::uint64_t(numel(t.shape));
    if (t.offset > payload_size || size > payload_size - t.offset)
      throw MissingTensorError("tensor '" + t.name + "' lies outside the checkpoint payload");
    spans.emplace_back(t.offset, t.offset + size);
  }
  std::sort(spans.begin(), spans.end());
  for (std::size_t i = 1; i < spans.size(); ++i)
    if (spans[i].first < spans[i - 1].second) throw MissingTensorError("overlapping tensor offsets in checkpoint");

  for (const auto& t : ck.manifest.tensors) {
    InitKind init = InitKind::Normal;
    auto h = ck.store.add({t.name, t.shape, init, t.decay_eligible, t.ema_mirrored});
    std::memcpy(ck.store.value(h).data(), payload + t.offset, sizeof(float) * std::size_t(numel(t.shape)));
  }
  return ck;
}

void load_into(ParameterStore<float>& target, const Checkpoint& source, const std::vector<std::string>& prefixes) {
  std::vector<std::pair<std::size_t, std::size_t>> plan;
  for (std::size_t h = 0; h < target.size(); ++h) {
    const auto& name = target.info(h).name;
    const bool wanted = std::any_of(prefixes.begin(), prefixes.end(),
                                    [&](const std::string& p) { return name.rfind(p, 0) == 0; });
    if (!wanted) continue;
    if (!source.store.contains(name))
      throw MissingTensorError("checkpoint has no tensor '" + name + "'");
    const auto src = source.store.handle(name);
    if (source.store.info(src).shape != target.info(h).shape)
      throw ShapeConflictError("shape conflict for tensor '" + name + "'");
    plan.emplace_back(h, src);
  }
  for (auto [dst, src] : plan) target.value(dst) = source.store.value(src);
}

}  // namespace hccnet

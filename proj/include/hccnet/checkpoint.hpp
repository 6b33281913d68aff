#pragma once

#include "hccnet/core.hpp"

#include <json.hpp>

#include <filesystem>

namespace hccnet {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TensorEntry {
  std::string name;
  std::vector<Index> shape;
  std::uint64_t offset = 0;  // bytes from the start of the payload
  bool decay_eligible = false;
  bool ema_mirrored = true;
};

struct CheckpointManifest {
  std::uint32_t format_version = kCheckpointVersion;
  std::string variant;
  std::string stage;  // backbone-pretrain | encoder-pretrain | finetune | baseline
  Index step = 0;
  std::uint64_t seed = 0;
  std::vector<TensorEntry> tensors;
  nlohmann::json config;

  bool operator==(const CheckpointManifest&) const = default;
};

void to_json(nlohmann::json& j, const CheckpointManifest& m);
void from_json(const nlohmann::json& j, CheckpointManifest& m);

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class CheckpointVersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class MissingTensorError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class ShapeConflictError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

struct Checkpoint {
  CheckpointManifest manifest;
  ParameterStore<float> store;
};

/// Writes `LSCK`, u32 version, u64 manifest length, manifest JSON, then the
/// f32 payloads. The tensor index of `manifest` is rebuilt from `store`.
void save_checkpoint(const ParameterStore<float>& store, CheckpointManifest manifest,
                     const std::filesystem::path& path);

Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies every tensor of `target` whose name starts with one of `prefixes`
/// from `source`. All names and shapes are checked before anything is
/// written, so a failed call leaves `target` unchanged.
void load_into(ParameterStore<float>& target, const Checkpoint& source, const std::vector<std::string>& prefixes);

}  // namespace hccnet

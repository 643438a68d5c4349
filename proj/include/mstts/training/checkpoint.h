#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "mstts/model/model.h"
#include "mstts/training/training.h"

namespace mstts::training {

/// Bad magic, malformed header, truncated payload, or a checksum mismatch.
/// `entry()` names the parameter or buffer at fault when there is one.
class CorruptCheckpointError : public std::runtime_error {
 public:
  CorruptCheckpointError(std::string entry, const std::string& what)
      : std::runtime_error(what), entry_(std::move(entry)) {}
  const std::string& entry() const { return entry_; }

 private:
  std::string entry_;
};

inline constexpr char kCheckpointMagic[] = "MSTTS1";
inline constexpr int kCheckpointFormat = 1;

struct ManifestEntry {
  std::string name;
  std::string kind;  // "parameter" or "buffer"
  std::vector<std::size_t> shape;
  std::size_t offset = 0;  // bytes from the start of the payload
  std::size_t bytes = 0;
  std::string checksum;  // FNV-1a 64 of the entry's bytes, hex
};

/// Layout: the 6 magic bytes, a little-endian u32 header length, the compact
/// JSON header, then the little-endian f32 payload (parameters in
/// registration order, then batchnorm buffers).
struct Checkpoint {
  model::ModelConfig model;
  int stage = 0;
  std::string tool_version;
  nlohmann::json train;  // null when absent
  nlohmann::json run;    // null when absent
  std::vector<ManifestEntry> manifest;
  std::vector<std::uint8_t> payload;
};

std::vector<std::uint8_t> encode_checkpoint(const model::Model<float>& m, const nlohmann::json& train = nullptr,
                                            const nlohmann::json& run = nullptr);
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
/// `what` names the source in error messages.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes, const std::string& what);

/// Builds a model from the checkpoint's configuration and loads its values,
/// buffers, and stage tag.
std::unique_ptr<model::Model<float>> instantiate(const Checkpoint& ckpt);
/// Loads values into an existing model; the parameter inventory must match.
void load_into(model::Model<float>& m, const Checkpoint& ckpt);

void save_checkpoint(const model::Model<float>& m, const std::filesystem::path& path,
                     const nlohmann::json& train = nullptr, const nlohmann::json& run = nullptr);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Throws ProvenanceError unless the checkpoint carries the expected stage.
void require_stage(const Checkpoint& ckpt, int stage, const std::string& what);
/// Stage a finished model of this variant carries (2 for two-stage variants).
int final_stage(model::Variant v);

}  // namespace mstts::training

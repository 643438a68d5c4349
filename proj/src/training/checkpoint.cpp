#include "mstts/training/checkpoint.h"

#include <bit>
#include <cstring>

#include "mstts/version.h"

namespace mstts::training {

using json = nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr std::size_t kMagicLen = sizeof(kCheckpointMagic) - 1;

void append_floats(std::vector<std::uint8_t>& out, std::span<const float> values) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(values.data());
  out.insert(out.end(), p, p + values.size() * sizeof(float));
}

json entry_json(const ManifestEntry& e) {
  return {{"name", e.name},   {"kind", e.kind},   {"shape", e.shape},
          {"offset", e.offset}, {"bytes", e.bytes}, {"checksum", e.checksum}};
}

std::string checksum_of(std::span<const std::uint8_t> bytes) { return hex64(fnv1a64(bytes)); }

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  json header;
  header["format"] = kCheckpointFormat;
  header["tool_version"] = ckpt.tool_version;
  header["variant"] = model::variant_name(ckpt.model.variant);
  header["stage"] = ckpt.stage;
  header["model"] = to_json(ckpt.model);
  header["train"] = ckpt.train;
  header["run"] = ckpt.run;
  json manifest = json::array();
  for (const auto& e : ckpt.manifest) manifest.push_back(entry_json(e));
  header["manifest"] = std::move(manifest);
  const std::string text = header.dump();

  std::vector<std::uint8_t> out(kCheckpointMagic, kCheckpointMagic + kMagicLen);
  const auto len = static_cast<std::uint32_t>(text.size());
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(len >> (8 * i)));
  out.insert(out.end(), text.begin(), text.end());
  out.insert(out.end(), ckpt.payload.begin(), ckpt.payload.end());
  return out;
}

std::vector<std::uint8_t> encode_checkpoint(const model::Model<float>& m, const json& train, const json& run) {
  Checkpoint ckpt;
  ckpt.model = m.config();
  ckpt.stage = m.stage();
  ckpt.tool_version = kToolVersion;
  ckpt.train = train;
  ckpt.run = run;
  auto add = [&](const std::string& name, const std::string& kind, std::vector<std::size_t> shape,
                 std::span<const float> values) {
    ManifestEntry e;
    e.name = name;
    e.kind = kind;
    e.shape = std::move(shape);
    e.offset = ckpt.payload.size();
    append_floats(ckpt.payload, values);
    e.bytes = ckpt.payload.size() - e.offset;
    e.checksum = checksum_of(std::span<const std::uint8_t>(ckpt.payload).subspan(e.offset, e.bytes));
    ckpt.manifest.push_back(std::move(e));
  };
  for (const auto& p : m.params().parameters()) {
    add(p.name, "parameter", p.value.shape(), p.value.data());
  }
  for (const auto& b : m.params().buffers()) add(b.name, "buffer", {b.values.size()}, b.values);
  return encode_checkpoint(ckpt);
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes, const std::string& what) {
  if (bytes.size() < kMagicLen + 4 || std::memcmp(bytes.data(), kCheckpointMagic, kMagicLen) != 0) {
    throw CorruptCheckpointError("", what + ": not a checkpoint (bad magic)");
  }
  std::uint32_t len = 0;
  for (int i = 0; i < 4; ++i) len |= static_cast<std::uint32_t>(bytes[kMagicLen + i]) << (8 * i);
  const std::size_t header_start = kMagicLen + 4;
  if (bytes.size() < header_start + len) throw CorruptCheckpointError("", what + ": truncated header");
  json header;
  try {
    header = json::parse(bytes.begin() + header_start, bytes.begin() + header_start + len);
  } catch (const json::exception& e) {
    throw CorruptCheckpointError("", what + ": malformed header: " + e.what());
  }

  Checkpoint ckpt;
  try {
    if (header.at("format").get<int>() != kCheckpointFormat) {
      throw CorruptCheckpointError("", what + ": unsupported checkpoint format " + header.at("format").dump());
    }
    ckpt.model = model::model_config_from_json(header.at("model"));
    ckpt.stage = header.at("stage").get<int>();
    ckpt.tool_version = header.at("tool_version").get<std::string>();
    ckpt.train = header.at("train");
    ckpt.run = header.at("run");
    if (header.at("variant").get<std::string>() != model::variant_name(ckpt.model.variant)) {
      throw CorruptCheckpointError("", what + ": variant tag disagrees with the model configuration");
    }
    for (const auto& e : header.at("manifest")) {
      ManifestEntry m;
      m.name = e.at("name").get<std::string>();
      m.kind = e.at("kind").get<std::string>();
      m.shape = e.at("shape").get<std::vector<std::size_t>>();
      m.offset = e.at("offset").get<std::size_t>();
      m.bytes = e.at("bytes").get<std::size_t>();
      m.checksum = e.at("checksum").get<std::string>();
      ckpt.manifest.push_back(std::move(m));
    }
  } catch (const json::exception& e) {
    throw CorruptCheckpointError("", what + ": malformed header: " + e.what());
  } catch (const model::ConfigError& e) {
    throw CorruptCheckpointError("", what + ": invalid model configuration: " + e.what());
  }

  ckpt.payload.assign(bytes.begin() + header_start + len, bytes.end());
  std::size_t expected = 0;
  for (const auto& e : ckpt.manifest) {
    if (e.offset != expected) {
      throw CorruptCheckpointError(e.name, what + ": manifest offset out of order at " + e.name);
    }
    if (e.offset + e.bytes > ckpt.payload.size()) {
      throw CorruptCheckpointError(e.name, what + ": payload truncated inside " + e.name);
    }
    const auto slice = std::span<const std::uint8_t>(ckpt.payload).subspan(e.offset, e.bytes);
    if (checksum_of(slice) != e.checksum) {
      throw CorruptCheckpointError(e.name, what + ": checksum mismatch in " + e.name);
    }
    expected = e.offset + e.bytes;
  }
  if (expected != ckpt.payload.size()) {
    throw CorruptCheckpointError("", what + ": " + std::to_string(ckpt.payload.size() - expected) +
                                         " trailing payload bytes");
  }
  return ckpt;
}

void load_into(model::Model<float>& m, const Checkpoint& ckpt) {
  const auto& params = m.params().parameters();
  auto& buffers = m.params().buffers();
  if (ckpt.manifest.size() != params.size() + buffers.size()) {
    throw CorruptCheckpointError("", "checkpoint has " + std::to_string(ckpt.manifest.size()) +
                                         " entries, model expects " +
                                         std::to_string(params.size() + buffers.size()));
  }
  auto read = [&](const ManifestEntry& e, std::span<float> dst) {
    if (e.bytes != dst.size() * sizeof(float)) {
      throw CorruptCheckpointError(e.name, "size mismatch for " + e.name);
    }
    std::memcpy(dst.data(), ckpt.payload.data() + e.offset, e.bytes);
  };
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& e = ckpt.manifest[i];
    if (e.name != params[i].name || e.kind != "parameter" || e.shape != params[i].value.shape()) {
      throw CorruptCheckpointError(e.name, "manifest entry " + e.name + " does not match parameter " +
                                               params[i].name);
    }
    auto t = params[i].value;
    read(e, t.mutable_data());
  }
  for (std::size_t i = 0; i < buffers.size(); ++i) {
    const auto& e = ckpt.manifest[params.size() + i];
    if (e.name != buffers[i].name || e.kind != "buffer") {
      throw CorruptCheckpointError(e.name, "manifest entry " + e.name + " does not match buffer " + buffers[i].name);
    }
    read(e, buffers[i].values);
  }
  m.set_stage(ckpt.stage);
}

std::unique_ptr<model::Model<float>> instantiate(const Checkpoint& ckpt) {
  auto m = std::make_unique<model::Model<float>>(ckpt.model);
  load_into(*m, ckpt);
  return m;
}

void save_checkpoint(const model::Model<float>& m, const std::filesystem::path& path, const json& train,
                     const json& run) {
  write_file(path, encode_checkpoint(m, train, run));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path), path.string());
}

void require_stage(const Checkpoint& ckpt, int stage, const std::string& what) {
  if (ckpt.stage != stage) {
    throw ProvenanceError(what + ": expected a stage-" + std::to_string(stage) + " " +
                          model::variant_name(ckpt.model.variant) + " checkpoint, got stage " +
                          std::to_string(ckpt.stage));
  }
}

int final_stage(model::Variant v) {
  return v == model::Variant::Proposed || v == model::Variant::BaseFS ? 2 : 1;
}

}  // namespace mstts::training

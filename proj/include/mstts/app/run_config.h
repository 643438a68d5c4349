#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "json.hpp"
#include "mstts/corpus/corpus.h"
#include "mstts/model/config.h"
#include "mstts/training/training.h"

namespace mstts::app {

inline constexpr int kRunConfigVersion = 1;

struct EvalConfig {
  std::size_t min_groups = 10;   // test parallel groups, topped up with held-out renders
  std::size_t distractors = 20;  // multi-reference distractor renders per record
  std::uint64_t seed = 99;
  double probe_min_accuracy = 0.95;
  std::size_t max_steps = 0;  // free-run cap; 0 uses the model's max_decoder_steps
};

struct PathsConfig {
  std::string data;  // corpus directory used when --data is absent
};

/// Everything a run depends on besides the command-line flags. The model
/// section holds widths only; the variant comes from --variant and the
/// Base-FS stride override is applied on top.
struct RunConfig {
  corpus::CorpusConfig corpus;
  model::ModelConfig model;
  training::TrainConfig train;
  EvalConfig eval;
  PathsConfig paths;

  model::ModelConfig model_for(model::Variant v) const;
};

nlohmann::json to_json(const RunConfig& c);
/// Strict: unknown keys and a missing or unsupported version raise
/// model::ConfigError. Missing sections and keys keep their defaults.
RunConfig run_config_from_json(const nlohmann::json& j);
/// Reads and parses a file; IoError when unreadable.
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace mstts::app

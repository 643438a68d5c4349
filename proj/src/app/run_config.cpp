#include "mstts/app/run_config.h"

#include "mstts/features.h"

namespace mstts::app {

using json = nlohmann::json;
using model::ConfigError;
using model::reject_unknown_keys;

namespace {

template <typename V>
void read(const json& j, const char* key, V& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<V>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

json model_widths_json(const model::ModelConfig& m) {
  json j = model::to_json(m);
  j.erase("variant");
  j.erase("memory_width");
  j["ref_encoder"].erase("strides");
  return j;
}

}  // namespace

model::ModelConfig RunConfig::model_for(model::Variant v) const {
  model::ModelConfig base = model;
  base.ref.strides = model::ModelConfig{}.ref.strides;
  return model::ModelConfig::for_variant(v, base);
}

json to_json(const RunConfig& c) {
  return {{"version", kRunConfigVersion},
          {"corpus",
           {{"n_utterances", c.corpus.n_utterances},
            {"seed", c.corpus.seed},
            {"neutral_frac", c.corpus.neutral_frac},
            {"parallel_frac", c.corpus.parallel_frac},
            {"d_spec", c.corpus.d_spec},
            {"frame_shift_ms", c.corpus.frame_shift_ms}}},
          {"model", model_widths_json(c.model)},
          {"train", training::to_json(c.train)},
          {"eval",
           {{"min_groups", c.eval.min_groups},
            {"distractors", c.eval.distractors},
            {"seed", c.eval.seed},
            {"probe_min_accuracy", c.eval.probe_min_accuracy},
            {"max_steps", c.eval.max_steps}}},
          {"paths", {{"data", c.paths.data}}}};
}

RunConfig run_config_from_json(const json& j) {
  reject_unknown_keys(j, {"version", "corpus", "model", "train", "eval", "paths"}, "config");
  if (!j.contains("version")) throw ConfigError("config: missing \"version\"");
  if (j.at("version") != kRunConfigVersion) {
    throw ConfigError("config: unsupported version " + j.at("version").dump());
  }
  RunConfig c;
  if (j.contains("corpus")) {
    const auto& s = j.at("corpus");
    reject_unknown_keys(s, {"n_utterances", "seed", "neutral_frac", "parallel_frac", "d_spec", "frame_shift_ms"},
                        "corpus");
    read(s, "n_utterances", c.corpus.n_utterances, "corpus");
    read(s, "seed", c.corpus.seed, "corpus");
    read(s, "neutral_frac", c.corpus.neutral_frac, "corpus");
    read(s, "parallel_frac", c.corpus.parallel_frac, "corpus");
    read(s, "d_spec", c.corpus.d_spec, "corpus");
    read(s, "frame_shift_ms", c.corpus.frame_shift_ms, "corpus");
  }
  if (j.contains("model")) {
    const auto& s = j.at("model");
    if (s.is_object() && s.contains("variant")) {
      throw ConfigError("model.variant: the variant is chosen with --variant, not in the config");
    }
    if (s.is_object() && s.contains("ref_encoder") && s.at("ref_encoder").contains("strides")) {
      throw ConfigError("model.ref_encoder.strides: strides follow from the variant");
    }
    c.model = model::model_config_from_json(s);
  }
  if (j.contains("train")) c.train = training::train_config_from_json(j.at("train"));
  if (j.contains("eval")) {
    const auto& s = j.at("eval");
    reject_unknown_keys(s, {"min_groups", "distractors", "seed", "probe_min_accuracy", "max_steps"}, "eval");
    read(s, "min_groups", c.eval.min_groups, "eval");
    read(s, "distractors", c.eval.distractors, "eval");
    read(s, "seed", c.eval.seed, "eval");
    read(s, "probe_min_accuracy", c.eval.probe_min_accuracy, "eval");
    read(s, "max_steps", c.eval.max_steps, "eval");
    if (c.eval.min_groups == 0) throw ConfigError("eval.min_groups must be positive");
  }
  if (j.contains("paths")) {
    const auto& s = j.at("paths");
    reject_unknown_keys(s, {"data"}, "paths");
    read(s, "data", c.paths.data, "paths");
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace mstts::app

#include "mstts/model/config.h"

#include <algorithm>
#include <numeric>

#include "mstts/autodiff/tensor.h"

namespace mstts::model {

using json = nlohmann::json;

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::Proposed:
      return "proposed";
    case Variant::BaseG:
      return "base-g";
    case Variant::BaseL:
      return "base-l";
    case Variant::BaseFS:
      return "base-fs";
  }
  return "proposed";
}

Variant parse_variant(const std::string& s) {
  for (Variant v : {Variant::Proposed, Variant::BaseG, Variant::BaseL, Variant::BaseFS}) {
    if (s == variant_name(v)) return v;
  }
  throw ConfigError("unknown variant '" + s + "' (expected proposed, base-g, base-l or base-fs)");
}

void RefEncoderConfig::validate() const {
  if (conv_channels.size() != 6 || strides.size() != 6) {
    throw ConfigError("reference encoder needs exactly 6 conv layers");
  }
  if (std::any_of(conv_channels.begin(), conv_channels.end(), [](auto c) { return c == 0; }) ||
      std::any_of(strides.begin(), strides.end(), [](auto s) { return s == 0; })) {
    throw ConfigError("conv channels and strides must be positive");
  }
  if (d_l == 0 || d_l % 2 != 0) throw ConfigError("d_L must be a positive even number");
  if (gru_hidden == 0 || d_g == 0) throw ConfigError("gru_hidden and d_G must be positive");
  if (!(frame_shift_ms > 0)) throw ConfigError("frame_shift_ms must be positive");
}

std::size_t downsampled_length(std::size_t t_spec, std::span<const std::size_t> strides) {
  if (t_spec == 0) throw ad::EmptyInputError("downsampled_length: zero frames");
  std::size_t t = t_spec;
  for (auto s : strides) t = (t + s - 1) / s;
  return t;
}

double granularity_ms(const RefEncoderConfig& cfg) {
  const auto prod = std::accumulate(cfg.strides.begin(), cfg.strides.end(), std::size_t{1},
                                    std::multiplies<>());
  return static_cast<double>(prod) * cfg.frame_shift_ms;
}

std::size_t ModelConfig::memory_width() const {
  std::size_t w = backbone.d_p;
  if (has_local()) w += ref.d_l / 2;
  if (has_global()) w += ref.d_g;
  return w;
}

void ModelConfig::validate() const {
  ref.validate();
  if (d_spec == 0) throw ConfigError("d_spec must be positive");
  if (backbone.d_p == 0 || backbone.d_p % 2 != 0) {
    throw ConfigError("d_p must be a positive even number (bidirectional text encoder)");
  }
  if (backbone.reduction_r == 0) throw ConfigError("reduction_r must be at least 1");
  if (backbone.prenet.empty()) throw ConfigError("prenet needs at least one layer");
  if (backbone.vocab < 2 || backbone.dec_hidden == 0 || backbone.attn_width == 0 ||
      backbone.n_emotions == 0 || backbone.cls_hidden == 0 || backbone.max_decoder_steps == 0 ||
      attn.d_a == 0) {
    throw ConfigError("backbone widths must be positive");
  }
  if (variant == Variant::BaseFS &&
      std::any_of(ref.strides.begin(), ref.strides.end(), [](auto s) { return s != 1; })) {
    throw ConfigError("base-fs requires all conv strides to be 1");
  }
}

ModelConfig ModelConfig::for_variant(Variant v, ModelConfig base) {
  base.variant = v;
  if (v == Variant::BaseFS) base.ref.strides.assign(6, 1);
  return base;
}

ModelConfig ModelConfig::for_variant(Variant v) { return for_variant(v, ModelConfig{}); }

ModelConfig ModelConfig::pilot(Variant v) {
  ModelConfig c;
  c.d_spec = 32;
  c.ref.conv_channels = {16, 16, 32, 32, 64, 64};
  c.ref.gru_hidden = 64;
  c.ref.d_g = 32;
  c.backbone.d_p = 32;
  c.backbone.dec_hidden = 96;
  c.backbone.prenet = {32, 32};
  c.backbone.attn_width = 32;
  c.backbone.cls_hidden = 32;
  return for_variant(v, c);
}

ModelConfig ModelConfig::tiny(Variant v) {
  ModelConfig c;
  c.d_spec = 4;
  c.ref.conv_channels = {4, 4, 4, 4, 4, 4};
  c.ref.gru_hidden = 4;
  c.ref.d_g = 8;
  c.ref.d_l = 6;
  c.attn.d_a = 4;
  c.backbone.vocab = 17;
  c.backbone.d_p = 8;
  c.backbone.dec_hidden = 6;
  c.backbone.prenet = {5, 4};
  c.backbone.attn_width = 5;
  c.backbone.cls_hidden = 5;
  return for_variant(v, c);
}

void reject_unknown_keys(const json& j, std::initializer_list<const char*> allowed,
                         const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      throw ConfigError(where + ": unknown key '" + key + "'");
    }
  }
}

json to_json(const ModelConfig& cfg) {
  return {{"variant", variant_name(cfg.variant)},
          {"d_spec", cfg.d_spec},
          {"ref_encoder",
           {{"conv_channels", cfg.ref.conv_channels},
            {"strides", cfg.ref.strides},
            {"gru_hidden", cfg.ref.gru_hidden},
            {"d_g", cfg.ref.d_g},
            {"d_l", cfg.ref.d_l},
            {"frame_shift_ms", cfg.ref.frame_shift_ms}}},
          {"ref_attention", {{"d_a", cfg.attn.d_a}, {"key_half", "first"}}},
          {"backbone",
           {{"vocab", cfg.backbone.vocab},
            {"d_p", cfg.backbone.d_p},
            {"reduction_r", cfg.backbone.reduction_r},
            {"dec_hidden", cfg.backbone.dec_hidden},
            {"prenet", cfg.backbone.prenet},
            {"attn_width", cfg.backbone.attn_width},
            {"n_emotions", cfg.backbone.n_emotions},
            {"cls_hidden", cfg.backbone.cls_hidden},
            {"max_decoder_steps", cfg.backbone.max_decoder_steps}}},
          {"memory_width", cfg.memory_width()}};
}

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

}  // namespace

ModelConfig model_config_from_json(const json& j) {
  reject_unknown_keys(j, {"variant", "d_spec", "ref_encoder", "ref_attention", "backbone", "memory_width"},
                      "model");
  ModelConfig cfg;
  if (j.contains("variant")) cfg.variant = parse_variant(j.at("variant").get<std::string>());
  read(j, "d_spec", cfg.d_spec, "model");
  if (j.contains("ref_encoder")) {
    const auto& r = j.at("ref_encoder");
    reject_unknown_keys(r, {"conv_channels", "strides", "gru_hidden", "d_g", "d_l", "frame_shift_ms"},
                        "model.ref_encoder");
    read(r, "conv_channels", cfg.ref.conv_channels, "model.ref_encoder");
    read(r, "strides", cfg.ref.strides, "model.ref_encoder");
    read(r, "gru_hidden", cfg.ref.gru_hidden, "model.ref_encoder");
    read(r, "d_g", cfg.ref.d_g, "model.ref_encoder");
    read(r, "d_l", cfg.ref.d_l, "model.ref_encoder");
    read(r, "frame_shift_ms", cfg.ref.frame_shift_ms, "model.ref_encoder");
  } else if (cfg.variant == Variant::BaseFS) {
    cfg.ref.strides.assign(6, 1);
  }
  if (j.contains("ref_attention")) {
    const auto& a = j.at("ref_attention");
    reject_unknown_keys(a, {"d_a", "key_half"}, "model.ref_attention");
    read(a, "d_a", cfg.attn.d_a, "model.ref_attention");
    if (a.contains("key_half") && a.at("key_half") != "first") {
      throw ConfigError("model.ref_attention.key_half: only \"first\" is supported");
    }
  }
  if (j.contains("backbone")) {
    const auto& b = j.at("backbone");
    reject_unknown_keys(b, {"vocab", "d_p", "reduction_r", "dec_hidden", "prenet", "attn_width",
                            "n_emotions", "cls_hidden", "max_decoder_steps"},
                        "model.backbone");
    read(b, "vocab", cfg.backbone.vocab, "model.backbone");
    read(b, "d_p", cfg.backbone.d_p, "model.backbone");
    read(b, "reduction_r", cfg.backbone.reduction_r, "model.backbone");
    read(b, "dec_hidden", cfg.backbone.dec_hidden, "model.backbone");
    read(b, "prenet", cfg.backbone.prenet, "model.backbone");
    read(b, "attn_width", cfg.backbone.attn_width, "model.backbone");
    read(b, "n_emotions", cfg.backbone.n_emotions, "model.backbone");
    read(b, "cls_hidden", cfg.backbone.cls_hidden, "model.backbone");
    read(b, "max_decoder_steps", cfg.backbone.max_decoder_steps, "model.backbone");
  }
  cfg.validate();
  if (j.contains("memory_width") && j.at("memory_width").get<std::size_t>() != cfg.memory_width()) {
    throw ConfigError("model.memory_width does not match the configured widths");
  }
  return cfg;
}

}  // namespace mstts::model

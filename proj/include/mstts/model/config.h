#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace mstts::model {

enum class Variant { Proposed, BaseG, BaseL, BaseFS };

const char* variant_name(Variant v);
/// Accepts "proposed", "base-g", "base-l", "base-fs".
Variant parse_variant(const std::string& s);

/// Raised for invalid or inconsistent configuration values and unknown keys.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct RefEncoderConfig {
  std::vector<std::size_t> conv_channels = {32, 32, 64, 64, 128, 128};
  std::vector<std::size_t> strides = {2, 1, 2, 1, 2, 2};
  std::size_t gru_hidden = 128;
  std::size_t d_g = 128;
  std::size_t d_l = 6;
  double frame_shift_ms = 12.5;

  std::size_t d_m() const { return conv_channels.back(); }
  void validate() const;
};

/// Fold of ceil(T / s) over the strides.
std::size_t downsampled_length(std::size_t t_spec, std::span<const std::size_t> strides);
/// product(strides) * frame_shift_ms
double granularity_ms(const RefEncoderConfig& cfg);

struct RefAttnConfig {
  std::size_t d_a = 16;
};

struct BackboneConfig {
  std::size_t vocab = 17;  // 16 corpus symbols plus a pad token
  std::size_t d_p = 64;
  std::size_t reduction_r = 3;
  std::size_t dec_hidden = 128;
  std::vector<std::size_t> prenet = {64, 32};
  std::size_t attn_width = 64;
  std::size_t n_emotions = 7;
  std::size_t cls_hidden = 64;
  std::size_t max_decoder_steps = 200;
};

struct ModelConfig {
  Variant variant = Variant::Proposed;
  std::size_t d_spec = 32;
  RefEncoderConfig ref;
  RefAttnConfig attn;
  BackboneConfig backbone;

  bool has_global() const { return variant != Variant::BaseL; }
  bool has_local() const { return variant != Variant::BaseG; }
  bool has_classifier() const { return variant != Variant::BaseL; }
  /// Base-G and Base-L train in one stage.
  bool two_stage() const { return variant == Variant::Proposed || variant == Variant::BaseFS; }
  std::size_t memory_width() const;
  void validate() const;

  /// Copy of `base` adjusted to the variant's topology (Base-FS: unit strides).
  static ModelConfig for_variant(Variant v, ModelConfig base);
  static ModelConfig for_variant(Variant v);
  /// Reduced widths used for the desk-scale pilot runs.
  static ModelConfig pilot(Variant v = Variant::Proposed);
  /// Very small widths for f64 gradient checks.
  static ModelConfig tiny(Variant v = Variant::Proposed);
};

nlohmann::json to_json(const ModelConfig& cfg);
/// Missing keys keep their defaults; unknown keys raise ConfigError.
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Throws ConfigError naming the first key of `j` not listed in `allowed`.
void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                         const std::string& where);

}  // namespace mstts::model

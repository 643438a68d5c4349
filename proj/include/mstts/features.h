#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mstts/autodiff/tensor.h"

namespace mstts {

/// Raised for unreadable/unwritable files.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Spectrogram-like utterance features, conceptually (channels x frames).
/// Storage is frame-major: values[t * channels + c].
struct FeatureMatrix {
  std::size_t frames = 0;
  std::size_t channels = 0;
  std::vector<float> values;
  double frame_shift_ms = 12.5;

  FeatureMatrix() = default;
  FeatureMatrix(std::size_t n_frames, std::size_t n_channels)
      : frames(n_frames), channels(n_channels), values(n_frames * n_channels, 0.0f) {}

  float& at(std::size_t t, std::size_t c) { return values[t * channels + c]; }
  float at(std::size_t t, std::size_t c) const { return values[t * channels + c]; }
  std::span<const float> frame(std::size_t t) const {
    return std::span<const float>(values).subspan(t * channels, channels);
  }

  /// (channels x frames) tensor; throws EmptyInputError for zero frames.
  template <typename T>
  ad::Tensor<T> channel_major() const;
  /// (frames x channels) tensor.
  template <typename T>
  ad::Tensor<T> time_major() const;

  template <typename T>
  static FeatureMatrix from_time_major(const ad::Tensor<T>& t, std::size_t frames);
};

/// Two little-endian u32 (frames, channels) then frames*channels
/// little-endian f32 values, frame-major.
std::vector<std::uint8_t> encode_feature_file(const FeatureMatrix& m);
FeatureMatrix decode_feature_file(std::span<const std::uint8_t> bytes, const std::string& what);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

/// FNV-1a 64-bit digest, rendered as 16 lowercase hex digits.
std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes);
std::string hex64(std::uint64_t v);

}  // namespace mstts

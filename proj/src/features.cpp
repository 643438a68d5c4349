#include "mstts/features.h"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace mstts {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

template <typename T>
ad::Tensor<T> FeatureMatrix::channel_major() const {
  if (frames == 0 || channels == 0) {
    throw ad::EmptyInputError("feature matrix has no frames");
  }
  std::vector<T> out(frames * channels);
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t c = 0; c < channels; ++c) out[c * frames + t] = values[t * channels + c];
  return ad::Tensor<T>(ad::Shape{channels, frames}, std::move(out));
}

template <typename T>
ad::Tensor<T> FeatureMatrix::time_major() const {
  if (frames == 0 || channels == 0) {
    throw ad::EmptyInputError("feature matrix has no frames");
  }
  return ad::Tensor<T>(ad::Shape{frames, channels}, std::vector<T>(values.begin(), values.end()));
}

template <typename T>
FeatureMatrix FeatureMatrix::from_time_major(const ad::Tensor<T>& t, std::size_t n_frames) {
  if (t.rank() != 2 || n_frames > t.dim(0)) {
    throw ad::ShapeError("from_time_major: " + ad::shape_str(t.shape()));
  }
  FeatureMatrix m(n_frames, t.dim(1));
  auto d = t.data();
  for (std::size_t i = 0; i < m.values.size(); ++i) m.values[i] = static_cast<float>(d[i]);
  return m;
}

template ad::Tensor<float> FeatureMatrix::channel_major<float>() const;
template ad::Tensor<double> FeatureMatrix::channel_major<double>() const;
template ad::Tensor<float> FeatureMatrix::time_major<float>() const;
template ad::Tensor<double> FeatureMatrix::time_major<double>() const;
template FeatureMatrix FeatureMatrix::from_time_major(const ad::Tensor<float>&, std::size_t);
template FeatureMatrix FeatureMatrix::from_time_major(const ad::Tensor<double>&, std::size_t);

std::vector<std::uint8_t> encode_feature_file(const FeatureMatrix& m) {
  std::vector<std::uint8_t> out(8 + 4 * m.values.size());
  const auto frames = static_cast<std::uint32_t>(m.frames);
  const auto channels = static_cast<std::uint32_t>(m.channels);
  std::memcpy(out.data(), &frames, 4);
  std::memcpy(out.data() + 4, &channels, 4);
  if (!m.values.empty()) std::memcpy(out.data() + 8, m.values.data(), 4 * m.values.size());
  return out;
}

FeatureMatrix decode_feature_file(std::span<const std::uint8_t> bytes, const std::string& what) {
  if (bytes.size() < 8) throw IoError(what + ": truncated feature header");
  std::uint32_t frames = 0, channels = 0;
  std::memcpy(&frames, bytes.data(), 4);
  std::memcpy(&channels, bytes.data() + 4, 4);
  const std::size_t expect = 8 + 4ull * frames * channels;
  if (bytes.size() != expect) {
    throw IoError(what + ": expected " + std::to_string(expect) + " bytes for " +
                  std::to_string(frames) + "x" + std::to_string(channels) + ", found " +
                  std::to_string(bytes.size()));
  }
  FeatureMatrix m(frames, channels);
  if (!m.values.empty()) std::memcpy(m.values.data(), bytes.data() + 8, 4 * m.values.size());
  return m;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in),
                                   std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  write_file(path, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()),
                                                 text.size()));
}

std::string read_text_file(const std::filesystem::path& path) {
  auto bytes = read_file(path);
  return std::string(bytes.begin(), bytes.end());
}

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return s;
}

}  // namespace mstts

#include "mstts/nn/parameters.h"

#include <cmath>
#include <random>

namespace mstts::nn {

bool matches_prefix(std::string_view name, std::string_view prefix) {
  if (prefix.empty()) return true;
  if (name.size() < prefix.size() || name.substr(0, prefix.size()) != prefix) return false;
  return name.size() == prefix.size() || name[prefix.size()] == '.';
}

template <typename T>
ad::Tensor<T> ParameterStore<T>::add(std::string name, ad::Shape shape, InitKind init,
                                     std::size_t fan_in, std::size_t fan_out) {
  if (find(name) != nullptr) throw std::invalid_argument("duplicate parameter name " + name);
  ad::Tensor<T> value(std::move(shape));
  value.set_trainable(true);
  params_.push_back(Parameter<T>{std::move(name), value, init, fan_in, fan_out});
  return value;
}

template <typename T>
std::vector<float>& ParameterStore<T>::add_buffer(std::string name, std::size_t n, float value) {
  if (find_buffer(name) != nullptr) throw std::invalid_argument("duplicate buffer name " + name);
  buffers_.push_back(Buffer{std::move(name), std::vector<float>(n, value)});
  return buffers_.back().values;
}

template <typename T>
const Parameter<T>* ParameterStore<T>::find(std::string_view name) const {
  for (const auto& p : params_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

template <typename T>
Buffer* ParameterStore<T>::find_buffer(std::string_view name) {
  for (auto& b : buffers_) {
    if (b.name == name) return &b;
  }
  return nullptr;
}

template <typename T>
bool ParameterStore<T>::has_prefix(std::string_view prefix) const {
  for (const auto& p : params_) {
    if (matches_prefix(p.name, prefix)) return true;
  }
  return false;
}

template <typename T>
std::vector<std::string> ParameterStore<T>::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.name);
  return out;
}

template <typename T>
void ParameterStore<T>::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto uniform01 = [&rng] { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };
  for (auto& p : params_) {
    auto data = p.value.mutable_data();
    switch (p.init) {
      case InitKind::Zeros:
        std::fill(data.begin(), data.end(), T(0));
        break;
      case InitKind::Ones:
        std::fill(data.begin(), data.end(), T(1));
        break;
      case InitKind::Xavier: {
        const double bound = std::sqrt(6.0 / static_cast<double>(p.fan_in + p.fan_out));
        for (auto& v : data) v = static_cast<T>((2.0 * uniform01() - 1.0) * bound);
        break;
      }
    }
    p.value.zero_grad();
  }
}

template <typename T>
std::size_t ParameterStore<T>::set_trainable(std::span<const std::string> prefixes, bool flag,
                                             std::span<const std::string> except) {
  for (const auto& prefix : prefixes) {
    if (!has_prefix(prefix)) throw UnknownModuleError("no parameters under module '" + prefix + "'");
  }
  for (const auto& prefix : except) {
    if (!has_prefix(prefix)) throw UnknownModuleError("no parameters under module '" + prefix + "'");
  }
  std::size_t changed = 0;
  for (auto& p : params_) {
    bool hit = false;
    for (const auto& prefix : prefixes) hit = hit || matches_prefix(p.name, prefix);
    for (const auto& prefix : except) hit = hit && !matches_prefix(p.name, prefix);
    if (hit && p.value.trainable() != flag) {
      p.value.set_trainable(flag);
      ++changed;
    }
  }
  return changed;
}

template <typename T>
void ParameterStore<T>::zero_grads() {
  for (auto& p : params_) p.value.zero_grad();
}

template <typename T>
std::size_t ParameterStore<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

template <typename Dst, typename Src>
void copy_values(ParameterStore<Dst>& dst, const ParameterStore<Src>& src) {
  const auto& d = dst.parameters();
  const auto& s = src.parameters();
  if (d.size() != s.size()) throw std::invalid_argument("parameter inventories differ");
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d[i].name != s[i].name || d[i].value.shape() != s[i].value.shape()) {
      throw std::invalid_argument("parameter mismatch at " + d[i].name + " / " + s[i].name);
    }
    auto out = d[i].value.impl()->data.data();
    auto in = s[i].value.data();
    for (std::size_t j = 0; j < in.size(); ++j) out[j] = static_cast<Dst>(in[j]);
  }
  auto& db = dst.buffers();
  const auto& sb = src.buffers();
  if (db.size() != sb.size()) throw std::invalid_argument("buffer inventories differ");
  for (std::size_t i = 0; i < db.size(); ++i) db[i].values = sb[i].values;
}

template class ParameterStore<float>;
template class ParameterStore<double>;
template void copy_values(ParameterStore<float>&, const ParameterStore<float>&);
template void copy_values(ParameterStore<double>&, const ParameterStore<float>&);
template void copy_values(ParameterStore<float>&, const ParameterStore<double>&);
template void copy_values(ParameterStore<double>&, const ParameterStore<double>&);

}  // namespace mstts::nn

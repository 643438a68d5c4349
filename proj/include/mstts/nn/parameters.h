#pragma once

#include <cstdint>
#include <deque>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "mstts/autodiff/tensor.h"

namespace mstts::nn {

/// Raised when a module prefix matches no parameter.
class UnknownModuleError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class InitKind { Xavier, Zeros, Ones };

template <typename T>
struct Parameter {
  std::string name;
  ad::Tensor<T> value;
  InitKind init = InitKind::Zeros;
  std::size_t fan_in = 0;
  std::size_t fan_out = 0;
};

/// Non-trainable state saved alongside parameters (batchnorm running stats).
struct Buffer {
  std::string name;
  std::vector<float> values;
};

/// True when `name` equals `prefix` or starts with `prefix` followed by a
/// dot. The empty prefix matches everything.
bool matches_prefix(std::string_view name, std::string_view prefix);

/// Ordered, uniquely named parameter collection. Registration order is the
/// canonical order for initialization and serialization.
template <typename T>
class ParameterStore {
 public:
  ad::Tensor<T> add(std::string name, ad::Shape shape, InitKind init, std::size_t fan_in = 0,
                    std::size_t fan_out = 0);
  std::vector<float>& add_buffer(std::string name, std::size_t n, float value);

  const std::vector<Parameter<T>>& parameters() const { return params_; }
  std::deque<Buffer>& buffers() { return buffers_; }
  const std::deque<Buffer>& buffers() const { return buffers_; }

  const Parameter<T>* find(std::string_view name) const;
  Buffer* find_buffer(std::string_view name);
  bool has_prefix(std::string_view prefix) const;
  std::vector<std::string> names() const;

  /// Xavier-uniform weights (bound sqrt(6/(fan_in+fan_out))), zero biases,
  /// unit batchnorm scales. One 64-bit generator stream in registration
  /// order, values drawn at f64 and then narrowed.
  void initialize(std::uint64_t seed);

  /// Sets the trainable flag on every parameter matching one of `prefixes`
  /// but none of `except`. Returns the number of parameters whose flag
  /// changed. Throws UnknownModuleError if a prefix matches nothing.
  std::size_t set_trainable(std::span<const std::string> prefixes, bool flag,
                            std::span<const std::string> except = {});

  void zero_grads();
  std::size_t scalar_count() const;

 private:
  std::vector<Parameter<T>> params_;
  std::deque<Buffer> buffers_;
};

/// Copies values (and buffers) between stores with identical inventories,
/// converting element type as needed.
template <typename Dst, typename Src>
void copy_values(ParameterStore<Dst>& dst, const ParameterStore<Src>& src);

}  // namespace mstts::nn

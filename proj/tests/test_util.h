#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "mstts/autodiff/tensor.h"
#include "mstts/model/config.h"

namespace mstts::testutil {

template <typename T = double>
ad::Tensor<T> random_tensor(ad::Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0,
                            bool trainable = true) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<T> data(ad::numel(shape));
  for (auto& v : data) v = static_cast<T>(dist(rng));
  ad::Tensor<T> t(std::move(shape), std::move(data));
  t.set_trainable(trainable);
  return t;
}

template <typename T>
std::vector<T> values(const ad::Tensor<T>& t) {
  return std::vector<T>(t.data().begin(), t.data().end());
}

inline model::ModelConfig tiny_config(model::Variant v = model::Variant::Proposed) {
  return model::ModelConfig::tiny(v);
}

}  // namespace mstts::testutil

#pragma once

#include "mstts/model/config.h"
#include "mstts/nn/layers.h"

namespace mstts::model {

template <typename T>
struct AlignResult {
  ad::Tensor<T> aligned;  // (d_L/2 x T_p)
  ad::Tensor<T> weights;  // (T_p x T_L), row-stochastic
};

/// Scaled dot-product attention with phoneme embeddings as queries and the
/// two LPE halves as keys (channels [0, d_L/2)) and values (the rest).
/// Queries and keys are projected to d_a without bias; values pass through.
template <typename T>
class ReferenceAttention {
 public:
  ReferenceAttention(nn::ParameterStore<T>& store, std::size_t d_p, std::size_t d_l,
                     const RefAttnConfig& cfg);

  /// lpe (d_L x T_L), phon (d_p x T_p).
  AlignResult<T> align(const ad::Tensor<T>& lpe, const ad::Tensor<T>& phon) const;

  const nn::Linear<T>& proj_q() const { return proj_q_; }
  const nn::Linear<T>& proj_k() const { return proj_k_; }

 private:
  std::size_t d_l_, d_a_;
  nn::Linear<T> proj_q_, proj_k_;
};

/// Mean over rows of -sum a ln a, with 0 ln 0 = 0 (nats).
template <typename T>
double attention_entropy(const ad::Tensor<T>& weights);

/// Fraction of key columns whose largest weight reaches tau.
template <typename T>
double attention_coverage(const ad::Tensor<T>& weights, double tau = 0.3);

/// Largest weight per key column.
template <typename T>
std::vector<double> key_max_profile(const ad::Tensor<T>& weights);

}  // namespace mstts::model

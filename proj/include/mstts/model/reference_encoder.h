#pragma once

#include <optional>
#include <span>
#include <vector>

#include "mstts/model/config.h"
#include "mstts/nn/layers.h"

namespace mstts::model {

/// One GSE vector and one LPE sequence extracted from a reference. Either
/// part is undefined when the variant lacks the corresponding head.
template <typename T>
struct StyleBundle {
  ad::Tensor<T> gse;  // (d_G)
  ad::Tensor<T> lpe;  // (d_L x T_L)
  std::size_t source_frames = 0;
};

/// Six conv blocks shared by a global head (GRU final state -> linear ->
/// tanh) and a local head (GRU states -> per-step linear -> tanh). Parameters
/// live under ref_encoder.conv.<i>, ref_encoder.global_head and
/// ref_encoder.local_head.
template <typename T>
class ReferenceEncoder {
 public:
  ReferenceEncoder(nn::ParameterStore<T>& store, const RefEncoderConfig& cfg, std::size_t d_spec,
                   bool global_head, bool local_head);

  const RefEncoderConfig& config() const { return cfg_; }
  bool has_global() const { return global_gru_.has_value(); }
  bool has_local() const { return local_gru_.has_value(); }

  /// x is (d_spec x T_spec); returns (d_m x T_L).
  ad::Tensor<T> conv_stack(const ad::Tensor<T>& x, nn::Mode mode);
  /// Train-mode batch statistics are pooled over all sequences.
  std::vector<ad::Tensor<T>> conv_stack_batch(std::span<const ad::Tensor<T>> xs, nn::Mode mode);

  ad::Tensor<T> global_head(const ad::Tensor<T>& conv_out) const;
  ad::Tensor<T> local_head(const ad::Tensor<T>& conv_out) const;

  StyleBundle<T> encode(const ad::Tensor<T>& x, nn::Mode mode);

  std::vector<nn::ConvBlock<T>>& conv_blocks() { return convs_; }

 private:
  RefEncoderConfig cfg_;
  std::size_t d_spec_;
  std::vector<nn::ConvBlock<T>> convs_;
  std::optional<nn::Gru<T>> global_gru_, local_gru_;
  nn::Linear<T> global_linear_, local_linear_;
};

/// Conv-stack receptive-field radius in input frames (kernel 3 everywhere).
std::size_t receptive_field_radius(std::span<const std::size_t> strides);

}  // namespace mstts::model

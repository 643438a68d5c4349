#pragma once

#include <span>
#include <string>
#include <vector>

#include "mstts/autodiff/ops.h"
#include "mstts/nn/parameters.h"

namespace mstts::nn {

enum class Mode { Train, Eval };

inline constexpr double kBatchNormMomentum = 0.9;
inline constexpr double kBatchNormEps = 1e-5;

/// y = x W^T + b
template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t out,
         bool bias = true);
  ad::Tensor<T> operator()(const ad::Tensor<T>& x) const { return ad::linear(x, weight_, bias_); }

  const ad::Tensor<T>& weight() const { return weight_; }
  const ad::Tensor<T>& bias() const { return bias_; }
  std::size_t in_features() const { return weight_.dim(1); }
  std::size_t out_features() const { return weight_.dim(0); }

 private:
  ad::Tensor<T> weight_;
  ad::Tensor<T> bias_;
};

/// conv1d_same (kernel 3) -> ReLU -> batchnorm over time, per channel.
/// Train mode normalizes with batch statistics pooled over every frame of
/// every sequence passed in one call and folds them into the running
/// statistics; eval mode uses the running statistics.
template <typename T>
class ConvBlock {
 public:
  ConvBlock() = default;
  ConvBlock(ParameterStore<T>& store, const std::string& name, std::size_t c_in,
            std::size_t c_out, std::size_t stride, std::size_t kernel = 3);

  ad::Tensor<T> operator()(const ad::Tensor<T>& x, Mode mode);
  std::vector<ad::Tensor<T>> forward_batch(std::span<const ad::Tensor<T>> xs, Mode mode);

  std::size_t stride() const { return stride_; }
  std::span<const float> running_mean() const { return *running_mean_; }
  std::span<const float> running_var() const { return *running_var_; }
  std::vector<float>& running_mean_mut() { return *running_mean_; }
  std::vector<float>& running_var_mut() { return *running_var_; }
  const ad::Tensor<T>& gamma() const { return gamma_; }
  const ad::Tensor<T>& beta() const { return beta_; }

 private:
  ad::Tensor<T> weight_, bias_, gamma_, beta_;
  std::vector<float>* running_mean_ = nullptr;
  std::vector<float>* running_var_ = nullptr;
  std::size_t stride_ = 1;
};

template <typename T>
struct GruOutput {
  ad::Tensor<T> states;  // (T x h) time-major
  ad::Tensor<T> final;   // (1 x h)
};

/// Gated recurrent unit with the gate formulation
///   z = sig(W_z x + U_z h + b_z), r = sig(W_r x + U_r h + b_r)
///   n = tanh(W_n x + r * (U_n h + b_n)), h' = (1 - z) * n + z * h
template <typename T>
class Gru {
 public:
  Gru() = default;
  Gru(ParameterStore<T>& store, const std::string& name, std::size_t d_in, std::size_t hidden);

  std::size_t hidden() const { return hidden_; }
  std::size_t input_size() const { return d_in_; }

  /// Single update; x_t is (d_in) or (1 x d_in), h_prev (h) or (1 x h).
  /// Returns (1 x h).
  ad::Tensor<T> step(const ad::Tensor<T>& x_t, const ad::Tensor<T>& h_prev) const;

  /// Unrolls over the rows of xs (T x d_in). h0 defaults to zeros. With
  /// reverse, rows are consumed last-to-first and states are written back
  /// in original time order.
  GruOutput<T> run(const ad::Tensor<T>& xs, const ad::Tensor<T>& h0 = {}, bool reverse = false) const;

  /// Stacked [W_z; W_r; W_n], [U_z; U_r; U_n], [b_z; b_r; b_n].
  ad::Tensor<T> input_weights() const;
  ad::Tensor<T> recurrent_weights() const;
  ad::Tensor<T> biases() const;

  struct Gates {
    ad::Tensor<T> w_z, w_r, w_n, u_z, u_r, u_n, b_z, b_r, b_n;
  };
  const Gates& gates() const { return g_; }

 private:
  Gates g_;
  std::size_t d_in_ = 0;
  std::size_t hidden_ = 0;
};

enum class Direction { Forward, Bidirectional };

/// Sequence-major wrapper: xs is (d_in x T); states come back as (h x T) or
/// (2h x T) and final as (h) or (2h). For the bidirectional case the
/// backward GRU's final state is its state after consuming t = 0.
template <typename T>
struct SequenceResult {
  ad::Tensor<T> states;
  ad::Tensor<T> final;
};

template <typename T>
SequenceResult<T> gru_sequence(const ad::Tensor<T>& xs, const Gru<T>& fwd, const Gru<T>* bwd,
                               Direction direction);

/// Forward-only shorthand.
template <typename T>
SequenceResult<T> gru_sequence(const ad::Tensor<T>& xs, const Gru<T>& fwd) {
  return gru_sequence(xs, fwd, static_cast<const Gru<T>*>(nullptr), Direction::Forward);
}

/// Token embedding table (V x d).
template <typename T>
class Embedding {
 public:
  Embedding() = default;
  Embedding(ParameterStore<T>& store, const std::string& name, std::size_t vocab, std::size_t dim);

  /// (T_tok x d) time-major rows.
  ad::Tensor<T> rows(std::span<const std::size_t> ids) const { return ad::gather_rows(table_, ids); }
  /// (d x T_tok), column t is row ids[t] of the table.
  ad::Tensor<T> operator()(std::span<const std::size_t> ids) const {
    return ad::transpose(rows(ids));
  }
  const ad::Tensor<T>& table() const { return table_; }

 private:
  ad::Tensor<T> table_;
};

}  // namespace mstts::nn

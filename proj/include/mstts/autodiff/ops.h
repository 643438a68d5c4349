#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mstts/autodiff/tensor.h"

// Differentiable primitives. Unless noted otherwise, matrices are rank-2
// row-major and vectors are rank-1. Every primitive records a backward
// closure on the active tape when any operand requires a gradient.
namespace mstts::ad {

// (m x k) . (k x n) -> (m x n).
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// x . w^T + bias. x is (n x in) or a rank-1 (in) row, w is (out x in), bias
// (out) may be undefined. Output rank follows x.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias = {});

// Same-shape elementwise arithmetic.
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);

// a (n x k) plus the k-vector v on every row. v may be (k) or (1 x k).
template <typename T>
Tensor<T> add_rowvec(const Tensor<T>& a, const Tensor<T>& v);

template <typename T>
Tensor<T> tanh(const Tensor<T>& a);
template <typename T>
Tensor<T> relu(const Tensor<T>& a);
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a);

// Reductions to a (1) tensor.
template <typename T>
Tensor<T> sum(const Tensor<T>& a);
template <typename T>
Tensor<T> mean(const Tensor<T>& a);

// Rank-1 tensors concatenate along axis 0 only; rank-2 along 0 or 1.
template <typename T>
Tensor<T> concat(std::span<const Tensor<T>> parts, std::size_t axis);
template <typename T>
Tensor<T> concat(std::initializer_list<Tensor<T>> parts, std::size_t axis);

// Inverse of concat: sizes must sum to the extent along axis.
template <typename T>
std::vector<Tensor<T>> split(const Tensor<T>& a, std::size_t axis,
                             std::span<const std::size_t> sizes);
template <typename T>
std::vector<Tensor<T>> split(const Tensor<T>& a, std::size_t axis,
                             std::initializer_list<std::size_t> sizes);

// Half-open range [begin, end) along axis.
template <typename T>
Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::size_t begin, std::size_t end);

template <typename T>
Tensor<T> transpose(const Tensor<T>& a);

// Copy with a new shape of equal element count.
template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape);

// Broadcast-repeat. axis 1: a (d) or (d x 1) -> (d x n). axis 0: a (d) or
// (1 x d) -> (n x d).
template <typename T>
Tensor<T> repeat(const Tensor<T>& a, std::size_t axis, std::size_t n);

// Softmax along axis (last axis for rank 1), max-subtracted.
template <typename T>
Tensor<T> softmax(const Tensor<T>& a, std::size_t axis);

// x (c_in x T), w (c_out x c_in x k), bias (c_out). Output (c_out x ceil(T/s))
// with zero padding total max((T_out-1)s + k - T, 0), floor(total/2) on the
// left. k must be odd.
template <typename T>
Tensor<T> conv1d_same(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                      std::size_t stride);

struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> var;  // biased (population) variance
};

// Normalizes x (c x N) per channel over N with its own statistics, then
// applies gamma/beta (c). The statistics used are written to stats.
template <typename T>
Tensor<T> batch_norm_train(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                           double eps, ChannelStats* stats);

// Normalizes x (c x N) with fixed statistics.
template <typename T>
Tensor<T> batch_norm_eval(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                          std::span<const float> mean, std::span<const float> var, double eps);

// Rows of table (V x d) selected by ids -> (ids.size() x d). Backward
// scatter-adds into the table.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, std::span<const std::size_t> ids);

// One GRU update with pre-computed projections:
//   z = sig(xp_z + hp_z + b_z), r = sig(xp_r + hp_r + b_r),
//   n = tanh(xp_n + r * (hp_n + b_n)), h = (1 - z) * n + z * h_prev
// xp is (rows x 3h) and row `row` is used; hp is (1 x 3h); bias (3h) holds
// [b_z; b_r; b_n]; h_prev is (1 x h). Returns (1 x h).
template <typename T>
Tensor<T> gru_gates(const Tensor<T>& xp, std::size_t row, const Tensor<T>& hp,
                    const Tensor<T>& bias, const Tensor<T>& h_prev);

// Mean squared error over the first valid_rows rows of (rows x d) operands.
template <typename T>
Tensor<T> masked_mse(const Tensor<T>& pred, const Tensor<T>& target, std::size_t valid_rows);

// Mean binary cross-entropy of logits against 0/1 targets.
template <typename T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, std::span<const T> targets);

// Softmax cross-entropy of a logit vector against a class index.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::size_t label);

}  // namespace mstts::ad

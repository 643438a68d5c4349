#include "mstts/model/reference_attention.h"

#include <algorithm>
#include <cmath>

namespace mstts::model {

using ad::Shape;
using ad::Tensor;

template <typename T>
ReferenceAttention<T>::ReferenceAttention(nn::ParameterStore<T>& store, std::size_t d_p,
                                          std::size_t d_l, const RefAttnConfig& cfg)
    : d_l_(d_l), d_a_(cfg.d_a) {
  if (d_l == 0 || d_l % 2 != 0) throw ConfigError("d_L must be even");
  proj_q_ = nn::Linear<T>(store, "ref_attention.proj_q", d_p, cfg.d_a, false);
  proj_k_ = nn::Linear<T>(store, "ref_attention.proj_k", d_l / 2, cfg.d_a, false);
}

template <typename T>
AlignResult<T> ReferenceAttention<T>::align(const Tensor<T>& lpe, const Tensor<T>& phon) const {
  if (lpe.rank() != 2 || lpe.dim(0) != d_l_) {
    throw ad::ShapeError("align: lpe must be (" + std::to_string(d_l_) + " x T_L), got " +
                         ad::shape_str(lpe.shape()));
  }
  if (phon.rank() != 2 || phon.dim(0) != proj_q_.in_features()) {
    throw ad::ShapeError("align: phoneme sequence must be (" +
                         std::to_string(proj_q_.in_features()) + " x T_p), got " +
                         ad::shape_str(phon.shape()));
  }
  auto halves = ad::split(lpe, 0, {d_l_ / 2, d_l_ / 2});
  const Tensor<T> q = proj_q_(ad::transpose(phon));       // T_p x d_a
  const Tensor<T> k = proj_k_(ad::transpose(halves[0]));  // T_L x d_a
  const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(d_a_)));
  const Tensor<T> logits = ad::scale(ad::matmul(q, ad::transpose(k)), inv_sqrt);
  Tensor<T> weights = ad::softmax(logits, 1);
  Tensor<T> aligned = ad::matmul(halves[1], ad::transpose(weights));
  return {aligned, weights};
}

template <typename T>
double attention_entropy(const Tensor<T>& weights) {
  const std::size_t rows = weights.dim(0), cols = weights.dim(1);
  double total = 0;
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      const double a = weights.at(i, j);
      if (a > 0) total -= a * std::log(a);
    }
  }
  return total / static_cast<double>(rows);
}

template <typename T>
std::vector<double> key_max_profile(const Tensor<T>& weights) {
  std::vector<double> out(weights.dim(1), 0.0);
  for (std::size_t i = 0; i < weights.dim(0); ++i)
    for (std::size_t j = 0; j < weights.dim(1); ++j)
      out[j] = std::max(out[j], static_cast<double>(weights.at(i, j)));
  return out;
}

template <typename T>
double attention_coverage(const Tensor<T>& weights, double tau) {
  const auto prof = key_max_profile(weights);
  const auto hit = std::count_if(prof.begin(), prof.end(), [tau](double m) { return m >= tau; });
  return static_cast<double>(hit) / static_cast<double>(prof.size());
}

template class ReferenceAttention<float>;
template class ReferenceAttention<double>;
template double attention_entropy(const Tensor<float>&);
template double attention_entropy(const Tensor<double>&);
template double attention_coverage(const Tensor<float>&, double);
template double attention_coverage(const Tensor<double>&, double);
template std::vector<double> key_max_profile(const Tensor<float>&);
template std::vector<double> key_max_profile(const Tensor<double>&);

}  // namespace mstts::model

#include "mstts/nn/layers.h"

namespace mstts::nn {

using ad::Shape;
using ad::Tensor;

template <typename T>
Linear<T>::Linear(ParameterStore<T>& store, const std::string& name, std::size_t in,
                  std::size_t out, bool bias) {
  weight_ = store.add(name + ".weight", Shape{out, in}, InitKind::Xavier, in, out);
  if (bias) bias_ = store.add(name + ".bias", Shape{out}, InitKind::Zeros);
}

template <typename T>
ConvBlock<T>::ConvBlock(ParameterStore<T>& store, const std::string& name, std::size_t c_in,
                        std::size_t c_out, std::size_t stride, std::size_t kernel)
    : stride_(stride) {
  weight_ = store.add(name + ".weight", Shape{c_out, c_in, kernel}, InitKind::Xavier,
                      c_in * kernel, c_out * kernel);
  bias_ = store.add(name + ".bias", Shape{c_out}, InitKind::Zeros);
  gamma_ = store.add(name + ".gamma", Shape{c_out}, InitKind::Ones);
  beta_ = store.add(name + ".beta", Shape{c_out}, InitKind::Zeros);
  running_mean_ = &store.add_buffer(name + ".running_mean", c_out, 0.0f);
  running_var_ = &store.add_buffer(name + ".running_var", c_out, 1.0f);
}

template <typename T>
Tensor<T> ConvBlock<T>::operator()(const Tensor<T>& x, Mode mode) {
  return forward_batch(std::span<const Tensor<T>>(&x, 1), mode).front();
}

template <typename T>
std::vector<Tensor<T>> ConvBlock<T>::forward_batch(std::span<const Tensor<T>> xs, Mode mode) {
  std::vector<Tensor<T>> activ;
  activ.reserve(xs.size());
  for (const auto& x : xs) activ.push_back(ad::relu(ad::conv1d_same(x, weight_, bias_, stride_)));

  std::vector<Tensor<T>> out;
  if (mode == Mode::Eval) {
    for (const auto& a : activ) {
      out.push_back(ad::batch_norm_eval(a, gamma_, beta_, *running_mean_, *running_var_,
                                        kBatchNormEps));
    }
    return out;
  }

  ad::ChannelStats stats;
  std::vector<std::size_t> lengths;
  for (const auto& a : activ) lengths.push_back(a.dim(1));
  Tensor<T> joined = activ.size() == 1 ? activ.front() : ad::concat<T>(activ, 1);
  Tensor<T> normed = ad::batch_norm_train(joined, gamma_, beta_, kBatchNormEps, &stats);
  for (std::size_t c = 0; c < stats.mean.size(); ++c) {
    (*running_mean_)[c] = static_cast<float>(kBatchNormMomentum * (*running_mean_)[c] +
                                             (1.0 - kBatchNormMomentum) * stats.mean[c]);
    (*running_var_)[c] = static_cast<float>(kBatchNormMomentum * (*running_var_)[c] +
                                            (1.0 - kBatchNormMomentum) * stats.var[c]);
  }
  if (activ.size() == 1) return {normed};
  return ad::split<T>(normed, 1, lengths);
}

template <typename T>
Gru<T>::Gru(ParameterStore<T>& store, const std::string& name, std::size_t d_in,
            std::size_t hidden)
    : d_in_(d_in), hidden_(hidden) {
  auto w = [&](const char* suffix) {
    return store.add(name + "." + suffix, Shape{hidden, d_in}, InitKind::Xavier, d_in, hidden);
  };
  auto u = [&](const char* suffix) {
    return store.add(name + "." + suffix, Shape{hidden, hidden}, InitKind::Xavier, hidden,
                     hidden);
  };
  auto b = [&](const char* suffix) {
    return store.add(name + "." + suffix, Shape{hidden}, InitKind::Zeros);
  };
  g_.w_z = w("w_z");
  g_.w_r = w("w_r");
  g_.w_n = w("w_n");
  g_.u_z = u("u_z");
  g_.u_r = u("u_r");
  g_.u_n = u("u_n");
  g_.b_z = b("b_z");
  g_.b_r = b("b_r");
  g_.b_n = b("b_n");
}

template <typename T>
Tensor<T> Gru<T>::input_weights() const {
  return ad::concat({g_.w_z, g_.w_r, g_.w_n}, 0);
}
template <typename T>
Tensor<T> Gru<T>::recurrent_weights() const {
  return ad::concat({g_.u_z, g_.u_r, g_.u_n}, 0);
}
template <typename T>
Tensor<T> Gru<T>::biases() const {
  return ad::concat({g_.b_z, g_.b_r, g_.b_n}, 0);
}

template <typename T>
Tensor<T> Gru<T>::step(const Tensor<T>& x_t, const Tensor<T>& h_prev) const {
  const Tensor<T> xp = ad::linear(x_t, input_weights());
  Tensor<T> h = h_prev.rank() == 2 ? h_prev : ad::reshape(h_prev, Shape{1, hidden_});
  const Tensor<T> hp = ad::linear(h, recurrent_weights());
  return ad::gru_gates(xp, 0, hp, biases(), h);
}

template <typename T>
GruOutput<T> Gru<T>::run(const Tensor<T>& xs, const Tensor<T>& h0, bool reverse) const {
  if (xs.rank() != 2 || xs.dim(1) != d_in_) {
    throw ad::ShapeError("gru: input " + ad::shape_str(xs.shape()) + " but input size " +
                         std::to_string(d_in_));
  }
  const std::size_t steps = xs.dim(0);
  const Tensor<T> xp = ad::linear(xs, input_weights());
  const Tensor<T> u = recurrent_weights();
  const Tensor<T> bias = biases();
  Tensor<T> h = h0.defined() ? (h0.rank() == 2 ? h0 : ad::reshape(h0, Shape{1, hidden_}))
                             : Tensor<T>::zeros(Shape{1, hidden_});
  std::vector<Tensor<T>> states(steps);
  for (std::size_t i = 0; i < steps; ++i) {
    const std::size_t t = reverse ? steps - 1 - i : i;
    h = ad::gru_gates(xp, t, ad::linear(h, u), bias, h);
    states[t] = h;
  }
  return {ad::concat<T>(states, 0), h};
}

template <typename T>
SequenceResult<T> gru_sequence(const Tensor<T>& xs, const Gru<T>& fwd, const Gru<T>* bwd,
                               Direction direction) {
  if (xs.rank() != 2) throw ad::ShapeError("gru_sequence: expected (d_in x T)");
  const Tensor<T> tm = ad::transpose(xs);
  auto f = fwd.run(tm);
  if (direction == Direction::Forward) {
    return {ad::transpose(f.states), ad::reshape(f.final, Shape{fwd.hidden()})};
  }
  if (bwd == nullptr) throw ad::ContractError("bidirectional gru_sequence needs a backward GRU");
  auto b = bwd->run(tm, {}, true);
  Tensor<T> states = ad::concat({f.states, b.states}, 1);
  Tensor<T> final = ad::concat({f.final, b.final}, 1);
  return {ad::transpose(states), ad::reshape(final, Shape{fwd.hidden() + bwd->hidden()})};
}

template <typename T>
Embedding<T>::Embedding(ParameterStore<T>& store, const std::string& name, std::size_t vocab,
                        std::size_t dim) {
  table_ = store.add(name + ".weight", Shape{vocab, dim}, InitKind::Xavier, vocab, dim);
}

template class Linear<float>;
template class Linear<double>;
template class ConvBlock<float>;
template class ConvBlock<double>;
template class Gru<float>;
template class Gru<double>;
template class Embedding<float>;
template class Embedding<double>;
template SequenceResult<float> gru_sequence(const Tensor<float>&, const Gru<float>&,
                                            const Gru<float>*, Direction);
template SequenceResult<double> gru_sequence(const Tensor<double>&, const Gru<double>&,
                                             const Gru<double>*, Direction);

}  // namespace mstts::nn

#include "mstts/model/backbone.h"

namespace mstts::model {

using ad::Shape;
using ad::Tensor;

template <typename T>
TextEncoder<T>::TextEncoder(nn::ParameterStore<T>& store, std::size_t vocab, std::size_t d_p)
    : vocab_(vocab),
      embedding_(store, "text_encoder.embedding", vocab, d_p),
      fwd_(store, "text_encoder.gru_fwd", d_p, d_p / 2),
      bwd_(store, "text_encoder.gru_bwd", d_p, d_p / 2) {}

template <typename T>
Tensor<T> TextEncoder<T>::operator()(std::span<const std::size_t> ids) const {
  if (ids.empty()) throw ad::EmptyInputError("text encoder: empty token sequence");
  for (auto id : ids) {
    if (id >= vocab_) {
      throw OutOfVocabularyError("token id " + std::to_string(id) + " outside vocabulary of " +
                                 std::to_string(vocab_));
    }
  }
  return nn::gru_sequence(embedding_(ids), fwd_, &bwd_, nn::Direction::Bidirectional).states;
}

template <typename T>
Tensor<T> broadcast_gse(const Tensor<T>& gse, std::size_t t_p) {
  if (t_p == 0) throw ad::EmptyInputError("broadcast_gse: zero length");
  return ad::repeat(gse, 1, t_p);
}

template <typename T>
Tensor<T> assemble(const Tensor<T>& phon, const Tensor<T>& aligned_lpe, const Tensor<T>& gse_seq) {
  std::vector<Tensor<T>> parts{phon};
  for (const auto* p : {&aligned_lpe, &gse_seq}) {
    if (!p->defined()) continue;
    if (p->rank() != 2 || p->dim(1) != phon.dim(1)) {
      throw ad::ShapeError("assemble: length mismatch " + ad::shape_str(p->shape()) + " vs " +
                           ad::shape_str(phon.shape()));
    }
    parts.push_back(*p);
  }
  return parts.size() == 1 ? phon : ad::concat<T>(parts, 0);
}

template <typename T>
Decoder<T>::Decoder(nn::ParameterStore<T>& store, std::size_t d_spec, std::size_t memory_width,
                    const BackboneConfig& cfg)
    : d_spec_(d_spec), width_(memory_width), r_(cfg.reduction_r), hidden_(cfg.dec_hidden) {
  std::size_t in = d_spec;
  for (std::size_t i = 0; i < cfg.prenet.size(); ++i) {
    prenet_.emplace_back(store, "decoder.prenet." + std::to_string(i), in, cfg.prenet[i]);
    in = cfg.prenet[i];
  }
  const std::size_t p = in;
  query_ = nn::Linear<T>(store, "decoder.attention.query", p + hidden_, cfg.attn_width);
  memory_proj_ = nn::Linear<T>(store, "decoder.attention.memory", memory_width, cfg.attn_width, false);
  score_ = nn::Linear<T>(store, "decoder.attention.score", cfg.attn_width, 1, false);
  gru_ = nn::Gru<T>(store, "decoder.gru", p + memory_width, hidden_);
  out_ = nn::Linear<T>(store, "decoder.output", hidden_ + memory_width, r_ * d_spec + 1);
}

template <typename T>
Tensor<T> Decoder<T>::prenet(const Tensor<T>& frames) const {
  Tensor<T> h = frames;
  for (const auto& layer : prenet_) h = ad::relu(layer(h));
  return h;
}

template <typename T>
typename Decoder<T>::Cache Decoder<T>::prepare(const Tensor<T>& memory) const {
  if (memory.rank() != 2 || memory.dim(0) != width_) {
    throw ad::ShapeError("decoder memory must be (" + std::to_string(width_) + " x T_p), got " +
                         ad::shape_str(memory.shape()));
  }
  Cache c;
  c.mem_t = ad::transpose(memory);
  c.mem_proj = memory_proj_(c.mem_t);
  c.w_in = gru_.input_weights();
  c.u = gru_.recurrent_weights();
  c.bias = gru_.biases();
  return c;
}

template <typename T>
typename Decoder<T>::Step Decoder<T>::step(const Cache& c, const Tensor<T>& pre,
                                           const Tensor<T>& h) const {
  const Tensor<T> q = query_(ad::concat({pre, h}, 1));
  const Tensor<T> e = ad::tanh(ad::add_rowvec(c.mem_proj, q));
  const Tensor<T> scores = ad::reshape(score_(e), Shape{1, c.mem_t.dim(0)});
  const Tensor<T> alpha = ad::softmax(scores, 1);
  const Tensor<T> ctx = ad::matmul(alpha, c.mem_t);
  const Tensor<T> xp = ad::linear(ad::concat({pre, ctx}, 1), c.w_in);
  const Tensor<T> h_new = ad::gru_gates(xp, 0, ad::linear(h, c.u), c.bias, h);
  return {h_new, out_(ad::concat({h_new, ctx}, 1)), alpha};
}

template <typename T>
DecodeResult<T> Decoder<T>::finish(std::vector<Tensor<T>>& outs,
                                   std::vector<Tensor<T>>& alphas) const {
  DecodeResult<T> res;
  res.steps = outs.size();
  const Tensor<T> all = ad::concat<T>(outs, 0);  // steps x (r d + 1)
  res.frames = ad::reshape(ad::slice(all, 1, 0, r_ * d_spec_), Shape{res.steps * r_, d_spec_});
  res.stop_logits = ad::reshape(ad::slice(all, 1, r_ * d_spec_, r_ * d_spec_ + 1), Shape{res.steps});
  res.alignment = ad::concat<T>(alphas, 0);
  return res;
}

template <typename T>
DecodeResult<T> Decoder<T>::teacher_forced(const Tensor<T>& memory, const Tensor<T>& target) const {
  if (target.rank() != 2 || target.dim(1) != d_spec_) {
    throw ad::ShapeError("decoder target must be (T x " + std::to_string(d_spec_) + "), got " +
                         ad::shape_str(target.shape()));
  }
  const std::size_t frames = target.dim(0);
  const std::size_t steps = (frames + r_ - 1) / r_;
  const Cache c = prepare(memory);

  // previous-group frames: a zero go-frame, then the last frame of each group
  std::vector<T> prev(steps * d_spec_, T(0));
  auto tgt = target.data();
  for (std::size_t k = 1; k < steps; ++k) {
    const std::size_t src = k * r_ - 1;  // always < frames
    std::copy(tgt.begin() + src * d_spec_, tgt.begin() + (src + 1) * d_spec_,
              prev.begin() + k * d_spec_);
  }
  const Tensor<T> pre_all = prenet(Tensor<T>(Shape{steps, d_spec_}, std::move(prev)));

  std::vector<Tensor<T>> outs, alphas;
  Tensor<T> h = Tensor<T>::zeros(Shape{1, hidden_});
  for (std::size_t k = 0; k < steps; ++k) {
    auto s = step(c, ad::slice(pre_all, 0, k, k + 1), h);
    h = s.h;
    outs.push_back(s.out);
    alphas.push_back(s.alpha);
  }
  auto res = finish(outs, alphas);
  res.target_frames = frames;
  return res;
}

template <typename T>
DecodeResult<T> Decoder<T>::free_run(const Tensor<T>& memory, std::size_t max_steps) const {
  if (max_steps == 0) throw ad::ContractError("free_run needs max_steps >= 1");
  const Cache c = prepare(memory);
  std::vector<Tensor<T>> outs, alphas;
  Tensor<T> h = Tensor<T>::zeros(Shape{1, hidden_});
  Tensor<T> last = Tensor<T>::zeros(Shape{1, d_spec_});
  bool stopped = false;
  while (outs.size() < max_steps) {
    auto s = step(c, prenet(last), h);
    h = s.h;
    outs.push_back(s.out);
    alphas.push_back(s.alpha);
    last = ad::slice(s.out, 1, (r_ - 1) * d_spec_, r_ * d_spec_);
    if (s.out.data()[r_ * d_spec_] > T(0)) {  // sigmoid(x) > 0.5
      stopped = true;
      break;
    }
  }
  auto res = finish(outs, alphas);
  res.incomplete = !stopped;
  return res;
}

template <typename T>
EmotionClassifier<T>::EmotionClassifier(nn::ParameterStore<T>& store, std::size_t d_g,
                                        std::size_t hidden, std::size_t n_emotions)
    : l0_(store, "classifier.0", d_g, hidden), l1_(store, "classifier.1", hidden, n_emotions) {}

template <typename T>
Tensor<T> EmotionClassifier<T>::operator()(const Tensor<T>& gse) const {
  return l1_(ad::relu(l0_(gse)));
}

template class TextEncoder<float>;
template class TextEncoder<double>;
template class Decoder<float>;
template class Decoder<double>;
template class EmotionClassifier<float>;
template class EmotionClassifier<double>;
template Tensor<float> broadcast_gse(const Tensor<float>&, std::size_t);
template Tensor<double> broadcast_gse(const Tensor<double>&, std::size_t);
template Tensor<float> assemble(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&);
template Tensor<double> assemble(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&);

}  // namespace mstts::model

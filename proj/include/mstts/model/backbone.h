#pragma once

#include <span>
#include <vector>

#include "mstts/model/config.h"
#include "mstts/nn/layers.h"

namespace mstts::model {

/// Raised when a token id is outside the vocabulary.
class OutOfVocabularyError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// Embedding followed by one bidirectional GRU with d_p/2 units per
/// direction. Output is (d_p x T_p) with T_p equal to the token count.
template <typename T>
class TextEncoder {
 public:
  TextEncoder(nn::ParameterStore<T>& store, std::size_t vocab, std::size_t d_p);
  ad::Tensor<T> operator()(std::span<const std::size_t> ids) const;

 private:
  std::size_t vocab_;
  nn::Embedding<T> embedding_;
  nn::Gru<T> fwd_, bwd_;
};

/// (d_G) -> (d_G x T_p) with identical columns.
template <typename T>
ad::Tensor<T> broadcast_gse(const ad::Tensor<T>& gse, std::size_t t_p);

/// Feature-axis concat in the order [phon; aligned_lpe; gse_seq]. Undefined
/// parts are skipped (Base-G has no aligned LPE, Base-L no GSE).
template <typename T>
ad::Tensor<T> assemble(const ad::Tensor<T>& phon, const ad::Tensor<T>& aligned_lpe,
                       const ad::Tensor<T>& gse_seq);

template <typename T>
struct DecodeResult {
  ad::Tensor<T> frames;       // (T_out x d_spec), time-major; T_out = steps * r
  ad::Tensor<T> stop_logits;  // (steps)
  ad::Tensor<T> alignment;    // (steps x T_p)
  std::size_t steps = 0;
  std::size_t target_frames = 0;  // unpadded target length (teacher forcing)
  bool incomplete = false;        // free run hit max_decoder_steps
};

/// Autoregressive decoder emitting r frames per step: prenet on the last
/// frame of the previous group, additive attention over the memory, one GRU,
/// and a linear output producing r * d_spec frame values plus a stop logit.
template <typename T>
class Decoder {
 public:
  Decoder(nn::ParameterStore<T>& store, std::size_t d_spec, std::size_t memory_width,
          const BackboneConfig& cfg);

  /// memory is (W x T_p); target is (T x d_spec) and is padded to a multiple
  /// of r by repeating its last frame.
  DecodeResult<T> teacher_forced(const ad::Tensor<T>& memory, const ad::Tensor<T>& target) const;
  /// Stops once sigmoid(stop) > 0.5 or after max_steps steps (flagged incomplete).
  DecodeResult<T> free_run(const ad::Tensor<T>& memory, std::size_t max_steps) const;

  std::size_t reduction() const { return r_; }

  const nn::Linear<T>& output_layer() const { return out_; }

 private:
  struct Step {
    ad::Tensor<T> h, out, alpha;
  };
  struct Cache {
    ad::Tensor<T> mem_t, mem_proj, w_in, u, bias;
  };
  Cache prepare(const ad::Tensor<T>& memory) const;
  ad::Tensor<T> prenet(const ad::Tensor<T>& frames) const;
  Step step(const Cache& c, const ad::Tensor<T>& pre, const ad::Tensor<T>& h) const;
  DecodeResult<T> finish(std::vector<ad::Tensor<T>>& outs, std::vector<ad::Tensor<T>>& alphas) const;

  std::size_t d_spec_, width_, r_, hidden_;
  std::vector<nn::Linear<T>> prenet_;
  nn::Linear<T> query_, memory_proj_, score_;
  nn::Gru<T> gru_;
  nn::Linear<T> out_;
};

/// linear(d_G -> cls_hidden) -> ReLU -> linear(cls_hidden -> n_emotions).
template <typename T>
class EmotionClassifier {
 public:
  EmotionClassifier(nn::ParameterStore<T>& store, std::size_t d_g, std::size_t hidden,
                    std::size_t n_emotions);
  ad::Tensor<T> operator()(const ad::Tensor<T>& gse) const;

 private:
  nn::Linear<T> l0_, l1_;
};

}  // namespace mstts::model

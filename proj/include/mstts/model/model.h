#pragma once

#include <memory>
#include <optional>
#include <span>

#include "mstts/model/backbone.h"
#include "mstts/model/config.h"
#include "mstts/model/reference_attention.h"
#include "mstts/model/reference_encoder.h"

namespace mstts::model {

/// Where the GSE slot of the memory comes from.
enum class GseSource {
  Reference,  // the global head applied to the global reference
  Zero,       // all-zero vector (stage 1 of the two-stage schedule)
};

template <typename T>
struct SynthesisResult {
  StyleBundle<T> style;
  ad::Tensor<T> phon;         // (d_p x T_p)
  AlignResult<T> ref_attn;    // undefined for Base-G
  ad::Tensor<T> memory;       // (memory_width x T_p)
  DecodeResult<T> decoded;
};

/// The full acoustic model for one variant. Parameters are registered in a
/// fixed order (text encoder, reference encoder, reference attention,
/// decoder, classifier) which is also the checkpoint order. Not copyable:
/// layers keep pointers into the parameter store.
template <typename T>
class Model {
 public:
  explicit Model(const ModelConfig& cfg);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  void initialize(std::uint64_t seed) { store_.initialize(seed); }

  const ModelConfig& config() const { return cfg_; }
  nn::ParameterStore<T>& params() { return store_; }
  const nn::ParameterStore<T>& params() const { return store_; }

  TextEncoder<T>& text_encoder() { return text_; }
  ReferenceEncoder<T>& ref_encoder() { return ref_; }
  ReferenceAttention<T>& ref_attention();
  Decoder<T>& decoder() { return dec_; }
  EmotionClassifier<T>& classifier();

  /// Stage provenance: 0 for a fresh model, then 1 or 2.
  int stage() const { return stage_; }
  void set_stage(int s) { stage_ = s; }

  /// Everything downstream of the conv stack. local_conv/global_conv are
  /// conv_stack outputs for the two references (may alias). With a target
  /// (T x d_spec) the decoder is teacher-forced, otherwise it free-runs.
  SynthesisResult<T> synthesize_from_conv(std::span<const std::size_t> ids,
                                          const ad::Tensor<T>& local_conv,
                                          const ad::Tensor<T>& global_conv, GseSource gse,
                                          const ad::Tensor<T>& target = {},
                                          std::size_t max_steps = 0);

  /// Inference entry point: references are (d_spec x T) and go through the
  /// conv stack in eval mode. An undefined global_ref means "same as local".
  SynthesisResult<T> synthesize(std::span<const std::size_t> ids, const ad::Tensor<T>& local_ref,
                                const ad::Tensor<T>& global_ref, GseSource gse,
                                const ad::Tensor<T>& target = {}, std::size_t max_steps = 0);

  /// Style bundle of a reference in eval mode.
  StyleBundle<T> encode_reference(const ad::Tensor<T>& ref) { return ref_.encode(ref, nn::Mode::Eval); }

  /// Parameter-name prefixes frozen during stage 2.
  static std::vector<std::string> stage2_frozen_prefixes();
  /// Parameter-name prefixes that exist only for the global pathway.
  static std::vector<std::string> global_path_prefixes();

 private:
  ModelConfig cfg_;
  nn::ParameterStore<T> store_;
  TextEncoder<T> text_;
  ReferenceEncoder<T> ref_;
  std::optional<ReferenceAttention<T>> attn_;
  Decoder<T> dec_;
  std::optional<EmotionClassifier<T>> cls_;
  int stage_ = 0;
};

}  // namespace mstts::model

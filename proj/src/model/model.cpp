#include "mstts/model/model.h"

namespace mstts::model {

using ad::Shape;
using ad::Tensor;

namespace {

const ModelConfig& validated(const ModelConfig& cfg) {
  cfg.validate();
  return cfg;
}

}  // namespace

template <typename T>
Model<T>::Model(const ModelConfig& cfg)
    : cfg_(validated(cfg)),
      text_(store_, cfg_.backbone.vocab, cfg_.backbone.d_p),
      ref_(store_, cfg_.ref, cfg_.d_spec, cfg_.has_global(), cfg_.has_local()),
      attn_(cfg_.has_local() ? std::optional<ReferenceAttention<T>>(std::in_place, store_,
                                                                     cfg_.backbone.d_p, cfg_.ref.d_l,
                                                                     cfg_.attn)
                             : std::nullopt),
      dec_(store_, cfg_.d_spec, cfg_.memory_width(), cfg_.backbone),
      cls_(cfg_.has_classifier()
               ? std::optional<EmotionClassifier<T>>(std::in_place, store_, cfg_.ref.d_g,
                                                     cfg_.backbone.cls_hidden,
                                                     cfg_.backbone.n_emotions)
               : std::nullopt) {}

template <typename T>
ReferenceAttention<T>& Model<T>::ref_attention() {
  if (!attn_) throw ad::ContractError(std::string(variant_name(cfg_.variant)) + " has no reference attention");
  return *attn_;
}

template <typename T>
EmotionClassifier<T>& Model<T>::classifier() {
  if (!cls_) throw ad::ContractError(std::string(variant_name(cfg_.variant)) + " has no emotion classifier");
  return *cls_;
}

template <typename T>
SynthesisResult<T> Model<T>::synthesize_from_conv(std::span<const std::size_t> ids,
                                                  const Tensor<T>& local_conv,
                                                  const Tensor<T>& global_conv, GseSource gse,
                                                  const Tensor<T>& target, std::size_t max_steps) {
  SynthesisResult<T> out;
  out.phon = text_(ids);
  const std::size_t t_p = out.phon.dim(1);
  Tensor<T> aligned, gse_seq;
  if (cfg_.has_local()) {
    out.style.lpe = ref_.local_head(local_conv);
    out.ref_attn = attn_->align(out.style.lpe, out.phon);
    aligned = out.ref_attn.aligned;
  }
  if (cfg_.has_global()) {
    if (gse == GseSource::Reference) {
      out.style.gse = ref_.global_head(global_conv.defined() ? global_conv : local_conv);
    } else {
      out.style.gse = Tensor<T>::zeros(Shape{cfg_.ref.d_g});
    }
    gse_seq = broadcast_gse(out.style.gse, t_p);
  }
  out.memory = assemble(out.phon, aligned, gse_seq);
  if (target.defined()) {
    out.decoded = dec_.teacher_forced(out.memory, target);
  } else {
    out.decoded = dec_.free_run(out.memory, max_steps > 0 ? max_steps : cfg_.backbone.max_decoder_steps);
  }
  return out;
}

template <typename T>
SynthesisResult<T> Model<T>::synthesize(std::span<const std::size_t> ids, const Tensor<T>& local_ref,
                                        const Tensor<T>& global_ref, GseSource gse,
                                        const Tensor<T>& target, std::size_t max_steps) {
  const Tensor<T> local_conv = ref_.conv_stack(local_ref, nn::Mode::Eval);
  Tensor<T> global_conv = local_conv;
  if (global_ref.defined() && global_ref.impl() != local_ref.impl()) {
    global_conv = ref_.conv_stack(global_ref, nn::Mode::Eval);
  }
  auto out = synthesize_from_conv(ids, local_conv, global_conv, gse, target, max_steps);
  out.style.source_frames = local_ref.dim(1);
  return out;
}

template <typename T>
std::vector<std::string> Model<T>::stage2_frozen_prefixes() {
  return {"text_encoder", "ref_attention", "ref_encoder.conv", "ref_encoder.local_head"};
}

template <typename T>
std::vector<std::string> Model<T>::global_path_prefixes() {
  return {"ref_encoder.global_head", "classifier"};
}

template class Model<float>;
template class Model<double>;

}  // namespace mstts::model

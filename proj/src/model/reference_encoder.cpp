#include "mstts/model/reference_encoder.h"

namespace mstts::model {

using ad::Shape;
using ad::Tensor;

template <typename T>
ReferenceEncoder<T>::ReferenceEncoder(nn::ParameterStore<T>& store, const RefEncoderConfig& cfg,
                                      std::size_t d_spec, bool global_head, bool local_head)
    : cfg_(cfg), d_spec_(d_spec) {
  cfg_.validate();
  std::size_t c_in = d_spec;
  convs_.reserve(cfg_.conv_channels.size());
  for (std::size_t i = 0; i < cfg_.conv_channels.size(); ++i) {
    convs_.emplace_back(store, "ref_encoder.conv." + std::to_string(i), c_in,
                        cfg_.conv_channels[i], cfg_.strides[i]);
    c_in = cfg_.conv_channels[i];
  }
  if (global_head) {
    global_gru_.emplace(store, "ref_encoder.global_head.gru", cfg_.d_m(), cfg_.gru_hidden);
    global_linear_ = nn::Linear<T>(store, "ref_encoder.global_head.linear", cfg_.gru_hidden, cfg_.d_g);
  }
  if (local_head) {
    local_gru_.emplace(store, "ref_encoder.local_head.gru", cfg_.d_m(), cfg_.gru_hidden);
    local_linear_ = nn::Linear<T>(store, "ref_encoder.local_head.linear", cfg_.gru_hidden, cfg_.d_l);
  }
}

template <typename T>
Tensor<T> ReferenceEncoder<T>::conv_stack(const Tensor<T>& x, nn::Mode mode) {
  return conv_stack_batch(std::span<const Tensor<T>>(&x, 1), mode).front();
}

template <typename T>
std::vector<Tensor<T>> ReferenceEncoder<T>::conv_stack_batch(std::span<const Tensor<T>> xs,
                                                             nn::Mode mode) {
  for (const auto& x : xs) {
    if (x.rank() != 2 || x.dim(0) != d_spec_) {
      throw ad::ShapeError("reference encoder expects (" + std::to_string(d_spec_) +
                           " x T) input, got " + ad::shape_str(x.shape()));
    }
  }
  std::vector<Tensor<T>> h(xs.begin(), xs.end());
  for (auto& block : convs_) h = block.forward_batch(h, mode);
  return h;
}

template <typename T>
Tensor<T> ReferenceEncoder<T>::global_head(const Tensor<T>& conv_out) const {
  if (!global_gru_) throw ad::ContractError("this reference encoder has no global head");
  auto seq = nn::gru_sequence(conv_out, *global_gru_);
  return ad::tanh(global_linear_(seq.final));
}

template <typename T>
Tensor<T> ReferenceEncoder<T>::local_head(const Tensor<T>& conv_out) const {
  if (!local_gru_) throw ad::ContractError("this reference encoder has no local head");
  auto run = local_gru_->run(ad::transpose(conv_out));
  return ad::transpose(ad::tanh(local_linear_(run.states)));
}

template <typename T>
StyleBundle<T> ReferenceEncoder<T>::encode(const Tensor<T>& x, nn::Mode mode) {
  StyleBundle<T> out;
  out.source_frames = x.dim(1);
  const auto h = conv_stack(x, mode);
  if (has_global()) out.gse = global_head(h);
  if (has_local()) out.lpe = local_head(h);
  return out;
}

std::size_t receptive_field_radius(std::span<const std::size_t> strides) {
  // each k=3 layer widens the radius by one step of its input spacing
  std::size_t radius = 0, jump = 1;
  for (auto s : strides) {
    radius += jump;
    jump *= s;
  }
  return radius;
}

template class ReferenceEncoder<float>;
template class ReferenceEncoder<double>;

}  // namespace mstts::model

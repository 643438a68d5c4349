#include "mstts/training/training.h"

#include <cmath>
#include <deque>
#include <numeric>

namespace mstts::training {

using ad::Shape;
using ad::Tensor;
using json = nlohmann::json;

void TrainConfig::validate() const {
  if (batch_size == 0) throw model::ConfigError("batch_size must be positive");
  if (!(lr > 0) || !(lambda_cls >= 0) || !(stop_weight >= 0) || !(grad_clip > 0)) {
    throw model::ConfigError("lr and grad_clip must be positive, loss weights non-negative");
  }
  if (!(momentum >= 0 && momentum < 1)) throw model::ConfigError("momentum must lie in [0, 1)");
  if (!(teacher_noise >= 0)) throw model::ConfigError("teacher_noise must be non-negative");
  if (!(guided_attn_weight >= 0) || !(guided_attn_width > 0)) {
    throw model::ConfigError("guided_attn_weight must be non-negative and guided_attn_width positive");
  }
}

json to_json(const TrainConfig& c) {
  return {{"stage1_steps", c.stage1_steps}, {"stage2_steps", c.stage2_steps},
          {"batch_size", c.batch_size},     {"lr", c.lr},
          {"lambda_cls", c.lambda_cls},     {"stop_weight", c.stop_weight},
          {"grad_clip", c.grad_clip},       {"momentum", c.momentum},
          {"optimizer", c.optimizer == OptimizerKind::Sgd ? "sgd" : "adam"},
          {"seed", c.seed},                 {"val_every", c.val_every},
          {"guided_attn_weight", c.guided_attn_weight}, {"guided_attn_width", c.guided_attn_width},
          {"teacher_noise", c.teacher_noise}};
}

TrainConfig train_config_from_json(const json& j) {
  model::reject_unknown_keys(j, {"stage1_steps", "stage2_steps", "batch_size", "lr", "lambda_cls",
                                 "stop_weight", "grad_clip", "momentum", "optimizer", "seed",
                                 "val_every", "guided_attn_weight", "guided_attn_width", "teacher_noise"},
                             "train");
  TrainConfig c;
  try {
    c.stage1_steps = j.value("stage1_steps", c.stage1_steps);
    c.stage2_steps = j.value("stage2_steps", c.stage2_steps);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr = j.value("lr", c.lr);
    c.lambda_cls = j.value("lambda_cls", c.lambda_cls);
    c.stop_weight = j.value("stop_weight", c.stop_weight);
    c.grad_clip = j.value("grad_clip", c.grad_clip);
    c.momentum = j.value("momentum", c.momentum);
    c.seed = j.value("seed", c.seed);
    c.val_every = j.value("val_every", c.val_every);
    c.guided_attn_weight = j.value("guided_attn_weight", c.guided_attn_weight);
    c.guided_attn_width = j.value("guided_attn_width", c.guided_attn_width);
    c.teacher_noise = j.value("teacher_noise", c.teacher_noise);
    const std::string opt = j.value("optimizer", std::string("sgd"));
    if (opt == "sgd") {
      c.optimizer = OptimizerKind::Sgd;
    } else if (opt == "adam") {
      c.optimizer = OptimizerKind::Adam;
    } else {
      throw model::ConfigError("train.optimizer: expected \"sgd\" or \"adam\", got \"" + opt + "\"");
    }
  } catch (const json::exception& e) {
    throw model::ConfigError(std::string("train: ") + e.what());
  }
  c.validate();
  return c;
}

template <typename T>
LossBreakdown LossTerms<T>::values() const {
  LossBreakdown b;
  b.total = total.item();
  b.mse = mse.item();
  b.stop = stop.item();
  b.ce = ce.defined() ? ce.item() : 0.0;
  return b;
}

template <typename T>
Tensor<T> pad_target(const Tensor<T>& target, std::size_t r) {
  const std::size_t frames = target.dim(0), d = target.dim(1);
  const std::size_t padded = (frames + r - 1) / r * r;
  if (padded == frames) return target;
  std::vector<T> data(target.data().begin(), target.data().end());
  data.reserve(padded * d);
  for (std::size_t t = frames; t < padded; ++t) {
    data.insert(data.end(), target.data().begin() + (frames - 1) * d, target.data().begin() + frames * d);
  }
  return Tensor<T>(Shape{padded, d}, std::move(data));
}

template <typename T>
LossTerms<T> compute_loss(const model::DecodeResult<T>& decoded, const Tensor<T>& padded_target,
                          const Tensor<T>& cls_logits, std::size_t label, double stop_weight,
                          double lambda_cls) {
  LossTerms<T> terms;
  const std::size_t valid = decoded.target_frames > 0 ? decoded.target_frames : padded_target.dim(0);
  terms.mse = ad::masked_mse(decoded.frames, padded_target, valid);
  std::vector<T> stop_targets(decoded.steps, T(0));
  stop_targets.back() = T(1);
  terms.stop = ad::bce_with_logits(decoded.stop_logits, std::span<const T>(stop_targets));
  terms.total = ad::add(terms.mse, ad::scale(terms.stop, static_cast<T>(stop_weight)));
  if (cls_logits.defined()) {
    terms.ce = ad::cross_entropy(cls_logits, label);
    terms.total = ad::add(terms.total, ad::scale(terms.ce, static_cast<T>(lambda_cls)));
  }
  return terms;
}

template <typename T>
Tensor<T> guided_attention_loss(const Tensor<T>& alignment, double width) {
  const std::size_t n = alignment.dim(0), t = alignment.dim(1);
  std::vector<T> w(n * t);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < t; ++j) {
      const double d = double(i) / double(n) - double(j) / double(t);
      w[i * t + j] = static_cast<T>(1.0 - std::exp(-d * d / (2.0 * width * width)));
    }
  }
  Tensor<T> penalty(ad::Shape{n, t}, std::move(w));
  penalty.set_trainable(false);
  return ad::mean(ad::mul(alignment, penalty));
}

Optimizer::Optimizer(nn::ParameterStore<float>& store, const TrainConfig& cfg)
    : store_(store), cfg_(cfg) {
  for (const auto& p : store_.parameters()) {
    m_.emplace_back(p.value.size(), 0.0f);
    if (cfg_.optimizer == OptimizerKind::Adam) v_.emplace_back(p.value.size(), 0.0f);
  }
}

double Optimizer::step() {
  const auto& params = store_.parameters();
  double sq = 0;
  for (const auto& p : params) {
    if (!p.value.trainable() || !p.value.has_grad()) continue;
    for (float g : p.value.grad()) {
      if (!std::isfinite(g)) {
        throw ad::NumericalError(p.name, "non-finite gradient in parameter " + p.name);
      }
      sq += double(g) * double(g);
    }
  }
  const double norm = std::sqrt(sq);
  const double clip = norm > cfg_.grad_clip ? cfg_.grad_clip / norm : 1.0;
  ++t_;
  const double b1 = cfg_.momentum, b2 = 0.999;
  const double bias1 = 1.0 - std::pow(b1, double(t_)), bias2 = 1.0 - std::pow(b2, double(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (!p.value.trainable() || !p.value.has_grad()) continue;
    auto tensor = p.value;
    auto data = tensor.mutable_data();
    auto grad = p.value.grad();
    auto& m = m_[i];
    if (cfg_.optimizer == OptimizerKind::Sgd) {
      for (std::size_t k = 0; k < m.size(); ++k) {
        m[k] = static_cast<float>(cfg_.momentum * m[k] + clip * grad[k]);
        data[k] = static_cast<float>(data[k] - cfg_.lr * m[k]);
      }
    } else {
      auto& v = v_[i];
      for (std::size_t k = 0; k < m.size(); ++k) {
        const double g = clip * grad[k];
        m[k] = static_cast<float>(b1 * m[k] + (1 - b1) * g);
        v[k] = static_cast<float>(b2 * v[k] + (1 - b2) * g * g);
        data[k] = static_cast<float>(data[k] - cfg_.lr * (m[k] / bias1) / (std::sqrt(v[k] / bias2) + 1e-8));
      }
    }
  }
  store_.zero_grads();
  return norm;
}

Trainer::Trainer(model::Model<float>& model, const corpus::Corpus& corpus, TrainConfig cfg)
    : model_(model), corpus_(corpus), cfg_(std::move(cfg)) {
  cfg_.validate();
  if (corpus.inventory.d_spec != model.config().d_spec) {
    throw ad::ShapeError("corpus d_spec " + std::to_string(corpus.inventory.d_spec) +
                         " does not match model d_spec " + std::to_string(model.config().d_spec));
  }
  train_ = corpus_.split(corpus::Split::Train);
  if (train_.empty()) throw ad::EmptyInputError("corpus has no training records");
}

model::GseSource Trainer::gse_source(int stage) const {
  if (model_.config().two_stage() && stage == 1) return model::GseSource::Zero;
  return model::GseSource::Reference;
}

void Trainer::prepare_stage(int stage) {
  auto& store = model_.params();
  const std::vector<std::string> all = {""};
  const auto& cfg = model_.config();
  if (stage == 1) {
    if (model_.stage() > 1) {
      throw ProvenanceError("stage 1 cannot resume from a stage-" + std::to_string(model_.stage()) + " model");
    }
    store.set_trainable(all, true);
    if (cfg.two_stage()) store.set_trainable(model::Model<float>::global_path_prefixes(), false);
  } else if (stage == 2) {
    if (!cfg.two_stage()) {
      throw ProvenanceError(std::string(model::variant_name(cfg.variant)) +
                            " trains in a single stage; it has no stage 2");
    }
    if (model_.stage() != 1 && model_.stage() != 2) {
      throw ProvenanceError("stage 2 requires a stage-1 checkpoint, got stage " + std::to_string(model_.stage()));
    }
    store.set_trainable(all, true);
    store.set_trainable(model::Model<float>::stage2_frozen_prefixes(), false);
  } else {
    throw ad::ContractError("unknown training stage " + std::to_string(stage));
  }
}

LossBreakdown Trainer::train_step(int stage, std::span<const corpus::UtteranceRecord* const> batch) {
  const auto& cfg = model_.config();
  const std::size_t r = cfg.backbone.reduction_r;
  // conv blocks are frozen (eval-mode batchnorm) in stage 2
  const nn::Mode conv_mode = stage == 2 ? nn::Mode::Eval : nn::Mode::Train;
  const bool use_cls = cfg.has_classifier() && !(cfg.two_stage() && stage == 1);
  const auto gse = gse_source(stage);

  ad::Tape<float> tape;
  std::vector<Tensor<float>> refs;
  for (const auto* rec : batch) refs.push_back(rec->features.channel_major<float>());
  const auto convs = model_.ref_encoder().conv_stack_batch(refs, conv_mode);

  LossBreakdown mean;
  Tensor<float> total;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto* rec = batch[i];
    const Tensor<float> target = rec->features.time_major<float>();
    Tensor<float> inputs = target;
    if (cfg_.teacher_noise > 0) {
      std::normal_distribution<float> noise(0.0f, static_cast<float>(cfg_.teacher_noise));
      std::vector<float> v(target.data().begin(), target.data().end());
      for (auto& x : v) x += noise(noise_rng_);
      inputs = Tensor<float>(target.shape(), std::move(v));
      inputs.set_trainable(false);
    }
    auto out = model_.synthesize_from_conv(rec->text, convs[i], convs[i], gse, inputs);
    Tensor<float> logits;
    if (use_cls) logits = model_.classifier()(out.style.gse);
    auto terms = compute_loss(out.decoded, pad_target(target, r), logits,
                              static_cast<std::size_t>(rec->emotion), cfg_.stop_weight, cfg_.lambda_cls);
    if (cfg_.guided_attn_weight > 0) {
      auto guide = guided_attention_loss(out.decoded.alignment, cfg_.guided_attn_width);
      mean.guide += guide.item();
      terms.total = ad::add(terms.total, ad::scale(guide, static_cast<float>(cfg_.guided_attn_weight)));
    }
    const auto v = terms.values();
    mean.total += v.total;
    mean.mse += v.mse;
    mean.stop += v.stop;
    mean.ce += v.ce;
    total = total.defined() ? ad::add(total, terms.total) : terms.total;
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  total = ad::scale(total, static_cast<float>(inv));
  if (!std::isfinite(total.item())) {
    throw ad::NumericalError("loss", "non-finite training loss " + std::to_string(total.item()));
  }
  tape.backward(total);
  mean.total *= inv;
  mean.mse *= inv;
  mean.stop *= inv;
  mean.ce *= inv;
  mean.guide *= inv;
  return mean;
}

StageSummary Trainer::run_stage(int stage, std::size_t steps) {
  prepare_stage(stage);
  Optimizer opt(model_.params(), cfg_);
  StageSummary summary;
  summary.stage = stage;
  summary.steps = steps;
  const auto start = std::chrono::steady_clock::now();
  summary.val_mse_start = validation_mse(stage);
  if (log_) log_({{"event", "validation"}, {"stage", stage}, {"step", 0}, {"val_mse", summary.val_mse_start}});

  std::mt19937_64 rng(corpus::derive_seed(cfg_.seed, "batches:" + std::to_string(stage)));
  noise_rng_.seed(corpus::derive_seed(cfg_.seed, "teacher-noise:" + std::to_string(stage)));
  std::vector<std::size_t> order(train_.size());
  std::size_t cursor = order.size();
  std::deque<double> window;
  double window_sum = 0;
  std::vector<const corpus::UtteranceRecord*> batch;
  for (std::size_t step = 1; step <= steps; ++step) {
    batch.clear();
    while (batch.size() < cfg_.batch_size) {
      if (cursor == order.size()) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
        cursor = 0;
      }
      batch.push_back(train_[order[cursor++]]);
    }
    const auto loss = train_step(stage, batch);
    const double grad_norm = opt.step();
    window.push_back(loss.total);
    window_sum += loss.total;
    if (window.size() > 200) {
      window_sum -= window.front();
      window.pop_front();
    }
    if (step == std::min<std::size_t>(200, steps)) summary.train_loss_first = window_sum / double(window.size());
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (log_) {
      log_({{"event", "step"}, {"stage", stage}, {"step", step}, {"loss", loss.total}, {"mse", loss.mse},
            {"stop", loss.stop}, {"ce", loss.ce}, {"guide", loss.guide}, {"grad_norm", grad_norm}, {"lr", cfg_.lr}, {"wall_s", wall}});
    }
    if (cfg_.val_every > 0 && step % cfg_.val_every == 0 && step != steps) {
      const double v = validation_mse(stage);
      if (log_) log_({{"event", "validation"}, {"stage", stage}, {"step", step}, {"val_mse", v}});
    }
  }
  summary.train_loss_last = window.empty() ? 0.0 : window_sum / double(window.size());
  summary.val_mse_end = validation_mse(stage);
  summary.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (log_) {
    log_({{"event", "validation"}, {"stage", stage}, {"step", steps}, {"val_mse", summary.val_mse_end}});
  }
  model_.set_stage(stage);
  return summary;
}

double Trainer::validation_mse(int stage, corpus::Split split) {
  const auto records = corpus_.split(split);
  if (records.empty()) return 0.0;
  const auto gse = gse_source(stage);
  double sum = 0;
  for (const auto* rec : records) {
    const auto target = rec->features.time_major<float>();
    auto out = model_.synthesize(rec->text, rec->features.channel_major<float>(), {}, gse, target);
    sum += ad::masked_mse(out.decoded.frames, pad_target(target, model_.config().backbone.reduction_r),
                          target.dim(0)).item();
  }
  return sum / static_cast<double>(records.size());
}

double Trainer::classifier_accuracy(corpus::Split split) {
  if (!model_.config().has_classifier()) throw ad::ContractError("variant has no classifier");
  const auto records = corpus_.split(split);
  std::size_t hit = 0;
  for (const auto* rec : records) {
    auto style = model_.encode_reference(rec->features.channel_major<float>());
    auto logits = model_.classifier()(style.gse);
    const auto d = logits.data();
    const auto best = static_cast<int>(std::max_element(d.begin(), d.end()) - d.begin());
    hit += best == rec->emotion;
  }
  return records.empty() ? 0.0 : static_cast<double>(hit) / static_cast<double>(records.size());
}

template struct LossTerms<float>;
template struct LossTerms<double>;
template Tensor<float> pad_target(const Tensor<float>&, std::size_t);
template Tensor<double> pad_target(const Tensor<double>&, std::size_t);
template Tensor<float> guided_attention_loss(const Tensor<float>&, double);
template Tensor<double> guided_attention_loss(const Tensor<double>&, double);
template LossTerms<float> compute_loss(const model::DecodeResult<float>&, const Tensor<float>&,
                                       const Tensor<float>&, std::size_t, double, double);
template LossTerms<double> compute_loss(const model::DecodeResult<double>&, const Tensor<double>&,
                                        const Tensor<double>&, std::size_t, double, double);

}  // namespace mstts::training

#pragma once

#include <chrono>
#include <functional>
#include <random>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mstts/corpus/corpus.h"
#include "mstts/model/model.h"

namespace mstts::training {

/// Raised when a stage is run on a model with the wrong history, or a
/// checkpoint's stage does not match what the caller needs.
class ProvenanceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class OptimizerKind { Sgd, Adam };

struct TrainConfig {
  std::size_t stage1_steps = 2000;
  std::size_t stage2_steps = 1000;
  std::size_t batch_size = 8;
  double lr = 1e-3;
  double lambda_cls = 1.0;
  double stop_weight = 5.0;
  double grad_clip = 1.0;
  double momentum = 0.9;
  OptimizerKind optimizer = OptimizerKind::Sgd;
  std::uint64_t seed = 1;
  /// Validation MSE is logged every val_every steps (0: only at the ends).
  std::size_t val_every = 0;
  /// Weight of the diagonal prior on the decoder alignment (0 disables it).
  double guided_attn_weight = 0.0;
  double guided_attn_width = 0.2;
  /// Std of Gaussian noise added to the decoder's teacher-forced inputs (the
  /// loss target stays clean). 0 disables it.
  double teacher_noise = 0.0;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Per-utterance loss components (float values, for logging).
struct LossBreakdown {
  double total = 0, mse = 0, stop = 0, ce = 0, guide = 0;
};

template <typename T>
struct LossTerms {
  ad::Tensor<T> total, mse, stop, ce;  // ce undefined when the classifier is inactive
  LossBreakdown values() const;
};

/// Pads a (T x d) target to a multiple of r rows by repeating the last frame.
template <typename T>
ad::Tensor<T> pad_target(const ad::Tensor<T>& target, std::size_t r);

/// L = masked MSE + stop_weight * BCE(stop; 1 on the last step)
///     [+ lambda_cls * CE(cls_logits, label) when cls_logits is defined]
template <typename T>
LossTerms<T> compute_loss(const model::DecodeResult<T>& decoded, const ad::Tensor<T>& padded_target,
                          const ad::Tensor<T>& cls_logits, std::size_t label, double stop_weight,
                          double lambda_cls);

/// Mean of A * W with W[n, t] = 1 - exp(-(n/N - t/T)^2 / (2 width^2)) over
/// an (N x T) decoder alignment A. Small when attention walks the diagonal.
template <typename T>
ad::Tensor<T> guided_attention_loss(const ad::Tensor<T>& alignment, double width);

/// Momentum SGD or Adam over the trainable parameters of a store, with
/// global-norm gradient clipping.
class Optimizer {
 public:
  Optimizer(nn::ParameterStore<float>& store, const TrainConfig& cfg);
  /// Applies one update from the accumulated gradients and clears them.
  /// Returns the global gradient norm before clipping. Throws NumericalError
  /// naming the parameter if a gradient is not finite.
  double step();

 private:
  nn::ParameterStore<float>& store_;
  TrainConfig cfg_;
  std::vector<std::vector<float>> m_, v_;
  std::size_t t_ = 0;
};

struct StageSummary {
  int stage = 0;
  std::size_t steps = 0;
  double val_mse_start = 0, val_mse_end = 0;
  double train_loss_first = 0, train_loss_last = 0;  // 200-step moving averages
  double seconds = 0;
};

/// Runs the training stages of one model replica on a corpus. Proposed and
/// Base-FS use the two-stage schedule; Base-G and Base-L train in a single
/// stage (numbered 1) with every parameter trainable.
class Trainer {
 public:
  using LogSink = std::function<void(const nlohmann::json&)>;

  Trainer(model::Model<float>& model, const corpus::Corpus& corpus, TrainConfig cfg);
  void set_log_sink(LogSink sink) { log_ = std::move(sink); }

  StageSummary run_stage(int stage, std::size_t steps);

  /// Configures trainability for a stage without running it.
  void prepare_stage(int stage);
  /// One optimizer step on the given records; returns the mean breakdown.
  LossBreakdown train_step(int stage, std::span<const corpus::UtteranceRecord* const> batch);

  /// Teacher-forced MSE over a split in eval mode. The GSE slot follows the
  /// stage's convention.
  double validation_mse(int stage, corpus::Split split = corpus::Split::Val);
  /// Accuracy of the GSE classifier on a split (references = targets).
  double classifier_accuracy(corpus::Split split = corpus::Split::Val);

  /// GSE source used in a stage for this variant.
  model::GseSource gse_source(int stage) const;

 private:
  model::Model<float>& model_;
  const corpus::Corpus& corpus_;
  TrainConfig cfg_;
  LogSink log_;
  std::vector<const corpus::UtteranceRecord*> train_;
  std::mt19937_64 noise_rng_;
};

}  // namespace mstts::training

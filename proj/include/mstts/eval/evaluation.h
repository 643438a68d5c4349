#pragma once

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mstts/corpus/corpus.h"
#include "mstts/model/model.h"

namespace mstts::eval {

/// The probe could not separate emotions on the validation split.
class ProbeUnfitError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input text differs from the local reference's text.
class ContentMismatchError : public ad::ContractError {
 public:
  using ad::ContractError::ContractError;
};

/// Emotion classifier on raw features: per-channel mean and standard
/// deviation over frames, z-scored with training statistics, then one linear
/// layer to 7 logits trained by full-batch softmax regression.
class EmotionProbe {
 public:
  struct Options {
    std::size_t iterations = 400;
    double lr = 0.5;
    double l2 = 1e-4;
  };

  /// Trains on `records` with the given labels (normally their emotions).
  static EmotionProbe fit(const std::vector<const corpus::UtteranceRecord*>& records,
                          const std::vector<int>& labels, Options opts);
  static EmotionProbe fit(const std::vector<const corpus::UtteranceRecord*>& records,
                          const std::vector<int>& labels) {
    return fit(records, labels, Options{});
  }

  int predict(const FeatureMatrix& m) const;
  std::vector<double> logits(const FeatureMatrix& m) const;
  double accuracy(const std::vector<const corpus::UtteranceRecord*>& records) const;

  std::size_t d_spec() const { return d_spec_; }

 private:
  std::vector<double> pooled(const FeatureMatrix& m) const;

  std::size_t d_spec_ = 0;
  std::vector<double> mu_, sigma_;  // standardization of pooled features
  std::vector<double> w_;           // kNumEmotions x (2 d_spec + 1), bias last
};

/// Probe trained on the corpus train split; throws ProbeUnfitError when the
/// val accuracy is below `min_val_accuracy`.
EmotionProbe train_probe(const corpus::Corpus& corpus, double min_val_accuracy = 0.95);

struct ProsodyMeasure {
  double duration_pearson = 0;
  double pause_f1 = 0;
  bool degenerate = false;
  std::vector<std::size_t> durations;  // aligned frames per symbol
  std::vector<std::size_t> pause_slots;
};

/// Minimum frames per aligned symbol and per detected pause.
inline constexpr std::size_t kMinSegmentFrames = 2;
inline constexpr std::size_t kMinPauseFrames = 3;

/// Monotonic forced alignment of `output` to `text`, with an optional silence
/// segment in every inter-symbol slot. Frame cost is the squared distance to
/// the symbol template under the hypothesized emotion. Pauses shorter
/// than kMinPauseFrames are not detected, which keeps the two crossfade
/// frames between symbols from reading as silence.
ProsodyMeasure align_prosody(const FeatureMatrix& output, const std::vector<std::size_t>& text,
                             const corpus::Inventory& inv, int emotion_hypothesis);

/// Compares an alignment with a reference's ground-truth durations and
/// pauses.
void score_prosody(ProsodyMeasure& m, const std::vector<std::size_t>& ref_durations,
                   const std::vector<corpus::Pause>& ref_pauses);

ProsodyMeasure measure_local_prosody(const FeatureMatrix& output, const corpus::UtteranceRecord& ref,
                                     const corpus::Inventory& inv, int emotion_hypothesis);

/// Pearson correlation; 0 when either side has zero variance.
double pearson(const std::vector<double>& a, const std::vector<double>& b);

struct TransferRow {
  std::string id;           // local reference id
  std::string global_ref;   // global reference id
  int emotion = 0;          // emotion the global match is judged against
  int local_emotion = 0;
  int probe_prediction = 0;
  bool global_probe_match = false;
  double duration_pearson = 0;
  double pause_f1 = 0;
  bool degenerate = false;
  std::optional<double> ref_attn_entropy;
  std::optional<double> ref_attn_coverage;
  std::vector<double> key_max_profile;
  bool completed = false;
  std::size_t output_frames = 0;
  std::size_t ref_frames = 0;
  std::size_t t_l = 0;
  /// Multi-reference only: mean duration correlation against distractors.
  std::optional<double> distractor_pearson;
};

struct MetricStats {
  std::size_t n = 0;
  double mean = 0;
  double ci95 = 0;  // 1.96 * sample sd / sqrt(n)
};

MetricStats summarize(const std::vector<double>& values);

struct TransferReport {
  std::string variant;
  std::string experiment;  // "parallel" or "multi-reference"
  std::vector<TransferRow> rows;

  double global_match_rate() const;
  double mean_duration_pearson() const;
  double completion_rate() const;
  /// Mean over rows with a reference attention; NaN when there are none.
  double mean_ref_attn_entropy() const;
  double mean_distractor_gap() const;

  /// Rows plus aggregates per emotion and "Overall".
  nlohmann::json to_json() const;
};

/// Recomputes every aggregate from the rows of a report JSON and returns the
/// largest absolute difference from the stored aggregates.
double aggregate_discrepancy(const nlohmann::json& report);

/// Parallel groups of the corpus test split, topped up with freshly rendered
/// held-out groups until there are at least `min_groups`.
std::vector<std::vector<corpus::UtteranceRecord>> test_groups(const corpus::Corpus& corpus,
                                                             std::size_t min_groups,
                                                             std::uint64_t seed);

struct TransferOptions {
  std::size_t max_steps = 0;  // 0: the model's max_decoder_steps
};

/// Synthesizes `ids` from the two references and scores it. The global match
/// is judged against `global_ref`'s emotion and local metrics against
/// `local_ref`. Throws ContentMismatchError if ids != local_ref.text.
TransferRow transfer_one(model::Model<float>& m, const EmotionProbe& probe, const corpus::Inventory& inv,
                         const std::vector<std::size_t>& ids, const corpus::UtteranceRecord& local_ref,
                         const corpus::UtteranceRecord& global_ref, const TransferOptions& opts = {});

TransferReport run_parallel_transfer(model::Model<float>& m, const EmotionProbe& probe,
                                     const corpus::Inventory& inv,
                                     const std::vector<std::vector<corpus::UtteranceRecord>>& groups,
                                     const TransferOptions& opts = {});

/// Emotion of the global reference paired with a local reference of emotion
/// `local` in group `g`; always differs from `local`.
int multi_reference_global_emotion(int local, std::size_t g);

/// For every record of every group: global reference of the paired emotion
/// taken from the next group (different text), local reference the record
/// itself, and `distractors` renders of the same text and emotion with other
/// prosody seeds.
TransferReport run_multi_reference(model::Model<float>& m, const EmotionProbe& probe,
                                   const corpus::Inventory& inv,
                                   const std::vector<std::vector<corpus::UtteranceRecord>>& groups,
                                   std::size_t distractors, std::uint64_t seed,
                                   const TransferOptions& opts = {});

struct GranularityReport {
  double proposed_completion = 0, fs_completion = 0;
  double proposed_entropy = 0, fs_entropy = 0;
  double proposed_coverage = 0, fs_coverage = 0;
  nlohmann::json to_json() const;
};

GranularityReport compare_granularity(const TransferReport& proposed, const TransferReport& base_fs);

}  // namespace mstts::eval

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "mstts/features.h"

// Deterministic synthetic "emotional pseudo-speech" corpus. Each symbol has a
// spectral template and a base duration; each emotion is a global transform
// (additive tilt, gain, tempo, cyclic band shift); each utterance draws local
// prosody (duration and energy multipliers, optional pauses) from its own
// seed.
namespace mstts::corpus {

inline constexpr std::size_t kAlphabetSize = 16;
inline constexpr std::size_t kSilence = 0;
inline constexpr std::size_t kNumEmotions = 7;
inline constexpr int kManifestVersion = 1;
/// Range of the per-symbol energy multiplier.
inline constexpr double kEnergyMin = 0.8;
inline constexpr double kEnergyMax = 1.25;
/// Inserted pauses last this many frames (inclusive).
inline constexpr std::size_t kPauseMinFrames = 4;
inline constexpr std::size_t kPauseMaxFrames = 8;
inline constexpr std::array<const char*, kNumEmotions> kEmotionNames = {
    "neutral", "angry", "fear", "disgust", "happy", "sad", "surprised"};

class CorruptCorpusError : public std::runtime_error {
 public:
  CorruptCorpusError(std::string record, const std::string& what)
      : std::runtime_error(what), record_(std::move(record)) {}
  const std::string& record() const { return record_; }

 private:
  std::string record_;
};

class CorpusVersionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Split { Train, Val, Test };
const char* split_name(Split s);
Split parse_split(const std::string& s);

struct EmotionProfile {
  int id = 0;
  std::vector<float> tilt;
  double gain = 1.0;
  double tempo = 1.0;
  int band_shift = 0;
};

/// Everything needed to render: symbol templates, base durations, profiles.
struct Inventory {
  std::size_t d_spec = 32;
  double frame_shift_ms = 12.5;
  std::uint64_t seed = 0;
  std::vector<std::vector<float>> templates;  // kAlphabetSize rows; silence is all zeros
  std::vector<std::size_t> base_durations;    // frames per symbol
  std::vector<EmotionProfile> profiles;       // kNumEmotions

  /// template of symbol s after the emotion's band shift and gain, plus tilt
  std::vector<float> transformed_template(std::size_t symbol, const EmotionProfile& p) const;
};

Inventory make_inventory(std::size_t d_spec, std::uint64_t seed, double frame_shift_ms = 12.5);

struct Pause {
  std::size_t slot = 0;  // pause follows symbol `slot`
  std::size_t frames = 0;
  bool operator==(const Pause&) const = default;
};

struct ProsodyPlan {
  std::vector<std::size_t> durations;
  std::vector<Pause> pauses;
  std::vector<double> energy;
  std::size_t total_frames() const;
};

struct RenderOptions {
  bool unit_local_factors = false;  // duration and energy multipliers forced to 1
  bool allow_pauses = true;
};

ProsodyPlan plan_prosody(const std::vector<std::size_t>& text, const EmotionProfile& emotion,
                         const Inventory& inv, std::uint64_t prosody_seed,
                         const RenderOptions& opts = {});

FeatureMatrix render_plan(const std::vector<std::size_t>& text, const ProsodyPlan& plan,
                          const EmotionProfile& emotion, const Inventory& inv,
                          std::uint64_t noise_seed);

struct UtteranceRecord {
  std::string id;
  std::vector<std::size_t> text;
  int emotion = 0;
  std::vector<std::size_t> durations;
  std::vector<Pause> pauses;
  std::optional<int> parallel_group;
  Split split = Split::Train;
  std::uint64_t prosody_seed = 0;
  FeatureMatrix features;
};

UtteranceRecord render_utterance(const std::vector<std::size_t>& text, int emotion,
                                 std::uint64_t prosody_seed, const Inventory& inv,
                                 const RenderOptions& opts = {});

/// Frame ranges [begin, end) of each symbol in the record, pauses excluded.
std::vector<std::pair<std::size_t, std::size_t>> symbol_spans(const UtteranceRecord& r);

struct CorpusConfig {
  std::size_t n_utterances = 700;
  std::uint64_t seed = 7;
  double neutral_frac = 0.4667;
  double parallel_frac = 0.15;
  std::size_t d_spec = 32;
  double frame_shift_ms = 12.5;
};

struct Corpus {
  CorpusConfig config;
  Inventory inventory;
  std::vector<UtteranceRecord> records;

  std::vector<const UtteranceRecord*> split(Split s) const;
  const UtteranceRecord& by_id(const std::string& id) const;
  /// parallel groups whose records all sit in split s, in group order
  std::vector<std::vector<const UtteranceRecord*>> parallel_groups(Split s) const;
};

/// Number of parallel groups: ceil(parallel_frac * n / 7).
std::size_t parallel_group_count(std::size_t n, double parallel_frac);
/// Per-emotion record counts: floor(neutral_frac * n) neutral, the remainder
/// split evenly over the other six with leftovers going to the lowest ids.
std::array<std::size_t, kNumEmotions> emotion_counts(std::size_t n, double neutral_frac);

Corpus generate_corpus(const CorpusConfig& cfg);
void write_corpus(const Corpus& corpus, const std::filesystem::path& dir);
Corpus load_corpus(const std::filesystem::path& dir);

/// Fresh parallel groups (one record per emotion, shared text) rendered from
/// the corpus inventory with their own seed, disjoint from corpus records.
std::vector<std::vector<UtteranceRecord>> render_heldout_groups(const Inventory& inv,
                                                                std::size_t count,
                                                                std::uint64_t seed);

/// Mixes a seed with a string key; used to derive per-record streams.
std::uint64_t derive_seed(std::uint64_t seed, const std::string& key);

}  // namespace mstts::corpus

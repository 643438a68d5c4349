#include "mstts/corpus/corpus.h"
#include "mstts/version.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace mstts::corpus {

namespace {

using json = nlohmann::json;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Portable draws on top of mt19937_64 (the std distributions are
// implementation-defined).
struct Stream {
  explicit Stream(std::uint64_t seed) : rng(seed) {}
  double uniform() { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::size_t integer(std::size_t lo, std::size_t hi) {
    return lo + static_cast<std::size_t>(rng() % (hi - lo + 1));
  }
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }
  std::mt19937_64 rng;
};

constexpr double kTiltStd = 0.5;
constexpr double kMinTiltSeparation = 0.5;
constexpr double kNoiseStd = 0.01;
constexpr double kPauseProb = 0.15;
constexpr std::size_t kMinDuration = 4;

std::string record_id(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "utt%05zu", i);
  return buf;
}

std::vector<std::size_t> random_text(Stream& s) {
  const std::size_t len = s.integer(5, 12);
  std::vector<std::size_t> text(len);
  // No symbol follows itself, so every symbol boundary is visible in the
  // features. One draw per symbol either way.
  for (std::size_t i = 0; i < len; ++i) {
    if (i == 0) {
      text[i] = s.integer(1, kAlphabetSize - 1);
    } else {
      const std::size_t sym = s.integer(1, kAlphabetSize - 2);
      text[i] = sym >= text[i - 1] ? sym + 1 : sym;
    }
  }
  return text;
}

Split split_for(const std::string& key) {
  const auto bucket = splitmix64(fnv1a64(std::span<const std::uint8_t>(
                          reinterpret_cast<const std::uint8_t*>(key.data()), key.size()))) %
                      10;
  if (bucket < 8) return Split::Train;
  return bucket == 8 ? Split::Val : Split::Test;
}

std::string group_key(int g) { return "pg" + std::to_string(g); }

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, const std::string& key) {
  return splitmix64(seed ^ fnv1a64(std::span<const std::uint8_t>(
                               reinterpret_cast<const std::uint8_t*>(key.data()), key.size())));
}

const char* split_name(Split s) {
  switch (s) {
    case Split::Train:
      return "train";
    case Split::Val:
      return "val";
    case Split::Test:
      return "test";
  }
  return "train";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw std::invalid_argument("unknown split '" + s + "'");
}

std::vector<float> Inventory::transformed_template(std::size_t symbol,
                                                   const EmotionProfile& p) const {
  const auto& tau = templates.at(symbol);
  std::vector<float> out(d_spec);
  const long n = static_cast<long>(d_spec);
  for (long c = 0; c < n; ++c) {
    const long src = ((c - p.band_shift) % n + n) % n;
    out[static_cast<std::size_t>(c)] =
        static_cast<float>(tau[static_cast<std::size_t>(src)] * p.gain + p.tilt[static_cast<std::size_t>(c)]);
  }
  return out;
}

Inventory make_inventory(std::size_t d_spec, std::uint64_t seed, double frame_shift_ms) {
  Inventory inv;
  inv.d_spec = d_spec;
  inv.seed = seed;
  inv.frame_shift_ms = frame_shift_ms;
  Stream s(derive_seed(seed, "inventory"));
  inv.templates.assign(kAlphabetSize, std::vector<float>(d_spec, 0.0f));
  inv.base_durations.assign(kAlphabetSize, 6);
  for (std::size_t sym = 1; sym < kAlphabetSize; ++sym) {
    for (auto& v : inv.templates[sym]) v = static_cast<float>(s.normal());
    inv.base_durations[sym] = s.integer(12, 16);
  }
  inv.profiles.resize(kNumEmotions);
  inv.profiles[0] = EmotionProfile{0, std::vector<float>(d_spec, 0.0f), 1.0, 1.0, 0};
  for (std::size_t e = 1; e < kNumEmotions; ++e) {
    EmotionProfile p;
    p.id = static_cast<int>(e);
    for (;;) {
      p.tilt.assign(d_spec, 0.0f);
      for (auto& v : p.tilt) v = static_cast<float>(kTiltStd * s.normal());
      bool separated = true;
      for (std::size_t q = 0; q < e; ++q) {
        double d2 = 0;
        for (std::size_t c = 0; c < d_spec; ++c) {
          const double d = p.tilt[c] - inv.profiles[q].tilt[c];
          d2 += d * d;
        }
        separated = separated && std::sqrt(d2) >= kMinTiltSeparation;
      }
      if (separated) break;
    }
    p.gain = s.uniform(0.8, 1.25);
    p.tempo = s.uniform(0.8, 1.25);
    p.band_shift = static_cast<int>(s.integer(0, 6)) - 3;
    inv.profiles[e] = std::move(p);
  }
  return inv;
}

std::size_t ProsodyPlan::total_frames() const {
  std::size_t n = std::accumulate(durations.begin(), durations.end(), std::size_t{0});
  for (const auto& p : pauses) n += p.frames;
  return n;
}

ProsodyPlan plan_prosody(const std::vector<std::size_t>& text, const EmotionProfile& emotion,
                         const Inventory& inv, std::uint64_t prosody_seed,
                         const RenderOptions& opts) {
  Stream s(prosody_seed);
  ProsodyPlan plan;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] >= kAlphabetSize) throw std::out_of_range("symbol outside alphabet");
    // Every draw happens unconditionally so the stream layout never depends
    // on options.
    const double mult = s.uniform(0.7, 1.4);
    const double energy = s.uniform(kEnergyMin, kEnergyMax);
    const double coin = s.uniform();
    const std::size_t pause_len = s.integer(kPauseMinFrames, kPauseMaxFrames);
    const double m = opts.unit_local_factors ? 1.0 : mult;
    const double raw = static_cast<double>(inv.base_durations[text[i]]) * emotion.tempo * m;
    plan.durations.push_back(std::max(kMinDuration, static_cast<std::size_t>(std::floor(raw + 0.5))));
    plan.energy.push_back(opts.unit_local_factors ? 1.0 : energy);
    if (opts.allow_pauses && i + 1 < text.size() && coin < kPauseProb) {
      plan.pauses.push_back(Pause{i, pause_len});
    }
  }
  return plan;
}

FeatureMatrix render_plan(const std::vector<std::size_t>& text, const ProsodyPlan& plan,
                          const EmotionProfile& emotion, const Inventory& inv,
                          std::uint64_t noise_seed) {
  if (text.size() != plan.durations.size() || text.size() != plan.energy.size()) {
    throw std::invalid_argument("prosody plan does not match text length");
  }
  const std::size_t d = inv.d_spec;
  struct Segment {
    std::vector<float> value;
    std::size_t frames;
  };
  std::vector<Segment> segments;
  std::size_t next_pause = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    auto v = inv.transformed_template(text[i], emotion);
    // energy scales the symbol part only; the tilt stays additive
    for (std::size_t c = 0; c < d; ++c) {
      v[c] = static_cast<float>((v[c] - emotion.tilt[c]) * plan.energy[i] + emotion.tilt[c]);
    }
    segments.push_back({std::move(v), plan.durations[i]});
    if (next_pause < plan.pauses.size() && plan.pauses[next_pause].slot == i) {
      segments.push_back({inv.transformed_template(kSilence, emotion), plan.pauses[next_pause].frames});
      ++next_pause;
    }
  }
  FeatureMatrix m(plan.total_frames(), d);
  m.frame_shift_ms = inv.frame_shift_ms;
  std::size_t t = 0;
  for (std::size_t k = 0; k < segments.size(); ++k) {
    for (std::size_t f = 0; f < segments[k].frames; ++f, ++t) {
      std::copy(segments[k].value.begin(), segments[k].value.end(), m.values.begin() + t * d);
    }
    // two-frame linear crossfade straddling the boundary
    if (k + 1 < segments.size()) {
      const auto& a = segments[k].value;
      const auto& b = segments[k + 1].value;
      for (std::size_t c = 0; c < d; ++c) {
        m.at(t - 1, c) = static_cast<float>((2.0 * a[c] + b[c]) / 3.0);
      }
      // frame t is written by the next segment and blended below
    }
  }
  t = 0;
  for (std::size_t k = 0; k + 1 < segments.size(); ++k) {
    t += segments[k].frames;
    const auto& a = segments[k].value;
    const auto& b = segments[k + 1].value;
    for (std::size_t c = 0; c < d; ++c) m.at(t, c) = static_cast<float>((a[c] + 2.0 * b[c]) / 3.0);
  }
  Stream noise(noise_seed);
  for (auto& v : m.values) v = static_cast<float>(v + kNoiseStd * noise.normal());
  return m;
}

UtteranceRecord render_utterance(const std::vector<std::size_t>& text, int emotion,
                                 std::uint64_t prosody_seed, const Inventory& inv,
                                 const RenderOptions& opts) {
  if (emotion < 0 || emotion >= static_cast<int>(kNumEmotions)) {
    throw std::out_of_range("emotion id " + std::to_string(emotion));
  }
  const auto& profile = inv.profiles[static_cast<std::size_t>(emotion)];
  UtteranceRecord r;
  r.text = text;
  r.emotion = emotion;
  r.prosody_seed = prosody_seed;
  auto plan = plan_prosody(text, profile, inv, prosody_seed, opts);
  r.features = render_plan(text, plan, profile, inv, derive_seed(prosody_seed, "noise"));
  r.durations = std::move(plan.durations);
  r.pauses = std::move(plan.pauses);
  return r;
}

std::vector<std::pair<std::size_t, std::size_t>> symbol_spans(const UtteranceRecord& r) {
  std::vector<std::pair<std::size_t, std::size_t>> spans;
  std::size_t t = 0, next_pause = 0;
  for (std::size_t i = 0; i < r.durations.size(); ++i) {
    spans.emplace_back(t, t + r.durations[i]);
    t += r.durations[i];
    if (next_pause < r.pauses.size() && r.pauses[next_pause].slot == i) {
      t += r.pauses[next_pause].frames;
      ++next_pause;
    }
  }
  return spans;
}

std::size_t parallel_group_count(std::size_t n, double parallel_frac) {
  const double groups = parallel_frac * static_cast<double>(n) / static_cast<double>(kNumEmotions);
  return static_cast<std::size_t>(std::ceil(groups - 1e-9));
}

std::array<std::size_t, kNumEmotions> emotion_counts(std::size_t n, double neutral_frac) {
  std::array<std::size_t, kNumEmotions> counts{};
  counts[0] = static_cast<std::size_t>(std::floor(neutral_frac * static_cast<double>(n) + 1e-9));
  const std::size_t rest = n - counts[0];
  const std::size_t others = kNumEmotions - 1;
  for (std::size_t e = 1; e < kNumEmotions; ++e) {
    counts[e] = rest / others + ((e - 1) < rest % others ? 1 : 0);
  }
  return counts;
}

std::vector<const UtteranceRecord*> Corpus::split(Split s) const {
  std::vector<const UtteranceRecord*> out;
  for (const auto& r : records) {
    if (r.split == s) out.push_back(&r);
  }
  return out;
}

const UtteranceRecord& Corpus::by_id(const std::string& id) const {
  for (const auto& r : records) {
    if (r.id == id) return r;
  }
  throw std::out_of_range("no record with id " + id);
}

std::vector<std::vector<const UtteranceRecord*>> Corpus::parallel_groups(Split s) const {
  std::vector<std::vector<const UtteranceRecord*>> groups;
  int max_group = -1;
  for (const auto& r : records) {
    if (r.parallel_group) max_group = std::max(max_group, *r.parallel_group);
  }
  groups.resize(static_cast<std::size_t>(max_group + 1));
  for (const auto& r : records) {
    if (r.parallel_group && r.split == s) groups[static_cast<std::size_t>(*r.parallel_group)].push_back(&r);
  }
  std::erase_if(groups, [](const auto& g) { return g.empty(); });
  for (auto& g : groups) {
    std::sort(g.begin(), g.end(), [](auto* a, auto* b) { return a->emotion < b->emotion; });
  }
  return groups;
}

Corpus generate_corpus(const CorpusConfig& cfg) {
  if (cfg.n_utterances < 70) {
    throw std::invalid_argument("corpus needs at least 70 utterances, got " +
                                std::to_string(cfg.n_utterances));
  }
  if (cfg.neutral_frac < 0 || cfg.neutral_frac > 1 || cfg.parallel_frac < 0 ||
      cfg.parallel_frac > 1) {
    throw std::invalid_argument("corpus fractions must lie in [0, 1]");
  }
  Corpus corpus;
  corpus.config = cfg;
  corpus.inventory = make_inventory(cfg.d_spec, cfg.seed, cfg.frame_shift_ms);
  const std::size_t groups = parallel_group_count(cfg.n_utterances, cfg.parallel_frac);
  const auto counts = emotion_counts(cfg.n_utterances, cfg.neutral_frac);
  for (std::size_t e = 0; e < kNumEmotions; ++e) {
    if (counts[e] < groups) {
      throw std::invalid_argument("emotion " + std::string(kEmotionNames[e]) + " has " +
                                  std::to_string(counts[e]) + " records but " +
                                  std::to_string(groups) + " parallel groups need one each");
    }
  }

  struct Slot {
    int emotion;
    std::optional<int> group;
    std::vector<std::size_t> text;
  };
  std::vector<Slot> slots;
  for (std::size_t g = 0; g < groups; ++g) {
    Stream s(derive_seed(cfg.seed, "group-text:" + std::to_string(g)));
    const auto text = random_text(s);
    for (std::size_t e = 0; e < kNumEmotions; ++e) {
      slots.push_back({static_cast<int>(e), static_cast<int>(g), text});
    }
  }
  std::vector<int> rest;
  for (std::size_t e = 0; e < kNumEmotions; ++e) {
    for (std::size_t k = groups; k < counts[e]; ++k) rest.push_back(static_cast<int>(e));
  }
  Stream order(derive_seed(cfg.seed, "order"));
  for (std::size_t i = rest.size(); i > 1; --i) {
    std::swap(rest[i - 1], rest[order.integer(0, i - 1)]);
  }
  for (int e : rest) slots.push_back({e, std::nullopt, {}});

  corpus.records.resize(slots.size());
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const std::string id = record_id(i);
    auto text = slots[i].text;
    if (!slots[i].group) {
      Stream s(derive_seed(cfg.seed, "text:" + id));
      text = random_text(s);
    }
    auto rec = render_utterance(text, slots[i].emotion, derive_seed(cfg.seed, "prosody:" + id),
                                corpus.inventory);
    rec.id = id;
    rec.parallel_group = slots[i].group;
    rec.split = split_for(slots[i].group ? group_key(*slots[i].group) : id);
    corpus.records[i] = std::move(rec);
  }
  return corpus;
}

namespace {

json profiles_json(const Corpus& c) {
  json j;
  j["version"] = kManifestVersion;
  j["tool_version"] = kToolVersion;
  j["d_spec"] = c.inventory.d_spec;
  j["frame_shift_ms"] = c.inventory.frame_shift_ms;
  j["seed"] = c.inventory.seed;
  j["config"] = {{"n_utterances", c.config.n_utterances},
                 {"seed", c.config.seed},
                 {"neutral_frac", c.config.neutral_frac},
                 {"parallel_frac", c.config.parallel_frac},
                 {"d_spec", c.config.d_spec},
                 {"frame_shift_ms", c.config.frame_shift_ms}};
  j["base_durations"] = c.inventory.base_durations;
  json profiles = json::array();
  for (const auto& p : c.inventory.profiles) {
    profiles.push_back({{"id", p.id},
                        {"name", kEmotionNames[static_cast<std::size_t>(p.id)]},
                        {"tilt", p.tilt},
                        {"gain", p.gain},
                        {"tempo", p.tempo},
                        {"band_shift", p.band_shift}});
  }
  j["profiles"] = profiles;
  return j;
}

}  // namespace

void write_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir / "feat", ec);
  if (ec) throw IoError("cannot create corpus directory " + dir.string() + ": " + ec.message());

  write_text_file(dir / "profiles.json", profiles_json(corpus).dump(2) + "\n");

  FeatureMatrix templates(kAlphabetSize, corpus.inventory.d_spec);
  for (std::size_t s = 0; s < kAlphabetSize; ++s) {
    std::copy(corpus.inventory.templates[s].begin(), corpus.inventory.templates[s].end(),
              templates.values.begin() + s * corpus.inventory.d_spec);
  }
  write_file(dir / "templates.f32", encode_feature_file(templates));

  std::string manifest;
  for (const auto& r : corpus.records) {
    const auto bytes = encode_feature_file(r.features);
    const std::string rel = "feat/" + r.id + ".f32";
    write_file(dir / rel, bytes);
    json pauses = json::array();
    for (const auto& p : r.pauses) pauses.push_back({p.slot, p.frames});
    json line = {{"version", kManifestVersion},
                 {"id", r.id},
                 {"text", r.text},
                 {"emotion", r.emotion},
                 {"durations", r.durations},
                 {"pauses", pauses},
                 {"parallel_group", r.parallel_group ? json(*r.parallel_group) : json(nullptr)},
                 {"split", split_name(r.split)},
                 {"prosody_seed", r.prosody_seed},
                 {"feature_file", rel},
                 {"checksum", hex64(fnv1a64(bytes))}};
    manifest += line.dump() + "\n";
  }
  write_text_file(dir / "manifest.jsonl", manifest);
}

Corpus load_corpus(const std::filesystem::path& dir) {
  Corpus corpus;
  json prof;
  try {
    prof = json::parse(read_text_file(dir / "profiles.json"));
  } catch (const json::exception& e) {
    throw CorruptCorpusError("profiles.json", std::string("profiles.json: ") + e.what());
  }
  if (prof.value("version", -1) != kManifestVersion) {
    throw CorpusVersionError("profiles.json: unsupported corpus version " +
                             prof.value("version", json(-1)).dump());
  }
  auto& inv = corpus.inventory;
  try {
    inv.d_spec = prof.at("d_spec").get<std::size_t>();
    inv.frame_shift_ms = prof.at("frame_shift_ms").get<double>();
    inv.seed = prof.at("seed").get<std::uint64_t>();
    inv.base_durations = prof.at("base_durations").get<std::vector<std::size_t>>();
    const auto& c = prof.at("config");
    corpus.config.n_utterances = c.at("n_utterances").get<std::size_t>();
    corpus.config.seed = c.at("seed").get<std::uint64_t>();
    corpus.config.neutral_frac = c.at("neutral_frac").get<double>();
    corpus.config.parallel_frac = c.at("parallel_frac").get<double>();
    corpus.config.d_spec = c.at("d_spec").get<std::size_t>();
    corpus.config.frame_shift_ms = c.at("frame_shift_ms").get<double>();
    for (const auto& p : prof.at("profiles")) {
      EmotionProfile e;
      e.id = p.at("id").get<int>();
      e.tilt = p.at("tilt").get<std::vector<float>>();
      e.gain = p.at("gain").get<double>();
      e.tempo = p.at("tempo").get<double>();
      e.band_shift = p.at("band_shift").get<int>();
      inv.profiles.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw CorruptCorpusError("profiles.json", std::string("profiles.json: ") + e.what());
  }
  if (inv.profiles.size() != kNumEmotions || inv.base_durations.size() != kAlphabetSize) {
    throw CorruptCorpusError("profiles.json", "profiles.json: wrong profile or symbol count");
  }

  FeatureMatrix templates;
  try {
    templates = decode_feature_file(read_file(dir / "templates.f32"), "templates.f32");
  } catch (const IoError& e) {
    throw CorruptCorpusError("templates.f32", e.what());
  }
  if (templates.frames != kAlphabetSize || templates.channels != inv.d_spec) {
    throw CorruptCorpusError("templates.f32", "templates.f32: unexpected shape");
  }
  inv.templates.assign(kAlphabetSize, {});
  for (std::size_t s = 0; s < kAlphabetSize; ++s) {
    auto f = templates.frame(s);
    inv.templates[s].assign(f.begin(), f.end());
  }

  std::istringstream manifest(read_text_file(dir / "manifest.jsonl"));
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(manifest, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw CorruptCorpusError("manifest:" + std::to_string(line_no),
                               "manifest line " + std::to_string(line_no) + ": " + e.what());
    }
    if (j.value("version", -1) != kManifestVersion) {
      throw CorpusVersionError("manifest line " + std::to_string(line_no) +
                               ": unsupported corpus version " +
                               j.value("version", json(-1)).dump());
    }
    UtteranceRecord r;
    std::string checksum, rel;
    try {
      r.id = j.at("id").get<std::string>();
      r.text = j.at("text").get<std::vector<std::size_t>>();
      r.emotion = j.at("emotion").get<int>();
      r.durations = j.at("durations").get<std::vector<std::size_t>>();
      for (const auto& p : j.at("pauses")) r.pauses.push_back(Pause{p.at(0), p.at(1)});
      if (!j.at("parallel_group").is_null()) r.parallel_group = j.at("parallel_group").get<int>();
      r.split = parse_split(j.at("split").get<std::string>());
      r.prosody_seed = j.at("prosody_seed").get<std::uint64_t>();
      rel = j.at("feature_file").get<std::string>();
      checksum = j.at("checksum").get<std::string>();
    } catch (const std::exception& e) {
      throw CorruptCorpusError(r.id.empty() ? "manifest:" + std::to_string(line_no) : r.id,
                               "manifest record " + r.id + ": " + e.what());
    }
    std::vector<std::uint8_t> bytes;
    try {
      bytes = read_file(dir / rel);
    } catch (const IoError& e) {
      throw CorruptCorpusError(r.id, "record " + r.id + ": " + e.what());
    }
    if (hex64(fnv1a64(bytes)) != checksum) {
      throw CorruptCorpusError(r.id, "record " + r.id + ": feature checksum mismatch");
    }
    try {
      r.features = decode_feature_file(bytes, r.id);
    } catch (const IoError& e) {
      throw CorruptCorpusError(r.id, "record " + r.id + ": " + e.what());
    }
    r.features.frame_shift_ms = inv.frame_shift_ms;
    std::size_t total = std::accumulate(r.durations.begin(), r.durations.end(), std::size_t{0});
    for (const auto& p : r.pauses) total += p.frames;
    if (r.features.channels != inv.d_spec || total != r.features.frames ||
        r.durations.size() != r.text.size() || r.emotion < 0 ||
        r.emotion >= static_cast<int>(kNumEmotions)) {
      throw CorruptCorpusError(r.id, "record " + r.id + ": inconsistent durations or shape");
    }
    corpus.records.push_back(std::move(r));
  }

  // parallel groups: shared text, distinct emotions
  std::vector<const UtteranceRecord*> first;
  std::vector<std::vector<int>> seen;
  for (const auto& r : corpus.records) {
    if (!r.parallel_group) continue;
    const auto g = static_cast<std::size_t>(*r.parallel_group);
    if (g >= first.size()) {
      first.resize(g + 1, nullptr);
      seen.resize(g + 1);
    }
    if (first[g] == nullptr) first[g] = &r;
    if (first[g]->text != r.text ||
        std::find(seen[g].begin(), seen[g].end(), r.emotion) != seen[g].end()) {
      throw CorruptCorpusError(r.id, "record " + r.id + ": breaks parallel group " +
                                         std::to_string(g));
    }
    seen[g].push_back(r.emotion);
  }
  return corpus;
}

std::vector<std::vector<UtteranceRecord>> render_heldout_groups(const Inventory& inv,
                                                                std::size_t count,
                                                                std::uint64_t seed) {
  std::vector<std::vector<UtteranceRecord>> groups;
  for (std::size_t g = 0; g < count; ++g) {
    Stream s(derive_seed(seed, "heldout-text:" + std::to_string(g)));
    const auto text = random_text(s);
    std::vector<UtteranceRecord> group;
    for (std::size_t e = 0; e < kNumEmotions; ++e) {
      char buf[48];
      std::snprintf(buf, sizeof buf, "heldout%03zu_%zu", g, e);
      auto rec = render_utterance(text, static_cast<int>(e), derive_seed(seed, std::string("prosody:") + buf),
                                  inv);
      rec.id = buf;
      rec.parallel_group = static_cast<int>(10000 + g);
      rec.split = Split::Test;
      group.push_back(std::move(rec));
    }
    groups.push_back(std::move(group));
  }
  return groups;
}

}  // namespace mstts::corpus

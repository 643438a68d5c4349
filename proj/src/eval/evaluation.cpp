#include "mstts/eval/evaluation.h"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numeric>

namespace mstts::eval {

using json = nlohmann::json;
using corpus::kNumEmotions;
using corpus::UtteranceRecord;

// ---------------------------------------------------------------- probe ----

std::vector<double> EmotionProbe::pooled(const FeatureMatrix& m) const {
  if (m.channels != d_spec_) {
    throw ad::ShapeError("probe expects " + std::to_string(d_spec_) + " channels, got " +
                         std::to_string(m.channels));
  }
  if (m.frames == 0) throw ad::EmptyInputError("probe: zero frames");
  std::vector<double> f(2 * d_spec_, 0.0);
  for (std::size_t t = 0; t < m.frames; ++t) {
    for (std::size_t c = 0; c < d_spec_; ++c) f[c] += m.at(t, c);
  }
  for (std::size_t c = 0; c < d_spec_; ++c) f[c] /= static_cast<double>(m.frames);
  for (std::size_t t = 0; t < m.frames; ++t) {
    for (std::size_t c = 0; c < d_spec_; ++c) {
      const double dv = m.at(t, c) - f[c];
      f[d_spec_ + c] += dv * dv;
    }
  }
  for (std::size_t c = 0; c < d_spec_; ++c) f[d_spec_ + c] = std::sqrt(f[d_spec_ + c] / static_cast<double>(m.frames));
  if (!mu_.empty()) {
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = (f[i] - mu_[i]) / sigma_[i];
  }
  return f;
}

std::vector<double> EmotionProbe::logits(const FeatureMatrix& m) const {
  const auto f = pooled(m);
  const std::size_t width = f.size() + 1;
  std::vector<double> out(kNumEmotions);
  for (std::size_t k = 0; k < kNumEmotions; ++k) {
    double z = w_[k * width + f.size()];
    for (std::size_t i = 0; i < f.size(); ++i) z += w_[k * width + i] * f[i];
    out[k] = z;
  }
  return out;
}

int EmotionProbe::predict(const FeatureMatrix& m) const {
  const auto z = logits(m);
  return static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
}

double EmotionProbe::accuracy(const std::vector<const UtteranceRecord*>& records) const {
  if (records.empty()) return 0.0;
  std::size_t hit = 0;
  for (const auto* r : records) hit += predict(r->features) == r->emotion;
  return static_cast<double>(hit) / static_cast<double>(records.size());
}

EmotionProbe EmotionProbe::fit(const std::vector<const UtteranceRecord*>& records,
                               const std::vector<int>& labels, Options opts) {
  if (records.empty()) throw ad::EmptyInputError("probe: no training records");
  if (labels.size() != records.size()) throw ad::ShapeError("probe: one label per record required");
  EmotionProbe p;
  p.d_spec_ = records.front()->features.channels;
  const std::size_t n = records.size(), dim = 2 * p.d_spec_, width = dim + 1;

  std::vector<std::vector<double>> x;
  x.reserve(n);
  for (const auto* r : records) x.push_back(p.pooled(r->features));
  p.mu_.assign(dim, 0.0);
  p.sigma_.assign(dim, 0.0);
  for (const auto& row : x) {
    for (std::size_t i = 0; i < dim; ++i) p.mu_[i] += row[i] / static_cast<double>(n);
  }
  for (const auto& row : x) {
    for (std::size_t i = 0; i < dim; ++i) p.sigma_[i] += (row[i] - p.mu_[i]) * (row[i] - p.mu_[i]);
  }
  for (auto& s : p.sigma_) s = std::max(std::sqrt(s / static_cast<double>(n)), 1e-8);
  for (auto& row : x) {
    for (std::size_t i = 0; i < dim; ++i) row[i] = (row[i] - p.mu_[i]) / p.sigma_[i];
  }

  p.w_.assign(kNumEmotions * width, 0.0);
  std::vector<double> grad(p.w_.size()), prob(kNumEmotions);
  for (std::size_t it = 0; it < opts.iterations; ++it) {
    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t s = 0; s < n; ++s) {
      double zmax = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < kNumEmotions; ++k) {
        double z = p.w_[k * width + dim];
        for (std::size_t i = 0; i < dim; ++i) z += p.w_[k * width + i] * x[s][i];
        prob[k] = z;
        zmax = std::max(zmax, z);
      }
      double total = 0;
      for (auto& v : prob) total += (v = std::exp(v - zmax));
      for (std::size_t k = 0; k < kNumEmotions; ++k) {
        const double g = prob[k] / total - (static_cast<int>(k) == labels[s] ? 1.0 : 0.0);
        for (std::size_t i = 0; i < dim; ++i) grad[k * width + i] += g * x[s][i];
        grad[k * width + dim] += g;
      }
    }
    for (std::size_t j = 0; j < p.w_.size(); ++j) {
      p.w_[j] -= opts.lr * (grad[j] / static_cast<double>(n) + opts.l2 * p.w_[j]);
    }
  }
  return p;
}

EmotionProbe train_probe(const corpus::Corpus& corpus, double min_val_accuracy) {
  const auto train = corpus.split(corpus::Split::Train);
  std::vector<int> labels;
  for (const auto* r : train) labels.push_back(r->emotion);
  auto probe = EmotionProbe::fit(train, labels);
  const auto val = corpus.split(corpus::Split::Val);
  const double acc = probe.accuracy(val);
  if (acc < min_val_accuracy) {
    throw ProbeUnfitError("emotion probe reaches only " + std::to_string(acc) +
                          " validation accuracy (need " + std::to_string(min_val_accuracy) + ")");
  }
  return probe;
}

// ------------------------------------------------------ forced alignment ----

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ad::ShapeError("pearson: length mismatch");
  const std::size_t n = a.size();
  if (n < 2) return 0.0;
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / static_cast<double>(n);
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / static_cast<double>(n);
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa <= 0 || sbb <= 0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

ProsodyMeasure align_prosody(const FeatureMatrix& output, const std::vector<std::size_t>& text,
                             const corpus::Inventory& inv, int emotion_hypothesis) {
  if (text.empty()) throw ad::EmptyInputError("align_prosody: empty text");
  if (output.channels != inv.d_spec) throw ad::ShapeError("align_prosody: channel mismatch");
  if (emotion_hypothesis < 0 || emotion_hypothesis >= static_cast<int>(kNumEmotions)) {
    throw std::out_of_range("emotion id " + std::to_string(emotion_hypothesis));
  }
  ProsodyMeasure out;
  const std::size_t n = text.size(), frames = output.frames;
  if (frames < n * kMinSegmentFrames) {
    out.degenerate = true;
    out.durations.assign(n, 0);
    return out;
  }
  const auto& profile = inv.profiles[static_cast<std::size_t>(emotion_hypothesis)];

  // Segment k: even k = symbol k/2, odd k = optional silence after symbol k/2.
  const std::size_t segs = 2 * n - 1;
  std::vector<std::vector<double>> cost(segs, std::vector<double>(frames));
  const auto silence = inv.transformed_template(corpus::kSilence, profile);
  for (std::size_t k = 0; k < segs; ++k) {
    const auto tmpl = k % 2 == 0 ? inv.transformed_template(text[k / 2], profile) : silence;
    for (std::size_t t = 0; t < frames; ++t) {
      double c = 0;
      for (std::size_t ch = 0; ch < inv.d_spec; ++ch) {
        const double dv = output.at(t, ch) - tmpl[ch];
        c += dv * dv;
      }
      cost[k][t] = c;
    }
  }

  // Segment k owns `len[k]` chained states; the last one loops, so a
  // segment lasts at least len[k] frames.
  std::vector<std::size_t> first(segs), len(segs);
  std::size_t states = 0;
  for (std::size_t k = 0; k < segs; ++k) {
    first[k] = states;
    len[k] = k % 2 == 0 ? kMinSegmentFrames : kMinPauseFrames;
    states += len[k];
  }
  std::vector<std::size_t> seg_of(states);
  for (std::size_t k = 0; k < segs; ++k) {
    for (std::size_t j = 0; j < len[k]; ++j) seg_of[first[k] + j] = k;
  }
  auto last = [&](std::size_t k) { return first[k] + len[k] - 1; };

  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> prev(states, kInf), cur(states);
  std::vector<std::vector<std::uint16_t>> back(frames, std::vector<std::uint16_t>(states, 0));
  prev[0] = cost[0][0];
  for (std::size_t t = 1; t < frames; ++t) {
    std::fill(cur.begin(), cur.end(), kInf);
    for (std::size_t k = 0; k < segs; ++k) {
      // entry: from the previous segment, or for a symbol from the previous
      // symbol when the silence slot is skipped
      if (k >= 1) {
        std::size_t from = last(k - 1);
        if (k % 2 == 0 && prev[last(k - 2)] < prev[from]) from = last(k - 2);
        cur[first[k]] = prev[from];
        back[t][first[k]] = static_cast<std::uint16_t>(from);
      }
      for (std::size_t j = 1; j < len[k]; ++j) {
        cur[first[k] + j] = prev[first[k] + j - 1];
        back[t][first[k] + j] = static_cast<std::uint16_t>(first[k] + j - 1);
      }
      const std::size_t z = last(k);
      if (prev[z] < cur[z]) {
        cur[z] = prev[z];
        back[t][z] = static_cast<std::uint16_t>(z);
      }
    }
    for (std::size_t st = 0; st < states; ++st) {
      if (cur[st] < kInf) cur[st] += cost[seg_of[st]][t];
    }
    std::swap(prev, cur);
  }
  std::size_t state = last(segs - 1);
  if (!(prev[state] < kInf)) {
    out.degenerate = true;
    out.durations.assign(n, 0);
    return out;
  }
  std::vector<std::size_t> seg_frames(segs, 0);
  for (std::size_t t = frames; t-- > 0;) {
    ++seg_frames[seg_of[state]];
    if (t > 0) state = back[t][state];
  }
  for (std::size_t i = 0; i < n; ++i) out.durations.push_back(seg_frames[2 * i]);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    if (seg_frames[2 * i + 1] > 0) out.pause_slots.push_back(i);
  }
  return out;
}

void score_prosody(ProsodyMeasure& m, const std::vector<std::size_t>& ref_durations,
                   const std::vector<corpus::Pause>& ref_pauses) {
  if (m.degenerate) {
    m.duration_pearson = 0;
    m.pause_f1 = 0;
    return;
  }
  if (ref_durations.size() != m.durations.size()) {
    throw ad::ShapeError("score_prosody: reference has " + std::to_string(ref_durations.size()) +
                         " symbols, alignment has " + std::to_string(m.durations.size()));
  }
  m.duration_pearson = pearson(std::vector<double>(m.durations.begin(), m.durations.end()),
                               std::vector<double>(ref_durations.begin(), ref_durations.end()));
  std::size_t tp = 0;
  for (const auto& p : ref_pauses) {
    tp += std::count(m.pause_slots.begin(), m.pause_slots.end(), p.slot);
  }
  const std::size_t denom = m.pause_slots.size() + ref_pauses.size();
  m.pause_f1 = denom == 0 ? 1.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

ProsodyMeasure measure_local_prosody(const FeatureMatrix& output, const UtteranceRecord& ref,
                                     const corpus::Inventory& inv, int emotion_hypothesis) {
  auto m = align_prosody(output, ref.text, inv, emotion_hypothesis);
  score_prosody(m, ref.durations, ref.pauses);
  return m;
}

// --------------------------------------------------------------- reports ----

MetricStats summarize(const std::vector<double>& values) {
  MetricStats s;
  s.n = values.size();
  if (s.n == 0) return s;
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(s.n);
  if (s.n > 1) {
    double ss = 0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.ci95 = 1.96 * std::sqrt(ss / static_cast<double>(s.n - 1)) / std::sqrt(static_cast<double>(s.n));
  }
  return s;
}

namespace {

double mean_of(const std::vector<TransferRow>& rows, const std::function<std::optional<double>(const TransferRow&)>& f) {
  double sum = 0;
  std::size_t n = 0;
  for (const auto& r : rows) {
    if (auto v = f(r)) {
      sum += *v;
      ++n;
    }
  }
  return n == 0 ? std::numeric_limits<double>::quiet_NaN() : sum / static_cast<double>(n);
}

json row_json(const TransferRow& r) {
  json j = {{"id", r.id},
            {"global_ref", r.global_ref},
            {"emotion", r.emotion},
            {"local_emotion", r.local_emotion},
            {"probe_prediction", r.probe_prediction},
            {"global_probe_match", r.global_probe_match},
            {"duration_pearson", r.duration_pearson},
            {"pause_f1", r.pause_f1},
            {"degenerate", r.degenerate},
            {"completed", r.completed},
            {"output_frames", r.output_frames},
            {"ref_frames", r.ref_frames},
            {"t_l", r.t_l}};
  j["ref_attn_entropy"] = r.ref_attn_entropy ? json(*r.ref_attn_entropy) : json(nullptr);
  j["ref_attn_coverage"] = r.ref_attn_coverage ? json(*r.ref_attn_coverage) : json(nullptr);
  if (!r.key_max_profile.empty()) j["key_max_profile"] = r.key_max_profile;
  if (r.distractor_pearson) j["distractor_pearson"] = *r.distractor_pearson;
  return j;
}

const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> names = {"global_probe_match", "duration_pearson", "pause_f1",
                                                 "completed",          "ref_attn_entropy", "ref_attn_coverage",
                                                 "distractor_pearson"};
  return names;
}

std::optional<double> metric_value(const json& row, const std::string& name) {
  if (!row.contains(name) || row.at(name).is_null()) return std::nullopt;
  const auto& v = row.at(name);
  if (v.is_boolean()) return v.get<bool>() ? 1.0 : 0.0;
  return v.get<double>();
}

json stats_json(const MetricStats& s) { return {{"n", s.n}, {"mean", s.mean}, {"ci95", s.ci95}}; }

// Aggregates keyed by emotion name plus "Overall", computed from row JSON.
json aggregate_rows(const json& rows) {
  json out = json::object();
  std::vector<std::string> groups(kNumEmotions + 1);
  for (std::size_t e = 0; e < kNumEmotions; ++e) groups[e] = corpus::kEmotionNames[e];
  groups[kNumEmotions] = "Overall";
  for (std::size_t g = 0; g <= kNumEmotions; ++g) {
    json block = json::object();
    for (const auto& name : metric_names()) {
      std::vector<double> values;
      for (const auto& row : rows) {
        if (g < kNumEmotions && row.at("emotion").get<std::size_t>() != g) continue;
        if (auto v = metric_value(row, name)) values.push_back(*v);
      }
      if (!values.empty()) block[name] = stats_json(summarize(values));
    }
    out[groups[g]] = block;
  }
  return out;
}

}  // namespace

double TransferReport::global_match_rate() const {
  return mean_of(rows, [](const TransferRow& r) { return std::optional<double>(r.global_probe_match ? 1.0 : 0.0); });
}

double TransferReport::mean_duration_pearson() const {
  return mean_of(rows, [](const TransferRow& r) { return std::optional<double>(r.duration_pearson); });
}

double TransferReport::completion_rate() const {
  return mean_of(rows, [](const TransferRow& r) { return std::optional<double>(r.completed ? 1.0 : 0.0); });
}

double TransferReport::mean_ref_attn_entropy() const {
  return mean_of(rows, [](const TransferRow& r) { return r.ref_attn_entropy; });
}

double TransferReport::mean_distractor_gap() const {
  return mean_of(rows, [](const TransferRow& r) -> std::optional<double> {
    if (!r.distractor_pearson) return std::nullopt;
    return r.duration_pearson - *r.distractor_pearson;
  });
}

json TransferReport::to_json() const {
  json j;
  j["variant"] = variant;
  j["experiment"] = experiment;
  json rs = json::array();
  for (const auto& r : rows) rs.push_back(row_json(r));
  j["aggregates"] = aggregate_rows(rs);
  j["rows"] = std::move(rs);
  return j;
}

double aggregate_discrepancy(const json& report) {
  const json fresh = aggregate_rows(report.at("rows"));
  const json& stored = report.at("aggregates");
  double worst = 0;
  for (const auto& [group, block] : fresh.items()) {
    if (!stored.contains(group)) return std::numeric_limits<double>::infinity();
    for (const auto& [metric, stats] : block.items()) {
      if (!stored.at(group).contains(metric)) return std::numeric_limits<double>::infinity();
      const auto& s = stored.at(group).at(metric);
      worst = std::max(worst, std::abs(s.at("mean").get<double>() - stats.at("mean").get<double>()));
      worst = std::max(worst, std::abs(s.at("ci95").get<double>() - stats.at("ci95").get<double>()));
      if (s.at("n") != stats.at("n")) return std::numeric_limits<double>::infinity();
    }
  }
  return worst;
}

// ----------------------------------------------------------- experiments ----

std::vector<std::vector<UtteranceRecord>> test_groups(const corpus::Corpus& corpus, std::size_t min_groups,
                                                      std::uint64_t seed) {
  std::vector<std::vector<UtteranceRecord>> groups;
  for (const auto& g : corpus.parallel_groups(corpus::Split::Test)) {
    if (g.size() != kNumEmotions) continue;
    std::vector<UtteranceRecord> copy;
    for (const auto* r : g) copy.push_back(*r);
    groups.push_back(std::move(copy));
  }
  if (groups.size() < min_groups) {
    auto extra = corpus::render_heldout_groups(corpus.inventory, min_groups - groups.size(), seed);
    for (auto& g : extra) groups.push_back(std::move(g));
  }
  return groups;
}

namespace {

std::pair<TransferRow, ProsodyMeasure> transfer_impl(model::Model<float>& m, const EmotionProbe& probe,
                                                     const corpus::Inventory& inv,
                                                     const std::vector<std::size_t>& ids,
                                                     const UtteranceRecord& local_ref,
                                                     const UtteranceRecord& global_ref,
                                                     const TransferOptions& opts) {
  if (ids != local_ref.text) {
    throw ContentMismatchError("input text does not match the text of local reference " + local_ref.id);
  }
  const auto local = local_ref.features.channel_major<float>();
  const ad::Tensor<float> global =
      &global_ref == &local_ref ? ad::Tensor<float>() : global_ref.features.channel_major<float>();
  auto out = m.synthesize(ids, local, global, model::GseSource::Reference, {}, opts.max_steps);

  TransferRow row;
  row.id = local_ref.id;
  row.global_ref = global_ref.id;
  row.emotion = global_ref.emotion;
  row.local_emotion = local_ref.emotion;
  const auto& frames = out.decoded.frames;
  const auto features = FeatureMatrix::from_time_major(frames, frames.dim(0));
  row.output_frames = features.frames;
  row.ref_frames = local_ref.features.frames;
  row.completed = !out.decoded.incomplete;
  row.probe_prediction = probe.predict(features);
  row.global_probe_match = row.probe_prediction == global_ref.emotion;
  auto prosody = measure_local_prosody(features, local_ref, inv, row.probe_prediction);
  row.duration_pearson = prosody.duration_pearson;
  row.pause_f1 = prosody.pause_f1;
  row.degenerate = prosody.degenerate;
  if (out.ref_attn.weights.defined()) {
    row.ref_attn_entropy = model::attention_entropy(out.ref_attn.weights);
    row.ref_attn_coverage = model::attention_coverage(out.ref_attn.weights);
    row.key_max_profile = model::key_max_profile(out.ref_attn.weights);
    row.t_l = out.ref_attn.weights.dim(1);
  }
  return {std::move(row), std::move(prosody)};
}

}  // namespace

TransferRow transfer_one(model::Model<float>& m, const EmotionProbe& probe, const corpus::Inventory& inv,
                         const std::vector<std::size_t>& ids, const UtteranceRecord& local_ref,
                         const UtteranceRecord& global_ref, const TransferOptions& opts) {
  return transfer_impl(m, probe, inv, ids, local_ref, global_ref, opts).first;
}

TransferReport run_parallel_transfer(model::Model<float>& m, const EmotionProbe& probe,
                                     const corpus::Inventory& inv,
                                     const std::vector<std::vector<UtteranceRecord>>& groups,
                                     const TransferOptions& opts) {
  TransferReport report;
  report.variant = model::variant_name(m.config().variant);
  report.experiment = "parallel";
  for (const auto& group : groups) {
    for (const auto& rec : group) report.rows.push_back(transfer_one(m, probe, inv, rec.text, rec, rec, opts));
  }
  return report;
}

int multi_reference_global_emotion(int local, std::size_t g) {
  return static_cast<int>((static_cast<std::size_t>(local) + 1 + g % 6) % kNumEmotions);
}

TransferReport run_multi_reference(model::Model<float>& m, const EmotionProbe& probe,
                                   const corpus::Inventory& inv,
                                   const std::vector<std::vector<UtteranceRecord>>& groups,
                                   std::size_t distractors, std::uint64_t seed, const TransferOptions& opts) {
  if (groups.empty()) throw ad::EmptyInputError("multi-reference: no test groups");
  TransferReport report;
  report.variant = model::variant_name(m.config().variant);
  report.experiment = "multi-reference";
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto& donor = groups[(g + 1) % groups.size()];
    for (const auto& rec : groups[g]) {
      const int a = multi_reference_global_emotion(rec.emotion, g);
      const auto it = std::find_if(donor.begin(), donor.end(), [&](const auto& r) { return r.emotion == a; });
      if (it == donor.end()) throw ad::ContractError("multi-reference: group lacks emotion " + std::to_string(a));
      auto [row, aligned] = transfer_impl(m, probe, inv, rec.text, rec, *it, opts);
      if (distractors > 0) {
        double sum = 0;
        const auto& profile = inv.profiles[static_cast<std::size_t>(rec.emotion)];
        for (std::size_t k = 0; k < distractors; ++k) {
          const auto plan = corpus::plan_prosody(
              rec.text, profile, inv, corpus::derive_seed(seed, "distractor:" + rec.id + ":" + std::to_string(k)));
          auto scored = aligned;
          score_prosody(scored, plan.durations, plan.pauses);
          sum += scored.duration_pearson;
        }
        row.distractor_pearson = sum / static_cast<double>(distractors);
      }
      report.rows.push_back(std::move(row));
    }
  }
  return report;
}

json GranularityReport::to_json() const {
  return {{"proposed", {{"completion_rate", proposed_completion}, {"ref_attn_entropy", proposed_entropy},
                        {"ref_attn_coverage", proposed_coverage}}},
          {"base-fs", {{"completion_rate", fs_completion}, {"ref_attn_entropy", fs_entropy},
                       {"ref_attn_coverage", fs_coverage}}}};
}

GranularityReport compare_granularity(const TransferReport& proposed, const TransferReport& base_fs) {
  GranularityReport g;
  g.proposed_completion = proposed.completion_rate();
  g.fs_completion = base_fs.completion_rate();
  g.proposed_entropy = proposed.mean_ref_attn_entropy();
  g.fs_entropy = base_fs.mean_ref_attn_entropy();
  g.proposed_coverage = mean_of(proposed.rows, [](const TransferRow& r) { return r.ref_attn_coverage; });
  g.fs_coverage = mean_of(base_fs.rows, [](const TransferRow& r) { return r.ref_attn_coverage; });
  return g;
}

}  // namespace mstts::eval

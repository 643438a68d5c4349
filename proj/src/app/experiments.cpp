#include "mstts/app/experiments.h"

#include <cmath>

namespace mstts::app {

using json = nlohmann::json;
using model::Variant;

VariantEvaluation evaluate_model(model::Model<float>& m, const eval::EmotionProbe& probe,
                                 const corpus::Inventory& inv,
                                 const std::vector<std::vector<corpus::UtteranceRecord>>& groups,
                                 const EvalConfig& cfg) {
  eval::TransferOptions opts;
  opts.max_steps = cfg.max_steps;
  VariantEvaluation out;
  out.variant = m.config().variant;
  out.stage = m.stage();
  out.parallel = eval::run_parallel_transfer(m, probe, inv, groups, opts);
  if (m.config().has_global() && m.config().has_local()) {
    out.multi_reference = eval::run_multi_reference(m, probe, inv, groups, cfg.distractors, cfg.seed, opts);
  }
  return out;
}

std::vector<Trend> compute_trends(const std::map<Variant, VariantEvaluation>& results) {
  std::vector<Trend> trends;
  auto find = [&](Variant v) -> const VariantEvaluation* {
    auto it = results.find(v);
    return it == results.end() ? nullptr : &it->second;
  };
  const auto* prop = find(Variant::Proposed);
  const auto* g = find(Variant::BaseG);
  const auto* l = find(Variant::BaseL);
  const auto* fs = find(Variant::BaseFS);
  auto add = [&](std::string name, std::string description, double value, double threshold, bool passed) {
    trends.push_back({std::move(name), std::move(description), value, threshold, passed});
  };
  if (prop && l) {
    const double gap = 100.0 * (prop->parallel.global_match_rate() - l->parallel.global_match_rate());
    add("global_match_vs_base_l", "proposed minus base-l global probe match rate, points", gap, 10.0,
        gap >= 10.0);
  }
  if (prop && g) {
    const double gap = prop->parallel.mean_duration_pearson() - g->parallel.mean_duration_pearson();
    add("duration_vs_base_g", "proposed minus base-g mean duration correlation", gap, 0.10, gap >= 0.10);
    const double parity = 100.0 * std::abs(prop->parallel.global_match_rate() - g->parallel.global_match_rate());
    add("global_parity_with_base_g", "absolute proposed vs base-g global match gap, points", parity, 5.0,
        parity <= 5.0);
  }
  if (prop && fs) {
    const double pc = prop->parallel.completion_rate(), fc = fs->parallel.completion_rate();
    add("completion_base_fs", "base-fs completion rate minus proposed (must not exceed 0)", fc - pc, 0.0,
        fc <= pc);
    const double pe = prop->parallel.mean_ref_attn_entropy(), fe = fs->parallel.mean_ref_attn_entropy();
    add("entropy_base_fs", "base-fs minus proposed mean reference-attention entropy (must exceed 0)", fe - pe,
        0.0, std::isfinite(fe - pe) && fe > pe);
  }
  if (prop && prop->multi_reference) {
    const auto& mr = *prop->multi_reference;
    const double rate = mr.global_match_rate();
    add("multi_reference_global_match", "match rate against the global reference emotion", rate, 3.0 / 7.0,
        rate > 3.0 / 7.0);
    const double gap = mr.mean_distractor_gap();
    add("multi_reference_local_gap", "duration correlation with the local reference minus with distractors", gap,
        0.15, gap >= 0.15);
  }
  return trends;
}

json to_json(const Trend& t) {
  return {{"name", t.name},
          {"description", t.description},
          {"value", std::isfinite(t.value) ? json(t.value) : json(nullptr)},
          {"threshold", t.threshold},
          {"passed", t.passed}};
}

json to_json(const VariantEvaluation& e) {
  json j = {{"variant", model::variant_name(e.variant)}, {"stage", e.stage}, {"parallel", e.parallel.to_json()}};
  if (e.multi_reference) j["multi_reference"] = e.multi_reference->to_json();
  return j;
}

}  // namespace mstts::app

#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mstts/app/run_config.h"
#include "mstts/eval/evaluation.h"

namespace mstts::app {

/// Results of the evaluation protocol for one trained model.
struct VariantEvaluation {
  model::Variant variant = model::Variant::Proposed;
  int stage = 0;
  eval::TransferReport parallel;
  std::optional<eval::TransferReport> multi_reference;  // variants with both pathways
};

VariantEvaluation evaluate_model(model::Model<float>& m, const eval::EmotionProbe& probe,
                                 const corpus::Inventory& inv,
                                 const std::vector<std::vector<corpus::UtteranceRecord>>& groups,
                                 const EvalConfig& cfg);

/// One comparison between variants with its gate.
struct Trend {
  std::string name;
  std::string description;
  double value = 0;
  double threshold = 0;
  bool passed = false;
};

/// The variant comparisons that apply to the evaluated set; comparisons
/// whose variants are missing are skipped.
std::vector<Trend> compute_trends(const std::map<model::Variant, VariantEvaluation>& results);

nlohmann::json to_json(const Trend& t);
nlohmann::json to_json(const VariantEvaluation& e);

}  // namespace mstts::app

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mstts/autodiff/grad_check.h"

namespace mstts::diagnostics {

struct GradCase {
  std::string name;
  std::uint64_t seed = 0;
  ad::GradCheckReport report;
};

struct GradSuiteResult {
  std::vector<GradCase> cases;
  double seconds = 0;

  bool passed() const;
  double max_rel_error() const;
};

/// Central-difference checks of every primitive, every layer, both reference
/// modules, the backbone pieces and the full loss of each variant at tiny
/// widths, `seeds` seeds each. Non-zero initial biases keep gates away from
/// the symmetric point so that every parameter receives a gradient.
GradSuiteResult run_grad_suite(std::size_t seeds = 5);

}  // namespace mstts::diagnostics

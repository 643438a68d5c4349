#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mstts/autodiff/tensor.h"

namespace mstts::ad {

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double threshold = 1e-4;
  // Set when the program produced NaN/Inf; names the offending primitive.
  std::string non_finite_primitive;

  double max_rel_error() const;
  bool passed() const;
  std::string summary() const;
};

struct NamedTensor {
  std::string name;
  Tensor<double> value;
};

/// Central-difference check of a scalar program at f64. `program` must build
/// its graph from the given parameters each time it is called and return a
/// (1) tensor; it must be deterministic. Per element the relative error is
/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-4), so gradients
/// below 1e-4 in magnitude are effectively compared in absolute terms.
GradCheckReport grad_check(const std::function<Tensor<double>()>& program,
                           const std::vector<NamedTensor>& params, double eps = 1e-5,
                           double threshold = 1e-4);

}  // namespace mstts::ad

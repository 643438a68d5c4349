#include "mstts/autodiff/grad_check.h"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace mstts::ad {

double GradCheckReport::max_rel_error() const {
  double worst = 0.0;
  for (const auto& e : entries) worst = std::max(worst, e.max_rel_error);
  return worst;
}

bool GradCheckReport::passed() const {
  return non_finite_primitive.empty() && max_rel_error() < threshold;
}

std::string GradCheckReport::summary() const {
  std::ostringstream os;
  if (!non_finite_primitive.empty()) {
    os << "non-finite value from primitive '" << non_finite_primitive << "'";
    return os.str();
  }
  for (const auto& e : entries) {
    os << e.name << ": max rel err " << e.max_rel_error << " (element " << e.worst_index << ")"
       << (e.max_rel_error < threshold ? "" : "  FAIL") << '\n';
  }
  return os.str();
}

GradCheckReport grad_check(const std::function<Tensor<double>()>& program,
                           const std::vector<NamedTensor>& params, double eps, double threshold) {
  GradCheckReport report;
  report.threshold = threshold;

  std::vector<std::vector<double>> analytic;
  try {
    FiniteCheckScope finite;
    for (const auto& p : params) p.value.impl()->grad.clear();
    Tape<double> tape;
    Tensor<double> loss = program();
    tape.backward(loss);
    for (const auto& p : params) {
      if (p.value.has_grad()) {
        analytic.emplace_back(p.value.grad().begin(), p.value.grad().end());
      } else {
        analytic.emplace_back(p.value.size(), 0.0);
      }
      p.value.impl()->grad.clear();
    }
  } catch (const NumericalError& e) {
    report.non_finite_primitive = e.primitive();
    return report;
  }

  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto data = params[pi].value.impl()->data.data();
    GradCheckEntry entry{params[pi].name, 0.0, 0};
    for (std::size_t i = 0; i < params[pi].value.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + eps;
      const double plus = program().item();
      data[i] = saved - eps;
      const double minus = program().item();
      data[i] = saved;
      const double numeric = (plus - minus) / (2.0 * eps);
      const double a = analytic[pi][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-4});
      const double rel = std::abs(a - numeric) / denom;
      if (rel > entry.max_rel_error || !std::isfinite(rel)) {
        entry.max_rel_error = std::isfinite(rel) ? rel : INFINITY;
        entry.worst_index = i;
      }
    }
    report.entries.push_back(entry);
  }
  return report;
}

}  // namespace mstts::ad

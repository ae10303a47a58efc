#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "qpi/diffnet/tensor.hpp"

namespace qpi::diffnet {

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::string worst_block;
  std::size_t checked = 0;
  std::size_t frozen_checked = 0;
  double max_frozen_gradient = 0.0;  // |analytic| over frozen blocks; must be 0
};

struct GradCheckOptions {
  double step = 1e-5;
  // Denominator floor so entries that are both ~0 compare absolutely.
  double scale_floor = 1e-8;
};

// Objective evaluates the scalar loss for the current parameter values and,
// when `grads` is non-null, fills analytic gradients (one Gradients per
// parameter set, aligned with it).
using Objective = std::function<double(std::vector<Gradients>* grads)>;

// Compares every analytic gradient entry against a central finite difference.
inline GradCheckReport check_gradients(const std::vector<std::vector<Param>*>& sets, const Objective& objective,
                                       const GradCheckOptions& opt = {}) {
  std::vector<Gradients> analytic;
  for (auto* s : sets) analytic.push_back(zero_gradients(*s));
  objective(&analytic);

  GradCheckReport report;
  for (std::size_t si = 0; si < sets.size(); ++si) {
    auto& params = *sets[si];
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
      auto& block = params[pi];
      for (std::size_t j = 0; j < block.value.size(); ++j) {
        const double a = analytic[si][pi].values[j];
        if (block.frozen) {
          ++report.frozen_checked;
          report.max_frozen_gradient = std::max(report.max_frozen_gradient, std::abs(a));
          continue;
        }
        const double saved = block.value.values[j];
        block.value.values[j] = saved + opt.step;
        const double up = objective(nullptr);
        block.value.values[j] = saved - opt.step;
        const double down = objective(nullptr);
        block.value.values[j] = saved;
        const double numeric = (up - down) / (2.0 * opt.step);
        const double denom = std::max({std::abs(a), std::abs(numeric), opt.scale_floor});
        const double rel = std::abs(a - numeric) / denom;
        ++report.checked;
        if (rel > report.max_relative_error) {
          report.max_relative_error = rel;
          report.worst_block = block.name + "[" + std::to_string(j) + "]";
        }
      }
    }
  }
  return report;
}

} // namespace qpi::diffnet

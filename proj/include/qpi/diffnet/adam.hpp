#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "qpi/diffnet/tensor.hpp"

namespace qpi::diffnet {

struct AdamState {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;

  static AdamState for_params(const std::vector<Param>& params, double lr) {
    AdamState s;
    s.learning_rate = lr;
    for (const auto& p : params) {
      s.first_moment.emplace_back(p.value.dims);
      s.second_moment.emplace_back(p.value.dims);
    }
    return s;
  }

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

// One bias-corrected Adam step; each parameter block is updated
// independently, frozen blocks are skipped.
inline void adam_update(AdamState& state, std::vector<Param>& params, const Gradients& grads) {
  if (state.first_moment.size() != params.size() || state.second_moment.size() != params.size() ||
      grads.size() != params.size())
    throw DimensionError("adam_update: parameter, moment and gradient counts differ");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (p.value.dims != grads[i].dims || p.value.dims != state.first_moment[i].dims ||
        p.value.dims != state.second_moment[i].dims)
      throw DimensionError("adam_update: block '" + p.name + "' dims mismatch");
    if (p.frozen) continue;
    auto& m = state.first_moment[i].values;
    auto& v = state.second_moment[i].values;
    const auto& g = grads[i].values;
    for (std::size_t j = 0; j < g.size(); ++j) {
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      p.value.values[j] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
    }
  }
}

} // namespace qpi::diffnet

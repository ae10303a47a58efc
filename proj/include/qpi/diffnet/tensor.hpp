#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "qpi/error.hpp"

namespace qpi::diffnet {

// Dense row-major block of 64-bit scalars. Activations are (C, H, W);
// conv weights are (out, in, kh, kw).
struct Tensor {
  std::vector<int> dims;
  std::vector<double> values;

  Tensor() = default;
  explicit Tensor(std::vector<int> d, double fill = 0.0) : dims(std::move(d)), values(count(dims), fill) {}
  Tensor(std::vector<int> d, std::vector<double> v) : dims(std::move(d)), values(std::move(v)) {
    if (values.size() != count(dims)) throw DimensionError("tensor value count does not match dims");
  }

  static std::size_t count(const std::vector<int>& d) {
    std::size_t n = 1;
    for (int x : d) {
      if (x <= 0) throw DimensionError("tensor dims must be positive");
      n *= static_cast<std::size_t>(x);
    }
    return n;
  }

  std::size_t size() const noexcept { return values.size(); }
  int dim(std::size_t i) const { return dims.at(i); }

  double* data() noexcept { return values.data(); }
  const double* data() const noexcept { return values.data(); }

  void fill(double v) { std::fill(values.begin(), values.end(), v); }

  bool all_finite() const {
    for (double v : values)
      if (!std::isfinite(v)) return false;
    return true;
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

inline std::string dims_string(const std::vector<int>& d) {
  std::string s = "(";
  for (std::size_t i = 0; i < d.size(); ++i) s += (i ? "," : "") + std::to_string(d[i]);
  return s + ")";
}

inline void require_dims(const Tensor& t, const std::vector<int>& expected, const char* what) {
  if (t.dims != expected)
    throw DimensionError(std::string(what) + ": expected dims " + dims_string(expected) + ", got " +
                         dims_string(t.dims));
}

inline void add_into(Tensor& acc, const Tensor& x) {
  if (acc.dims != x.dims) throw DimensionError("add_into: dims differ");
  for (std::size_t i = 0; i < acc.size(); ++i) acc.values[i] += x.values[i];
}

inline void scale(Tensor& t, double s) {
  for (double& v : t.values) v *= s;
}

// Named parameter block. Frozen blocks never receive updates and always
// report zero gradient.
struct Param {
  std::string name;
  Tensor value;
  bool frozen = false;

  friend bool operator==(const Param&, const Param&) = default;
};

using Gradients = std::vector<Tensor>;

inline Gradients zero_gradients(const std::vector<Param>& params) {
  Gradients g;
  g.reserve(params.size());
  for (const auto& p : params) g.emplace_back(p.value.dims);
  return g;
}

inline void accumulate(Gradients& acc, const Gradients& g) {
  if (acc.size() != g.size()) throw DimensionError("gradient set sizes differ");
  for (std::size_t i = 0; i < acc.size(); ++i) add_into(acc[i], g[i]);
}

} // namespace qpi::diffnet

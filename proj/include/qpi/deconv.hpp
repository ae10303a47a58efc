#pragma once

// Classical kernel recovery for known defect positions. Observations are a
// linear function of the kernel patch, so Tikhonov-regularised least squares
// solved by CG on the normal equations gives a non-learned reference.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <string>
#include <vector>

#include "qpi/error.hpp"
#include "qpi/image.hpp"
#include "qpi/simulator.hpp"

namespace qpi {

// Maps a support x support kernel patch (centre support/2) onto one
// height x width observation per activation map; contributions falling
// outside the window are discarded.
struct ForwardOperator {
  int height = kImageSize;
  int width = kImageSize;
  int support = kImageSize;
  std::vector<std::vector<PixelCoord>> maps;

  int center() const { return support / 2; }

  void validate() const {
    if (maps.empty()) throw InvalidArgument("forward operator needs at least one activation map");
    if (support <= 0 || height <= 0 || width <= 0) throw DimensionError("operator dims must be positive");
    for (const auto& m : maps)
      for (const auto& d : m)
        if (d.row < 0 || d.row >= height || d.col < 0 || d.col >= width)
          throw InvalidArgument("defect outside the observation window");
  }
};

inline ForwardOperator make_forward_operator(std::vector<std::vector<PixelCoord>> maps, int support = kImageSize,
                                             int height = kImageSize, int width = kImageSize) {
  ForwardOperator op{height, width, support, std::move(maps)};
  op.validate();
  return op;
}

inline std::vector<Image> apply_forward(const ForwardOperator& op, const Image& patch) {
  if (patch.height() != op.support || patch.width() != op.support)
    throw DimensionError("kernel patch does not match operator support");
  const int c = op.center();
  std::vector<Image> out;
  out.reserve(op.maps.size());
  for (const auto& m : op.maps) {
    Image y(op.height, op.width);
    for (const auto& d : m)
      for (int py = std::max(0, d.row - c); py < std::min(op.height, d.row - c + op.support); ++py)
        for (int px = std::max(0, d.col - c); px < std::min(op.width, d.col - c + op.support); ++px)
          y(py, px) += patch(py - d.row + c, px - d.col + c);
    out.push_back(std::move(y));
  }
  return out;
}

// Cross-correlation of each observation with its activation map, summed.
inline Image apply_adjoint(const ForwardOperator& op, const std::vector<Image>& obs) {
  if (obs.size() != op.maps.size()) throw DimensionError("observation count does not match operator");
  const int c = op.center();
  Image x(op.support, op.support);
  for (std::size_t k = 0; k < obs.size(); ++k) {
    if (obs[k].height() != op.height || obs[k].width() != op.width)
      throw DimensionError("observation dims do not match operator window");
    for (const auto& d : op.maps[k])
      for (int py = std::max(0, d.row - c); py < std::min(op.height, d.row - c + op.support); ++py)
        for (int px = std::max(0, d.col - c); px < std::min(op.width, d.col - c + op.support); ++px)
          x(py - d.row + c, px - d.col + c) += obs[k](py, px);
  }
  return x;
}

struct TikhonovConfig {
  double lambda = 1e-8;
  int max_iterations = 500;
  double tolerance = 1e-10;  // on ||r|| / ||A^T y||

  void validate() const {
    if (!(lambda >= 0.0)) throw ConfigError("lambda must be non-negative");
    if (max_iterations <= 0) throw ConfigError("cg_max_iter must be positive");
    if (!(tolerance > 0.0)) throw ConfigError("cg_tol must be positive");
  }
};

struct CgReport {
  bool converged = false;
  int iterations = 0;
  double relative_residual = 0.0;
  std::vector<double> residual_history;  // ||r_k|| for k = 0..iterations
};

struct DeconvResult {
  Image kernel;
  CgReport report;
};

namespace detail {

inline double dot(const Image& a, const Image& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.storage()[i] * b.storage()[i];
  return s;
}

inline void axpy(double a, const Image& x, Image& y) {
  for (std::size_t i = 0; i < y.size(); ++i) y.storage()[i] += a * x.storage()[i];
}

} // namespace detail

// (L^T L + lambda I) x
inline Image apply_normal(const ForwardOperator& op, const Image& x, double lambda) {
  Image out = apply_adjoint(op, apply_forward(op, x));
  if (lambda != 0.0) detail::axpy(lambda, x, out);
  return out;
}

// Minimises sum_k ||L_k A - Y_k||^2 + lambda ||A||^2 with CG on the normal
// equations, starting from zero. Non-convergence is reported, not thrown.
inline DeconvResult solve_tikhonov_cg(const ForwardOperator& op, const std::vector<Image>& obs,
                                      const TikhonovConfig& cfg) {
  op.validate();
  cfg.validate();
  const Image b = apply_adjoint(op, obs);
  DeconvResult res{Image(op.support, op.support), {}};
  Image r = b;
  Image p = r;
  double rr = detail::dot(r, r);
  const double bnorm = std::sqrt(rr);
  res.report.residual_history.push_back(bnorm);
  if (bnorm == 0.0) {
    res.report.converged = true;
    return res;
  }
  for (int it = 1; it <= cfg.max_iterations; ++it) {
    const Image ap = apply_normal(op, p, cfg.lambda);
    const double pap = detail::dot(p, ap);
    if (!(pap > 0.0)) break;  // singular direction; lambda > 0 avoids this
    const double step = rr / pap;
    detail::axpy(step, p, res.kernel);
    detail::axpy(-step, ap, r);
    const double rr_new = detail::dot(r, r);
    res.report.iterations = it;
    res.report.residual_history.push_back(std::sqrt(rr_new));
    res.report.relative_residual = std::sqrt(rr_new) / bnorm;
    if (res.report.relative_residual <= cfg.tolerance) {
      res.report.converged = true;
      break;
    }
    const double beta = rr_new / rr;
    rr = rr_new;
    for (std::size_t i = 0; i < p.size(); ++i) p.storage()[i] = r.storage()[i] + beta * p.storage()[i];
  }
  return res;
}

// Centre crop of a larger recovered patch down to the stored 64x64 grid.
inline Image center_crop(const Image& patch, int size = kImageSize) {
  if (patch.height() < size || patch.width() < size) throw DimensionError("patch smaller than crop");
  const int oy = patch.height() / 2 - size / 2, ox = patch.width() / 2 - size / 2;
  Image out(size, size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) out(y, x) = patch(oy + y, ox + x);
  return out;
}

inline std::string format_report(const CgReport& r, const TikhonovConfig& cfg) {
  std::string s;
  s += "converged: " + std::string(r.converged ? "true" : "false") + "\n";
  s += "iterations: " + std::to_string(r.iterations) + "\n";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", r.relative_residual);
  s += "relative_residual: " + std::string(buf) + "\n";
  std::snprintf(buf, sizeof buf, "%.17g", cfg.lambda);
  s += "lambda: " + std::string(buf) + "\n";
  return s;
}

} // namespace qpi

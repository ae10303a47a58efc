#pragma once

// Forward and backward passes for the handful of layer kinds the models use.
// Convolution is cross-correlation, lowered to im2col + GEMM.

#include <cmath>
#include <cstddef>
#include <algorithm>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "qpi/diffnet/tensor.hpp"
#include "qpi/rng.hpp"

namespace qpi::diffnet {

enum class LayerKind { conv2d, upsample2x_nearest, silu };

struct LayerSpec {
  LayerKind kind = LayerKind::silu;
  int kernel = 0;
  int stride = 1;
  int padding = 0;
  int in_channels = 0;
  int out_channels = 0;
  std::size_t weight_index = 0;  // into the owning network's parameter list
  std::size_t bias_index = 0;
};

// Output extent for one spatial axis; floor convention, so 3x3/s2/p1 maps
// 64 -> 32 exactly.
inline int conv_output_extent(int in, int kernel, int stride, int padding) {
  const int span = in + 2 * padding - kernel;
  if (span < 0) throw DimensionError("conv kernel larger than padded input");
  return span / stride + 1;
}

// Saved per-layer state needed by the backward pass.
struct LayerContext {
  std::vector<int> input_dims;
  std::vector<double> saved;  // im2col matrix (conv) or pre-activation input (silu)
};

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline void im2col(const Tensor& x, int k, int s, int p, int ho, int wo, std::vector<double>& col) {
  const int c_in = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t n = static_cast<std::size_t>(ho) * wo;
  col.assign(static_cast<std::size_t>(c_in) * k * k * n, 0.0);  // reuses capacity
  for (int c = 0; c < c_in; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        double* row = col.data() + (static_cast<std::size_t>((c * k + ky) * k + kx)) * n;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * s - p + ky;
          if (iy < 0 || iy >= h) continue;
          const double* src = x.data() + (static_cast<std::size_t>(c) * h + iy) * w;
          double* dst = row + static_cast<std::size_t>(oy) * wo;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * s - p + kx;
            if (ix >= 0 && ix < w) dst[ox] = src[ix];
          }
        }
      }
}

inline void col2im(const double* col, int c_in, int h, int w, int k, int s, int p, int ho, int wo, Tensor& dx) {
  const std::size_t n = static_cast<std::size_t>(ho) * wo;
  for (int c = 0; c < c_in; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const double* row = col + (static_cast<std::size_t>((c * k + ky) * k + kx)) * n;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * s - p + ky;
          if (iy < 0 || iy >= h) continue;
          double* dst = dx.data() + (static_cast<std::size_t>(c) * h + iy) * w;
          const double* src = row + static_cast<std::size_t>(oy) * wo;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * s - p + kx;
            if (ix >= 0 && ix < w) dst[ix] += src[ox];
          }
        }
      }
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

} // namespace detail

inline Tensor conv2d_forward(const LayerSpec& spec, const Tensor& weight, const Tensor& bias, const Tensor& x,
                             LayerContext* ctx) {
  if (x.dims.size() != 3 || x.dim(0) != spec.in_channels)
    throw DimensionError("conv2d: input " + dims_string(x.dims) + " does not have " +
                         std::to_string(spec.in_channels) + " channels");
  require_dims(weight, {spec.out_channels, spec.in_channels, spec.kernel, spec.kernel}, "conv2d weight");
  require_dims(bias, {spec.out_channels}, "conv2d bias");
  const int ho = conv_output_extent(x.dim(1), spec.kernel, spec.stride, spec.padding);
  const int wo = conv_output_extent(x.dim(2), spec.kernel, spec.stride, spec.padding);
  const int kk = spec.in_channels * spec.kernel * spec.kernel;
  const int n = ho * wo;

  std::vector<double> local;
  std::vector<double>& col = ctx ? ctx->saved : local;
  detail::im2col(x, spec.kernel, spec.stride, spec.padding, ho, wo, col);

  Tensor out({spec.out_channels, ho, wo});
  Eigen::Map<const detail::RowMat> wmat(weight.data(), spec.out_channels, kk);
  Eigen::Map<const detail::RowMat> cmat(col.data(), kk, n);
  Eigen::Map<detail::RowMat> omat(out.data(), spec.out_channels, n);
  omat.noalias() = wmat * cmat;
  for (int o = 0; o < spec.out_channels; ++o) omat.row(o).array() += bias.values[static_cast<std::size_t>(o)];
  if (ctx) ctx->input_dims = x.dims;
  return out;
}

// Accumulates weight/bias gradients into dw/db (skipped when null) and
// returns the input gradient when requested.
inline Tensor conv2d_backward(const LayerSpec& spec, const Tensor& weight, const LayerContext& ctx,
                              const Tensor& grad_out, Tensor* dw, Tensor* db, bool need_input_grad) {
  const int h = ctx.input_dims.at(1), w = ctx.input_dims.at(2);
  const int ho = conv_output_extent(h, spec.kernel, spec.stride, spec.padding);
  const int wo = conv_output_extent(w, spec.kernel, spec.stride, spec.padding);
  require_dims(grad_out, {spec.out_channels, ho, wo}, "conv2d grad_out");
  const int kk = spec.in_channels * spec.kernel * spec.kernel;
  const int n = ho * wo;
  Eigen::Map<const detail::RowMat> gmat(grad_out.data(), spec.out_channels, n);
  Eigen::Map<const detail::RowMat> cmat(ctx.saved.data(), kk, n);
  if (dw) {
    Eigen::Map<detail::RowMat> dwmat(dw->data(), spec.out_channels, kk);
    dwmat.noalias() += gmat * cmat.transpose();
  }
  // Plain loop: Eigen's vectorised sum peels by pointer alignment, which
  // would make the result depend on where the buffer was allocated.
  if (db)
    for (int o = 0; o < spec.out_channels; ++o) {
      const double* g = grad_out.data() + static_cast<std::size_t>(o) * n;
      double s = 0.0;
      for (int i = 0; i < n; ++i) s += g[i];
      db->values[static_cast<std::size_t>(o)] += s;
    }
  if (!need_input_grad) return {};
  Eigen::Map<const detail::RowMat> wmat(weight.data(), spec.out_channels, kk);
  thread_local std::vector<double> scratch;
  scratch.resize(static_cast<std::size_t>(kk) * static_cast<std::size_t>(n));
  Eigen::Map<detail::RowMat> dcol(scratch.data(), kk, n);
  dcol.noalias() = wmat.transpose() * gmat;
  Tensor dx(ctx.input_dims);
  detail::col2im(scratch.data(), spec.in_channels, h, w, spec.kernel, spec.stride, spec.padding, ho, wo, dx);
  return dx;
}

inline double silu(double x) { return x * detail::sigmoid(x); }

inline double silu_derivative(double x) {
  const double s = detail::sigmoid(x);
  return s + x * s * (1.0 - s);
}

inline Tensor silu_forward(const Tensor& x, LayerContext* ctx) {
  Tensor out(x.dims);
  for (std::size_t i = 0; i < x.size(); ++i) out.values[i] = silu(x.values[i]);
  if (ctx) {
    ctx->input_dims = x.dims;
    ctx->saved = x.values;
  }
  return out;
}

inline Tensor silu_backward(const LayerContext& ctx, const Tensor& grad_out) {
  require_dims(grad_out, ctx.input_dims, "silu grad_out");
  Tensor dx(ctx.input_dims);
  for (std::size_t i = 0; i < dx.size(); ++i) dx.values[i] = grad_out.values[i] * silu_derivative(ctx.saved[i]);
  return dx;
}

inline Tensor upsample2x_forward(const Tensor& x, LayerContext* ctx) {
  if (x.dims.size() != 3) throw DimensionError("upsample2x expects (C, H, W)");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor out({c, 2 * h, 2 * w});
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < 2 * h; ++y) {
      const double* src = x.data() + (static_cast<std::size_t>(ch) * h + y / 2) * w;
      double* dst = out.data() + (static_cast<std::size_t>(ch) * 2 * h + y) * 2 * w;
      for (int xo = 0; xo < 2 * w; ++xo) dst[xo] = src[xo / 2];
    }
  if (ctx) ctx->input_dims = x.dims;
  return out;
}

inline Tensor upsample2x_backward(const LayerContext& ctx, const Tensor& grad_out) {
  const int c = ctx.input_dims.at(0), h = ctx.input_dims.at(1), w = ctx.input_dims.at(2);
  require_dims(grad_out, {c, 2 * h, 2 * w}, "upsample2x grad_out");
  Tensor dx(ctx.input_dims);
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < 2 * h; ++y) {
      const double* src = grad_out.data() + (static_cast<std::size_t>(ch) * 2 * h + y) * 2 * w;
      double* dst = dx.data() + (static_cast<std::size_t>(ch) * h + y / 2) * w;
      for (int xo = 0; xo < 2 * w; ++xo) dst[xo / 2] += src[xo];
    }
  return dx;
}

// Splits a (2L, H, W) block into mean (first L channels) and logvar.
inline std::pair<Tensor, Tensor> split_latent(const Tensor& x) {
  if (x.dims.size() != 3 || x.dim(0) % 2 != 0) throw DimensionError("split_latent expects an even channel count");
  const int half = x.dim(0) / 2;
  const std::size_t n = x.size() / 2;
  Tensor mean({half, x.dim(1), x.dim(2)}), logvar({half, x.dim(1), x.dim(2)});
  std::copy(x.values.begin(), x.values.begin() + static_cast<std::ptrdiff_t>(n), mean.values.begin());
  std::copy(x.values.begin() + static_cast<std::ptrdiff_t>(n), x.values.end(), logvar.values.begin());
  return {std::move(mean), std::move(logvar)};
}

inline Tensor merge_latent(const Tensor& dmean, const Tensor& dlogvar) {
  if (dmean.dims != dlogvar.dims) throw DimensionError("merge_latent: dims differ");
  Tensor out({2 * dmean.dim(0), dmean.dim(1), dmean.dim(2)});
  std::copy(dmean.values.begin(), dmean.values.end(), out.values.begin());
  std::copy(dlogvar.values.begin(), dlogvar.values.end(),
            out.values.begin() + static_cast<std::ptrdiff_t>(dmean.size()));
  return out;
}

struct Reparameterized {
  Tensor z;
  Tensor noise;
};

// z = mean + exp(logvar / 2) * eps, eps ~ N(0, 1) from the given stream.
inline Reparameterized reparameterize(const Tensor& mean, const Tensor& logvar, Rng& rng) {
  if (mean.dims != logvar.dims) throw DimensionError("reparameterize: dims differ");
  Reparameterized r{Tensor(mean.dims), Tensor(mean.dims)};
  for (std::size_t i = 0; i < mean.size(); ++i) {
    r.noise.values[i] = rng.normal();
    r.z.values[i] = mean.values[i] + std::exp(0.5 * logvar.values[i]) * r.noise.values[i];
  }
  return r;
}

// Gradients of z w.r.t. (mean, logvar) given dL/dz.
inline std::pair<Tensor, Tensor> reparameterize_backward(const Tensor& logvar, const Tensor& noise,
                                                         const Tensor& grad_z) {
  Tensor dmean = grad_z;
  Tensor dlogvar(logvar.dims);
  for (std::size_t i = 0; i < logvar.size(); ++i)
    dlogvar.values[i] = grad_z.values[i] * 0.5 * std::exp(0.5 * logvar.values[i]) * noise.values[i];
  return {std::move(dmean), std::move(dlogvar)};
}

} // namespace qpi::diffnet

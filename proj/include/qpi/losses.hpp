#pragma once

// Reconstruction, symmetry, KL and latent-alignment losses, each with an
// analytic gradient variant used by the training loops.

#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <vector>

#include "qpi/diffnet/tensor.hpp"
#include "qpi/error.hpp"
#include "qpi/image.hpp"

namespace qpi {

using diffnet::Tensor;

inline constexpr int kLatentChannels = 4;
inline constexpr int kLatentSide = 8;
inline constexpr int kLatentSize = kLatentChannels * kLatentSide * kLatentSide;

struct LatentCode {
  Tensor mean;
  std::optional<Tensor> logvar;
};

// ---------------------------------------------------------------------------
// Reconstruction loss: sqrt(sum of squares) / (H * L), as written, not the
// conventional mean of squares.

inline double loss_mse(const Image& recon, const Image& target) {
  require_same_shape(recon, target, "loss_mse");
  double ss = 0.0;
  for (std::size_t i = 0; i < recon.size(); ++i) {
    const double d = recon.storage()[i] - target.storage()[i];
    ss += d * d;
  }
  return std::sqrt(ss) / static_cast<double>(recon.size());
}

// Returns the loss and writes d loss / d recon into grad (same shape).
inline double loss_mse_grad(const Image& recon, const Image& target, Image& grad) {
  const double value = loss_mse(recon, target);
  grad = Image(recon.height(), recon.width());
  const double n = static_cast<double>(recon.size());
  const double norm = value * n;
  if (norm == 0.0) return value;
  for (std::size_t i = 0; i < recon.size(); ++i)
    grad.storage()[i] = (recon.storage()[i] - target.storage()[i]) / (n * norm);
  return value;
}

// ---------------------------------------------------------------------------
// Rotation about pixel (32, 32) followed by a 43x43 crop (rows/cols 11..53).

inline constexpr int kCropStart = 11;
inline constexpr int kCropSize = 43;

struct RotationCropSpec {
  int quarter_turns = 0;  // exact path when the angle is a multiple of 90 degrees
  double angle = 0.0;     // radians, counter-clockwise
  int crop_start = kCropStart;
  int crop_size = kCropSize;

  static RotationCropSpec degrees(int deg) {
    RotationCropSpec s;
    s.angle = deg * std::numbers::pi / 180.0;
    s.quarter_turns = deg % 90 == 0 ? ((deg / 90) % 4 + 4) % 4 : -1;
    return s;
  }
};

inline int rotation_degrees_for_fold(int fold_count, int fold_for_total_symmetry = 4) {
  switch (fold_count) {
  case 0: return rotation_degrees_for_fold(fold_for_total_symmetry, 4);
  case 2: return 180;
  case 3: return 120;
  case 4: return 90;
  case 6: return 60;
  default: throw InvalidArgument("no symmetry rotation for fold count " + std::to_string(fold_count));
  }
}

inline RotationCropSpec rotation_for_fold(int fold_count, int fold_for_total_symmetry = 4) {
  if (fold_for_total_symmetry == 0) throw InvalidArgument("sym_fold_for_A0 must be one of 2,3,4,6");
  return RotationCropSpec::degrees(rotation_degrees_for_fold(fold_count, fold_for_total_symmetry));
}

// Sparse bilinear stencil: output pixel o reads sum_k weight_k * in[index_k].
struct RotationStencil {
  struct Tap {
    int index;
    double weight;
  };
  int out_height = 0;
  int out_width = 0;
  std::vector<std::array<Tap, 4>> taps;
  std::vector<int> tap_count;
};

// out(y, x) = in(src) with src = c + R(angle)^T (p - c); sources outside the
// input contribute zero. Multiples of 90 degrees use exact index maps.
inline RotationStencil make_rotation_stencil(const RotationCropSpec& spec, int height, int width, int row0,
                                             int col0, int out_h, int out_w) {
  const double c = kImageCenter;
  double cs, sn;
  switch (spec.quarter_turns) {
  case 0: cs = 1, sn = 0; break;
  case 1: cs = 0, sn = 1; break;
  case 2: cs = -1, sn = 0; break;
  case 3: cs = 0, sn = -1; break;
  default: cs = std::cos(spec.angle), sn = std::sin(spec.angle);
  }
  RotationStencil st;
  st.out_height = out_h;
  st.out_width = out_w;
  st.taps.resize(static_cast<std::size_t>(out_h) * out_w);
  st.tap_count.assign(st.taps.size(), 0);
  for (int oy = 0; oy < out_h; ++oy)
    for (int ox = 0; ox < out_w; ++ox) {
      const double py = row0 + oy - c, px = col0 + ox - c;
      const double sx = c + cs * px + sn * py;
      const double sy = c - sn * px + cs * py;
      const double fx = std::floor(sx), fy = std::floor(sy);
      const double ax = sx - fx, ay = sy - fy;
      const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
      const std::size_t o = static_cast<std::size_t>(oy) * out_w + ox;
      auto add = [&](int yy, int xx, double w) {
        if (w == 0.0 || yy < 0 || yy >= height || xx < 0 || xx >= width) return;
        st.taps[o][static_cast<std::size_t>(st.tap_count[o]++)] = {yy * width + xx, w};
      };
      add(y0, x0, (1 - ay) * (1 - ax));
      add(y0, x0 + 1, (1 - ay) * ax);
      add(y0 + 1, x0, ay * (1 - ax));
      add(y0 + 1, x0 + 1, ay * ax);
    }
  return st;
}

inline Image apply_stencil(const RotationStencil& st, const Image& in) {
  Image out(st.out_height, st.out_width);
  for (std::size_t o = 0; o < st.taps.size(); ++o) {
    double v = 0.0;
    for (int k = 0; k < st.tap_count[o]; ++k) v += st.taps[o][static_cast<std::size_t>(k)].weight * in.storage()[static_cast<std::size_t>(st.taps[o][static_cast<std::size_t>(k)].index)];
    out.storage()[o] = v;
  }
  return out;
}

inline void apply_stencil_adjoint(const RotationStencil& st, const Image& grad_out, Image& grad_in) {
  for (std::size_t o = 0; o < st.taps.size(); ++o)
    for (int k = 0; k < st.tap_count[o]; ++k) {
      const auto& t = st.taps[o][static_cast<std::size_t>(k)];
      grad_in.storage()[static_cast<std::size_t>(t.index)] += t.weight * grad_out.storage()[o];
    }
}

inline void require_full_grid(const Image& img, const char* what) {
  if (img.height() != kImageSize || img.width() != kImageSize)
    throw DimensionError(std::string(what) + ": expected a 64x64 image");
}

// Full 64x64 rotation (no crop).
inline Image rotate_image(const Image& img, const RotationCropSpec& spec) {
  require_full_grid(img, "rotate_image");
  return apply_stencil(make_rotation_stencil(spec, kImageSize, kImageSize, 0, 0, kImageSize, kImageSize), img);
}

inline Image crop_window(const Image& img, const RotationCropSpec& spec = {}) {
  Image out(spec.crop_size, spec.crop_size);
  for (int y = 0; y < spec.crop_size; ++y)
    for (int x = 0; x < spec.crop_size; ++x) out(y, x) = img(spec.crop_start + y, spec.crop_start + x);
  return out;
}

inline RotationStencil crop_stencil(const RotationCropSpec& spec) {
  return make_rotation_stencil(spec, kImageSize, kImageSize, spec.crop_start, spec.crop_start, spec.crop_size,
                               spec.crop_size);
}

inline Image rotate_and_crop(const Image& img, const RotationCropSpec& spec) {
  require_full_grid(img, "rotate_and_crop");
  return apply_stencil(crop_stencil(spec), img);
}

// ---------------------------------------------------------------------------
// Symmetry loss: the reconstruction is rotated by the fold angle and compared
// with the (unrotated) target inside the crop window.

inline double loss_sym_grad(const Image& recon, const Image& target, int fold_count, Image* grad,
                            int fold_for_total_symmetry = 4) {
  require_same_shape(recon, target, "loss_sym");
  require_full_grid(recon, "loss_sym");
  const auto spec = rotation_for_fold(fold_count, fold_for_total_symmetry);
  const auto st = crop_stencil(spec);
  const Image rotated = apply_stencil(st, recon);
  const Image tcrop = crop_window(target, spec);
  Image resid(spec.crop_size, spec.crop_size);
  double ss = 0.0;
  for (std::size_t i = 0; i < resid.size(); ++i) {
    resid.storage()[i] = rotated.storage()[i] - tcrop.storage()[i];
    ss += resid.storage()[i] * resid.storage()[i];
  }
  const double n = static_cast<double>(resid.size());
  const double norm = std::sqrt(ss);
  if (grad) {
    *grad = Image(recon.height(), recon.width());
    if (norm > 0.0) {
      for (double& r : resid.storage()) r /= n * norm;
      apply_stencil_adjoint(st, resid, *grad);
    }
  }
  return norm / n;
}

inline double loss_sym(const Image& recon, const Image& target, int fold_count, int fold_for_total_symmetry = 4) {
  return loss_sym_grad(recon, target, fold_count, nullptr, fold_for_total_symmetry);
}

// ---------------------------------------------------------------------------

inline void require_latent(const Tensor& t, const char* what) {
  diffnet::require_dims(t, {kLatentChannels, kLatentSide, kLatentSide}, what);
}

// KL(N(mean, exp(logvar)) || N(0, 1)) summed over latent entries.
inline double kl_divergence(const Tensor& mean, const Tensor& logvar, Tensor* dmean = nullptr,
                            Tensor* dlogvar = nullptr) {
  if (mean.dims != logvar.dims) throw DimensionError("kl_divergence: dims differ");
  double kl = 0.0;
  if (dmean) *dmean = Tensor(mean.dims);
  if (dlogvar) *dlogvar = Tensor(mean.dims);
  for (std::size_t i = 0; i < mean.size(); ++i) {
    const double m = mean.values[i], lv = logvar.values[i];
    kl += 0.5 * (m * m + std::exp(lv) - 1.0 - lv);
    if (dmean) dmean->values[i] = m;
    if (dlogvar) dlogvar->values[i] = 0.5 * (std::exp(lv) - 1.0);
  }
  return kl;
}

struct Step1Weights {
  double alpha = 0.75;
  double beta = 0.0;
  int fold_for_total_symmetry = 4;
};

struct Step1LossParts {
  double total = 0.0;
  double mse = 0.0;
  double sym = 0.0;
  double kl = 0.0;
};

inline Step1LossParts combine_step1(double mse, double sym, double kl, const Step1Weights& w) {
  if (w.alpha < 0.0 || w.beta < 0.0) throw InvalidArgument("alpha and beta must be non-negative");
  Step1LossParts p{mse, mse, sym, kl};
  if (w.alpha != 0.0) p.total += w.alpha * sym;
  if (w.beta != 0.0) p.total += w.beta * kl;
  return p;
}

// mse + alpha * sym + beta * KL; the KL term needs a logvar block when beta > 0.
inline Step1LossParts loss_step1(const Image& recon, const Image& target, int fold_count, const Step1Weights& w,
                                 const LatentCode& latent) {
  const double mse = loss_mse(recon, target);
  const double sym = w.alpha != 0.0 ? loss_sym(recon, target, fold_count, w.fold_for_total_symmetry) : 0.0;
  double kl = 0.0;
  if (w.beta != 0.0) {
    if (!latent.logvar) throw InvalidArgument("loss_step1: KL term requires a logvar block");
    kl = kl_divergence(latent.mean, *latent.logvar);
  }
  return combine_step1(mse, sym, kl, w);
}

// ---------------------------------------------------------------------------
// Latent alignment: Euclidean distance between mean blocks.

inline double loss_align(const Tensor& h_y, const Tensor& h_a, Tensor* grad_hy = nullptr) {
  require_latent(h_y, "loss_align h_y");
  require_latent(h_a, "loss_align h_A");
  double ss = 0.0;
  for (std::size_t i = 0; i < h_y.size(); ++i) {
    const double d = h_y.values[i] - h_a.values[i];
    ss += d * d;
  }
  const double dist = std::sqrt(ss);
  if (grad_hy) {
    *grad_hy = Tensor(h_y.dims);
    if (dist > 0.0)
      for (std::size_t i = 0; i < h_y.size(); ++i) grad_hy->values[i] = (h_y.values[i] - h_a.values[i]) / dist;
  }
  return dist;
}

inline double loss_align(const LatentCode& h_y, const LatentCode& h_a) { return loss_align(h_y.mean, h_a.mean); }

} // namespace qpi

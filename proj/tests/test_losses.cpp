#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "qpi/losses.hpp"
#include "qpi/simulator.hpp"
#include "test_support.hpp"

using namespace qpi;
using qpi::testing::image_from;
using qpi::testing::pattern_a;
using qpi::testing::pattern_b;

namespace {

Image pat_a() { return image_from(pattern_a); }
Image pat_b() { return image_from(pattern_b); }

// Symmetric under 90-degree rotation about (32, 32).
Image four_fold_image() {
  return image_from([](int y, int x) {
    const int dy = y - 32, dx = x - 32;
    return std::cos(0.1 * (dy * dy + dx * dx)) + 0.01 * (dx * dx * dy * dy % 7);
  });
}

// Symmetric under 180 degrees only.
Image two_fold_image() {
  return image_from([](int y, int x) {
    const double dy = y - 32, dx = x - 32;
    return std::sin(0.2 * dx) * std::sin(0.15 * dy) + 0.3 * std::cos(0.1 * dx + 0.05 * dy);
  });
}

Tensor latent_fill(double v) { return Tensor({kLatentChannels, kLatentSide, kLatentSide}, v); }

} // namespace

TEST(LossMse, Examples) {
  const Image a = pat_a();
  EXPECT_EQ(loss_mse(a, a), 0.0);
  Image b = a;
  for (double& v : b.storage()) v += 1.0;
  EXPECT_DOUBLE_EQ(loss_mse(b, a), 0.015625);
  EXPECT_NEAR(loss_mse(pat_a(), pat_b()), 0.0095436151724000943, 1e-16);
  EXPECT_THROW(loss_mse(Image(4, 4), Image(4, 5)), DimensionError);
}

TEST(LossMse, GradientMatchesFiniteDifferences) {
  const Image a = pat_a(), b = pat_b();
  Image g;
  loss_mse_grad(a, b, g);
  for (auto [y, x] : {std::pair{3, 4}, {32, 32}, {60, 10}}) {
    Image up = a, down = a;
    up(y, x) += 1e-6;
    down(y, x) -= 1e-6;
    EXPECT_NEAR(g(y, x), (loss_mse(up, b) - loss_mse(down, b)) / 2e-6, 1e-9);
  }
}

TEST(Rotation, ZeroAngleIsPlainCrop) {
  const Image a = pat_a();
  const Image r = rotate_and_crop(a, RotationCropSpec::degrees(0));
  ASSERT_EQ(r.height(), 43);
  for (int y = 0; y < 43; ++y)
    for (int x = 0; x < 43; ++x) ASSERT_EQ(r(y, x), a(11 + y, 11 + x));
}

TEST(Rotation, QuarterTurnIsIndexPermutation) {
  const Image a = pat_a();
  const Image r = rotate_image(a, RotationCropSpec::degrees(90));
  // out(y, x) = in(32 + (x - 32), 32 - (y - 32)) read as (row, col) = (c - (x - c)... )
  for (int y = 1; y < 64; ++y)
    for (int x = 1; x < 64; ++x) ASSERT_EQ(r(y, x), a(64 - x, y)) << y << "," << x;
  // four quarter turns is the identity inside the crop
  Image r4 = a;
  for (int i = 0; i < 4; ++i) r4 = rotate_image(r4, RotationCropSpec::degrees(90));
  EXPECT_EQ(crop_window(r4), crop_window(a));
}

TEST(Rotation, SixtyDegreesPinned) {
  const Image r = rotate_and_crop(pat_a(), RotationCropSpec::degrees(60));
  EXPECT_NEAR(r(0, 0), 0.29751000932657484, 1e-14);
  EXPECT_NEAR(r(21, 21), 0.86127677036972305, 1e-14);
  EXPECT_NEAR(r(5, 30), 0.15949656042972812, 1e-14);
  EXPECT_NEAR(qpi::testing::image_sum(r), 915.65443052712919, 1e-10);
}

TEST(Rotation, AdjointIdentity) {
  const auto st = crop_stencil(RotationCropSpec::degrees(60));
  const Image x = pat_a();
  const Image y = image_from(pattern_b, 43, 43);
  const Image ax = apply_stencil(st, x);
  Image aty(64, 64);
  apply_stencil_adjoint(st, y, aty);
  double l = 0, r = 0;
  for (std::size_t i = 0; i < ax.size(); ++i) l += ax.storage()[i] * y.storage()[i];
  for (std::size_t i = 0; i < aty.size(); ++i) r += x.storage()[i] * aty.storage()[i];
  EXPECT_NEAR(l, r, 1e-10 * std::abs(l));
}

TEST(Rotation, FoldAngles) {
  EXPECT_EQ(rotation_degrees_for_fold(2), 180);
  EXPECT_EQ(rotation_degrees_for_fold(3), 120);
  EXPECT_EQ(rotation_degrees_for_fold(4), 90);
  EXPECT_EQ(rotation_degrees_for_fold(6), 60);
  EXPECT_EQ(rotation_degrees_for_fold(0), 90);
  EXPECT_EQ(rotation_degrees_for_fold(0, 6), 60);
  EXPECT_THROW(rotation_degrees_for_fold(5), InvalidArgument);
}

TEST(LossSym, ExactForGridSymmetricImages) {
  const Image f4 = four_fold_image(), f2 = two_fold_image();
  EXPECT_EQ(loss_sym(f4, f4, 4), 0.0);
  EXPECT_EQ(loss_sym(f4, f4, 2), 0.0);
  EXPECT_EQ(loss_sym(f2, f2, 2), 0.0);
  EXPECT_GT(loss_sym(f2, f2, 4), 0.0);
  // recon is a rotated copy of a symmetric target
  const Image rot = rotate_image(f4, RotationCropSpec::degrees(90));
  EXPECT_EQ(loss_sym(rot, f4, 4), 0.0);
}

TEST(LossSym, RasterizedKernelsNearlySymmetric) {
  for (int i = 0; i < 25; ++i) {
    const auto p = sample_kernel_params(123, i, 25);
    const Image k = rasterize_kernel(p);
    const double l = loss_sym(k, k, p.fold_count);
    if (p.fold_count == 2 || p.fold_count == 4)
      EXPECT_EQ(l, 0.0) << i;
    else
      EXPECT_LE(l, 1e-2) << i;
  }
}

TEST(LossSym, PinnedAsymmetricCase) {
  const Image k3 = rasterize_kernel({3, 0.4, 0.55, 1.1, 0.008});
  EXPECT_NEAR(loss_sym(pat_a(), k3, 3), 0.01247446449197352, 1e-15);
}

TEST(LossSym, GradientMatchesFiniteDifferences) {
  const Image a = pat_a(), b = pat_b();
  for (int fold : {3, 4}) {
    Image g;
    loss_sym_grad(a, b, fold, &g);
    for (auto [y, x] : {std::pair{20, 25}, {32, 32}, {45, 40}, {2, 2}}) {
      Image up = a, down = a;
      up(y, x) += 1e-6;
      down(y, x) -= 1e-6;
      EXPECT_NEAR(g(y, x), (loss_sym(up, b, fold) - loss_sym(down, b, fold)) / 2e-6, 1e-9) << fold;
    }
  }
}

TEST(Kl, StandardNormalIsZeroAndGradientsMatch) {
  EXPECT_EQ(kl_divergence(latent_fill(0), latent_fill(0)), 0.0);
  Tensor m = latent_fill(0.3), lv = latent_fill(-0.5);
  Tensor dm, dlv;
  const double kl = kl_divergence(m, lv, &dm, &dlv);
  EXPECT_NEAR(kl, 256 * 0.5 * (0.09 + std::exp(-0.5) - 1 + 0.5), 1e-12);
  Tensor m2 = m;
  m2.values[7] += 1e-6;
  EXPECT_NEAR(dm.values[7], (kl_divergence(m2, lv) - kl) / 1e-6, 1e-5);
  Tensor lv2 = lv;
  lv2.values[9] += 1e-6;
  EXPECT_NEAR(dlv.values[9], (kl_divergence(m, lv2) - kl) / 1e-6, 1e-5);
}

TEST(LossStep1, Combination) {
  const auto p = combine_step1(0.02, 0.01, 0.0, {0.75, 0.0, 4});
  EXPECT_DOUBLE_EQ(p.total, 0.0275);
  const Image a = pat_a(), b = pat_b();
  LatentCode z{latent_fill(0), latent_fill(0)};
  EXPECT_LE(std::abs(loss_step1(a, b, 3, {0.0, 0.0, 4}, z).total - loss_mse(a, b)), 1e-15);
  EXPECT_EQ(loss_step1(a, b, 3, {0.0, 0.0, 4}, z).total, loss_mse(a, b));
  // standard-normal latent adds nothing even with beta = 1
  EXPECT_EQ(loss_step1(a, b, 3, {0.0, 1.0, 4}, z).total, loss_mse(a, b));
  EXPECT_THROW(loss_step1(a, b, 3, {0.0, 1.0, 4}, LatentCode{latent_fill(0), std::nullopt}), InvalidArgument);
}

TEST(LossAlign, Examples) {
  EXPECT_EQ(loss_align(latent_fill(0.4), latent_fill(0.4)), 0.0);
  EXPECT_DOUBLE_EQ(loss_align(latent_fill(1.5), latent_fill(0.5)), 16.0);
  Tensor hy = latent_fill(0), ha = latent_fill(0);
  for (int i = 0; i < 256; ++i) {
    hy.values[static_cast<std::size_t>(i)] = std::sin(0.1 * i);
    ha.values[static_cast<std::size_t>(i)] = 0.5 * std::cos(0.07 * i);
  }
  EXPECT_NEAR(loss_align(hy, ha), 11.965213399860566, 1e-13);
  Tensor g;
  const double l = loss_align(hy, ha, &g);
  Tensor hy2 = hy;
  hy2.values[11] += 1e-7;
  EXPECT_NEAR(g.values[11], (loss_align(hy2, ha) - l) / 1e-7, 1e-6);
  EXPECT_THROW(loss_align(Tensor({4, 4, 4}), Tensor({4, 4, 4})), DimensionError);
}

#pragma once

// Phenomenological single-scatterer kernel and the multi-scatterer forward
// model. Radii are in pixels and angles in radians.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "qpi/error.hpp"
#include "qpi/image.hpp"
#include "qpi/rng.hpp"

namespace qpi {

inline constexpr std::array<int, 5> kFoldCounts = {0, 2, 3, 4, 6};

inline constexpr double kMinFrequency = 0.2;
inline constexpr double kMaxFrequency = 0.9;
inline constexpr double kMinDecay = 0.003;
inline constexpr double kMaxDecay = 0.02;
inline constexpr int kMaxDefects = 100;

// Fold count n -> angular multiplier A with A * 2pi/n = pi.
inline double fold_selector(int fold_count) {
  switch (fold_count) {
  case 0: return 0.0;
  case 2: return 1.0;
  case 3: return 1.5;
  case 4: return 2.0;
  case 6: return 3.0;
  default: throw InvalidArgument("fold_count must be one of 0,2,3,4,6, got " + std::to_string(fold_count));
  }
}

inline int fold_count_from_selector(double a) {
  for (int n : kFoldCounts)
    if (fold_selector(n) == a) return n;
  throw InvalidArgument("fold selector must be one of 0,1,1.5,2,3");
}

struct KernelParams {
  int fold_count = 0;
  double phi1 = std::numbers::pi / 2;  // orientation
  double frequency = 0.5;              // B, rad/px
  double phi2 = 0.0;                   // radial phase
  double decay = 0.01;                 // C, 1/px^2

  double selector() const { return fold_selector(fold_count); }

  void validate() const {
    fold_selector(fold_count);
    if (fold_count == 0 && phi1 != std::numbers::pi / 2)
      throw InvalidArgument("total-symmetry kernel requires phi1 = pi/2");
    if (!(phi1 >= 0.0 && phi1 < std::numbers::pi) || !(phi2 >= 0.0 && phi2 < std::numbers::pi))
      throw InvalidArgument("phases must lie in [0, pi)");
    if (!(frequency >= kMinFrequency && frequency <= kMaxFrequency))
      throw InvalidArgument("frequency B outside [0.2, 0.9]");
    if (!(decay >= kMinDecay && decay <= kMaxDecay))
      throw InvalidArgument("decay C outside [0.003, 0.02]");
  }

  friend bool operator==(const KernelParams&, const KernelParams&) = default;
};

// sin^2(A theta + phi1) * sin^2(B r + phi2) * exp(-C r^2)
inline double eval_kernel(const KernelParams& p, double r, double theta) {
  const double angular = std::sin(p.selector() * theta + p.phi1);
  const double radial = std::sin(p.frequency * r + p.phi2);
  return angular * angular * radial * radial * std::exp(-p.decay * r * r);
}

namespace detail {

// Superposition is accumulated in 2^-44 fixed point so that the sum over a
// defect set is associative: Y(D1 u D2) == Y(D1) + Y(D2) holds bit-exactly.
// 100 defects * 2^44 stays below 2^53, so the doubles involved are exact.
inline constexpr double kFixedScale = 0x1.0p44;

inline std::int64_t to_fixed(double v) { return std::llround(v * kFixedScale); }
inline double from_fixed(std::int64_t v) { return static_cast<double>(v) / kFixedScale; }

inline double kernel_at_offset(const KernelParams& p, int drow, int dcol) {
  const double dy = drow;
  const double dx = dcol;
  const double r = std::sqrt(dx * dx + dy * dy);
  const double theta = (drow == 0 && dcol == 0) ? 0.0 : std::atan2(dy, dx);
  return eval_kernel(p, r, theta);
}

} // namespace detail

// Kernel image centred on pixel (32, 32). Values are quantised to the same
// fixed-point grid as observations.
inline Image rasterize_kernel(const KernelParams& p) {
  Image img;
  for (int y = 0; y < kImageSize; ++y)
    for (int x = 0; x < kImageSize; ++x)
      img(y, x) = detail::from_fixed(
          detail::to_fixed(detail::kernel_at_offset(p, y - kImageCenter, x - kImageCenter)));
  return img;
}

inline KernelParams sample_kernel_params(std::uint64_t seed, int index, int total) {
  if (total <= 0 || total % 5 != 0)
    throw InvalidArgument("kernel total must be a positive multiple of 5");
  if (index < 0 || index >= total) throw InvalidArgument("kernel index out of range");
  Rng rng(derive_seed(seed, 0x4B45524Eull, static_cast<std::uint64_t>(index)));
  KernelParams p;
  p.fold_count = kFoldCounts[static_cast<std::size_t>(index % 5)];
  const double phi1 = rng.uniform(0.0, std::numbers::pi);
  p.phi1 = p.fold_count == 0 ? std::numbers::pi / 2 : phi1;
  p.frequency = rng.uniform(kMinFrequency, kMaxFrequency);
  p.phi2 = rng.uniform(0.0, std::numbers::pi);
  p.decay = rng.uniform(kMinDecay, kMaxDecay);
  return p;
}

struct ObservationPair {
  Image observation;
  Image activation;
};

inline void validate_defects(const std::vector<PixelCoord>& defects) {
  if (defects.empty()) throw InvalidArgument("defect list is empty");
  if (defects.size() > static_cast<std::size_t>(kMaxDefects))
    throw InvalidArgument("more than 100 defects");
  std::vector<PixelCoord> sorted = defects;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
    throw InvalidArgument("duplicate defect coordinate");
  for (const auto& d : sorted)
    if (d.row < 0 || d.row >= kImageSize || d.col < 0 || d.col >= kImageSize)
      throw InvalidArgument("defect coordinate out of bounds");
}

// Fixed-point kernel values for every offset reachable inside the window,
// i.e. drow, dcol in [-63, 63].
class OffsetTable {
public:
  static constexpr int kReach = kImageSize - 1;
  static constexpr int kSide = 2 * kReach + 1;

  explicit OffsetTable(const KernelParams& p) : values_(static_cast<std::size_t>(kSide) * kSide) {
    for (int dy = -kReach; dy <= kReach; ++dy)
      for (int dx = -kReach; dx <= kReach; ++dx)
        values_[index(dy, dx)] = detail::to_fixed(detail::kernel_at_offset(p, dy, dx));
  }

  std::int64_t at(int drow, int dcol) const noexcept { return values_[index(drow, dcol)]; }

private:
  static std::size_t index(int dy, int dx) noexcept {
    return static_cast<std::size_t>(dy + kReach) * kSide + static_cast<std::size_t>(dx + kReach);
  }
  std::vector<std::int64_t> values_;
};

// Y(p) = sum_d kernel(p - d), full kernel support, no truncation.
inline ObservationPair synthesize_observation(const OffsetTable& table,
                                              const std::vector<PixelCoord>& defects) {
  validate_defects(defects);
  std::vector<std::int64_t> acc(static_cast<std::size_t>(kImageSize) * kImageSize, 0);
  ObservationPair out;
  for (const auto& d : defects) {
    out.activation(d.row, d.col) = 1.0;
    for (int y = 0; y < kImageSize; ++y)
      for (int x = 0; x < kImageSize; ++x)
        acc[static_cast<std::size_t>(y) * kImageSize + x] += table.at(y - d.row, x - d.col);
  }
  for (std::size_t i = 0; i < acc.size(); ++i) out.observation.storage()[i] = detail::from_fixed(acc[i]);
  return out;
}

inline ObservationPair synthesize_observation(const KernelParams& p,
                                              const std::vector<PixelCoord>& defects) {
  validate_defects(defects);
  return synthesize_observation(OffsetTable(p), defects);
}

// Defect count ~ U{1..100}, distinct pixel positions (partial Fisher-Yates),
// returned sorted in row-major order.
inline std::vector<PixelCoord> sample_defects(std::uint64_t seed) {
  Rng rng(seed);
  const int count = 1 + static_cast<int>(rng.below(kMaxDefects));
  std::vector<int> cells(static_cast<std::size_t>(kImageSize) * kImageSize);
  for (std::size_t i = 0; i < cells.size(); ++i) cells[i] = static_cast<int>(i);
  std::vector<PixelCoord> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const auto j = static_cast<std::size_t>(i) + rng.below(cells.size() - static_cast<std::size_t>(i));
    std::swap(cells[static_cast<std::size_t>(i)], cells[j]);
    out.push_back({cells[static_cast<std::size_t>(i)] / kImageSize, cells[static_cast<std::size_t>(i)] % kImageSize});
  }
  std::sort(out.begin(), out.end());
  return out;
}

} // namespace qpi

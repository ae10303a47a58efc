#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "qpi/error.hpp"

namespace qpi {

inline constexpr int kImageSize = 64;
inline constexpr int kImageCenter = 32;

// Row-major scalar field. Defaults to the 64x64 grid used everywhere in the
// pipeline; other sizes exist for reduced test problems.
class Image {
public:
  Image() : Image(kImageSize, kImageSize) {}
  Image(int height, int width, double fill = 0.0)
      : height_(height), width_(width),
        values_(static_cast<std::size_t>(height) * static_cast<std::size_t>(width), fill) {
    if (height <= 0 || width <= 0) throw DimensionError("image dims must be positive");
  }
  Image(int height, int width, std::vector<double> values)
      : height_(height), width_(width), values_(std::move(values)) {
    if (values_.size() != static_cast<std::size_t>(height) * static_cast<std::size_t>(width))
      throw DimensionError("image value count does not match dims");
  }

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  std::size_t size() const noexcept { return values_.size(); }

  double& operator()(int row, int col) noexcept {
    return values_[static_cast<std::size_t>(row) * width_ + col];
  }
  double operator()(int row, int col) const noexcept {
    return values_[static_cast<std::size_t>(row) * width_ + col];
  }

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }
  std::vector<double>& storage() noexcept { return values_; }
  const std::vector<double>& storage() const noexcept { return values_; }

  bool same_shape(const Image& o) const noexcept {
    return height_ == o.height_ && width_ == o.width_;
  }

  friend bool operator==(const Image&, const Image&) = default;

private:
  int height_;
  int width_;
  std::vector<double> values_;
};

struct PixelCoord {
  int row = 0;
  int col = 0;
  friend auto operator<=>(const PixelCoord&, const PixelCoord&) = default;
};

inline void require_same_shape(const Image& a, const Image& b, const char* what) {
  if (!a.same_shape(b)) throw DimensionError(std::string(what) + ": image dims differ");
}

} // namespace qpi

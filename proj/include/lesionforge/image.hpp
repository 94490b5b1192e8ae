#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lesionforge/common.hpp"

namespace lf {

/// Physical pixel size in mm, (row, col).
struct Spacing {
  double row = 1.0;
  double col = 1.0;
  bool operator==(const Spacing&) const = default;
};

/// Dense row-major 2D grid. Image2D and BinaryMask2D are the two
/// instantiations everything else trades in.
template <typename T>
class Grid {
 public:
  using value_type = T;

  Grid() = default;
  Grid(int height, int width, T fill = T{})
      : height_(checked(height)), width_(checked(width)),
        data_(static_cast<std::size_t>(height) * width, fill) {}
  Grid(int height, int width, std::vector<T> data)
      : height_(checked(height)), width_(checked(width)), data_(std::move(data)) {
    if (data_.size() != static_cast<std::size_t>(height) * width)
      throw ShapeError("grid data size does not match " + std::to_string(height) + "x" +
                       std::to_string(width));
  }

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(int y, int x) { return data_[static_cast<std::size_t>(y) * width_ + x]; }
  const T& operator()(int y, int x) const {
    return data_[static_cast<std::size_t>(y) * width_ + x];
  }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::span<T> pixels() noexcept { return data_; }
  std::span<const T> pixels() const noexcept { return data_; }
  std::vector<T>& data() noexcept { return data_; }
  const std::vector<T>& data() const noexcept { return data_; }

  template <typename U>
  bool same_shape(const Grid<U>& o) const noexcept {
    return height_ == o.height() && width_ == o.width();
  }

  bool operator==(const Grid& o) const {
    return height_ == o.height_ && width_ == o.width_ && data_ == o.data_;
  }

  Spacing spacing{};

 private:
  static int checked(int v) {
    if (v < 0) throw ShapeError("negative grid dimension");
    return v;
  }
  int height_ = 0;
  int width_ = 0;
  std::vector<T> data_;
};

/// Single-channel intensity image, network range [-1, 1].
using Image2D = Grid<float>;
/// {0, 1} mask.
using BinaryMask2D = Grid<std::uint8_t>;

/// Normalized black level; background fill for foreground images.
inline constexpr float kBackgroundLevel = -1.0f;

template <typename A, typename B>
void require_same_shape(const Grid<A>& a, const Grid<B>& b, const std::string& what) {
  if (!a.same_shape(b))
    throw ShapeError(what + ": shape mismatch " + std::to_string(a.height()) + "x" +
                     std::to_string(a.width()) + " vs " + std::to_string(b.height()) + "x" +
                     std::to_string(b.width()));
}

/// Square, power-of-two side in {32, 64, 128, 256}.
bool is_network_shape(int height, int width);
void require_network_shape(const Image2D& img);

enum class NormalizeMode { kMinMax, kPercentile };

struct NormalizeOptions {
  NormalizeMode mode = NormalizeMode::kPercentile;
  double low_percentile = 1.0;
  double high_percentile = 99.0;
};

/// Affine map of [lo, hi] onto [-1, 1]; lo/hi are min/max or percentiles
/// (percentile mode clamps). A constant grid maps to all -1.
Image2D normalize(const Image2D& raw, const NormalizeOptions& opts = {});

/// x_P where mask == 1, `fill` elsewhere.
Image2D make_foreground(const Image2D& image, const BinaryMask2D& mask,
                        float fill = kBackgroundLevel);

/// Bilinear resize with corner alignment (src = dst * (in-1)/(out-1)).
Image2D resize_bilinear(const Image2D& img, int height, int width);
BinaryMask2D resize_nearest(const BinaryMask2D& mask, int height, int width);

/// Left-right flip (sagittal mirror for axial slices).
template <typename T>
Grid<T> mirror_horizontal(const Grid<T>& g) {
  Grid<T> out(g.height(), g.width());
  out.spacing = g.spacing;
  for (int y = 0; y < g.height(); ++y)
    for (int x = 0; x < g.width(); ++x) out(y, x) = g(y, g.width() - 1 - x);
  return out;
}

/// Bilinear sample with edge clamping; (y, x) in pixel coordinates.
float sample_bilinear(const Image2D& img, double y, double x);

std::size_t count(const BinaryMask2D& mask);
BinaryMask2D mask_and(const BinaryMask2D& a, const BinaryMask2D& b);
BinaryMask2D mask_or(const BinaryMask2D& a, const BinaryMask2D& b);
BinaryMask2D mask_andnot(const BinaryMask2D& a, const BinaryMask2D& b);
BinaryMask2D threshold_above(const Image2D& img, float threshold);

/// Morphology with a Euclidean disc of the given radius.
BinaryMask2D dilate(const BinaryMask2D& mask, int radius);
BinaryMask2D erode(const BinaryMask2D& mask, int radius);
BinaryMask2D close(const BinaryMask2D& mask, int radius);

/// 8-connected component labels (0 = background, 1..n). Returns n.
int label_components(const BinaryMask2D& mask, std::vector<int>& labels);
BinaryMask2D remove_small_components(const BinaryMask2D& mask, std::size_t min_pixels);

/// Mask pixels with a 4-neighbour outside the mask (image border counts as outside).
BinaryMask2D boundary(const BinaryMask2D& mask);

/// Exact squared Euclidean distance from every pixel to the nearest pixel
/// set in `targets` (separable lower-envelope transform). Pixels are
/// +infinity when `targets` is empty.
Grid<double> squared_distance_transform(const BinaryMask2D& targets);

/// Mean absolute difference over pixels where `region` is 1 (all pixels if
/// region is empty).
double mean_abs_diff(const Image2D& a, const Image2D& b, const BinaryMask2D* region = nullptr);

}  // namespace lf

#include "lesionforge/image.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace lf {

bool is_network_shape(int height, int width) {
  if (height != width) return false;
  return height == 32 || height == 64 || height == 128 || height == 256;
}

void require_network_shape(const Image2D& img) {
  if (!is_network_shape(img.height(), img.width()))
    throw ShapeError("image must be square with side in {32, 64, 128, 256}, got " +
                     std::to_string(img.height()) + "x" + std::to_string(img.width()));
}

namespace {

void require_finite(const Image2D& img) {
  const auto px = img.pixels();
  for (std::size_t i = 0; i < px.size(); ++i)
    if (!std::isfinite(px[i]))
      throw NonFiniteError("non-finite value at flat index " + std::to_string(i), i);
}

// Linear-interpolated percentile on sorted data, p in [0, 100].
double percentile_sorted(const std::vector<float>& sorted, double p) {
  if (sorted.size() == 1) return sorted.front();
  const double pos = p / 100.0 * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (static_cast<double>(sorted[hi]) - sorted[lo]);
}

}  // namespace

Image2D normalize(const Image2D& raw, const NormalizeOptions& opts) {
  require_finite(raw);
  Image2D out(raw.height(), raw.width(), kBackgroundLevel);
  out.spacing = raw.spacing;
  if (raw.empty()) return out;

  double lo = 0.0, hi = 0.0;
  if (opts.mode == NormalizeMode::kMinMax) {
    const auto [mn, mx] = std::minmax_element(raw.pixels().begin(), raw.pixels().end());
    lo = *mn;
    hi = *mx;
  } else {
    if (!(opts.low_percentile >= 0.0 && opts.low_percentile < opts.high_percentile &&
          opts.high_percentile <= 100.0))
      throw InputError("percentiles must satisfy 0 <= low < high <= 100");
    std::vector<float> sorted(raw.pixels().begin(), raw.pixels().end());
    std::sort(sorted.begin(), sorted.end());
    lo = percentile_sorted(sorted, opts.low_percentile);
    hi = percentile_sorted(sorted, opts.high_percentile);
  }
  if (!(hi > lo)) return out;

  const double scale = 2.0 / (hi - lo);
  for (std::size_t i = 0; i < raw.size(); ++i) {
    double v = (static_cast<double>(raw[i]) - lo) * scale - 1.0;
    out[i] = static_cast<float>(std::clamp(v, -1.0, 1.0));
  }
  return out;
}

Image2D make_foreground(const Image2D& image, const BinaryMask2D& mask, float fill) {
  require_same_shape(image, mask, "make_foreground");
  Image2D out(image.height(), image.width());
  out.spacing = image.spacing;
  for (std::size_t i = 0; i < image.size(); ++i) out[i] = mask[i] ? image[i] : fill;
  return out;
}

float sample_bilinear(const Image2D& img, double y, double x) {
  const int h = img.height(), w = img.width();
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  const int y0 = static_cast<int>(std::floor(y));
  const int x0 = static_cast<int>(std::floor(x));
  const int y1 = std::min(y0 + 1, h - 1);
  const int x1 = std::min(x0 + 1, w - 1);
  const double fy = y - y0, fx = x - x0;
  const double top = img(y0, x0) * (1.0 - fx) + img(y0, x1) * fx;
  const double bottom = img(y1, x0) * (1.0 - fx) + img(y1, x1) * fx;
  return static_cast<float>(top * (1.0 - fy) + bottom * fy);
}

namespace {

double source_coord(int dst, int dst_len, int src_len) {
  if (dst_len <= 1) return 0.0;
  return static_cast<double>(dst) * (src_len - 1) / (dst_len - 1);
}

}  // namespace

Image2D resize_bilinear(const Image2D& img, int height, int width) {
  if (img.empty()) throw ShapeError("resize of empty image");
  Image2D out(height, width);
  out.spacing = {img.spacing.row * img.height() / height, img.spacing.col * img.width() / width};
  for (int y = 0; y < height; ++y) {
    const double sy = source_coord(y, height, img.height());
    for (int x = 0; x < width; ++x)
      out(y, x) = sample_bilinear(img, sy, source_coord(x, width, img.width()));
  }
  return out;
}

BinaryMask2D resize_nearest(const BinaryMask2D& mask, int height, int width) {
  if (mask.empty()) throw ShapeError("resize of empty mask");
  BinaryMask2D out(height, width);
  out.spacing = {mask.spacing.row * mask.height() / height,
                 mask.spacing.col * mask.width() / width};
  for (int y = 0; y < height; ++y) {
    const int sy = static_cast<int>(std::lround(source_coord(y, height, mask.height())));
    for (int x = 0; x < width; ++x) {
      const int sx = static_cast<int>(std::lround(source_coord(x, width, mask.width())));
      out(y, x) = mask(sy, sx);
    }
  }
  return out;
}

std::size_t count(const BinaryMask2D& mask) {
  return static_cast<std::size_t>(
      std::count_if(mask.pixels().begin(), mask.pixels().end(), [](auto v) { return v != 0; }));
}

namespace {

template <typename Op>
BinaryMask2D combine(const BinaryMask2D& a, const BinaryMask2D& b, Op op, const char* what) {
  require_same_shape(a, b, what);
  BinaryMask2D out(a.height(), a.width());
  out.spacing = a.spacing;
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = op(a[i] != 0, b[i] != 0) ? 1 : 0;
  return out;
}

std::vector<std::pair<int, int>> disc_offsets(int radius) {
  std::vector<std::pair<int, int>> offs;
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx)
      if (dy * dy + dx * dx <= radius * radius) offs.emplace_back(dy, dx);
  return offs;
}

}  // namespace

BinaryMask2D mask_and(const BinaryMask2D& a, const BinaryMask2D& b) {
  return combine(a, b, [](bool p, bool q) { return p && q; }, "mask_and");
}
BinaryMask2D mask_or(const BinaryMask2D& a, const BinaryMask2D& b) {
  return combine(a, b, [](bool p, bool q) { return p || q; }, "mask_or");
}
BinaryMask2D mask_andnot(const BinaryMask2D& a, const BinaryMask2D& b) {
  return combine(a, b, [](bool p, bool q) { return p && !q; }, "mask_andnot");
}

BinaryMask2D threshold_above(const Image2D& img, float threshold) {
  BinaryMask2D out(img.height(), img.width());
  out.spacing = img.spacing;
  for (std::size_t i = 0; i < img.size(); ++i) out[i] = img[i] > threshold ? 1 : 0;
  return out;
}

BinaryMask2D dilate(const BinaryMask2D& mask, int radius) {
  if (radius <= 0) return mask;
  const auto offs = disc_offsets(radius);
  BinaryMask2D out(mask.height(), mask.width());
  out.spacing = mask.spacing;
  for (int y = 0; y < mask.height(); ++y)
    for (int x = 0; x < mask.width(); ++x) {
      if (!mask(y, x)) continue;
      for (auto [dy, dx] : offs) {
        const int yy = y + dy, xx = x + dx;
        if (yy >= 0 && yy < mask.height() && xx >= 0 && xx < mask.width()) out(yy, xx) = 1;
      }
    }
  return out;
}

BinaryMask2D erode(const BinaryMask2D& mask, int radius) {
  if (radius <= 0) return mask;
  const auto offs = disc_offsets(radius);
  BinaryMask2D out(mask.height(), mask.width());
  out.spacing = mask.spacing;
  // Pixels beyond the border count as background.
  for (int y = 0; y < mask.height(); ++y)
    for (int x = 0; x < mask.width(); ++x) {
      if (!mask(y, x)) continue;
      bool keep = true;
      for (auto [dy, dx] : offs) {
        const int yy = y + dy, xx = x + dx;
        if (yy < 0 || yy >= mask.height() || xx < 0 || xx >= mask.width() || !mask(yy, xx)) {
          keep = false;
          break;
        }
      }
      out(y, x) = keep ? 1 : 0;
    }
  return out;
}

BinaryMask2D close(const BinaryMask2D& mask, int radius) {
  if (radius <= 0) return mask;
  // Pad so the erosion step does not eat structures touching the border.
  const int pad = radius;
  BinaryMask2D padded(mask.height() + 2 * pad, mask.width() + 2 * pad);
  for (int y = 0; y < mask.height(); ++y)
    for (int x = 0; x < mask.width(); ++x) padded(y + pad, x + pad) = mask(y, x);
  const BinaryMask2D closed = erode(dilate(padded, radius), radius);
  BinaryMask2D out(mask.height(), mask.width());
  out.spacing = mask.spacing;
  for (int y = 0; y < mask.height(); ++y)
    for (int x = 0; x < mask.width(); ++x) out(y, x) = closed(y + pad, x + pad);
  return out;
}

int label_components(const BinaryMask2D& mask, std::vector<int>& labels) {
  const int h = mask.height(), w = mask.width();
  labels.assign(mask.size(), 0);
  int next = 0;
  std::vector<int> stack;
  for (int start = 0; start < h * w; ++start) {
    if (!mask[start] || labels[start]) continue;
    labels[start] = ++next;
    stack.push_back(start);
    while (!stack.empty()) {
      const int p = stack.back();
      stack.pop_back();
      const int py = p / w, px = p % w;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int yy = py + dy, xx = px + dx;
          if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
          const int q = yy * w + xx;
          if (mask[q] && !labels[q]) {
            labels[q] = next;
            stack.push_back(q);
          }
        }
    }
  }
  return next;
}

BinaryMask2D remove_small_components(const BinaryMask2D& mask, std::size_t min_pixels) {
  std::vector<int> labels;
  const int n = label_components(mask, labels);
  std::vector<std::size_t> sizes(static_cast<std::size_t>(n) + 1, 0);
  for (int l : labels) ++sizes[l];
  BinaryMask2D out(mask.height(), mask.width());
  out.spacing = mask.spacing;
  for (std::size_t i = 0; i < labels.size(); ++i)
    out[i] = (labels[i] && sizes[labels[i]] >= min_pixels) ? 1 : 0;
  return out;
}

BinaryMask2D boundary(const BinaryMask2D& mask) {
  const int h = mask.height(), w = mask.width();
  BinaryMask2D out(h, w);
  out.spacing = mask.spacing;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (!mask(y, x)) continue;
      const bool edge = y == 0 || x == 0 || y == h - 1 || x == w - 1 || !mask(y - 1, x) ||
                        !mask(y + 1, x) || !mask(y, x - 1) || !mask(y, x + 1);
      out(y, x) = edge ? 1 : 0;
    }
  return out;
}

namespace {

// 1D lower envelope of parabolas over f (Felzenszwalb & Huttenlocher).
void edt_1d(const std::vector<double>& f, std::vector<double>& d, std::vector<int>& v,
            std::vector<double>& z) {
  const int n = static_cast<int>(f.size());
  constexpr double kInf = std::numeric_limits<double>::infinity();
  int k = -1;
  for (int q = 0; q < n; ++q) {
    if (f[q] == kInf) continue;
    while (k >= 0) {
      const double s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * (q - v[k]));
      if (s <= z[k]) {
        --k;
      } else {
        break;
      }
    }
    ++k;
    v[k] = q;
    z[k] = k == 0 ? -kInf
                  : ((f[q] + q * q) - (f[v[k - 1]] + v[k - 1] * v[k - 1])) /
                        (2.0 * (q - v[k - 1]));
    z[k + 1] = kInf;
  }
  if (k < 0) {
    std::fill(d.begin(), d.end(), kInf);
    return;
  }
  int j = 0;
  for (int q = 0; q < n; ++q) {
    while (z[j + 1] < q) ++j;
    const double diff = q - v[j];
    d[q] = diff * diff + f[v[j]];
  }
}

}  // namespace

Grid<double> squared_distance_transform(const BinaryMask2D& targets) {
  constexpr double kInf = std::numeric_limits<double>::infinity();
  const int h = targets.height(), w = targets.width();
  Grid<double> out(h, w, kInf);
  const int n = std::max(h, w);
  std::vector<double> f, d;
  std::vector<int> v(n + 1);
  std::vector<double> z(n + 2);
  f.resize(h);
  d.resize(h);
  for (int x = 0; x < w; ++x) {
    for (int y = 0; y < h; ++y) f[y] = targets(y, x) ? 0.0 : kInf;
    edt_1d(f, d, v, z);
    for (int y = 0; y < h; ++y) out(y, x) = d[y];
  }
  f.resize(w);
  d.resize(w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) f[x] = out(y, x);
    edt_1d(f, d, v, z);
    for (int x = 0; x < w; ++x) out(y, x) = d[x];
  }
  return out;
}

double mean_abs_diff(const Image2D& a, const Image2D& b, const BinaryMask2D* region) {
  require_same_shape(a, b, "mean_abs_diff");
  if (region) require_same_shape(a, *region, "mean_abs_diff region");
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (region && !(*region)[i]) continue;
    sum += std::abs(static_cast<double>(a[i]) - b[i]);
    ++n;
  }
  return n ? sum / static_cast<double>(n) : 0.0;
}

}  // namespace lf

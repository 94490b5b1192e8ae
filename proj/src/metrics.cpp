#include "lesionforge/metrics.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <limits>

namespace lf {

double dice(const BinaryMask2D& a, const BinaryMask2D& b, bool* both_empty) {
  require_same_shape(a, b, "dice");
  std::size_t na = 0, nb = 0, both = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    na += a[i] != 0;
    nb += b[i] != 0;
    both += (a[i] != 0) && (b[i] != 0);
  }
  if (both_empty) *both_empty = (na + nb == 0);
  if (na + nb == 0) {
    spdlog::debug("dice: both masks empty, scoring 1");
    return 1.0;
  }
  return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

double percentile_linear(std::vector<double> v, double p) {
  if (v.empty()) throw InputError("percentile of an empty set");
  if (!(p >= 0 && p <= 100)) throw InputError("percentile must lie in [0, 100]");
  std::sort(v.begin(), v.end());
  const double rank = p / 100.0 * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  const double frac = rank - static_cast<double>(lo);
  return v[lo] + (v[hi] - v[lo]) * frac;
}

namespace {

std::vector<double> directed(const BinaryMask2D& from, const Grid<double>& dt_to) {
  std::vector<double> d;
  for (std::size_t i = 0; i < from.size(); ++i)
    if (from[i]) d.push_back(std::sqrt(dt_to[i]));
  return d;
}

}  // namespace

std::optional<double> hausdorff(const BinaryMask2D& a, const BinaryMask2D& b, double percentile) {
  require_same_shape(a, b, "hausdorff");
  if (count(a) == 0 || count(b) == 0) return std::nullopt;
  const BinaryMask2D ba = boundary(a), bb = boundary(b);
  const double dab = percentile_linear(directed(ba, squared_distance_transform(bb)), percentile);
  const double dba = percentile_linear(directed(bb, squared_distance_transform(ba)), percentile);
  return std::max(dab, dba);
}

HeatmapGrid accumulate_heatmap(const std::vector<BinaryMask2D>& masks) {
  if (masks.empty()) throw InputError("accumulate_heatmap: empty mask list");
  HeatmapGrid h{Grid<double>(masks[0].height(), masks[0].width(), 0.0), masks.size()};
  for (const auto& m : masks) {
    require_same_shape(masks[0], m, "accumulate_heatmap");
    for (std::size_t i = 0; i < m.size(); ++i) h.frequency[i] += m[i] ? 1.0 : 0.0;
  }
  for (auto& v : h.frequency.data()) v /= static_cast<double>(masks.size());
  return h;
}

double heatmap_correlation(const Grid<double>& a, const Grid<double>& b,
                           const BinaryMask2D* region) {
  require_same_shape(a, b, "heatmap_correlation");
  if (region) require_same_shape(a, *region, "heatmap_correlation");
  double sa = 0, sb = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!region || (*region)[i]) {
      sa += a[i];
      sb += b[i];
      ++n;
    }
  if (n < 2) throw InputError("heatmap_correlation: region has fewer than two pixels");
  const double ma = sa / static_cast<double>(n), mb = sb / static_cast<double>(n);
  double cov = 0, va = 0, vb = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!region || (*region)[i]) {
      const double da = a[i] - ma, db = b[i] - mb;
      cov += da * db;
      va += da * da;
      vb += db * db;
    }
  if (va == 0 || vb == 0) throw InputError("heatmap_correlation: constant map in region");
  return cov / std::sqrt(va * vb);
}

Grid<double> to_double_grid(const Image2D& img) {
  Grid<double> g(img.height(), img.width());
  for (std::size_t i = 0; i < img.size(); ++i) g[i] = img[i];
  return g;
}

long ventricle_area_delta(const Image2D& before, const Image2D& after, const BinaryMask2D& brain,
                          double csf_threshold) {
  require_same_shape(before, after, "ventricle_area_delta");
  require_same_shape(before, brain, "ventricle_area_delta");
  long nb = 0, na = 0;
  for (std::size_t i = 0; i < brain.size(); ++i) {
    if (!brain[i]) continue;
    nb += before[i] < csf_threshold;
    na += after[i] < csf_threshold;
  }
  return na - nb;
}

Summary summarize(const std::vector<std::optional<double>>& values) {
  Summary s;
  double acc = 0;
  for (const auto& v : values) {
    if (!v) {
      ++s.missing;
      continue;
    }
    acc += *v;
    ++s.n;
  }
  if (s.n == 0) {
    s.mean = s.std = std::numeric_limits<double>::quiet_NaN();
    return s;
  }
  s.mean = acc / static_cast<double>(s.n);
  double ss = 0;
  for (const auto& v : values)
    if (v) ss += (*v - s.mean) * (*v - s.mean);
  s.std = s.n > 1 ? std::sqrt(ss / static_cast<double>(s.n - 1)) : 0.0;
  return s;
}

double paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw InputError("paired_t_test: samples differ in length");
  const std::size_t n = a.size();
  if (n < 2) return std::numeric_limits<double>::quiet_NaN();
  double mean = 0;
  for (std::size_t i = 0; i < n; ++i) mean += a[i] - b[i];
  mean /= static_cast<double>(n);
  double ss = 0;
  for (std::size_t i = 0; i < n; ++i) ss += (a[i] - b[i] - mean) * (a[i] - b[i] - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  if (sd == 0) return mean == 0 ? 1.0 : 0.0;
  const double t = mean / (sd / std::sqrt(static_cast<double>(n)));
  const boost::math::students_t dist(static_cast<double>(n - 1));
  return 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
}

}  // namespace lf

#pragma once

#include <optional>
#include <vector>

#include "lesionforge/image.hpp"

namespace lf {

/// 2|a & b| / (|a| + |b|). Both empty counts as agreement (1) and sets
/// *both_empty when given.
double dice(const BinaryMask2D& a, const BinaryMask2D& b, bool* both_empty = nullptr);

/// Symmetric percentile Hausdorff distance over boundary pixels, in pixels:
/// the larger of the two directed percentiles (linear interpolation between
/// order statistics). percentile = 100 is the classical distance. Empty
/// masks give no value.
std::optional<double> hausdorff(const BinaryMask2D& a, const BinaryMask2D& b,
                                double percentile = 95.0);

/// Percentile of `values` with linear interpolation between closest ranks.
double percentile_linear(std::vector<double> values, double percentile);

struct HeatmapGrid {
  Grid<double> frequency;  // per-pixel fraction of masks covering it
  std::size_t count = 0;
};

HeatmapGrid accumulate_heatmap(const std::vector<BinaryMask2D>& masks);

/// Pearson r between two maps over `region` (all pixels if null). Throws if
/// either map is constant there.
double heatmap_correlation(const Grid<double>& a, const Grid<double>& b,
                           const BinaryMask2D* region = nullptr);
Grid<double> to_double_grid(const Image2D& img);

/// Pixels darker than csf_threshold inside the brain, after minus before.
long ventricle_area_delta(const Image2D& before, const Image2D& after, const BinaryMask2D& brain,
                          double csf_threshold);

struct Summary {
  double mean = 0;
  double std = 0;  // sample standard deviation
  std::size_t n = 0;
  std::size_t missing = 0;
};

Summary summarize(const std::vector<std::optional<double>>& values);

/// Two-sided paired Student t-test on a - b. Returns 1 when all differences
/// are zero, NaN when fewer than two pairs.
double paired_t_test(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace lf

#pragma once

#include <array>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <optional>
#include <utility>

#include "lesionforge/image.hpp"
#include "lesionforge/io.hpp"

namespace lf::phantom {

/// Parameters of the synthetic brain phantom. Intensities are in normalized
/// units ([-1, 1], background -1).
struct PhantomSpec {
  int size = 64;
  std::array<double, 2> brain_axes{0.42, 0.35};      // (row, col) semi-axes / size
  std::array<double, 2> ventricle_axes{0.15, 0.075};  // (row, col) semi-axes / size
  double wm_texture_amplitude = 0.03;
  std::pair<int, int> lesion_count_range{2, 5};
  std::pair<double, double> lesion_radius_range{2.0, 3.5};  // support radius, px
  double lesion_intensity_boost = 0.7;
  /// Custom H x W lesion prior; when absent, the periventricular band of the
  /// canonical (unjittered) anatomy is used.
  std::optional<Image2D> lesion_prior;
  std::uint64_t seed = 1;

  double axis_jitter = 0.05;        // relative
  double brightness_jitter = 0.05;  // additive
  std::pair<int, int> ventricle_dilation_range{1, 2};
  double wm_level = 0.0;
  double gm_level = 0.2;
  double csf_level = -0.6;
  double cortex_thickness = 2.5;  // px at size 64, scales with size
  double bias_amplitude = 0.04;
  double prior_band_distance = 4.0;  // px from the ventricle wall, at size 64
  double prior_band_width = 2.5;
  double lesion_profile_threshold = 0.5;  // bump level defining the mask support
};

void to_json(nlohmann::json& j, const PhantomSpec& s);
void from_json(const nlohmann::json& j, PhantomSpec& s);

void validate(const PhantomSpec& spec);

struct HealthyPhantom {
  Image2D image;
  BinaryMask2D ventricle;
  BinaryMask2D brain;
};

struct PathologicalPhantom {
  Image2D image;
  BinaryMask2D lesion;
  BinaryMask2D ventricle;  // after enlargement
  int ventricle_dilation = 0;
  int lesion_count = 0;
};

/// Anatomy of the canonical subject (no jitter).
HealthyPhantom canonical_anatomy(const PhantomSpec& spec);
/// White matter: brain minus cortex rim minus ventricle.
BinaryMask2D white_matter(const PhantomSpec& spec, const HealthyPhantom& anatomy);

/// Effective lesion prior: sums to 1 over the canonical white matter.
Image2D lesion_prior(const PhantomSpec& spec);

HealthyPhantom gen_healthy(const PhantomSpec& spec, int idx);

/// Adds blob lesions drawn from the prior. Subjects that receive at least one
/// lesion also get their ventricle dilated by a radius from
/// ventricle_dilation_range.
PathologicalPhantom add_lesions(const HealthyPhantom& healthy, const PhantomSpec& spec, int idx);

/// Mean of the truncated Gaussian bump over its support disc, continuum
/// limit: (1 - t) / ln(1 / t).
double mean_profile_over_support(double threshold);

struct GeneratedDataset {
  std::vector<std::string> healthy_ids;
  std::vector<std::string> pathological_ids;
};

/// Writes the dataset layout plus aux/brain and aux/ventricle masks, the
/// lesion prior and the resolved spec. Healthy subjects use indices
/// [0, n_healthy), pathological ones continue after them.
GeneratedDataset gen_dataset(const PhantomSpec& spec, int n_healthy, int n_pathological,
                             const std::filesystem::path& out_dir,
                             ImageFormat format = ImageFormat::kPng16);

}  // namespace lf::phantom

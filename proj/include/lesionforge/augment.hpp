#pragma once

#include <filesystem>
#include <nlohmann/json.hpp>
#include <utility>
#include <vector>

#include "lesionforge/io.hpp"
#include "lesionforge/networks.hpp"
#include "lesionforge/registration.hpp"

namespace lf {

enum class ThresholdMode { kAbsolute, kKSigma };

struct MaskExtractConfig {
  ThresholdMode mode = ThresholdMode::kKSigma;
  double k = 3.0;                    // multiplier on the robust residual std
  double absolute_threshold = 0.2;   // used in kAbsolute mode
  /// Floor on the k-sigma threshold, so a near-zero residual spread cannot
  /// turn interpolation noise into lesions.
  double min_threshold = 0.1;
  int min_component_px = 4;
  int closing_radius = 1;
  /// Pixels where both images sit at or below this level are treated as
  /// air and excluded from the spread estimate.
  double air_level = -0.95;
};

void to_json(nlohmann::json& j, const MaskExtractConfig& c);
void from_json(const nlohmann::json& j, MaskExtractConfig& c);
void validate(const MaskExtractConfig& c);

struct SynthesisSample {
  Image2D image;
  FusionProducts products;
};

/// k forward passes of G on x. Sample s draws its dropout masks from
/// make_rng(seed, s), so the set is reproducible for a given seed.
std::vector<SynthesisSample> synthesize(const GeneratorBundle<float>& g, const Image2D& x,
                                        int k_samples, bool dropout_active, std::uint64_t seed);

/// Threshold actually applied by extract_mask for this pair.
double extraction_threshold(const Image2D& warped_healthy, const Image2D& synthetic,
                            const MaskExtractConfig& cfg);

/// Hyperintense difference components of synthetic - warped_healthy.
BinaryMask2D extract_mask(const Image2D& warped_healthy, const Image2D& synthetic,
                          const MaskExtractConfig& cfg = {});

/// Mean |synthetic - source| outside `lesion` dilated by `margin` px.
double background_preservation(const Image2D& source, const Image2D& synthetic,
                               const BinaryMask2D& lesion, int margin = 2);

struct AugmentConfig {
  int k_per_subject = 1;
  std::uint64_t seed = 0;
  bool dropout = true;
  bool include_real = true;  // copy the input dataset alongside the synthetic items
  FFDConfig ffd;
  MaskExtractConfig mask;
  ImageFormat format = ImageFormat::kPng16;
};

void to_json(nlohmann::json& j, const AugmentConfig& c);
void from_json(const nlohmann::json& j, AugmentConfig& c);

struct SyntheticItem {
  std::string id;
  std::string source_id;
  int sample = 0;
  Image2D image;
  BinaryMask2D mask;
  double threshold = 0;
  double ssd_before = 0;
  double ssd_after = 0;
};

/// Synthesis + registration + mask extraction for one healthy subject.
SyntheticItem augment_subject(const GeneratorBundle<float>& g_p, const Image2D& x_H,
                              const std::string& source_id, int sample,
                              const AugmentConfig& cfg);

/// Writes the dataset layout under out_dir plus manifest.json (provenance
/// only, no timestamps, so reruns are byte-identical). Returns the manifest.
nlohmann::json build_augmented_dataset(const GeneratorBundle<float>& g_p,
                                       const UnpairedDataset& data, const AugmentConfig& cfg,
                                       const std::filesystem::path& out_dir);

/// Pastes the donor's lesion pixels onto x_H at the same location; the one-pixel
/// ring around the lesion gets the average of both images.
std::pair<Image2D, BinaryMask2D> copy_paste_baseline(const Image2D& x_H, const Image2D& donor,
                                                     const BinaryMask2D& donor_mask);

}  // namespace lf

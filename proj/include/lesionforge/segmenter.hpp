#pragma once

#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "lesionforge/io.hpp"
#include "lesionforge/metrics.hpp"
#include "lesionforge/nn/layers.hpp"

namespace lf {

struct SegmenterConfig {
  int base_channels = 8;
  int iterations = 1500;  // single-image Adam steps
  double lr = 1e-3;
  bool mirror = true;  // random left-right flips during training
};

void to_json(nlohmann::json& j, const SegmenterConfig& c);
void from_json(const nlohmann::json& j, SegmenterConfig& c);

/// Small 4-level encoder-decoder with skip connections, BCE + soft Dice.
class Segmenter {
 public:
  Segmenter(const SegmenterConfig& cfg, std::uint64_t seed);

  /// (1, H, W) image -> (1, H, W) logits. H, W divisible by 8.
  nn::Var<float> forward(const nn::Var<float>& x) const;
  BinaryMask2D predict(const Image2D& img) const;
  /// Returns the per-iteration loss trace.
  std::vector<double> fit(const std::vector<PathologicalItem>& train, Rng& rng);
  nn::ParamList<float> parameters() const;

 private:
  struct Block {
    nn::Conv2d<float> a, b;
  };
  nn::Var<float> block(const Block& blk, const nn::Var<float>& x) const;

  SegmenterConfig cfg_;
  std::vector<Block> enc_;  // level 0..3
  std::vector<Block> dec_;  // levels 2..0
  nn::Conv2d<float> head_;
};

struct SegExperimentConfig {
  std::vector<double> fractions{1.0, 0.533, 0.266, 0.133};
  int seeds = 3;
  std::uint64_t seed = 0;
  int synthetic_per_real = 1;  // synthetic items added per selected real item
  SegmenterConfig segmenter;
};

void to_json(nlohmann::json& j, const SegExperimentConfig& c);
void from_json(const nlohmann::json& j, SegExperimentConfig& c);
void validate(const SegExperimentConfig& c);

struct SegArmResult {
  double fraction = 0;
  std::string arm;  // "real" or "real+synthetic"
  int n_real = 0;
  int n_synthetic = 0;
  Summary dice;   // over seeds x test subjects
  Summary hd95;
  Summary hd100;
  std::vector<double> subject_dice;  // per test subject, averaged over seeds
  std::vector<double> subject_hd95;  // per test subject, seeds with a value only
  std::vector<double> seed_dice;     // per seed, averaged over test subjects
};

struct SegComparison {
  double fraction = 0;
  double p_dice = 0;  // paired t-test over test subjects
  double p_hd95 = 0;
  double dice_gain = 0;  // augmented mean - real mean
};

struct SegExperimentResult {
  std::vector<SegArmResult> arms;
  std::vector<SegComparison> comparisons;

  std::string to_csv() const;
  nlohmann::json to_json() const;
};

/// Trains the segmenter per fraction x seed x arm and scores it on `test`.
SegExperimentResult run_seg_experiment(const SegExperimentConfig& cfg,
                                       const std::vector<PathologicalItem>& real_train,
                                       const std::vector<PathologicalItem>& synthetic,
                                       const std::vector<PathologicalItem>& test);

}  // namespace lf

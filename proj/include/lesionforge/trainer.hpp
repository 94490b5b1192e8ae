#pragma once

#include <filesystem>
#include <functional>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "lesionforge/io.hpp"
#include "lesionforge/losses.hpp"
#include "lesionforge/networks.hpp"

namespace lf {

struct TrainConfig {
  int epochs = 400;
  int decay_start_epoch = 200;
  int batch_size = 1;
  double lr = 0.001;
  double beta1 = 0.5;
  double beta2 = 0.999;
  LossWeights weights;
  int n = 10;
  double dropout = 0.5;
  int generator_base_channels = 32;
  /// 0 selects by image size: 9 at 256 px and above, 6 below.
  int res_blocks = 0;
  int discriminator_base_channels = 32;
  /// 0 selects by image size: 4 at 256 px and above, 3 below.
  int discriminator_layers = 0;
  int pool_size = 50;
  std::uint64_t seed = 0;
  bool mirror = true;
  double mirror_prob = 0.5;
  bool elastic = true;
  double elastic_prob = 0.5;
  double elastic_amplitude = 1.5;  // px, std of coarse-grid displacements
  int elastic_grid = 5;            // coarse lattice points per side
  int image_size = 64;
  int checkpoint_every = 50;

  GeneratorConfig generator() const;
  DiscriminatorConfig discriminator() const;
  /// Copy with the size-dependent zeros filled in.
  TrainConfig resolved() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
/// Missing keys keep their defaults; unknown keys are rejected.
void from_json(const nlohmann::json& j, TrainConfig& c);
void validate(const TrainConfig& c);

/// Learning rate for a 1-based epoch: constant through decay_start_epoch,
/// then linear to 0 at `epochs`.
double lr_at_epoch(const TrainConfig& c, int epoch);

/// History buffer of generated images for discriminator updates.
class ImagePool {
 public:
  explicit ImagePool(int capacity = 50) : capacity_(capacity) {}
  /// Not full: store and return `fake`. Full: with p = 0.5 return `fake`,
  /// otherwise swap it with a random stored image and return that one.
  nn::Tensor<float> query(const nn::Tensor<float>& fake, Rng& rng);
  std::size_t size() const { return buffer_.size(); }
  int capacity() const { return capacity_; }

 private:
  int capacity_;
  std::vector<nn::Tensor<float>> buffer_;
};

inline Image2D pool_query(ImagePool& pool, const Image2D& fake, Rng& rng) {
  Image2D out = tensor_to_image(pool.query(image_to_tensor<float>(fake), rng));
  out.spacing = fake.spacing;
  return out;
}

/// Mirror (p = mirror_prob) then elastic warp (p = elastic_prob); the mask,
/// when given, receives the same transform with nearest-neighbour sampling.
void augment_in_training(Image2D& image, BinaryMask2D* mask, const TrainConfig& cfg, Rng& rng);

struct IterationRecord {
  int epoch = 0;      // 1-based
  int iteration = 0;  // 0-based within the epoch
  double lr = 0;
  LossReport losses;
};

void to_json(nlohmann::json& j, const IterationRecord& r);
void from_json(const nlohmann::json& j, IterationRecord& r);

struct TrainOptions {
  std::filesystem::path out_dir;
  /// Checkpoint directory to continue from (restores weights, optimizer
  /// moments, epoch counter and RNG streams; pools restart empty).
  std::optional<std::filesystem::path> resume_from;
  std::function<void(const IterationRecord&)> on_iteration;
  bool verbose = true;
};

struct TrainResult {
  ModelBundles<float> models;
  std::vector<IterationRecord> records;  // this invocation only
  std::filesystem::path final_checkpoint;
};

/// Adversarial training loop. Writes out_dir/checkpoints/epoch_NNNN/,
/// out_dir/log.jsonl and out_dir/config.resolved.json.
TrainResult train(const TrainConfig& config, const UnpairedDataset& data,
                  const TrainOptions& options);

/// Names of the five bundle files inside a checkpoint directory.
inline constexpr const char* kBundleFiles[5] = {"g_p.lfck", "g_h.lfck", "d_h.lfck", "d_p.lfck",
                                                "d_f.lfck"};

std::vector<IterationRecord> read_log(const std::filesystem::path& log_jsonl);

}  // namespace lf

#pragma once

#include <filesystem>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "lesionforge/image.hpp"
#include "lesionforge/nn/layers.hpp"

namespace lf {

struct GeneratorConfig {
  int masks = 10;  ///< n: one background attention map plus n-1 foreground pairs
  int base_channels = 32;  ///< first-layer width; bottleneck is 8x this
  int res_blocks = 9;
  double dropout = 0.5;
};

struct DiscriminatorConfig {
  int base_channels = 32;
  int downsampling_layers = 3;  ///< stride-2 convolutions before the two stride-1 ones
  bool stub = false;            ///< test hook: score map is the 1x1 input mean
};

void to_json(nlohmann::json& j, const GeneratorConfig& c);
void from_json(const nlohmann::json& j, GeneratorConfig& c);
void to_json(nlohmann::json& j, const DiscriminatorConfig& c);
void from_json(const nlohmann::json& j, DiscriminatorConfig& c);

enum class DiscriminatorRole { kHealthy, kPathological, kForeground };
std::string to_string(DiscriminatorRole role);

/// Graph handles of one generator pass. Channel 0 of the attention stack is
/// the background map.
template <typename T>
struct FusionVars {
  nn::Var<T> attention;       // (n, H, W), pixelwise simplex
  nn::Var<T> attention_fore;  // (n-1, H, W)
  nn::Var<T> attention_back;  // (1, H, W)
  nn::Var<T> content_fore;    // (n-1, H, W), tanh range
  nn::Var<T> fore;            // sum_i C_i * A_i
  nn::Var<T> back;            // x * A_back
  nn::Var<T> output;          // fore + back
};

/// O^fore composited onto the canonical black level: fore + (-1) * A_back.
/// This is what D_F judges, so fakes share the -1 background of X_F images.
template <typename T>
nn::Var<T> foreground_on_background(const FusionVars<T>& f) {
  return nn::add(f.fore, nn::scale(f.attention_back, static_cast<T>(kBackgroundLevel)));
}

/// Encoder (stem, three stride-2 stages, residual blocks with dropout) feeding a
/// content decoder and an attention decoder.
template <typename T>
class GeneratorBundle {
 public:
  GeneratorBundle() = default;
  GeneratorBundle(const GeneratorConfig& config, std::uint64_t seed);

  /// x is (1, H, W) with H and W divisible by 8. Dropout runs only when
  /// dropout_rng is non-null.
  FusionVars<T> forward(const nn::Var<T>& x, Rng* dropout_rng) const;

  nn::Var<T> encode(const nn::Var<T>& x, Rng* dropout_rng) const;
  nn::Var<T> decode_content(const nn::Var<T>& z) const;    // pre-tanh
  nn::Var<T> decode_attention(const nn::Var<T>& z) const;  // pre-softmax

  nn::ParamList<T> parameters() const;
  const GeneratorConfig& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }

  /// Test hook: zeroes the attention head and biases it so the softmax puts
  /// all mass on the background channel.
  void force_background_attention();

 private:
  struct Decoder {
    std::vector<nn::Conv2d<T>> up;
    nn::Conv2d<T> head;
    nn::Var<T> operator()(const nn::Var<T>& z) const;
  };

  GeneratorConfig config_;
  std::uint64_t seed_ = 0;
  nn::Conv2d<T> stem_;
  std::vector<nn::Conv2d<T>> down_;
  std::vector<std::pair<nn::Conv2d<T>, nn::Conv2d<T>>> blocks_;
  Decoder content_;
  Decoder attention_;
};

/// 70x70-receptive-field patch discriminator with instance norm and no output
/// nonlinearity.
template <typename T>
class DiscriminatorBundle {
 public:
  DiscriminatorBundle() = default;
  DiscriminatorBundle(const DiscriminatorConfig& config, DiscriminatorRole role,
                      std::uint64_t seed);

  /// (1, H, W) -> (1, h, w) score map.
  nn::Var<T> forward(const nn::Var<T>& x) const;
  /// Output plane for an H x W input.
  std::pair<int, int> output_size(int height, int width) const;

  nn::ParamList<T> parameters() const;
  const DiscriminatorConfig& config() const { return config_; }
  DiscriminatorRole role() const { return role_; }
  std::uint64_t seed() const { return seed_; }

 private:
  DiscriminatorConfig config_;
  DiscriminatorRole role_ = DiscriminatorRole::kHealthy;
  std::uint64_t seed_ = 0;
  std::vector<nn::Conv2d<T>> layers_;
};

template <typename T>
struct ModelBundles {
  GeneratorBundle<T> g_p;  // healthy -> pathological
  GeneratorBundle<T> g_h;  // pathological -> healthy
  DiscriminatorBundle<T> d_h;
  DiscriminatorBundle<T> d_p;
  DiscriminatorBundle<T> d_f;
};

/// Five bundles with N(0, 0.02) weights; deterministic per seed.
template <typename T>
ModelBundles<T> init_bundles(const GeneratorConfig& gen, const DiscriminatorConfig& disc,
                             std::uint64_t seed);

/// Plain-value view of a forward pass.
struct FusionProducts {
  nn::Tensor<float> attention_fore;  // (n-1, H, W)
  Image2D attention_back;
  nn::Tensor<float> content_fore;  // (n-1, H, W)
  Image2D fore;
  Image2D back;
  Image2D output;
  Image2D fore_canonical;  // fore - A_back, the D_F view
};

FusionProducts generator_forward(const GeneratorBundle<float>& g, const Image2D& x,
                                 bool dropout_active, Rng& rng);
/// Score map of a discriminator as an image-sized grid (h x w).
Image2D discriminate(const DiscriminatorBundle<float>& d, const Image2D& x);

template <typename T>
nn::Tensor<T> image_to_tensor(const Image2D& img);
template <typename T>
Image2D tensor_to_image(const nn::Tensor<T>& t, int channel = 0);

// Checkpoints: one file per bundle. Optimizer moments are optional extras.
struct CheckpointInfo {
  std::string role;
  long long epoch = 0;
  nlohmann::json extra = nlohmann::json::object();
};

template <typename T>
void save_generator(const std::filesystem::path& path, const GeneratorBundle<T>& g,
                    const CheckpointInfo& info, const nn::Adam<T>* opt = nullptr);
template <typename T>
void save_discriminator(const std::filesystem::path& path, const DiscriminatorBundle<T>& d,
                        const CheckpointInfo& info, const nn::Adam<T>* opt = nullptr);

/// Loads parameters (and optimizer state into `opt` when given and present).
template <typename T>
GeneratorBundle<T> load_generator(const std::filesystem::path& path,
                                  CheckpointInfo* info = nullptr);
template <typename T>
DiscriminatorBundle<T> load_discriminator(const std::filesystem::path& path,
                                          CheckpointInfo* info = nullptr);
template <typename T>
void load_optimizer_state(const std::filesystem::path& path, nn::Adam<T>& opt);

}  // namespace lf

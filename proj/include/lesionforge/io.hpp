#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "lesionforge/image.hpp"

namespace lf {

namespace fs = std::filesystem;

enum class ImageFormat {
  kPng16,     ///< 16-bit grayscale PNG, [-1, 1] mapped linearly onto [0, 65535]
  kRawFloat,  ///< float32 little-endian row-major + JSON sidecar
};

/// Writes `<stem>.png` or `<stem>.raw` + `<stem>.json`; returns the image path.
fs::path save_image(const Image2D& img, const fs::path& stem, ImageFormat format);
/// Dispatches on extension (.png or .raw).
Image2D load_image(const fs::path& path);

/// 8-bit PNG, {0,1} stored as {0,255}.
void save_mask(const BinaryMask2D& mask, const fs::path& path);
BinaryMask2D load_mask(const fs::path& path);

/// Raw input volume before preprocessing. depth == 1 for 2D inputs.
struct Volume {
  int depth = 1;
  int height = 0;
  int width = 0;
  std::array<double, 3> spacing{1.0, 1.0, 1.0};  // (slice, row, col) mm
  std::vector<float> voxels;                     // slice-major, then row-major
};

/// Reads a raw float32 volume ({"d","h","w","spacing"} sidecar; "d" and a
/// 3-entry spacing are optional) or a PNG (8- or 16-bit, raw code values).
Volume load_volume(const fs::path& path);

/// Centre slice (floor(D/2)), resample to 1 mm in-plane, resize to
/// target x target, normalize.
Image2D preprocess_slice(const Volume& volume, int target_size,
                         const NormalizeOptions& norm = {});
Image2D preprocess_slice(const fs::path& path, int target_size,
                         const NormalizeOptions& norm = {});

struct PathologicalItem {
  std::string id;
  Image2D image;
  BinaryMask2D mask;
};

/// X_H, X_P (with masks) and the derived X_F.
struct UnpairedDataset {
  std::vector<std::string> healthy_ids;
  std::vector<Image2D> healthy;
  std::vector<PathologicalItem> pathological;
  std::vector<Image2D> foreground;  // make_foreground of each pathological item
};

/// Image files in a directory (.png / .raw), sorted by stem.
std::vector<fs::path> list_images(const fs::path& dir);

/// Reads root/healthy, root/pathological/images, root/pathological/masks.
/// Images outside [-1, 1] are percentile-normalized on load.
UnpairedDataset load_dataset(const fs::path& root);

/// Creates the directory skeleton of the dataset layout.
void create_dataset_layout(const fs::path& root);

}  // namespace lf

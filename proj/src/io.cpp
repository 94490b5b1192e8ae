#include "lesionforge/io.hpp"

#include <png.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <nlohmann/json.hpp>
#include <set>

namespace lf {

namespace {

using json = nlohmann::json;

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const fs::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw std::runtime_error("cannot open " + path.string());
  return f;
}

// Raw grayscale PNG contents: bit depth 8 or 16, code values as read.
struct PngGray {
  int height = 0;
  int width = 0;
  int bit_depth = 8;
  std::vector<std::uint16_t> values;
};

[[noreturn]] void png_fail(png_structp, png_const_charp msg) { throw std::runtime_error(msg); }
void png_warn(png_structp, png_const_charp) {}

PngGray read_png(const fs::path& path) {
  auto file = open_file(path, "rb");
  png_byte sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8))
    throw InputError("not a PNG file: " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
  png_infop info = png_create_info_struct(png);
  PngGray out;
  try {
    png_init_io(png, file.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    const int color = png_get_color_type(png, info);
    int depth = png_get_bit_depth(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) {
      png_set_expand_gray_1_2_4_to_8(png);
      depth = 8;
    }
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA ||
        color == PNG_COLOR_TYPE_PALETTE)
      png_set_rgb_to_gray_fixed(png, 1, -1, -1);
    if (depth == 16 && std::endian::native == std::endian::little) png_set_swap(png);
    png_read_update_info(png, info);
    out.height = static_cast<int>(png_get_image_height(png, info));
    out.width = static_cast<int>(png_get_image_width(png, info));
    out.bit_depth = png_get_bit_depth(png, info);
    const std::size_t rowbytes = png_get_rowbytes(png, info);
    std::vector<png_byte> buf(rowbytes * out.height);
    std::vector<png_bytep> rows(out.height);
    for (int y = 0; y < out.height; ++y) rows[y] = buf.data() + rowbytes * y;
    png_read_image(png, rows.data());
    out.values.resize(static_cast<std::size_t>(out.height) * out.width);
    for (int y = 0; y < out.height; ++y)
      for (int x = 0; x < out.width; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * out.width + x;
        if (out.bit_depth == 16) {
          std::uint16_t v;
          std::memcpy(&v, rows[y] + 2 * x, 2);
          out.values[i] = v;
        } else {
          out.values[i] = rows[y][x];
        }
      }
  } catch (...) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

void write_png(const fs::path& path, int height, int width, int bit_depth,
               const std::vector<std::uint16_t>& values) {
  auto file = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
  png_infop info = png_create_info_struct(png);
  try {
    png_init_io(png, file.get());
    png_set_IHDR(png, info, width, height, bit_depth, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    if (bit_depth == 16 && std::endian::native == std::endian::little) png_set_swap(png);
    const int bpp = bit_depth / 8;
    std::vector<png_byte> row(static_cast<std::size_t>(width) * bpp);
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        const std::uint16_t v = values[static_cast<std::size_t>(y) * width + x];
        if (bpp == 2)
          std::memcpy(row.data() + 2 * x, &v, 2);
        else
          row[x] = static_cast<png_byte>(v);
      }
      png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
  } catch (...) {
    png_destroy_write_struct(&png, &info);
    throw;
  }
  png_destroy_write_struct(&png, &info);
}

fs::path sidecar_of(const fs::path& raw) {
  fs::path s = raw;
  s.replace_extension(".json");
  return s;
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("missing sidecar " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw InputError("bad JSON in " + path.string() + ": " + e.what());
  }
}

std::vector<float> read_raw_floats(const fs::path& path, std::size_t n) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<float> data(n);
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(n * sizeof(float)));
  if (static_cast<std::size_t>(in.gcount()) != n * sizeof(float))
    throw InputError("raw file too short: " + path.string());
  static_assert(std::endian::native == std::endian::little, "raw reader assumes little-endian");
  return data;
}

}  // namespace

fs::path save_image(const Image2D& img, const fs::path& stem, ImageFormat format) {
  if (format == ImageFormat::kPng16) {
    fs::path path = stem;
    path.replace_extension(".png");
    std::vector<std::uint16_t> values(img.size());
    for (std::size_t i = 0; i < img.size(); ++i) {
      const double v = std::clamp(static_cast<double>(img[i]), -1.0, 1.0);
      values[i] = static_cast<std::uint16_t>(std::lround((v + 1.0) * 0.5 * 65535.0));
    }
    write_png(path, img.height(), img.width(), 16, values);
    return path;
  }
  fs::path path = stem;
  path.replace_extension(".raw");
  {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    static_assert(std::endian::native == std::endian::little, "raw writer assumes little-endian");
    out.write(reinterpret_cast<const char*>(img.data().data()),
              static_cast<std::streamsize>(img.size() * sizeof(float)));
  }
  json side = {{"h", img.height()},
               {"w", img.width()},
               {"spacing", {img.spacing.row, img.spacing.col}}};
  std::ofstream(sidecar_of(path)) << side.dump() << '\n';
  return path;
}

Image2D load_image(const fs::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".png") {
    const PngGray png = read_png(path);
    const double maxv = png.bit_depth == 16 ? 65535.0 : 255.0;
    Image2D img(png.height, png.width);
    for (std::size_t i = 0; i < img.size(); ++i)
      img[i] = static_cast<float>(png.values[i] / maxv * 2.0 - 1.0);
    return img;
  }
  if (ext == ".raw") {
    const json side = read_json_file(sidecar_of(path));
    const int h = side.at("h").get<int>(), w = side.at("w").get<int>();
    if (side.value("d", 1) != 1) throw InputError("3D raw volume where a 2D image is expected: " + path.string());
    Image2D img(h, w, read_raw_floats(path, static_cast<std::size_t>(h) * w));
    if (side.contains("spacing")) {
      const auto& sp = side["spacing"];
      img.spacing = {sp.at(sp.size() - 2).get<double>(), sp.at(sp.size() - 1).get<double>()};
    }
    return img;
  }
  throw InputError("unsupported image format: " + path.string());
}

void save_mask(const BinaryMask2D& mask, const fs::path& path) {
  std::vector<std::uint16_t> values(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) values[i] = mask[i] ? 255 : 0;
  write_png(path, mask.height(), mask.width(), 8, values);
}

BinaryMask2D load_mask(const fs::path& path) {
  if (path.extension() != ".png") throw InputError("masks must be PNG: " + path.string());
  const PngGray png = read_png(path);
  const unsigned half = png.bit_depth == 16 ? 32768u : 128u;
  BinaryMask2D mask(png.height, png.width);
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = png.values[i] >= half ? 1 : 0;
  return mask;
}

Volume load_volume(const fs::path& path) {
  Volume vol;
  const auto ext = path.extension().string();
  if (ext == ".png") {
    const PngGray png = read_png(path);
    vol.height = png.height;
    vol.width = png.width;
    vol.voxels.assign(png.values.begin(), png.values.end());
  } else if (ext == ".raw") {
    const json side = read_json_file(sidecar_of(path));
    vol.depth = side.value("d", 1);
    vol.height = side.at("h").get<int>();
    vol.width = side.at("w").get<int>();
    if (side.contains("spacing")) {
      const auto& sp = side["spacing"];
      if (sp.size() == 3)
        vol.spacing = {sp[0].get<double>(), sp[1].get<double>(), sp[2].get<double>()};
      else if (sp.size() == 2)
        vol.spacing = {1.0, sp[0].get<double>(), sp[1].get<double>()};
      else
        throw InputError("spacing must have 2 or 3 entries: " + path.string());
    }
    if (vol.depth < 1 || vol.height < 1 || vol.width < 1)
      throw InputError("empty volume: " + path.string());
    vol.voxels = read_raw_floats(path, static_cast<std::size_t>(vol.depth) * vol.height * vol.width);
  } else {
    throw InputError("unsupported format: " + path.string());
  }
  return vol;
}

Image2D preprocess_slice(const Volume& volume, int target_size, const NormalizeOptions& norm) {
  if (volume.depth < 1 || volume.height < 1 || volume.width < 1 || volume.voxels.empty())
    throw InputError("empty volume");
  if (target_size < 2) throw InputError("target size must be >= 2");
  const int slice = volume.depth / 2;
  const std::size_t plane = static_cast<std::size_t>(volume.height) * volume.width;
  Image2D img(volume.height, volume.width,
              std::vector<float>(volume.voxels.begin() + slice * plane,
                                 volume.voxels.begin() + (slice + 1) * plane));
  img.spacing = {volume.spacing[1], volume.spacing[2]};

  // Isotropic 1 mm in-plane grid.
  const int iso_h = std::max(2, static_cast<int>(std::lround(img.height() * img.spacing.row)));
  const int iso_w = std::max(2, static_cast<int>(std::lround(img.width() * img.spacing.col)));
  if (iso_h != img.height() || iso_w != img.width()) img = resize_bilinear(img, iso_h, iso_w);
  if (img.height() != target_size || img.width() != target_size)
    img = resize_bilinear(img, target_size, target_size);
  img.spacing = {1.0, 1.0};
  return normalize(img, norm);
}

Image2D preprocess_slice(const fs::path& path, int target_size, const NormalizeOptions& norm) {
  return preprocess_slice(load_volume(path), target_size, norm);
}

std::vector<fs::path> list_images(const fs::path& dir) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const auto ext = entry.path().extension();
    if (ext == ".png" || ext == ".raw") out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end(),
            [](const fs::path& a, const fs::path& b) { return a.stem() < b.stem(); });
  return out;
}

namespace {

Image2D load_network_image(const fs::path& path) {
  Image2D img = load_image(path);
  const auto [mn, mx] = std::minmax_element(img.pixels().begin(), img.pixels().end());
  if (img.empty() || *mn < -1.0f || *mx > 1.0f) {
    spdlog::info("{}: values outside [-1, 1], applying percentile normalization",
                 path.filename().string());
    img = normalize(img, {});
  }
  return img;
}

}  // namespace

UnpairedDataset load_dataset(const fs::path& root) {
  if (!fs::is_directory(root)) throw InputError("dataset root not found: " + root.string());
  UnpairedDataset ds;
  const auto healthy = list_images(root / "healthy");
  const auto patho = list_images(root / "pathological" / "images");
  ds.healthy.resize(healthy.size());
  ds.healthy_ids.resize(healthy.size());
  ds.pathological.resize(patho.size());

  parallel_for(healthy.size(), [&](std::size_t i) {
    ds.healthy_ids[i] = healthy[i].stem().string();
    ds.healthy[i] = load_network_image(healthy[i]);
  });
  parallel_for(patho.size(), [&](std::size_t i) {
    const fs::path mask_path = root / "pathological" / "masks" / (patho[i].stem().string() + ".png");
    if (!fs::exists(mask_path))
      throw InputError("missing mask for " + patho[i].filename().string());
    PathologicalItem item;
    item.id = patho[i].stem().string();
    item.image = load_network_image(patho[i]);
    item.mask = load_mask(mask_path);
    require_same_shape(item.image, item.mask, "image/mask " + item.id);
    ds.pathological[i] = std::move(item);
  });
  ds.foreground.reserve(ds.pathological.size());
  for (const auto& item : ds.pathological) ds.foreground.push_back(make_foreground(item.image, item.mask));
  spdlog::info("loaded dataset {}: {} healthy, {} pathological", root.string(), ds.healthy.size(),
               ds.pathological.size());
  return ds;
}

void create_dataset_layout(const fs::path& root) {
  fs::create_directories(root / "healthy");
  fs::create_directories(root / "pathological" / "images");
  fs::create_directories(root / "pathological" / "masks");
}

}  // namespace lf

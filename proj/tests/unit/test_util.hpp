#pragma once

#include <cmath>
#include <filesystem>
#include <random>
#include <string>

#include "lesionforge/image.hpp"

namespace lft {

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("lesionforge_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline lf::BinaryMask2D random_mask(std::mt19937_64& rng, int h, int w, double density) {
  std::bernoulli_distribution bit(density);
  lf::BinaryMask2D m(h, w);
  for (auto& v : m.pixels()) v = bit(rng) ? 1 : 0;
  return m;
}

inline lf::Image2D random_image(std::mt19937_64& rng, int h, int w, float lo = -1.f, float hi = 1.f) {
  std::uniform_real_distribution<float> u(lo, hi);
  lf::Image2D img(h, w);
  for (auto& v : img.pixels()) v = u(rng);
  return img;
}

inline lf::BinaryMask2D disc_mask(int h, int w, double cy, double cx, double r) {
  lf::BinaryMask2D m(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      m(y, x) = (y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r ? 1 : 0;
  return m;
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) ma += a[i], mb += b[i];
  ma /= a.size();
  mb /= b.size();
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

}  // namespace lft

#include "lesionforge/phantom.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

namespace lf::phantom {

using nlohmann::json;

void to_json(json& j, const PhantomSpec& s) {
  j = json{{"size", s.size},
           {"brain_axes", s.brain_axes},
           {"ventricle_axes", s.ventricle_axes},
           {"wm_texture_amplitude", s.wm_texture_amplitude},
           {"lesion_count_range", {s.lesion_count_range.first, s.lesion_count_range.second}},
           {"lesion_radius_range", {s.lesion_radius_range.first, s.lesion_radius_range.second}},
           {"lesion_intensity_boost", s.lesion_intensity_boost},
           {"seed", s.seed},
           {"axis_jitter", s.axis_jitter},
           {"brightness_jitter", s.brightness_jitter},
           {"ventricle_dilation_range",
            {s.ventricle_dilation_range.first, s.ventricle_dilation_range.second}},
           {"wm_level", s.wm_level},
           {"gm_level", s.gm_level},
           {"csf_level", s.csf_level},
           {"cortex_thickness", s.cortex_thickness},
           {"bias_amplitude", s.bias_amplitude},
           {"prior_band_distance", s.prior_band_distance},
           {"prior_band_width", s.prior_band_width},
           {"lesion_profile_threshold", s.lesion_profile_threshold}};
  if (s.lesion_prior) {
    j["lesion_prior"] = {{"h", s.lesion_prior->height()},
                         {"w", s.lesion_prior->width()},
                         {"data", s.lesion_prior->data()}};
  } else {
    j["lesion_prior"] = nullptr;
  }
}

void from_json(const json& j, PhantomSpec& s) {
  const PhantomSpec d;
  auto pair_of = [&](const char* key, auto fallback) {
    if (!j.contains(key)) return fallback;
    const auto& a = j.at(key);
    if (!a.is_array() || a.size() != 2) throw InputError(std::string(key) + " must be a 2-array");
    return decltype(fallback){a[0].get<typename decltype(fallback)::first_type>(),
                              a[1].get<typename decltype(fallback)::second_type>()};
  };
  s.size = j.value("size", d.size);
  s.brain_axes = j.value("brain_axes", d.brain_axes);
  s.ventricle_axes = j.value("ventricle_axes", d.ventricle_axes);
  s.wm_texture_amplitude = j.value("wm_texture_amplitude", d.wm_texture_amplitude);
  s.lesion_count_range = pair_of("lesion_count_range", d.lesion_count_range);
  s.lesion_radius_range = pair_of("lesion_radius_range", d.lesion_radius_range);
  s.lesion_intensity_boost = j.value("lesion_intensity_boost", d.lesion_intensity_boost);
  s.seed = j.value("seed", d.seed);
  s.axis_jitter = j.value("axis_jitter", d.axis_jitter);
  s.brightness_jitter = j.value("brightness_jitter", d.brightness_jitter);
  s.ventricle_dilation_range = pair_of("ventricle_dilation_range", d.ventricle_dilation_range);
  s.wm_level = j.value("wm_level", d.wm_level);
  s.gm_level = j.value("gm_level", d.gm_level);
  s.csf_level = j.value("csf_level", d.csf_level);
  s.cortex_thickness = j.value("cortex_thickness", d.cortex_thickness);
  s.bias_amplitude = j.value("bias_amplitude", d.bias_amplitude);
  s.prior_band_distance = j.value("prior_band_distance", d.prior_band_distance);
  s.prior_band_width = j.value("prior_band_width", d.prior_band_width);
  s.lesion_profile_threshold = j.value("lesion_profile_threshold", d.lesion_profile_threshold);
  s.lesion_prior.reset();
  if (j.contains("lesion_prior") && !j["lesion_prior"].is_null()) {
    const auto& p = j["lesion_prior"];
    s.lesion_prior = Image2D(p.at("h").get<int>(), p.at("w").get<int>(),
                             p.at("data").get<std::vector<float>>());
  }
}

void validate(const PhantomSpec& s) {
  if (s.size < 16) throw InputError("phantom size must be >= 16");
  for (int a = 0; a < 2; ++a) {
    if (!(s.brain_axes[a] > 0.0 && s.brain_axes[a] < 0.5))
      throw InputError("brain_axes must lie in (0, 0.5)");
    if (!(s.ventricle_axes[a] > 0.0)) throw InputError("ventricle_axes must be positive");
    if (s.ventricle_axes[a] >= s.brain_axes[a])
      throw InputError("ventricle axes must be smaller than brain axes");
  }
  if (s.lesion_count_range.first < 0 || s.lesion_count_range.second < s.lesion_count_range.first)
    throw InputError("invalid lesion_count_range");
  if (!(s.lesion_radius_range.first > 0.0) ||
      s.lesion_radius_range.second < s.lesion_radius_range.first)
    throw InputError("invalid lesion_radius_range");
  if (s.ventricle_dilation_range.first < 0 ||
      s.ventricle_dilation_range.second < s.ventricle_dilation_range.first)
    throw InputError("invalid ventricle_dilation_range");
  if (!(s.lesion_profile_threshold > 0.0 && s.lesion_profile_threshold < 1.0))
    throw InputError("lesion_profile_threshold must lie in (0, 1)");
  if (s.lesion_prior && (s.lesion_prior->height() != s.size || s.lesion_prior->width() != s.size))
    throw InputError("lesion_prior must be size x size");
}

namespace {

enum Stream : std::uint64_t { kAnatomy = 1, kLesions = 2 };

struct Anatomy {
  HealthyPhantom parts;
  BinaryMask2D cortex;
  Image2D bias;     // smooth field
  Image2D texture;  // unit-free, already scaled
  double brightness = 0.0;
};

double scale_of(const PhantomSpec& s) { return s.size / 64.0; }

BinaryMask2D ellipse(int size, double ay, double ax) {
  BinaryMask2D m(size, size);
  const double c = (size - 1) / 2.0;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double u = (y - c) / ay, v = (x - c) / ax;
      m(y, x) = u * u + v * v <= 1.0 ? 1 : 0;
    }
  return m;
}

Image2D gaussian_blur(const Image2D& img, double sigma) {
  const int r = std::max(1, static_cast<int>(std::ceil(3 * sigma)));
  std::vector<double> k(2 * r + 1);
  double sum = 0;
  for (int i = -r; i <= r; ++i) sum += k[i + r] = std::exp(-i * i / (2 * sigma * sigma));
  for (auto& v : k) v /= sum;
  const int h = img.height(), w = img.width();
  Image2D tmp(h, w), out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0;
      for (int i = -r; i <= r; ++i) acc += k[i + r] * img(y, std::clamp(x + i, 0, w - 1));
      tmp(y, x) = static_cast<float>(acc);
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0;
      for (int i = -r; i <= r; ++i) acc += k[i + r] * tmp(std::clamp(y + i, 0, h - 1), x);
      out(y, x) = static_cast<float>(acc);
    }
  return out;
}

BinaryMask2D cortex_rim(const PhantomSpec& s, const BinaryMask2D& brain) {
  BinaryMask2D outside(brain.height(), brain.width());
  for (std::size_t i = 0; i < brain.size(); ++i) outside[i] = brain[i] ? 0 : 1;
  const auto d2 = squared_distance_transform(outside);
  const double t = s.cortex_thickness * scale_of(s);
  BinaryMask2D rim(brain.height(), brain.width());
  for (std::size_t i = 0; i < brain.size(); ++i)
    rim[i] = (brain[i] && d2[i] <= t * t) ? 1 : 0;
  return rim;
}

Anatomy build_anatomy(const PhantomSpec& s, std::optional<int> idx) {
  validate(s);
  const int n = s.size;
  Anatomy a;
  std::array<double, 4> jit{0, 0, 0, 0};
  Rng rng = make_rng(s.seed, idx.value_or(0), kAnatomy);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  if (idx) {
    for (auto& j : jit) j = s.axis_jitter * unit(rng);
    a.brightness = s.brightness_jitter * unit(rng);
  }
  const double by = s.brain_axes[0] * n * (1 + jit[0]), bx = s.brain_axes[1] * n * (1 + jit[1]);
  double vy = s.ventricle_axes[0] * n * (1 + jit[2]), vx = s.ventricle_axes[1] * n * (1 + jit[3]);
  a.parts.brain = ellipse(n, by, bx);
  a.parts.ventricle = ellipse(n, vy, vx);
  a.cortex = cortex_rim(s, a.parts.brain);
  a.parts.ventricle = mask_andnot(a.parts.ventricle, a.cortex);

  a.bias = Image2D(n, n);
  a.texture = Image2D(n, n);
  if (idx) {
    const double p1 = std::numbers::pi * unit(rng), p2 = std::numbers::pi * unit(rng);
    const double c1 = unit(rng), c2 = unit(rng);
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        const double u = 2.0 * y / (n - 1) - 1.0, v = 2.0 * x / (n - 1) - 1.0;
        a.bias(y, x) = static_cast<float>(
            s.bias_amplitude * 0.5 *
            (c1 * std::cos(std::numbers::pi * u + p1) + c2 * std::sin(std::numbers::pi * v + p2)));
      }
    Image2D noise(n, n);
    for (auto& v : noise.data()) v = static_cast<float>(gauss(rng));
    noise = gaussian_blur(noise, 1.0);
    double ss = 0;
    for (float v : noise.pixels()) ss += double(v) * v;
    const double sd = std::sqrt(ss / noise.size());
    for (std::size_t i = 0; i < noise.size(); ++i)
      a.texture[i] = static_cast<float>(s.wm_texture_amplitude * noise[i] / (sd > 0 ? sd : 1.0));
  }

  Image2D& img = a.parts.image;
  img = Image2D(n, n, kBackgroundLevel);
  for (std::size_t i = 0; i < img.size(); ++i) {
    if (!a.parts.brain[i]) continue;
    double v;
    if (a.parts.ventricle[i])
      v = s.csf_level + 0.5 * (a.bias[i] + a.texture[i]);
    else
      v = (a.cortex[i] ? s.gm_level : s.wm_level) + a.brightness + a.bias[i] + a.texture[i];
    img[i] = static_cast<float>(std::clamp(v, -1.0, 1.0));
  }
  return a;
}

}  // namespace

HealthyPhantom canonical_anatomy(const PhantomSpec& spec) {
  return build_anatomy(spec, std::nullopt).parts;
}

BinaryMask2D white_matter(const PhantomSpec& spec, const HealthyPhantom& anatomy) {
  const BinaryMask2D rim = cortex_rim(spec, anatomy.brain);
  return mask_andnot(mask_andnot(anatomy.brain, rim), anatomy.ventricle);
}

Image2D lesion_prior(const PhantomSpec& spec) {
  validate(spec);
  const HealthyPhantom canon = canonical_anatomy(spec);
  const BinaryMask2D wm = white_matter(spec, canon);
  Image2D prior(spec.size, spec.size, 0.0f);
  if (spec.lesion_prior) {
    for (std::size_t i = 0; i < prior.size(); ++i)
      prior[i] = wm[i] ? std::max(0.0f, (*spec.lesion_prior)[i]) : 0.0f;
  } else {
    // Periventricular band, heavier around the ventricular horns.
    const auto d2 = squared_distance_transform(canon.ventricle);
    const double d0 = spec.prior_band_distance * scale_of(spec);
    const double w = spec.prior_band_width * scale_of(spec);
    const double c = (spec.size - 1) / 2.0;
    for (int y = 0; y < spec.size; ++y)
      for (int x = 0; x < spec.size; ++x) {
        if (!wm(y, x)) continue;
        const double d = std::sqrt(d2(y, x));
        const double r = std::hypot(y - c, x - c);
        const double cos_t = r > 0 ? (y - c) / r : 0.0;
        const double band = std::exp(-(d - d0) * (d - d0) / (2 * w * w));
        prior(y, x) = static_cast<float>(band * (1.0 + 1.5 * cos_t * cos_t));
      }
  }
  double total = 0;
  for (float v : prior.pixels()) total += v;
  if (!(total > 0)) throw InputError("lesion prior has zero mass over white matter");
  for (auto& v : prior.data()) v = static_cast<float>(v / total);
  return prior;
}

HealthyPhantom gen_healthy(const PhantomSpec& spec, int idx) {
  return build_anatomy(spec, idx).parts;
}

double mean_profile_over_support(double t) { return (1.0 - t) / std::log(1.0 / t); }

PathologicalPhantom add_lesions(const HealthyPhantom& healthy, const PhantomSpec& spec, int idx) {
  const Anatomy anat = build_anatomy(spec, idx);
  require_same_shape(healthy.image, anat.parts.image, "add_lesions");
  const int n = spec.size;
  Rng rng = make_rng(spec.seed, static_cast<std::uint64_t>(idx), kLesions);
  std::uniform_int_distribution<int> count_dist(spec.lesion_count_range.first,
                                                spec.lesion_count_range.second);
  const int k = count_dist(rng);

  PathologicalPhantom out;
  out.image = healthy.image;
  out.lesion = BinaryMask2D(n, n);
  out.ventricle = healthy.ventricle;
  out.lesion_count = k;
  if (k == 0) return out;

  std::uniform_int_distribution<int> dil_dist(spec.ventricle_dilation_range.first,
                                              spec.ventricle_dilation_range.second);
  out.ventricle_dilation = dil_dist(rng);
  const BinaryMask2D interior = mask_andnot(healthy.brain, anat.cortex);
  out.ventricle = mask_and(dilate(healthy.ventricle, out.ventricle_dilation), interior);
  for (std::size_t i = 0; i < out.image.size(); ++i)
    if (out.ventricle[i] && !healthy.ventricle[i])
      out.image[i] = static_cast<float>(
          std::clamp(spec.csf_level + 0.5 * (anat.bias[i] + anat.texture[i]), -1.0, 1.0));

  const Image2D prior = lesion_prior(spec);
  const BinaryMask2D allowed = mask_andnot(healthy.brain, out.ventricle);
  const double t = spec.lesion_profile_threshold;
  const double sigma_per_radius = 1.0 / std::sqrt(2.0 * std::log(1.0 / t));

  std::uniform_real_distribution<double> radius_dist(spec.lesion_radius_range.first,
                                                     spec.lesion_radius_range.second);
  std::uniform_real_distribution<double> sub(-0.5, 0.5);
  std::vector<double> profile(out.image.size(), 0.0);
  std::vector<double> weights(out.image.size());
  for (int l = 0; l < k; ++l) {
    const double radius = radius_dist(rng);
    double mass = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      weights[i] = allowed[i] ? prior[i] : 0.0;
      mass += weights[i];
    }
    if (!(mass > 0)) throw InputError("lesion prior mass is zero over the valid region");
    std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
    const std::size_t centre = pick(rng);
    const double cy = static_cast<double>(centre / n) + sub(rng);
    const double cx = static_cast<double>(centre % n) + sub(rng);
    const double sigma = radius * sigma_per_radius;
    const int reach = static_cast<int>(std::ceil(3 * sigma)) + 1;
    for (int y = std::max(0, int(cy) - reach); y <= std::min(n - 1, int(cy) + reach); ++y)
      for (int x = std::max(0, int(cx) - reach); x <= std::min(n - 1, int(cx) + reach); ++x) {
        const double r2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
        profile[static_cast<std::size_t>(y) * n + x] += std::exp(-r2 / (2 * sigma * sigma));
      }
  }
  for (std::size_t i = 0; i < profile.size(); ++i) {
    const double p = std::min(1.0, profile[i]);
    if (p >= t && allowed[i]) {
      out.lesion[i] = 1;
      out.image[i] = static_cast<float>(
          std::clamp(out.image[i] + spec.lesion_intensity_boost * p, -1.0, 1.0));
    }
  }
  return out;
}

GeneratedDataset gen_dataset(const PhantomSpec& spec, int n_healthy, int n_pathological,
                             const std::filesystem::path& out_dir, ImageFormat format) {
  validate(spec);
  if (n_healthy < 0 || n_pathological < 0) throw InputError("subject counts must be >= 0");
  create_dataset_layout(out_dir);
  std::filesystem::create_directories(out_dir / "aux" / "brain");
  std::filesystem::create_directories(out_dir / "aux" / "ventricle");
  std::filesystem::create_directories(out_dir / "aux" / "healthy_source");

  GeneratedDataset ids;
  ids.healthy_ids.resize(n_healthy);
  ids.pathological_ids.resize(n_pathological);
  const auto aux = out_dir / "aux";
  parallel_for(static_cast<std::size_t>(n_healthy), [&](std::size_t i) {
    char name[32];
    std::snprintf(name, sizeof name, "h%04zu", i);
    const HealthyPhantom h = gen_healthy(spec, static_cast<int>(i));
    save_image(h.image, out_dir / "healthy" / name, format);
    save_mask(h.brain, aux / "brain" / (std::string(name) + ".png"));
    save_mask(h.ventricle, aux / "ventricle" / (std::string(name) + ".png"));
    ids.healthy_ids[i] = name;
  });
  parallel_for(static_cast<std::size_t>(n_pathological), [&](std::size_t i) {
    char name[32];
    std::snprintf(name, sizeof name, "p%04zu", i);
    const int idx = n_healthy + static_cast<int>(i);
    const HealthyPhantom h = gen_healthy(spec, idx);
    const PathologicalPhantom p = add_lesions(h, spec, idx);
    save_image(p.image, out_dir / "pathological" / "images" / name, format);
    save_mask(p.lesion, out_dir / "pathological" / "masks" / (std::string(name) + ".png"));
    save_mask(h.brain, aux / "brain" / (std::string(name) + ".png"));
    save_mask(p.ventricle, aux / "ventricle" / (std::string(name) + ".png"));
    save_image(h.image, aux / "healthy_source" / name, format);
    ids.pathological_ids[i] = name;
  });
  save_image(lesion_prior(spec), aux / "lesion_prior", ImageFormat::kRawFloat);
  json j = spec;
  std::ofstream(out_dir / "phantom_spec.json") << j.dump(2) << '\n';
  spdlog::info("phantom dataset {}: {} healthy, {} pathological", out_dir.string(), n_healthy,
               n_pathological);
  return ids;
}

}  // namespace lf::phantom

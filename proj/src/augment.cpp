#include "lesionforge/augment.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>

namespace lf {

using nlohmann::json;
namespace fs = std::filesystem;

NLOHMANN_JSON_SERIALIZE_ENUM(ThresholdMode, {{ThresholdMode::kAbsolute, "absolute"},
                                             {ThresholdMode::kKSigma, "k_sigma"}})

void to_json(json& j, const MaskExtractConfig& c) {
  j = json{{"threshold_mode", c.mode},
           {"k", c.k},
           {"absolute_threshold", c.absolute_threshold},
           {"min_threshold", c.min_threshold},
           {"min_component_px", c.min_component_px},
           {"closing_radius", c.closing_radius},
           {"air_level", c.air_level}};
}

void from_json(const json& j, MaskExtractConfig& c) {
  const MaskExtractConfig d;
  c.mode = j.value("threshold_mode", d.mode);
  c.k = j.value("k", d.k);
  c.absolute_threshold = j.value("absolute_threshold", d.absolute_threshold);
  c.min_threshold = j.value("min_threshold", d.min_threshold);
  c.min_component_px = j.value("min_component_px", d.min_component_px);
  c.closing_radius = j.value("closing_radius", d.closing_radius);
  c.air_level = j.value("air_level", d.air_level);
}

void validate(const MaskExtractConfig& c) {
  if (!(c.k > 0)) throw InputError("mask extraction k must be > 0");
  if (c.min_component_px < 0 || c.closing_radius < 0)
    throw InputError("min_component_px and closing_radius must be >= 0");
  if (!(c.min_threshold >= 0) || !(c.absolute_threshold >= 0))
    throw InputError("thresholds must be >= 0");
}

void to_json(json& j, const AugmentConfig& c) {
  j = json{{"k_per_subject", c.k_per_subject},
           {"seed", c.seed},
           {"dropout", c.dropout},
           {"include_real", c.include_real},
           {"ffd", c.ffd},
           {"mask", c.mask},
           {"format", c.format == ImageFormat::kPng16 ? "png16" : "raw"}};
}

void from_json(const json& j, AugmentConfig& c) {
  const AugmentConfig d;
  c.k_per_subject = j.value("k_per_subject", d.k_per_subject);
  c.seed = j.value("seed", d.seed);
  c.dropout = j.value("dropout", d.dropout);
  c.include_real = j.value("include_real", d.include_real);
  c.ffd = j.value("ffd", d.ffd);
  c.mask = j.value("mask", d.mask);
  const std::string fmt = j.value("format", std::string("png16"));
  if (fmt == "png16") c.format = ImageFormat::kPng16;
  else if (fmt == "raw") c.format = ImageFormat::kRawFloat;
  else throw InputError("unknown image format '" + fmt + "'");
}

std::vector<SynthesisSample> synthesize(const GeneratorBundle<float>& g, const Image2D& x,
                                        int k_samples, bool dropout_active, std::uint64_t seed) {
  if (k_samples < 1) throw InputError("synthesize needs k_samples >= 1");
  std::vector<SynthesisSample> out(static_cast<std::size_t>(k_samples));
  for (int s = 0; s < k_samples; ++s) {
    Rng rng = make_rng(seed, static_cast<std::uint64_t>(s));
    SynthesisSample& smp = out[static_cast<std::size_t>(s)];
    smp.products = generator_forward(g, x, dropout_active, rng);
    smp.image = smp.products.output;
  }
  return out;
}

namespace {

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  double m = v[mid];
  if (v.size() % 2 == 0) m = 0.5 * (m + *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid)));
  return m;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace

double extraction_threshold(const Image2D& warped, const Image2D& synth,
                            const MaskExtractConfig& cfg) {
  require_same_shape(warped, synth, "extract_mask");
  if (cfg.mode == ThresholdMode::kAbsolute) return cfg.absolute_threshold;
  std::vector<double> d;
  d.reserve(warped.size());
  for (std::size_t i = 0; i < warped.size(); ++i)
    if (std::max(warped[i], synth[i]) > cfg.air_level)
      d.push_back(static_cast<double>(synth[i]) - warped[i]);
  const double med = median(d);
  for (double& v : d) v = std::abs(v - med);
  const double sigma = 1.4826 * median(std::move(d));
  return std::max(cfg.k * sigma, cfg.min_threshold);
}

BinaryMask2D extract_mask(const Image2D& warped, const Image2D& synth,
                          const MaskExtractConfig& cfg) {
  validate(cfg);
  const double t = extraction_threshold(warped, synth, cfg);
  BinaryMask2D m(warped.height(), warped.width());
  m.spacing = warped.spacing;
  for (std::size_t i = 0; i < m.size(); ++i)
    m[i] = (static_cast<double>(synth[i]) - warped[i]) > t ? 1 : 0;
  m = remove_small_components(m, static_cast<std::size_t>(cfg.min_component_px));
  if (cfg.closing_radius > 0) m = close(m, cfg.closing_radius);
  return m;
}

double background_preservation(const Image2D& source, const Image2D& synth,
                               const BinaryMask2D& lesion, int margin) {
  require_same_shape(source, synth, "background_preservation");
  require_same_shape(source, lesion, "background_preservation");
  BinaryMask2D outside = dilate(lesion, margin);
  for (auto& v : outside.data()) v = v ? 0 : 1;
  if (count(outside) == 0) return 0.0;
  return mean_abs_diff(synth, source, &outside);
}

SyntheticItem augment_subject(const GeneratorBundle<float>& g_p, const Image2D& x_H,
                              const std::string& source_id, int sample,
                              const AugmentConfig& cfg) {
  SyntheticItem item;
  item.source_id = source_id;
  item.sample = sample;
  char id[256];
  std::snprintf(id, sizeof id, "syn_%s_%02d", source_id.c_str(), sample);
  item.id = id;
  // One stream per (seed, subject, sample): independent of processing order.
  const std::uint64_t sub_seed =
      mix_seed(cfg.seed, fnv1a(source_id), static_cast<std::uint64_t>(sample));
  Rng rng(sub_seed);
  item.image = generator_forward(g_p, x_H, cfg.dropout, rng).output;
  const RegistrationResult reg = register_ffd(x_H, item.image, cfg.ffd);
  item.ssd_before = reg.initial_ssd;
  item.ssd_after = reg.final_ssd;
  item.threshold = extraction_threshold(reg.warped, item.image, cfg.mask);
  item.mask = extract_mask(reg.warped, item.image, cfg.mask);
  return item;
}

json build_augmented_dataset(const GeneratorBundle<float>& g_p, const UnpairedDataset& data,
                             const AugmentConfig& cfg, const fs::path& out_dir) {
  if (cfg.k_per_subject < 1) throw InputError("k_per_subject must be >= 1");
  if (data.healthy.empty()) throw InputError("empty dataset: no healthy subjects to augment");
  validate(cfg.ffd);
  validate(cfg.mask);
  create_dataset_layout(out_dir);

  const std::size_t k = static_cast<std::size_t>(cfg.k_per_subject);
  std::vector<SyntheticItem> items(data.healthy.size() * k);
  parallel_for(items.size(), [&](std::size_t i) {
    const std::size_t h = i / k;
    const std::string& id =
        h < data.healthy_ids.size() ? data.healthy_ids[h] : std::to_string(h);
    items[i] = augment_subject(g_p, data.healthy[h], id, static_cast<int>(i % k), cfg);
    save_image(items[i].image, out_dir / "pathological" / "images" / items[i].id, cfg.format);
    save_mask(items[i].mask, out_dir / "pathological" / "masks" / (items[i].id + ".png"));
  });

  json manifest;
  manifest["config"] = cfg;
  manifest["generator_seed"] = g_p.seed();
  json list = json::array();
  std::size_t empty = 0;
  for (const auto& it : items) {
    const std::size_t px = count(it.mask);
    if (px == 0) ++empty;
    list.push_back({{"id", it.id},
                    {"synthetic", true},
                    {"source_id", it.source_id},
                    {"sample", it.sample},
                    {"seed", cfg.seed},
                    {"lesion_pixels", px},
                    {"empty_mask", px == 0},
                    {"threshold", it.threshold},
                    {"registration_ssd_before", it.ssd_before},
                    {"registration_ssd_after", it.ssd_after}});
  }
  if (cfg.include_real) {
    for (std::size_t i = 0; i < data.healthy.size(); ++i) {
      const std::string id = i < data.healthy_ids.size() ? data.healthy_ids[i] : std::to_string(i);
      save_image(data.healthy[i], out_dir / "healthy" / id, cfg.format);
      list.push_back({{"id", id}, {"synthetic", false}, {"domain", "healthy"}});
    }
    for (const auto& p : data.pathological) {
      save_image(p.image, out_dir / "pathological" / "images" / p.id, cfg.format);
      save_mask(p.mask, out_dir / "pathological" / "masks" / (p.id + ".png"));
      list.push_back({{"id", p.id}, {"synthetic", false}, {"domain", "pathological"}});
    }
  }
  manifest["items"] = std::move(list);
  manifest["synthetic_count"] = items.size();
  manifest["empty_mask_count"] = empty;
  std::ofstream(out_dir / "manifest.json") << manifest.dump(2) << "\n";
  if (empty > 0) spdlog::warn("{} of {} synthetic items have empty masks", empty, items.size());
  return manifest;
}

std::pair<Image2D, BinaryMask2D> copy_paste_baseline(const Image2D& x_H, const Image2D& donor,
                                                     const BinaryMask2D& donor_mask) {
  require_same_shape(x_H, donor, "copy_paste_baseline");
  require_same_shape(x_H, donor_mask, "copy_paste_baseline");
  Image2D out = x_H;
  if (count(donor_mask) == 0) return {out, donor_mask};
  const BinaryMask2D ring = mask_andnot(dilate(donor_mask, 1), donor_mask);
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (donor_mask[i]) out[i] = donor[i];
    else if (ring[i]) out[i] = 0.5f * (x_H[i] + donor[i]);
  }
  return {out, donor_mask};
}

}  // namespace lf

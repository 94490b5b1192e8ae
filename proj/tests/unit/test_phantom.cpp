#include <doctest.h>

#include "lesionforge/io.hpp"
#include "lesionforge/metrics.hpp"
#include "lesionforge/phantom.hpp"
#include "test_util.hpp"

using namespace lf;
using phantom::PhantomSpec;

namespace {
bool subset(const BinaryMask2D& a, const BinaryMask2D& b) {
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] && !b[i]) return false;
  return true;
}

// Mean of exp(-r^2 / 2 sigma^2) over the disc where it is >= t, by brute
// force midpoint sampling of the unit-radius support.
double profile_mean_oracle(double t) {
  const double sigma = 1.0 / std::sqrt(2.0 * std::log(1.0 / t));
  const int steps = 1000;
  double sum = 0;
  long n = 0;
  for (int i = 0; i < steps; ++i)
    for (int j = 0; j < steps; ++j) {
      const double y = -1.0 + (i + 0.5) * 2.0 / steps;
      const double x = -1.0 + (j + 0.5) * 2.0 / steps;
      const double g = std::exp(-(x * x + y * y) / (2 * sigma * sigma));
      if (g >= t) {
        sum += g;
        ++n;
      }
    }
  return sum / n;
}
}  // namespace

TEST_CASE("gen_healthy is deterministic and anatomically consistent") {
  PhantomSpec spec;
  for (int idx = 0; idx < 10; ++idx) {
    const auto a = phantom::gen_healthy(spec, idx);
    const auto b = phantom::gen_healthy(spec, idx);
    CHECK(a.image == b.image);
    CHECK(subset(a.ventricle, a.brain));
    for (float v : a.image.pixels()) {
      CHECK(v >= -1.f);
      CHECK(v <= 1.f);
    }
    // Ventricle vs the white-matter ring right around it.
    const BinaryMask2D ring = mask_and(mask_andnot(dilate(a.ventricle, 3), a.ventricle), a.brain);
    double v_mean = 0, r_mean = 0;
    for (std::size_t i = 0; i < a.image.size(); ++i) {
      v_mean += a.ventricle[i] ? a.image[i] : 0.0;
      r_mean += ring[i] ? a.image[i] : 0.0;
    }
    CHECK(v_mean / count(a.ventricle) < r_mean / count(ring));
  }
  CHECK_FALSE(phantom::gen_healthy(spec, 0).image == phantom::gen_healthy(spec, 1).image);
}

TEST_CASE("invalid specs are rejected") {
  PhantomSpec spec;
  spec.ventricle_axes = {0.5, 0.5};
  CHECK_THROWS_AS(phantom::gen_healthy(spec, 0), InputError);
  PhantomSpec zero;
  zero.lesion_prior = Image2D(64, 64, 0.f);
  CHECK_THROWS_AS(phantom::add_lesions(phantom::gen_healthy(zero, 0), zero, 0), InputError);
}

TEST_CASE("lesion prior sums to one over white matter") {
  PhantomSpec spec;
  const Image2D prior = phantom::lesion_prior(spec);
  const BinaryMask2D wm = phantom::white_matter(spec, phantom::canonical_anatomy(spec));
  double inside = 0, outside = 0;
  for (std::size_t i = 0; i < prior.size(); ++i) (wm[i] ? inside : outside) += prior[i];
  CHECK(inside == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(outside == 0.0);
}

TEST_CASE("add_lesions") {
  PhantomSpec spec;
  SUBCASE("no lesions is the identity") {
    spec.lesion_count_range = {0, 0};
    const auto h = phantom::gen_healthy(spec, 3);
    const auto p = phantom::add_lesions(h, spec, 3);
    CHECK(p.image == h.image);
    CHECK(count(p.lesion) == 0);
  }
  SUBCASE("hyperintense, outside ventricles, inside the brain") {
    for (int idx = 0; idx < 20; ++idx) {
      const auto h = phantom::gen_healthy(spec, idx);
      const auto p = phantom::add_lesions(h, spec, idx);
      CHECK(count(p.lesion) > 0);
      CHECK(subset(p.lesion, h.brain));
      CHECK(count(mask_and(p.lesion, p.ventricle)) == 0);
      CHECK(subset(h.ventricle, p.ventricle));
      CHECK(p.ventricle_dilation >= 1);
      CHECK(p.ventricle_dilation <= 2);
      for (std::size_t i = 0; i < p.image.size(); ++i)
        if (p.lesion[i]) CHECK(p.image[i] >= h.image[i]);
    }
  }
  SUBCASE("mean boost follows the soft-edge profile") {
    const double t = spec.lesion_profile_threshold;
    const double oracle = profile_mean_oracle(t);
    CHECK(phantom::mean_profile_over_support(t) == doctest::Approx(oracle).epsilon(0.01));
    double sum = 0;
    long n = 0;
    for (int idx = 0; idx < 60; ++idx) {
      const auto h = phantom::gen_healthy(spec, idx);
      const auto p = phantom::add_lesions(h, spec, idx);
      for (std::size_t i = 0; i < p.image.size(); ++i)
        if (p.lesion[i]) {
          sum += p.image[i] - h.image[i];
          ++n;
        }
    }
    CHECK(sum / n == doctest::Approx(spec.lesion_intensity_boost * oracle).epsilon(0.10));
  }
}

TEST_CASE("lesion frequency follows the prior") {
  PhantomSpec spec;
  std::vector<BinaryMask2D> masks;
  for (int idx = 0; idx < 200; ++idx)
    masks.push_back(phantom::add_lesions(phantom::gen_healthy(spec, idx), spec, idx).lesion);
  const HeatmapGrid heat = accumulate_heatmap(masks);
  const BinaryMask2D brain = phantom::canonical_anatomy(spec).brain;
  CHECK(heatmap_correlation(heat.frequency, to_double_grid(phantom::lesion_prior(spec)), &brain) >= 0.9);
}

TEST_CASE("gen_dataset writes disjoint cohorts") {
  const auto dir = lft::scratch_dir("phantom_ds");
  PhantomSpec spec;
  spec.size = 32;
  const auto ds = phantom::gen_dataset(spec, 2, 3, dir);
  CHECK(ds.healthy_ids.size() == 2);
  CHECK(ds.pathological_ids.size() == 3);
  for (const auto& h : ds.healthy_ids)
    for (const auto& p : ds.pathological_ids) CHECK(h != p);
  const auto loaded = load_dataset(dir);
  for (const auto& item : loaded.pathological) CHECK(count(item.mask) > 0);
}

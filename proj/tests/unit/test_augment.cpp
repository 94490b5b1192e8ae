#include <doctest.h>

#include <fstream>
#include <sstream>

#include "lesionforge/augment.hpp"
#include "lesionforge/io.hpp"
#include "lesionforge/metrics.hpp"
#include "lesionforge/phantom.hpp"
#include "lesionforge/registration.hpp"
#include "test_util.hpp"

using namespace lf;

namespace {
Image2D shift_x(const Image2D& img, int dx) {
  Image2D out(img.height(), img.width(), kBackgroundLevel);
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      const int sx = x - dx;
      if (sx >= 0 && sx < img.width()) out(y, x) = img(y, sx);
    }
  return out;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}
}  // namespace

TEST_CASE("synthesize") {
  GeneratorBundle<float> g(GeneratorConfig{3, 4, 2, 0.5}, 9);
  std::mt19937_64 rng(1);
  const Image2D x = lft::random_image(rng, 32, 32);
  const auto off = synthesize(g, x, 3, false, 0);
  REQUIRE(off.size() == 3);
  CHECK(off[0].image == off[1].image);
  CHECK(off[1].image == off[2].image);
  const auto on = synthesize(g, x, 2, true, 4);
  CHECK(mean_abs_diff(on[0].image, on[1].image) > 0);
  const auto again = synthesize(g, x, 2, true, 4);
  CHECK(again[0].image == on[0].image);
  CHECK(again[1].image == on[1].image);
  CHECK_THROWS_AS(synthesize(g, x, 0, true, 0), InputError);
}

TEST_CASE("registration of identical images stays put") {
  const auto h = phantom::gen_healthy(phantom::PhantomSpec{}, 2);
  const auto r = register_ffd(h.image, h.image);
  CHECK(r.field.max_norm() < 0.1);
  CHECK(r.final_ssd <= r.initial_ssd);
}

TEST_CASE("registration recovers a translation") {
  const auto h = phantom::gen_healthy(phantom::PhantomSpec{}, 4);
  const Image2D fixed = shift_x(h.image, 2);
  const auto r = register_ffd(h.image, fixed);
  CHECK(r.final_ssd < 0.5 * r.initial_ssd);
  // Backward map, so the recovered dx is -2 where the brain sits.
  double sum = 0;
  long n = 0;
  const BinaryMask2D brain = erode(h.brain, 2);
  for (std::size_t i = 0; i < brain.size(); ++i)
    if (brain[i]) {
      sum += std::hypot(r.field.dy[i], r.field.dx[i]);
      ++n;
    }
  CHECK(sum / n == doctest::Approx(2.0).epsilon(0.25));
}

TEST_CASE("registration never ends worse than it starts") {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 5; ++t) {
    const Image2D a = lft::random_image(rng, 32, 32), b = lft::random_image(rng, 32, 32);
    const auto r = register_ffd(a, b, FFDConfig{{16, 8}, 10});
    CHECK(r.final_ssd <= r.initial_ssd);
    for (double s : r.level_ssd) CHECK(s <= r.initial_ssd);
  }
  FFDConfig bad;
  bad.spacings = {8, 16};
  CHECK_THROWS_AS(validate(bad), InputError);
  CHECK_THROWS_AS(register_ffd(Image2D(8, 8), Image2D(8, 9)), ShapeError);
}

TEST_CASE("warp and elastic fields") {
  Rng rng(1);
  const auto zero = random_elastic_field(16, 16, 5, 0.0, rng);
  CHECK(zero.max_norm() == 0.0);
  std::mt19937_64 r2(2);
  const Image2D img = lft::random_image(r2, 16, 16);
  CHECK(warp_image(img, zero) == img);
  const BinaryMask2D m = lft::random_mask(r2, 16, 16, 0.3);
  CHECK(warp_mask(m, zero) == m);
  const auto f = random_elastic_field(16, 16, 5, 2.0, rng);
  const BinaryMask2D warped = warp_mask(m, f);
  for (auto v : warped.pixels()) CHECK((v == 0 || v == 1));
}

TEST_CASE("extract_mask fixtures") {
  SUBCASE("identical inputs") {
    const auto h = phantom::gen_healthy(phantom::PhantomSpec{}, 1);
    CHECK(count(extract_mask(h.image, h.image)) == 0);
    CHECK(count(extract_mask(Image2D(16, 16), Image2D(16, 16))) == 0);
  }
  SUBCASE("pasted blob on zero background") {
    const BinaryMask2D blob = lft::disc_mask(32, 32, 14.3, 17.6, 4.2);
    Image2D base(32, 32, 0.f), synth(32, 32, 0.f);
    for (std::size_t i = 0; i < blob.size(); ++i) synth[i] = blob[i] ? 0.5f : 0.f;
    MaskExtractConfig cfg;
    cfg.k = 3;
    CHECK(dice(extract_mask(base, synth, cfg), blob) >= 0.9);
    // Darker blobs are never candidates.
    for (auto& v : synth.pixels()) v = -v;
    CHECK(count(extract_mask(base, synth, cfg)) == 0);
  }
  SUBCASE("small components are dropped") {
    const BinaryMask2D big = lft::disc_mask(32, 32, 10, 10, 4);
    BinaryMask2D small(32, 32);
    small(25, 25) = small(25, 26) = small(26, 25) = 1;
    Image2D base(32, 32, 0.f), synth(32, 32, 0.f);
    for (std::size_t i = 0; i < big.size(); ++i) synth[i] = big[i] || small[i] ? 0.6f : 0.f;
    MaskExtractConfig cfg;
    cfg.min_component_px = 5;
    cfg.closing_radius = 0;
    const BinaryMask2D got = extract_mask(base, synth, cfg);
    CHECK(got == big);
  }
  SUBCASE("absolute mode") {
    Image2D base(8, 8, 0.f), synth(8, 8, 0.f);
    for (int y = 2; y < 5; ++y)
      for (int x = 2; x < 5; ++x) synth(y, x) = 0.3f;
    MaskExtractConfig cfg;
    cfg.mode = ThresholdMode::kAbsolute;
    cfg.absolute_threshold = 0.25;
    CHECK(count(extract_mask(base, synth, cfg)) == 9);
    cfg.absolute_threshold = 0.35;
    CHECK(count(extract_mask(base, synth, cfg)) == 0);
  }
  MaskExtractConfig bad;
  bad.k = 0;
  CHECK_THROWS_AS(validate(bad), InputError);
}

TEST_CASE("copy-paste baseline") {
  phantom::PhantomSpec spec;
  const auto h = phantom::gen_healthy(spec, 0);
  SUBCASE("empty donor mask") {
    const auto donor = phantom::gen_healthy(spec, 1);
    const auto [img, mask] = copy_paste_baseline(h.image, donor.image, BinaryMask2D(64, 64));
    CHECK(img == h.image);
    CHECK(count(mask) == 0);
  }
  SUBCASE("pasted lesions are recoverable") {
    double total = 0;
    for (int idx = 1; idx <= 10; ++idx) {
      const auto d = phantom::add_lesions(phantom::gen_healthy(spec, idx), spec, idx);
      const auto [img, mask] = copy_paste_baseline(h.image, d.image, d.lesion);
      CHECK(mask == d.lesion);
      for (std::size_t i = 0; i < img.size(); ++i)
        if (erode(d.lesion, 1)[i]) CHECK(img[i] == d.image[i]);
      total += dice(extract_mask(h.image, img), d.lesion);
    }
    CHECK(total / 10 >= 0.8);
  }
}

TEST_CASE("background preservation") {
  Image2D a(10, 10, 0.f), b(10, 10, 0.f);
  b(5, 5) = 1.f;
  BinaryMask2D lesion(10, 10);
  lesion(5, 5) = 1;
  CHECK(background_preservation(a, b, lesion) == 0.0);
  CHECK(background_preservation(a, b, BinaryMask2D(10, 10)) == doctest::Approx(0.01));
}

TEST_CASE("augmented dataset is reproducible and flagged") {
  const auto src = lft::scratch_dir("aug_src");
  phantom::PhantomSpec spec;
  spec.size = 32;
  phantom::gen_dataset(spec, 2, 1, src);
  const auto data = load_dataset(src);
  GeneratorBundle<float> g(GeneratorConfig{3, 4, 1, 0.5}, 3);
  AugmentConfig cfg;
  cfg.k_per_subject = 2;
  cfg.seed = 11;
  cfg.ffd.steps_per_level = 5;
  const auto a = lft::scratch_dir("aug_a"), b = lft::scratch_dir("aug_b");
  const auto ma = build_augmented_dataset(g, data, cfg, a);
  build_augmented_dataset(g, data, cfg, b);
  CHECK(slurp(a / "manifest.json") == slurp(b / "manifest.json"));
  const auto out = load_dataset(a);
  CHECK(out.pathological.size() == 1 + 4);
  for (const auto& p : list_images(a / "pathological" / "images")) {
    const auto rel = std::filesystem::relative(p, a);
    CHECK(slurp(p) == slurp(b / rel));
  }
  int synthetic = 0;
  for (const auto& item : ma.at("items")) {
    if (!item.value("synthetic", false)) continue;
    ++synthetic;
    CHECK(item.contains("source_id"));
    CHECK(item.contains("seed"));
    CHECK(item.contains("empty_mask"));
  }
  CHECK(synthetic == 4);
}

#include <doctest.h>

#include <fstream>
#include <nlohmann/json.hpp>

#include "lesionforge/io.hpp"
#include "lesionforge/phantom.hpp"
#include "test_util.hpp"

using namespace lf;

namespace {
const NormalizeOptions kMinMax{NormalizeMode::kMinMax};

// Corner-aligned bilinear resampling of a*y + b*x is exact, so the oracle is
// just the ramp evaluated at the mapped coordinates.
double ramp_oracle(double a, double b, int in_h, int in_w, int out_h, int out_w, int y, int x) {
  const double sy = out_h > 1 ? double(in_h - 1) / (out_h - 1) : 0.0;
  const double sx = out_w > 1 ? double(in_w - 1) / (out_w - 1) : 0.0;
  return a * y * sy + b * x * sx;
}

Image2D ramp(int h, int w, double a, double b) {
  Image2D img(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) img(y, x) = static_cast<float>(a * y + b * x);
  return img;
}
}  // namespace

TEST_CASE("normalize maps the range onto [-1, 1]") {
  Image2D g(1, 3, std::vector<float>{0.f, 50.f, 100.f});
  CHECK(normalize(g, kMinMax)(0, 1) == doctest::Approx(0.0));

  Image2D c(3, 3, 7.f);
  const Image2D cm = normalize(c, kMinMax), cp = normalize(c);
  for (float v : cm.pixels()) CHECK(v == -1.f);
  for (float v : cp.pixels()) CHECK(v == -1.f);

  Image2D r(1, 3, std::vector<float>{0.f, 25.f, 100.f});
  const Image2D n = normalize(r, kMinMax);
  CHECK(n(0, 0) == doctest::Approx(-1.0));
  CHECK(n(0, 1) == doctest::Approx(-0.5));
  CHECK(n(0, 2) == doctest::Approx(1.0));
}

TEST_CASE("normalize is idempotent and bounded") {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 50; ++t) {
    const Image2D raw = lft::random_image(rng, 1 + t % 7, 2 + t % 5, 0.f, 1000.f);
    const Image2D once = normalize(raw, kMinMax);
    const Image2D twice = normalize(once, kMinMax);
    for (std::size_t i = 0; i < once.size(); ++i) CHECK(twice[i] == doctest::Approx(once[i]).epsilon(1e-6));
    const Image2D pct = normalize(raw);
    for (float v : pct.pixels()) {
      CHECK(v >= -1.f);
      CHECK(v <= 1.f);
    }
  }
}

TEST_CASE("make_foreground") {
  Image2D x(2, 2, std::vector<float>{0.5f, -0.2f, 0.9f, 0.1f});
  const auto ones = make_foreground(x, BinaryMask2D(2, 2, 1));
  CHECK(ones == x);
  const Image2D zeros = make_foreground(x, BinaryMask2D(2, 2, 0));
  for (float v : zeros.pixels()) CHECK(v == -1.f);
  const auto f = make_foreground(x, BinaryMask2D(2, 2, std::vector<std::uint8_t>{1, 0, 0, 1}));
  CHECK(f.data() == std::vector<float>{0.5f, -1.f, -1.f, 0.1f});
  CHECK_THROWS_AS(make_foreground(x, BinaryMask2D(3, 2, 1)), ShapeError);
}

TEST_CASE("bilinear resize matches the ramp oracle") {
  for (auto [ih, iw, oh, ow] : {std::array{200, 180, 256, 256}, std::array{7, 5, 3, 11},
                                std::array{64, 64, 32, 32}}) {
    const Image2D out = resize_bilinear(ramp(ih, iw, 0.3, -0.7), oh, ow);
    REQUIRE(out.height() == oh);
    REQUIRE(out.width() == ow);
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x)
        CHECK(out(y, x) == doctest::Approx(ramp_oracle(0.3, -0.7, ih, iw, oh, ow, y, x)).epsilon(1e-4));
  }
}

TEST_CASE("preprocess_slice") {
  SUBCASE("256 input keeps geometry") {
    Volume v;
    v.height = v.width = 256;
    const Image2D src = ramp(256, 256, 1.0, 2.0);
    v.voxels = src.data();
    const Image2D out = preprocess_slice(v, 256, kMinMax);
    CHECK(out.height() == 256);
    const Image2D expect = normalize(src, kMinMax);
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == doctest::Approx(expect[i]).epsilon(1e-5));
  }
  SUBCASE("200x180 is bilinearly resized") {
    Volume v;
    v.height = 200;
    v.width = 180;
    v.voxels = ramp(200, 180, 1.0, 0.5).data();
    const Image2D out = preprocess_slice(v, 256, kMinMax);
    REQUIRE(out.height() == 256);
    REQUIRE(out.width() == 256);
    const double hi = ramp_oracle(1.0, 0.5, 200, 180, 256, 256, 255, 255);
    for (int y = 0; y < 256; y += 17)
      for (int x = 0; x < 256; x += 13) {
        const double expect = 2.0 * ramp_oracle(1.0, 0.5, 200, 180, 256, 256, y, x) / hi - 1.0;
        CHECK(out(y, x) == doctest::Approx(expect).epsilon(1e-4));
      }
  }
  SUBCASE("centre slice of a stack") {
    for (int depth : {1, 4, 5}) {
      Volume v;
      v.depth = depth;
      v.height = v.width = 32;
      for (int s = 0; s < depth; ++s) {
        // Only the centre slice varies along x.
        const Image2D sl = s == depth / 2 ? ramp(32, 32, 0.0, 1.0) : ramp(32, 32, 1.0, 0.0);
        v.voxels.insert(v.voxels.end(), sl.data().begin(), sl.data().end());
      }
      const Image2D out = preprocess_slice(v, 32, kMinMax);
      CHECK(out(0, 0) == doctest::Approx(-1.0));
      CHECK(out(0, 31) == doctest::Approx(1.0));
      CHECK(out(31, 0) == doctest::Approx(-1.0));
    }
  }
  SUBCASE("anisotropic spacing resamples to 1 mm first") {
    Volume v;
    v.height = 32;
    v.width = 16;
    v.spacing = {1.0, 1.0, 2.0};
    v.voxels = ramp(32, 16, 0.0, 1.0).data();
    const Image2D out = preprocess_slice(v, 32, kMinMax);
    CHECK(out.spacing == Spacing{1.0, 1.0});
    for (int x = 0; x < 32; ++x) CHECK(out(5, x) == doctest::Approx(-1.0 + 2.0 * x / 31.0).epsilon(1e-4));
  }
}

TEST_CASE("image round trips") {
  const auto dir = lft::scratch_dir("roundtrip");
  std::mt19937_64 rng(9);
  for (int t = 0; t < 10; ++t) {
    Image2D img = lft::random_image(rng, 3 + t, 5 + 2 * t);
    img(0, 0) = -1.f;
    img(0, 1) = 1.f;
    img.spacing = {0.5 + t, 1.25};
    const Image2D raw = load_image(save_image(img, dir / ("r" + std::to_string(t)), ImageFormat::kRawFloat));
    CHECK(raw == img);
    CHECK(raw.spacing == img.spacing);
    const Image2D png = load_image(save_image(img, dir / ("p" + std::to_string(t)), ImageFormat::kPng16));
    REQUIRE(png.same_shape(img));
    for (std::size_t i = 0; i < img.size(); ++i)
      CHECK(std::abs(png[i] - img[i]) <= 1.0 / 65535.0 + 1e-7);
  }
  BinaryMask2D m = lft::random_mask(rng, 9, 13, 0.4);
  save_mask(m, dir / "m.png");
  CHECK(load_mask(dir / "m.png") == m);
}

TEST_CASE("raw sidecar is validated") {
  const auto dir = lft::scratch_dir("sidecar");
  save_image(Image2D(4, 4, 0.f), dir / "a", ImageFormat::kRawFloat);
  std::ofstream(dir / "a.json") << R"({"h": 5, "w": 4})";
  CHECK_THROWS_AS(load_image(dir / "a.raw"), InputError);
  CHECK_THROWS_AS(load_image(dir / "missing.raw"), InputError);
}

TEST_CASE("dataset loading builds the foreground set") {
  const auto dir = lft::scratch_dir("dataset");
  phantom::PhantomSpec spec;
  spec.size = 32;
  phantom::gen_dataset(spec, 3, 4, dir);
  const UnpairedDataset ds = load_dataset(dir);
  CHECK(ds.healthy.size() == 3);
  REQUIRE(ds.pathological.size() == 4);
  REQUIRE(ds.foreground.size() == ds.pathological.size());
  for (std::size_t i = 0; i < ds.pathological.size(); ++i) {
    const auto& item = ds.pathological[i];
    for (std::size_t p = 0; p < item.image.size(); ++p) {
      if (item.mask[p]) CHECK(ds.foreground[i][p] == item.image[p]);
      else CHECK(ds.foreground[i][p] == -1.f);
    }
  }
  CHECK_THROWS_AS(load_dataset(dir / "nope"), InputError);
}

TEST_CASE("network shapes") {
  for (int s : {32, 64, 128, 256}) CHECK(is_network_shape(s, s));
  CHECK_FALSE(is_network_shape(64, 32));
  CHECK_FALSE(is_network_shape(48, 48));
  CHECK_THROWS_AS(Grid<float>(-1, 2), ShapeError);
}

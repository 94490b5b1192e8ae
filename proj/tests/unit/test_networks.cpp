#include <doctest.h>

#include "lesionforge/networks.hpp"
#include "test_util.hpp"

using namespace lf;

namespace {
GeneratorConfig small_gen(int masks = 3) { return GeneratorConfig{masks, 4, 2, 0.5}; }

template <typename T>
nn::Var<T> param_named(const GeneratorBundle<T>& g, const std::string& name) {
  for (const auto& [n, p] : g.parameters())
    if (n == name) return p;
  FAIL("no parameter " << name);
  return nullptr;
}

// Central-difference check of d(sum(f^2))/d(param) for a handful of entries.
double relative_error(double a, double b) {
  const double denom = std::max({std::abs(a), std::abs(b), 1e-7});
  return std::abs(a - b) / denom;
}
}  // namespace

TEST_CASE("attention is a pixelwise simplex") {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 10; ++t) {
    GeneratorBundle<float> g(small_gen(2 + t % 4), 100 + t);
    Rng drop(t);
    const FusionProducts f = generator_forward(g, lft::random_image(rng, 16, 16), t % 2 == 0, drop);
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x) {
        double s = f.attention_back(y, x);
        for (int c = 0; c < f.attention_fore.channels(); ++c) s += f.attention_fore.at(c, y, x);
        CHECK(s == doctest::Approx(1.0).epsilon(1e-5));
      }
  }
}

TEST_CASE("forced background attention is the identity") {
  std::mt19937_64 rng(4);
  GeneratorBundle<float> g(small_gen(), 7);
  g.force_background_attention();
  Rng drop(0);
  const Image2D x = lft::random_image(rng, 32, 32);
  const FusionProducts f = generator_forward(g, x, true, drop);
  CHECK(f.output == x);
  for (float v : f.attention_back.pixels()) CHECK(v == 1.f);
}

TEST_CASE("two-mask hand evaluation of the fusion") {
  GeneratorBundle<float> g(small_gen(2), 3);
  // Zero attention logits give 0.5 / 0.5; a large content bias saturates tanh at 1.
  param_named(g, "dec_attention.head.weight")->value.fill(0.f);
  param_named(g, "dec_attention.head.bias")->value.fill(0.f);
  param_named(g, "dec_content.head.weight")->value.fill(0.f);
  param_named(g, "dec_content.head.bias")->value.fill(40.f);
  Rng drop(0);
  const FusionProducts f = generator_forward(g, Image2D(8, 8, 0.f), false, drop);
  for (float v : f.output.pixels()) CHECK(v == doctest::Approx(0.5).epsilon(1e-6));
  for (float v : f.fore_canonical.pixels()) CHECK(v == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("output is affine in x with slope A_back") {
  // Probe with x and x + delta through fixed attention and content.
  GeneratorBundle<double> g(small_gen(), 11);
  std::mt19937_64 rng(6);
  const Image2D x = lft::random_image(rng, 16, 16);
  const auto f = g.forward(nn::constant(image_to_tensor<double>(x)), nullptr);
  Image2D x2 = lft::random_image(rng, 16, 16);
  auto xv = nn::constant(image_to_tensor<double>(x2));
  const auto back2 = nn::mul(xv, f.attention_back);
  const auto out2 = nn::add(f.fore, back2);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double slope = f.attention_back->value[i];
    CHECK(out2->value[i] - f.output->value[i] == doctest::Approx(slope * (double(x2[i]) - x[i])).epsilon(1e-9));
  }
}

TEST_CASE("dropout-off forward is deterministic, dropout-on is seeded") {
  GeneratorBundle<float> g(small_gen(), 5);
  std::mt19937_64 rng(1);
  const Image2D x = lft::random_image(rng, 16, 16);
  Rng r1(1), r2(2), r3(1);
  CHECK(generator_forward(g, x, false, r1).output == generator_forward(g, x, false, r2).output);
  Rng a(9), b(9), c(10);
  const Image2D oa = generator_forward(g, x, true, a).output;
  CHECK(oa == generator_forward(g, x, true, b).output);
  CHECK_FALSE(oa == generator_forward(g, x, true, c).output);
}

TEST_CASE("discriminator output geometry") {
  DiscriminatorBundle<float> d(DiscriminatorConfig{8, 3, false}, DiscriminatorRole::kForeground, 1);
  CHECK(d.output_size(64, 64) == std::pair{6, 6});
  std::mt19937_64 rng(3);
  const Image2D x = lft::random_image(rng, 64, 64);
  const Image2D s = discriminate(d, x);
  CHECK(s.height() == 6);
  CHECK(s.width() == 6);
  CHECK(s == discriminate(d, x));
  DiscriminatorBundle<float> d4(DiscriminatorConfig{4, 4, false}, DiscriminatorRole::kHealthy, 1);
  CHECK(d4.output_size(256, 256) == std::pair{14, 14});
}

TEST_CASE("init is deterministic per seed") {
  const auto a = init_bundles<float>(small_gen(), DiscriminatorConfig{4, 3, false}, 42);
  const auto b = init_bundles<float>(small_gen(), DiscriminatorConfig{4, 3, false}, 42);
  const auto pa = a.g_p.parameters(), pb = b.g_p.parameters(), ph = a.g_h.parameters();
  REQUIRE(pa.size() == pb.size());
  bool differs = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].second->value == pb[i].second->value);
    differs = differs || !(pa[i].second->value == ph[i].second->value);
  }
  CHECK(differs);
}

TEST_CASE("checkpoint round trip") {
  const auto dir = lft::scratch_dir("ckpt");
  GeneratorBundle<float> g(small_gen(4), 17);
  nn::Adam<float> opt(g.parameters());
  for (const auto& [n, p] : g.parameters()) p->grad_buffer().fill(0.1f);
  opt.step(1e-3);
  save_generator(dir / "g.lfck", g, CheckpointInfo{"g_p", 12}, &opt);
  CheckpointInfo info;
  const auto back = load_generator<float>(dir / "g.lfck", &info);
  CHECK(info.role == "g_p");
  CHECK(info.epoch == 12);
  CHECK(back.config().masks == 4);
  const auto p0 = g.parameters(), p1 = back.parameters();
  REQUIRE(p0.size() == p1.size());
  for (std::size_t i = 0; i < p0.size(); ++i) CHECK(p0[i].second->value == p1[i].second->value);
  nn::Adam<float> opt2(back.parameters());
  load_optimizer_state(dir / "g.lfck", opt2);
  CHECK(opt2.steps() == 1);
  CHECK(opt2.first_moments()[0] == opt.first_moments()[0]);

  DiscriminatorBundle<float> d(DiscriminatorConfig{4, 3, false}, DiscriminatorRole::kForeground, 3);
  save_discriminator(dir / "d.lfck", d, CheckpointInfo{"d_f", 1});
  const auto dback = load_discriminator<float>(dir / "d.lfck");
  CHECK(dback.role() == DiscriminatorRole::kForeground);
  CHECK_THROWS_AS(load_generator<float>(dir / "d.lfck"), InputError);
  CHECK_THROWS_AS(load_generator<float>(dir / "missing.lfck"), InputError);
}

TEST_CASE("gradient of ||output||^2 with respect to the content map") {
  // Analytic: d/dC_i sum(o^2) = 2 o A_i.
  GeneratorBundle<double> g(GeneratorConfig{2, 4, 1, 0.0}, 21);
  std::mt19937_64 rng(12);
  const auto x = nn::constant(image_to_tensor<double>(lft::random_image(rng, 8, 8)));
  const auto z = g.encode(x, nullptr);
  const auto att = nn::softmax_channels(g.decode_attention(z));
  auto content = nn::parameter(nn::tanh(g.decode_content(z))->value);
  auto loss_of = [&](const nn::Var<double>& c) {
    const auto fore = nn::sum_channels(nn::mul(c, nn::slice_channels(att, 1, 2)));
    const auto out = nn::add(fore, nn::mul(x, nn::slice_channels(att, 0, 1)));
    return nn::sum_all(nn::square(out));
  };
  nn::backward(loss_of(content));
  const double h = 1e-6;
  for (std::size_t i = 0; i < content->value.numel(); ++i) {
    auto plus = content->value, minus = content->value;
    plus[i] += h;
    minus[i] -= h;
    const double fd =
        (loss_of(nn::constant(plus))->value[0] - loss_of(nn::constant(minus))->value[0]) / (2 * h);
    CHECK(relative_error(content->grad[i], fd) <= 1e-3);
  }
}

TEST_CASE("config json rejects bad values") {
  nlohmann::json j = GeneratorConfig{};
  CHECK(j.get<GeneratorConfig>().res_blocks == 9);
  GeneratorConfig bad;
  bad.masks = 1;
  CHECK_THROWS_AS(GeneratorBundle<float>(bad, 0), InputError);
}

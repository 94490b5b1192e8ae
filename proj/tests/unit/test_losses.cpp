#include <doctest.h>

#include "lesionforge/losses.hpp"
#include "lesionforge/networks.hpp"
#include "test_util.hpp"

using namespace lf;

namespace {
Image2D filled(float v, int h = 4, int w = 4) { return Image2D(h, w, v); }

Image2D plus(const Image2D& a, float d) {
  Image2D o = a;
  for (auto& v : o.pixels()) v += d;
  return o;
}

nn::Var<double> var(const Image2D& img) { return nn::constant(image_to_tensor<double>(img)); }
double value(const nn::Var<double>& v) { return v->value[0]; }
}  // namespace

TEST_CASE("generator adversarial losses") {
  CHECK(loss_gen_healthy(filled(1)) == 0.0);
  CHECK(loss_gen_healthy(filled(0)) == 1.0);
  CHECK(loss_gen_healthy(Image2D(1, 2, std::vector<float>{0.5f, 1.5f})) == doctest::Approx(0.25));
  CHECK(loss_gen_pathological(filled(1), filled(1)) == 0.0);
  CHECK(loss_gen_pathological(filled(1), filled(0)) == doctest::Approx(0.25));
  CHECK(loss_gen_pathological(filled(0), filled(0)) == 1.0);
  // Mismatched maps are reconciled by nearest resize.
  CHECK(loss_gen_pathological(filled(1, 6, 6), filled(0, 1, 1)) == doctest::Approx(0.25));
  CHECK_THROWS_AS(loss_gen_healthy(Image2D()), InputError);
}

TEST_CASE("cycle and identity losses") {
  std::mt19937_64 rng(1);
  const Image2D xh = lft::random_image(rng, 4, 4), xp = lft::random_image(rng, 4, 4);
  const LossWeights w;
  CHECK(loss_cycle(xh, xh, xp, xp, w) == 0.0);
  CHECK(loss_cycle(xh, plus(xh, 0.1f), xp, xp, w) == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(loss_cycle(xh, plus(xh, 0.3f), xp, plus(xp, -0.2f), LossWeights{0, 0, 0.5}) == 0.0);
  CHECK(loss_identity(xh, xh, xp, xp, w) == 0.0);
  CHECK(loss_identity(xh, plus(xh, 0.2f), xp, xp, w) == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(loss_identity(xh, plus(xh, 0.2f), xp, plus(xp, 0.4f), LossWeights{10, 10, 0}) == 0.0);
}

TEST_CASE("discriminator loss and the total") {
  CHECK(loss_disc(filled(1), filled(0)) == 0.0);
  CHECK(loss_disc(filled(0), filled(1)) == 2.0);
  CHECK(loss_disc(filled(0.5), filled(0.5)) == doctest::Approx(0.5));
  CHECK(loss_gen_total(0, 0, 0, 0) == 0.0);
  CHECK(loss_gen_total(0.25, 0.25, 1.0, 1.0) == doctest::Approx(2.5));
}

TEST_CASE("loss weights validation") {
  CHECK_NOTHROW(validate(LossWeights{}));
  CHECK_THROWS_AS(validate(LossWeights{-1, 10, 0.5}), InputError);
  nlohmann::json j = LossWeights{1, 2, 3};
  const auto back = j.get<LossWeights>();
  CHECK(back.lambda_P == 2.0);
}

TEST_CASE("loss properties on random fixtures") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 20.0);
  for (int t = 0; t < 200; ++t) {
    const int h = 1 + t % 6, w = 1 + t % 4;
    const Image2D xh = lft::random_image(rng, h, w), xp = lft::random_image(rng, h, w);
    const Image2D rh = lft::random_image(rng, h, w), rp = lft::random_image(rng, h, w);
    const LossWeights lw{u(rng), u(rng), u(rng) / 10};
    const double cc = loss_cycle(xh, rh, xp, rp, lw);
    const double idt = loss_identity(xh, rh, xp, rp, lw);
    CHECK(cc >= 0);
    CHECK(idt >= 0);
    CHECK(loss_gen_healthy(rh) >= 0);
    CHECK(loss_disc(rh, rp) >= 0);

    // Degree-1 absolute homogeneity in the residual.
    const double s = std::uniform_real_distribution<double>(-3, 3)(rng);
    Image2D sh = xh, sp = xp;
    for (std::size_t i = 0; i < sh.size(); ++i) {
      sh[i] = static_cast<float>(xh[i] + s * (double(rh[i]) - xh[i]));
      sp[i] = static_cast<float>(xp[i] + s * (double(rp[i]) - xp[i]));
    }
    CHECK(loss_cycle(xh, sh, xp, sp, lw) == doctest::Approx(std::abs(s) * cc).epsilon(1e-4));

    // Weights outside the expectation give the same value.
    const double outside = lw.lambda_H * mean_abs_diff(xh, rh) + lw.lambda_P * mean_abs_diff(xp, rp);
    CHECK(cc == doctest::Approx(outside).epsilon(1e-9));
    CHECK(idt == doctest::Approx(lw.lambda_idt * outside).epsilon(1e-9));
  }
}

TEST_CASE("differentiable losses agree with the scalar forms") {
  std::mt19937_64 rng(8);
  const LossWeights w{3, 7, 0.25};
  for (int t = 0; t < 20; ++t) {
    const Image2D a = lft::random_image(rng, 4, 4, -2, 2), b = lft::random_image(rng, 4, 4, -2, 2);
    const Image2D c = lft::random_image(rng, 4, 4), d = lft::random_image(rng, 4, 4);
    CHECK(value(losses::gen_healthy(var(a))) == doctest::Approx(loss_gen_healthy(a)).epsilon(1e-6));
    CHECK(value(losses::gen_pathological(var(a), var(b))) ==
          doctest::Approx(loss_gen_pathological(a, b)).epsilon(1e-6));
    CHECK(value(losses::disc(var(a), var(b))) == doctest::Approx(loss_disc(a, b)).epsilon(1e-6));
    CHECK(value(losses::cycle(var(a), var(b), var(c), var(d), w)) ==
          doctest::Approx(loss_cycle(a, b, c, d, w)).epsilon(1e-6));
    CHECK(value(losses::identity(var(a), var(b), var(c), var(d), w)) ==
          doctest::Approx(loss_identity(a, b, c, d, w)).epsilon(1e-6));
  }
}

TEST_CASE("stub discriminator returns the input mean") {
  DiscriminatorBundle<float> stub(DiscriminatorConfig{32, 3, true}, DiscriminatorRole::kHealthy, 0);
  Image2D x(4, 4);
  for (int i = 0; i < 16; ++i) x[i] = static_cast<float>(i) / 16.f;
  const Image2D s = discriminate(stub, x);
  REQUIRE(s.size() == 1);
  CHECK(s[0] == doctest::Approx(7.5 / 16.0));
  CHECK(stub.parameters().empty());
}

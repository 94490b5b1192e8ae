#include <doctest.h>

#include <functional>

#include "lesionforge/nn/layers.hpp"
#include "lesionforge/nn/ops.hpp"

using namespace lf;
using namespace lf::nn;

namespace {
Tensor<double> random_tensor(std::vector<int> shape, std::mt19937_64& rng, double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  std::normal_distribution<double> n(0.0, scale);
  for (auto& v : t.vec()) v = n(rng);
  return t;
}

// Largest relative error between the analytic gradient of a random linear
// probe of f and its central difference, over every input element.
double grad_check(const std::function<Var<double>(const Var<double>&)>& f, Tensor<double> x0,
                  std::mt19937_64& rng) {
  const Tensor<double> probe = random_tensor(f(constant(x0))->value.shape(), rng);
  auto objective = [&](const Var<double>& x) {
    return sum_all(mul(f(x), constant(probe)));
  };
  auto x = parameter(x0);
  backward(objective(x));
  double worst = 0;
  const double h = 1e-6;
  for (std::size_t i = 0; i < x0.numel(); ++i) {
    auto p = x0, m = x0;
    p[i] += h;
    m[i] -= h;
    const double fd = (objective(constant(p))->value[0] - objective(constant(m))->value[0]) / (2 * h);
    const double a = x->grad[i];
    worst = std::max(worst, std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-6}));
  }
  return worst;
}
}  // namespace

TEST_CASE("op gradients match central differences") {
  std::mt19937_64 rng(1);
  const auto x = random_tensor({3, 6, 5}, rng);
  const auto w = random_tensor({2, 3, 3, 3}, rng, 0.5);
  const auto b = random_tensor({2}, rng);

  CHECK(grad_check([&](const Var<double>& v) { return conv2d(v, constant(w), constant(b), 1, 1); }, x, rng) < 1e-5);
  CHECK(grad_check([&](const Var<double>& v) { return conv2d(v, constant(w), constant(b), 2, 1); }, x, rng) < 1e-5);
  CHECK(grad_check([&](const Var<double>& v) { return conv2d(constant(x), v, constant(b), 2, 0); }, w, rng) < 1e-5);
  CHECK(grad_check([&](const Var<double>& v) { return conv2d(constant(x), constant(w), v, 1, 0); }, b, rng) < 1e-5);
  CHECK(grad_check([](const Var<double>& v) { return reflect_pad(v, 2); }, x, rng) < 1e-6);
  CHECK(grad_check([](const Var<double>& v) { return reflect_pad(v, 7); }, x, rng) < 1e-6);
  CHECK(grad_check([](const Var<double>& v) { return upsample_nearest2x(v); }, x, rng) < 1e-6);
  CHECK(grad_check([](const Var<double>& v) { return resize_nearest(v, 4, 9); }, x, rng) < 1e-6);
  CHECK(grad_check([](const Var<double>& v) { return instance_norm(v); }, x, rng) < 1e-4);
  CHECK(grad_check([](const Var<double>& v) { return tanh(v); }, x, rng) < 1e-6);
  CHECK(grad_check([](const Var<double>& v) { return sigmoid(v); }, x, rng) < 1e-6);
  CHECK(grad_check([](const Var<double>& v) { return softmax_channels(v); }, x, rng) < 1e-5);
  CHECK(grad_check([](const Var<double>& v) { return sum_channels(slice_channels(v, 1, 3)); }, x, rng) < 1e-6);
  CHECK(grad_check([](const Var<double>& v) { return concat_channels(v, square(v)); }, x, rng) < 1e-5);
  CHECK(grad_check([](const Var<double>& v) { return div(v, add_scalar(square(v), 1.0)); }, x, rng) < 1e-5);
  CHECK(grad_check([](const Var<double>& v) { return mean_abs(v); }, x, rng) < 1e-5);
  CHECK(grad_check([](const Var<double>& v) { return scale(reshape(v, {90}), 3.0); }, x, rng) < 1e-6);
  Tensor<double> target(x.shape());
  for (std::size_t i = 0; i < target.numel(); ++i) target[i] = i % 3 == 0;
  CHECK(grad_check([&](const Var<double>& v) { return bce_with_logits(v, target); }, x, rng) < 1e-5);
}

TEST_CASE("conv2d matches a direct loop") {
  std::mt19937_64 rng(2);
  const auto x = random_tensor({2, 7, 6}, rng);
  const auto w = random_tensor({3, 2, 3, 3}, rng);
  const auto b = random_tensor({3}, rng);
  for (int stride : {1, 2})
    for (int pad : {0, 1, 2}) {
      const auto y = conv2d(constant(x), constant(w), constant(b), stride, pad)->value;
      const int ho = (7 + 2 * pad - 3) / stride + 1, wo = (6 + 2 * pad - 3) / stride + 1;
      REQUIRE(y.shape() == std::vector<int>{3, ho, wo});
      for (int o = 0; o < 3; ++o)
        for (int i = 0; i < ho; ++i)
          for (int j = 0; j < wo; ++j) {
            double s = b[o];
            for (int c = 0; c < 2; ++c)
              for (int ky = 0; ky < 3; ++ky)
                for (int kx = 0; kx < 3; ++kx) {
                  const int yy = i * stride - pad + ky, xx = j * stride - pad + kx;
                  if (yy >= 0 && yy < 7 && xx >= 0 && xx < 6) s += w[((o * 2 + c) * 3 + ky) * 3 + kx] * x.at(c, yy, xx);
                }
            CHECK(y.at(o, i, j) == doctest::Approx(s).epsilon(1e-10));
          }
    }
}

TEST_CASE("reflect padding") {
  Tensor<double> t({1, 1, 4}, std::vector<double>{1, 2, 3, 4});
  const auto p = reflect_pad(constant(t), 2)->value;
  REQUIRE(p.shape() == std::vector<int>{1, 5, 8});
  const std::vector<double> row{3, 2, 1, 2, 3, 4, 3, 2};
  for (int x = 0; x < 8; ++x) CHECK(p.at(0, 2, x) == row[x]);
}

TEST_CASE("dropout") {
  Rng rng(1);
  Tensor<double> ones({1, 50, 50}, 1.0);
  const auto d = dropout(constant(ones), 0.5, rng)->value;
  int zeros = 0;
  for (double v : d.vec()) {
    CHECK((v == 0.0 || v == 2.0));
    zeros += v == 0.0;
  }
  CHECK(zeros > 1000);
  CHECK(zeros < 1500);
}

TEST_CASE("no_grad and detach stop the graph") {
  auto p = parameter(Tensor<double>({1}, 2.0));
  {
    NoGradGuard guard;
    CHECK_FALSE(square(p)->requires_grad);
  }
  CHECK(square(p)->requires_grad);
  CHECK_FALSE(detach(square(p))->requires_grad);
}

TEST_CASE("adam takes a bias-corrected first step of size lr") {
  auto p = parameter(Tensor<double>({3}, std::vector<double>{1, -2, 3}));
  Adam<double> opt({{"p", p}});
  p->grad_buffer() = Tensor<double>({3}, std::vector<double>{0.5, -4, 1e-3});
  opt.step(0.1);
  CHECK(p->value[0] == doctest::Approx(0.9).epsilon(1e-6));
  CHECK(p->value[1] == doctest::Approx(-1.9).epsilon(1e-6));
  CHECK(p->value[2] == doctest::Approx(2.9).epsilon(1e-4));
}

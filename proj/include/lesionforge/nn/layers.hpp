#pragma once

#include <cmath>
#include <random>
#include <string>

#include "lesionforge/nn/ops.hpp"

namespace lf::nn {

/// Convolution layer with N(0, init_std) weights and zero bias.
template <typename T>
struct Conv2d {
  Var<T> weight;
  Var<T> bias;
  int stride = 1;
  int pad = 0;

  Conv2d() = default;
  Conv2d(int in, int out, int kernel, int stride_, int pad_, Rng& rng, double init_std = 0.02)
      : stride(stride_), pad(pad_) {
    std::normal_distribution<double> dist(0.0, init_std);
    Tensor<T> w({out, in, kernel, kernel});
    for (auto& v : w.vec()) v = static_cast<T>(dist(rng));
    weight = parameter(std::move(w));
    bias = parameter(Tensor<T>({out}, T(0)));
  }

  Var<T> operator()(const Var<T>& x) const { return conv2d(x, weight, bias, stride, pad); }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    out.emplace_back(prefix + ".weight", weight);
    out.emplace_back(prefix + ".bias", bias);
  }
  int out_channels() const { return weight->value.dim(0); }
};

/// Instance norm that passes 1x1 planes through unchanged (statistics are
/// undefined on a single pixel).
template <typename T>
Var<T> norm_or_identity(const Var<T>& x) {
  return x->value.plane() > 1 ? instance_norm(x) : x;
}

struct AdamOptions {
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction over a fixed parameter list.
template <typename T>
class Adam {
 public:
  Adam() = default;
  Adam(ParamList<T> params, AdamOptions opts = {}) : params_(std::move(params)), opts_(opts) {
    for (const auto& [name, p] : params_) {
      m_.emplace_back(p->value.shape(), T(0));
      v_.emplace_back(p->value.shape(), T(0));
    }
  }

  /// Applies one update from the accumulated grads; params without a grad
  /// are left untouched.
  void step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      Node<T>& p = *params_[k].second;
      if (!p.has_grad()) continue;
      Tensor<T>& m = m_[k];
      Tensor<T>& v = v_[k];
      for (std::size_t i = 0; i < p.value.numel(); ++i) {
        const double g = p.grad[i];
        const double mi = opts_.beta1 * m[i] + (1.0 - opts_.beta1) * g;
        const double vi = opts_.beta2 * v[i] + (1.0 - opts_.beta2) * g * g;
        m[i] = static_cast<T>(mi);
        v[i] = static_cast<T>(vi);
        const double update = lr * (mi / bc1) / (std::sqrt(vi / bc2) + opts_.eps);
        p.value[i] = static_cast<T>(p.value[i] - update);
      }
    }
  }

  void zero_grad() { nn::zero_grad(params_); }

  const ParamList<T>& params() const { return params_; }
  std::vector<Tensor<T>>& first_moments() { return m_; }
  std::vector<Tensor<T>>& second_moments() { return v_; }
  const std::vector<Tensor<T>>& first_moments() const { return m_; }
  const std::vector<Tensor<T>>& second_moments() const { return v_; }
  long long steps() const { return t_; }
  void set_steps(long long t) { t_ = t; }

 private:
  ParamList<T> params_;
  AdamOptions opts_;
  std::vector<Tensor<T>> m_;
  std::vector<Tensor<T>> v_;
  long long t_ = 0;
};

}  // namespace lf::nn

#include "lesionforge/nn/ops.hpp"

#include <Eigen/Core>
#include <cmath>
#include <random>
#include <unordered_set>

namespace lf::nn {

namespace {

thread_local bool g_grad_enabled = true;

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using MapConstMat = Eigen::Map<const RowMat<T>>;

void require_chw(const char* op, const std::vector<int>& shape) {
  if (shape.size() != 3) throw ShapeError(std::string(op) + ": expected (C,H,W) input");
}

template <typename T>
void require_same(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " +
                     b.shape_string());
}

// Output columns [lo, hi) whose input column ox*s - p + kx lies inside [0, W).
inline void valid_range(int W, int s, int p, int kx, int Wo, int& lo, int& hi) {
  const int first = p - kx;  // need ox*s >= first
  lo = first <= 0 ? 0 : (first + s - 1) / s;
  const int last = W - 1 + p - kx;  // need ox*s <= last
  hi = last < 0 ? 0 : std::min(Wo, last / s + 1);
  if (hi < lo) hi = lo;
}

template <typename T>
void im2col(const T* x, int C, int H, int W, int k, int s, int p, int Ho, int Wo, T* cols) {
  const std::size_t hw = static_cast<std::size_t>(Ho) * Wo;
  for (int c = 0; c < C; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        T* row = cols + (static_cast<std::size_t>(c * k + ky) * k + kx) * hw;
        int lo, hi;
        valid_range(W, s, p, kx, Wo, lo, hi);
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = oy * s - p + ky;
          T* dst = row + static_cast<std::size_t>(oy) * Wo;
          if (iy < 0 || iy >= H) {
            std::fill(dst, dst + Wo, T(0));
            continue;
          }
          const T* src = x + (static_cast<std::size_t>(c) * H + iy) * W - p + kx;
          std::fill(dst, dst + lo, T(0));
          if (s == 1) {
            std::copy(src + lo, src + hi, dst + lo);
          } else {
            for (int ox = lo; ox < hi; ++ox) dst[ox] = src[ox * s];
          }
          std::fill(dst + hi, dst + Wo, T(0));
        }
      }
}

template <typename T>
void col2im(const T* cols, int C, int H, int W, int k, int s, int p, int Ho, int Wo, T* x) {
  const std::size_t hw = static_cast<std::size_t>(Ho) * Wo;
  for (int c = 0; c < C; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const T* row = cols + (static_cast<std::size_t>(c * k + ky) * k + kx) * hw;
        int lo, hi;
        valid_range(W, s, p, kx, Wo, lo, hi);
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = oy * s - p + ky;
          if (iy < 0 || iy >= H) continue;
          const T* src = row + static_cast<std::size_t>(oy) * Wo;
          T* dst = x + (static_cast<std::size_t>(c) * H + iy) * W - p + kx;
          if (s == 1) {
            for (int ox = lo; ox < hi; ++ox) dst[ox] += src[ox];
          } else {
            for (int ox = lo; ox < hi; ++ox) dst[ox * s] += src[ox];
          }
        }
      }
}

int reflect_index(int i, int n) {
  if (n == 1) return 0;
  if (i < 0) i = -i;
  if (i >= n) i = 2 * (n - 1) - i;
  return std::clamp(i, 0, n - 1);
}

}  // namespace

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

template <typename T>
void backward(const Var<T>& root) {
  if (root->value.numel() != 1) throw ShapeError("backward: root must be a scalar");
  if (!root->requires_grad) return;
  // Iterative post-order DFS for a topological order. `order` holds owning
  // handles: clearing a node's parents below must not free pending nodes.
  std::vector<Var<T>> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Var<T>, std::size_t>> stack{{root, 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& top = stack.back();
    if (top.second < top.first->parents.size()) {
      Var<T> p = top.first->parents[top.second++];
      if (p->requires_grad && !seen.count(p.get())) {
        seen.insert(p.get());
        stack.emplace_back(std::move(p), 0);
      }
    } else {
      order.push_back(std::move(top.first));
      stack.pop_back();
    }
  }
  root->grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>& n = **it;
    if (n.backward_fn && n.has_grad()) n.backward_fn(n);
    if (n.backward_fn) {
      n.backward_fn = nullptr;
      n.parents.clear();
    }
  }
}

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int stride, int pad) {
  const auto& xs = x->value.shape();
  const auto& ws = weight->value.shape();
  require_chw("conv2d", xs);
  if (ws.size() != 4 || ws[2] != ws[3] || ws[1] != xs[0])
    throw ShapeError("conv2d: weight " + weight->value.shape_string() + " incompatible with input " +
                     x->value.shape_string());
  const int C = xs[0], H = xs[1], W = xs[2];
  const int Co = ws[0], k = ws[2];
  if (stride < 1 || pad < 0) throw ShapeError("conv2d: bad stride/pad");
  const int Ho = (H + 2 * pad - k) / stride + 1;
  const int Wo = (W + 2 * pad - k) / stride + 1;
  if (H + 2 * pad < k || W + 2 * pad < k || Ho < 1 || Wo < 1)
    throw ShapeError("conv2d: input " + x->value.shape_string() + " smaller than kernel");
  if (bias && (bias->value.numel() != static_cast<std::size_t>(Co)))
    throw ShapeError("conv2d: bias size mismatch");

  const int K = C * k * k;
  const std::size_t hw = static_cast<std::size_t>(Ho) * Wo;
  const bool direct = (k == 1 && stride == 1 && pad == 0);
  // Left uninitialized: im2col writes every element.
  std::shared_ptr<T[]> cols;
  if (!direct) {
    cols.reset(new T[static_cast<std::size_t>(K) * hw]);
    im2col(x->value.data(), C, H, W, k, stride, pad, Ho, Wo, cols.get());
  }
  const T* colp = direct ? x->value.data() : cols.get();

  Tensor<T> out = Tensor<T>::chw(Co, Ho, Wo);
  MapMat<T> O(out.data(), Co, static_cast<Eigen::Index>(hw));
  MapConstMat<T> Wm(weight->value.data(), Co, K);
  MapConstMat<T> Cm(colp, K, static_cast<Eigen::Index>(hw));
  O.noalias() = Wm * Cm;
  if (bias) {
    for (int o = 0; o < Co; ++o) O.row(o).array() += bias->value[o];
  }

  std::vector<Var<T>> parents{x, weight};
  if (bias) parents.push_back(bias);
  const bool need_cols = grad_enabled() && weight->requires_grad && !direct;
  return make_op(std::move(out), std::move(parents),
                 [=, cols = need_cols ? std::move(cols) : nullptr](Node<T>& self) {
                   Node<T>& xn = *self.parents[0];
                   Node<T>& wn = *self.parents[1];
                   MapConstMat<T> dO(self.grad.data(), Co, static_cast<Eigen::Index>(hw));
                   if (wn.requires_grad) {
                     MapMat<T> dW(wn.grad_buffer().data(), Co, K);
                     const T* cp = direct ? xn.value.data() : cols.get();
                     MapConstMat<T> Cm2(cp, K, static_cast<Eigen::Index>(hw));
                     dW.noalias() += dO * Cm2.transpose();
                   }
                   if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
                     T* db = self.parents[2]->grad_buffer().data();
                     // Plain loop: Eigen's vectorized sum peels by address alignment,
                     // which would make results depend on where the buffer landed.
                     for (int o = 0; o < Co; ++o) {
                       const T* row = self.grad.data() + static_cast<std::size_t>(o) * hw;
                       T acc = T(0);
                       for (std::size_t i = 0; i < hw; ++i) acc += row[i];
                       db[o] += acc;
                     }
                   }
                   if (xn.requires_grad) {
                     MapConstMat<T> Wm2(wn.value.data(), Co, K);
                     if (direct) {
                       MapMat<T> dX(xn.grad_buffer().data(), K, static_cast<Eigen::Index>(hw));
                       dX.noalias() += Wm2.transpose() * dO;
                     } else {
                       RowMat<T> dC = Wm2.transpose() * dO;
                       col2im(dC.data(), C, H, W, k, stride, pad, Ho, Wo,
                              xn.grad_buffer().data());
                     }
                   }
                 });
}

template <typename T>
Var<T> reflect_pad(const Var<T>& x, int pad) {
  require_chw("reflect_pad", x->value.shape());
  if (pad == 0) return x;
  const int C = x->value.channels(), H = x->value.height(), W = x->value.width();
  const int Hp = H + 2 * pad, Wp = W + 2 * pad;
  std::vector<int> ry(Hp), rx(Wp);
  for (int i = 0; i < Hp; ++i) ry[i] = reflect_index(i - pad, H);
  for (int i = 0; i < Wp; ++i) rx[i] = reflect_index(i - pad, W);
  Tensor<T> out = Tensor<T>::chw(C, Hp, Wp);
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < Hp; ++y)
      for (int xx = 0; xx < Wp; ++xx) out.at(c, y, xx) = x->value.at(c, ry[y], rx[xx]);
  return make_op(std::move(out), {x}, [=](Node<T>& self) {
    Tensor<T>& g = self.parents[0]->grad_buffer();
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < Hp; ++y)
        for (int xx = 0; xx < Wp; ++xx) g.at(c, ry[y], rx[xx]) += self.grad.at(c, y, xx);
  });
}

template <typename T>
Var<T> upsample_nearest2x(const Var<T>& x) {
  require_chw("upsample_nearest2x", x->value.shape());
  const int C = x->value.channels(), H = x->value.height(), W = x->value.width();
  Tensor<T> out = Tensor<T>::chw(C, 2 * H, 2 * W);
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < 2 * H; ++y)
      for (int xx = 0; xx < 2 * W; ++xx) out.at(c, y, xx) = x->value.at(c, y / 2, xx / 2);
  return make_op(std::move(out), {x}, [=](Node<T>& self) {
    Tensor<T>& g = self.parents[0]->grad_buffer();
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < 2 * H; ++y)
        for (int xx = 0; xx < 2 * W; ++xx) g.at(c, y / 2, xx / 2) += self.grad.at(c, y, xx);
  });
}

template <typename T>
Var<T> resize_nearest(const Var<T>& x, int height, int width) {
  require_chw("resize_nearest", x->value.shape());
  const int C = x->value.channels(), H = x->value.height(), W = x->value.width();
  if (height == H && width == W) return x;
  if (height < 1 || width < 1) throw ShapeError("resize_nearest: empty target");
  std::vector<int> sy(height), sx(width);
  for (int i = 0; i < height; ++i) sy[i] = std::min(H - 1, static_cast<int>(static_cast<long>(i) * H / height));
  for (int i = 0; i < width; ++i) sx[i] = std::min(W - 1, static_cast<int>(static_cast<long>(i) * W / width));
  Tensor<T> out = Tensor<T>::chw(C, height, width);
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < height; ++y)
      for (int xx = 0; xx < width; ++xx) out.at(c, y, xx) = x->value.at(c, sy[y], sx[xx]);
  return make_op(std::move(out), {x}, [=](Node<T>& self) {
    Tensor<T>& g = self.parents[0]->grad_buffer();
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < height; ++y)
        for (int xx = 0; xx < width; ++xx) g.at(c, sy[y], sx[xx]) += self.grad.at(c, y, xx);
  });
}

template <typename T>
Var<T> instance_norm(const Var<T>& x, T eps) {
  require_chw("instance_norm", x->value.shape());
  const int C = x->value.channels();
  const std::size_t n = x->value.plane();
  if (n < 2) throw ShapeError("instance_norm: needs more than one spatial element");
  Tensor<T> out(x->value.shape());
  std::vector<T> inv_std(C);
  for (int c = 0; c < C; ++c) {
    const T* src = x->value.data() + c * n;
    double mean = 0;
    for (std::size_t i = 0; i < n; ++i) mean += src[i];
    mean /= static_cast<double>(n);
    double var = 0;
    for (std::size_t i = 0; i < n; ++i) var += (src[i] - mean) * (src[i] - mean);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + static_cast<double>(eps));
    inv_std[c] = static_cast<T>(is);
    T* dst = out.data() + c * n;
    for (std::size_t i = 0; i < n; ++i) dst[i] = static_cast<T>((src[i] - mean) * is);
  }
  return make_op(std::move(out), {x}, [=](Node<T>& self) {
    T* g = self.parents[0]->grad_buffer().data();
    for (int c = 0; c < C; ++c) {
      const T* dy = self.grad.data() + c * n;
      const T* xh = self.value.data() + c * n;
      double mdy = 0, mdyx = 0;
      for (std::size_t i = 0; i < n; ++i) {
        mdy += dy[i];
        mdyx += static_cast<double>(dy[i]) * xh[i];
      }
      mdy /= static_cast<double>(n);
      mdyx /= static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i)
        g[c * n + i] += static_cast<T>(inv_std[c] * (dy[i] - mdy - xh[i] * mdyx));
    }
  });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  Tensor<T> out(x->value.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = x->value[i] > T(0) ? x->value[i] : T(0);
  return make_op(std::move(out), {x}, [](Node<T>& self) {
    T* g = self.parents[0]->grad_buffer().data();
    for (std::size_t i = 0; i < self.value.numel(); ++i)
      if (self.value[i] > T(0)) g[i] += self.grad[i];
  });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& x, T slope) {
  Tensor<T> out(x->value.shape());
  for (std::size_t i = 0; i < out.numel(); ++i)
    out[i] = x->value[i] > T(0) ? x->value[i] : slope * x->value[i];
  return make_op(std::move(out), {x}, [slope](Node<T>& self) {
    Node<T>& p = *self.parents[0];
    T* g = p.grad_buffer().data();
    for (std::size_t i = 0; i < self.value.numel(); ++i)
      g[i] += p.value[i] > T(0) ? self.grad[i] : slope * self.grad[i];
  });
}

template <typename T>
Var<T> tanh(const Var<T>& x) {
  Tensor<T> out(x->value.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::tanh(x->value[i]);
  return make_op(std::move(out), {x}, [](Node<T>& self) {
    T* g = self.parents[0]->grad_buffer().data();
    for (std::size_t i = 0; i < self.value.numel(); ++i)
      g[i] += self.grad[i] * (T(1) - self.value[i] * self.value[i]);
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  Tensor<T> out(x->value.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = T(1) / (T(1) + std::exp(-x->value[i]));
  return make_op(std::move(out), {x}, [](Node<T>& self) {
    T* g = self.parents[0]->grad_buffer().data();
    for (std::size_t i = 0; i < self.value.numel(); ++i)
      g[i] += self.grad[i] * self.value[i] * (T(1) - self.value[i]);
  });
}

template <typename T>
Var<T> dropout(const Var<T>& x, double p, Rng& rng) {
  if (p <= 0.0) return x;
  if (p >= 1.0) throw InputError("dropout rate must be < 1");
  std::bernoulli_distribution keep(1.0 - p);
  const T scale_v = static_cast<T>(1.0 / (1.0 - p));
  std::vector<T> mask(x->value.numel());
  for (auto& m : mask) m = keep(rng) ? scale_v : T(0);
  Tensor<T> out(x->value.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = x->value[i] * mask[i];
  return make_op(std::move(out), {x}, [mask = std::move(mask)](Node<T>& self) {
    T* g = self.parents[0]->grad_buffer().data();
    for (std::size_t i = 0; i < mask.size(); ++i) g[i] += self.grad[i] * mask[i];
  });
}

template <typename T>
Var<T> softmax_channels(const Var<T>& x) {
  require_chw("softmax_channels", x->value.shape());
  const int C = x->value.channels();
  const std::size_t n = x->value.plane();
  Tensor<T> out(x->value.shape());
  const T* src = x->value.data();
  T* dst = out.data();
  for (std::size_t i = 0; i < n; ++i) {
    T mx = src[i];
    for (int c = 1; c < C; ++c) mx = std::max(mx, src[c * n + i]);
    T sum = 0;
    for (int c = 0; c < C; ++c) sum += dst[c * n + i] = std::exp(src[c * n + i] - mx);
    const T inv = T(1) / sum;
    for (int c = 0; c < C; ++c) dst[c * n + i] *= inv;
  }
  return make_op(std::move(out), {x}, [=](Node<T>& self) {
    T* g = self.parents[0]->grad_buffer().data();
    const T* y = self.value.data();
    const T* dy = self.grad.data();
    for (std::size_t i = 0; i < n; ++i) {
      T dot = 0;
      for (int c = 0; c < C; ++c) dot += dy[c * n + i] * y[c * n + i];
      for (int c = 0; c < C; ++c) g[c * n + i] += y[c * n + i] * (dy[c * n + i] - dot);
    }
  });
}

template <typename T>
Var<T> slice_channels(const Var<T>& x, int begin, int end) {
  require_chw("slice_channels", x->value.shape());
  const int C = x->value.channels();
  if (begin < 0 || end > C || begin >= end) throw ShapeError("slice_channels: bad range");
  const std::size_t n = x->value.plane();
  Tensor<T> out = Tensor<T>::chw(end - begin, x->value.height(), x->value.width());
  std::copy(x->value.data() + begin * n, x->value.data() + end * n, out.data());
  return make_op(std::move(out), {x}, [=](Node<T>& self) {
    T* g = self.parents[0]->grad_buffer().data() + begin * n;
    for (std::size_t i = 0; i < self.grad.numel(); ++i) g[i] += self.grad[i];
  });
}

template <typename T>
Var<T> sum_channels(const Var<T>& x) {
  require_chw("sum_channels", x->value.shape());
  const int C = x->value.channels();
  const std::size_t n = x->value.plane();
  Tensor<T> out = Tensor<T>::chw(1, x->value.height(), x->value.width());
  for (int c = 0; c < C; ++c)
    for (std::size_t i = 0; i < n; ++i) out[i] += x->value[c * n + i];
  return make_op(std::move(out), {x}, [=](Node<T>& self) {
    T* g = self.parents[0]->grad_buffer().data();
    for (int c = 0; c < C; ++c)
      for (std::size_t i = 0; i < n; ++i) g[c * n + i] += self.grad[i];
  });
}

template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
  require_chw("concat_channels", a->value.shape());
  require_chw("concat_channels", b->value.shape());
  if (a->value.height() != b->value.height() || a->value.width() != b->value.width())
    throw ShapeError("concat_channels: plane mismatch");
  const std::size_t na = a->value.numel();
  Tensor<T> out = Tensor<T>::chw(a->value.channels() + b->value.channels(), a->value.height(),
                                 a->value.width());
  std::copy(a->value.data(), a->value.data() + na, out.data());
  std::copy(b->value.data(), b->value.data() + b->value.numel(), out.data() + na);
  return make_op(std::move(out), {a, b}, [na](Node<T>& self) {
    Node<T>& pa = *self.parents[0];
    Node<T>& pb = *self.parents[1];
    if (pa.requires_grad) {
      T* g = pa.grad_buffer().data();
      for (std::size_t i = 0; i < na; ++i) g[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      T* g = pb.grad_buffer().data();
      for (std::size_t i = 0; i < pb.value.numel(); ++i) g[i] += self.grad[na + i];
    }
  });
}

template <typename T>
Var<T> reshape(const Var<T>& x, std::vector<int> shape) {
  Tensor<T> out(std::move(shape), x->value.vec());
  return make_op(std::move(out), {x}, [](Node<T>& self) {
    T* g = self.parents[0]->grad_buffer().data();
    for (std::size_t i = 0; i < self.grad.numel(); ++i) g[i] += self.grad[i];
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same("add", a->value, b->value);
  Tensor<T> out(a->value.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] + b->value[i];
  return make_op(std::move(out), {a, b}, [](Node<T>& self) {
    for (int k = 0; k < 2; ++k) {
      Node<T>& p = *self.parents[k];
      if (!p.requires_grad) continue;
      T* g = p.grad_buffer().data();
      for (std::size_t i = 0; i < self.grad.numel(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same("sub", a->value, b->value);
  Tensor<T> out(a->value.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] - b->value[i];
  return make_op(std::move(out), {a, b}, [](Node<T>& self) {
    Node<T>& pa = *self.parents[0];
    Node<T>& pb = *self.parents[1];
    if (pa.requires_grad) {
      T* g = pa.grad_buffer().data();
      for (std::size_t i = 0; i < self.grad.numel(); ++i) g[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      T* g = pb.grad_buffer().data();
      for (std::size_t i = 0; i < self.grad.numel(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same("mul", a->value, b->value);
  Tensor<T> out(a->value.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] * b->value[i];
  return make_op(std::move(out), {a, b}, [](Node<T>& self) {
    Node<T>& pa = *self.parents[0];
    Node<T>& pb = *self.parents[1];
    if (pa.requires_grad) {
      T* g = pa.grad_buffer().data();
      for (std::size_t i = 0; i < self.grad.numel(); ++i) g[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      T* g = pb.grad_buffer().data();
      for (std::size_t i = 0; i < self.grad.numel(); ++i) g[i] += self.grad[i] * pa.value[i];
    }
  });
}

template <typename T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
  require_same("div", a->value, b->value);
  Tensor<T> out(a->value.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] / b->value[i];
  return make_op(std::move(out), {a, b}, [](Node<T>& self) {
    Node<T>& pa = *self.parents[0];
    Node<T>& pb = *self.parents[1];
    if (pa.requires_grad) {
      T* g = pa.grad_buffer().data();
      for (std::size_t i = 0; i < self.grad.numel(); ++i) g[i] += self.grad[i] / pb.value[i];
    }
    if (pb.requires_grad) {
      T* g = pb.grad_buffer().data();
      for (std::size_t i = 0; i < self.grad.numel(); ++i)
        g[i] -= self.grad[i] * self.value[i] / pb.value[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  Tensor<T> out(a->value.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] * s;
  return make_op(std::move(out), {a}, [s](Node<T>& self) {
    T* g = self.parents[0]->grad_buffer().data();
    for (std::size_t i = 0; i < self.grad.numel(); ++i) g[i] += self.grad[i] * s;
  });
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, T s) {
  Tensor<T> out(a->value.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] + s;
  return make_op(std::move(out), {a}, [](Node<T>& self) {
    T* g = self.parents[0]->grad_buffer().data();
    for (std::size_t i = 0; i < self.grad.numel(); ++i) g[i] += self.grad[i];
  });
}

template <typename T>
Var<T> square(const Var<T>& a) {
  Tensor<T> out(a->value.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] * a->value[i];
  return make_op(std::move(out), {a}, [](Node<T>& self) {
    Node<T>& p = *self.parents[0];
    T* g = p.grad_buffer().data();
    for (std::size_t i = 0; i < self.grad.numel(); ++i) g[i] += T(2) * p.value[i] * self.grad[i];
  });
}

template <typename T>
Var<T> sum_all(const Var<T>& a) {
  if (a->value.empty()) throw ShapeError("sum_all: empty tensor");
  double s = 0;
  for (std::size_t i = 0; i < a->value.numel(); ++i) s += a->value[i];
  return make_op(Tensor<T>::scalar(static_cast<T>(s)), {a}, [](Node<T>& self) {
    Node<T>& p = *self.parents[0];
    T* g = p.grad_buffer().data();
    const T d = self.grad[0];
    for (std::size_t i = 0; i < p.value.numel(); ++i) g[i] += d;
  });
}

template <typename T>
Var<T> mean_all(const Var<T>& a) {
  if (a->value.empty()) throw ShapeError("mean_all: empty tensor");
  double s = 0;
  for (std::size_t i = 0; i < a->value.numel(); ++i) s += a->value[i];
  const double n = static_cast<double>(a->value.numel());
  return make_op(Tensor<T>::scalar(static_cast<T>(s / n)), {a}, [n](Node<T>& self) {
    Node<T>& p = *self.parents[0];
    T* g = p.grad_buffer().data();
    const T d = static_cast<T>(self.grad[0] / n);
    for (std::size_t i = 0; i < p.value.numel(); ++i) g[i] += d;
  });
}

template <typename T>
Var<T> mean_abs(const Var<T>& a) {
  if (a->value.empty()) throw ShapeError("mean_abs: empty tensor");
  double s = 0;
  for (std::size_t i = 0; i < a->value.numel(); ++i) s += std::abs(a->value[i]);
  const double n = static_cast<double>(a->value.numel());
  return make_op(Tensor<T>::scalar(static_cast<T>(s / n)), {a}, [n](Node<T>& self) {
    Node<T>& p = *self.parents[0];
    T* g = p.grad_buffer().data();
    const T d = static_cast<T>(self.grad[0] / n);
    for (std::size_t i = 0; i < p.value.numel(); ++i) {
      const T v = p.value[i];
      g[i] += v > T(0) ? d : (v < T(0) ? -d : T(0));
    }
  });
}

template <typename T>
Var<T> bce_with_logits(const Var<T>& logits, const Tensor<T>& target) {
  require_same("bce_with_logits", logits->value, target);
  const std::size_t n = target.numel();
  if (n == 0) throw ShapeError("bce_with_logits: empty tensor");
  double s = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double z = logits->value[i];
    s += std::max(z, 0.0) - z * target[i] + std::log1p(std::exp(-std::abs(z)));
  }
  return make_op(Tensor<T>::scalar(static_cast<T>(s / n)), {logits},
                 [target, n](Node<T>& self) {
                   Node<T>& p = *self.parents[0];
                   T* g = p.grad_buffer().data();
                   const double d = self.grad[0] / static_cast<double>(n);
                   for (std::size_t i = 0; i < n; ++i) {
                     const double sig = 1.0 / (1.0 + std::exp(-static_cast<double>(p.value[i])));
                     g[i] += static_cast<T>(d * (sig - target[i]));
                   }
                 });
}

#define LF_INSTANTIATE_OPS(T)                                                        \
  template void backward<T>(const Var<T>&);                                          \
  template Var<T> conv2d<T>(const Var<T>&, const Var<T>&, const Var<T>&, int, int);  \
  template Var<T> reflect_pad<T>(const Var<T>&, int);                                \
  template Var<T> upsample_nearest2x<T>(const Var<T>&);                              \
  template Var<T> resize_nearest<T>(const Var<T>&, int, int);                        \
  template Var<T> instance_norm<T>(const Var<T>&, T);                                \
  template Var<T> relu<T>(const Var<T>&);                                            \
  template Var<T> leaky_relu<T>(const Var<T>&, T);                                   \
  template Var<T> tanh<T>(const Var<T>&);                                            \
  template Var<T> sigmoid<T>(const Var<T>&);                                         \
  template Var<T> dropout<T>(const Var<T>&, double, Rng&);                           \
  template Var<T> softmax_channels<T>(const Var<T>&);                                \
  template Var<T> slice_channels<T>(const Var<T>&, int, int);                        \
  template Var<T> sum_channels<T>(const Var<T>&);                                    \
  template Var<T> concat_channels<T>(const Var<T>&, const Var<T>&);                  \
  template Var<T> reshape<T>(const Var<T>&, std::vector<int>);                      \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                              \
  template Var<T> sub<T>(const Var<T>&, const Var<T>&);                              \
  template Var<T> mul<T>(const Var<T>&, const Var<T>&);                              \
  template Var<T> div<T>(const Var<T>&, const Var<T>&);                              \
  template Var<T> scale<T>(const Var<T>&, T);                                        \
  template Var<T> add_scalar<T>(const Var<T>&, T);                                   \
  template Var<T> square<T>(const Var<T>&);                                          \
  template Var<T> sum_all<T>(const Var<T>&);                                         \
  template Var<T> mean_all<T>(const Var<T>&);                                        \
  template Var<T> mean_abs<T>(const Var<T>&);                                        \
  template Var<T> bce_with_logits<T>(const Var<T>&, const Tensor<T>&);

LF_INSTANTIATE_OPS(float)
LF_INSTANTIATE_OPS(double)

}  // namespace lf::nn

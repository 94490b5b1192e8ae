#pragma once

#include "lesionforge/common.hpp"
#include "lesionforge/nn/autograd.hpp"

namespace lf::nn {

// Differentiable operations on (C, H, W) activations. All are instantiated
// for float and double.

/// Cross-correlation, zero padding. weight is (out, in, k, k); bias may be null.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int stride, int pad);

/// Reflection padding; falls back to edge clamping where the plane is too
/// small to reflect.
template <typename T>
Var<T> reflect_pad(const Var<T>& x, int pad);

template <typename T>
Var<T> upsample_nearest2x(const Var<T>& x);

/// Nearest-neighbour resize, src = floor(dst * in / out).
template <typename T>
Var<T> resize_nearest(const Var<T>& x, int height, int width);

/// Per-channel normalization over the plane, no affine. Requires > 1 pixel.
template <typename T>
Var<T> instance_norm(const Var<T>& x, T eps = T(1e-5));

template <typename T>
Var<T> relu(const Var<T>& x);
template <typename T>
Var<T> leaky_relu(const Var<T>& x, T slope);
template <typename T>
Var<T> tanh(const Var<T>& x);
template <typename T>
Var<T> sigmoid(const Var<T>& x);

/// Inverted dropout: zeroes with probability p, scales survivors by 1/(1-p).
template <typename T>
Var<T> dropout(const Var<T>& x, double p, Rng& rng);

/// Softmax across channels at every pixel.
template <typename T>
Var<T> softmax_channels(const Var<T>& x);

template <typename T>
Var<T> slice_channels(const Var<T>& x, int begin, int end);
/// (C, H, W) -> (1, H, W).
template <typename T>
Var<T> sum_channels(const Var<T>& x);
template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b);

/// Same data, new shape (element count must match).
template <typename T>
Var<T> reshape(const Var<T>& x, std::vector<int> shape);

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> div(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> scale(const Var<T>& a, T s);
template <typename T>
Var<T> add_scalar(const Var<T>& a, T s);
template <typename T>
Var<T> square(const Var<T>& a);

/// Reductions to a (1) scalar.
template <typename T>
Var<T> sum_all(const Var<T>& a);
template <typename T>
Var<T> mean_all(const Var<T>& a);
template <typename T>
Var<T> mean_abs(const Var<T>& a);

/// Mean binary cross-entropy on logits against a constant {0,1} target.
template <typename T>
Var<T> bce_with_logits(const Var<T>& logits, const Tensor<T>& target);

}  // namespace lf::nn

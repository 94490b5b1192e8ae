#pragma once

#include <algorithm>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "lesionforge/common.hpp"

namespace lf::nn {

/// Dense row-major tensor. Activations are (C, H, W); conv weights are
/// (out, in, k, k); scalars are (1).
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape, T fill = T{}) : shape_(std::move(shape)) {
    data_.assign(numel_of(shape_), fill);
  }
  Tensor(std::vector<int> shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != numel_of(shape_)) throw ShapeError("tensor data/shape size mismatch");
  }
  static Tensor chw(int c, int h, int w, T fill = T{}) { return Tensor({c, h, w}, fill); }
  static Tensor scalar(T v) { return Tensor({1}, std::vector<T>{v}); }

  const std::vector<int>& shape() const noexcept { return shape_; }
  int rank() const noexcept { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  std::size_t numel() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  // (C, H, W) accessors.
  int channels() const { return dim(0); }
  int height() const { return dim(1); }
  int width() const { return dim(2); }
  std::size_t plane() const { return static_cast<std::size_t>(dim(1)) * dim(2); }
  T& at(int c, int y, int x) {
    return data_[(static_cast<std::size_t>(c) * shape_[1] + y) * shape_[2] + x];
  }
  const T& at(int c, int y, int x) const {
    return data_[(static_cast<std::size_t>(c) * shape_[1] + y) * shape_[2] + x];
  }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::vector<T>& vec() noexcept { return data_; }
  const std::vector<T>& vec() const noexcept { return data_; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  bool same_shape(const Tensor& o) const noexcept { return shape_ == o.shape_; }
  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
  bool operator==(const Tensor& o) const = default;

  std::string shape_string() const {
    std::string s = "(";
    for (std::size_t i = 0; i < shape_.size(); ++i) s += (i ? "," : "") + std::to_string(shape_[i]);
    return s + ")";
  }

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

 private:
  static std::size_t numel_of(const std::vector<int>& s) {
    std::size_t n = 1;
    for (int d : s) {
      if (d < 0) throw ShapeError("negative tensor dimension");
      n *= static_cast<std::size_t>(d);
    }
    return n;
  }
  std::vector<int> shape_;
  std::vector<T> data_;
};

}  // namespace lf::nn

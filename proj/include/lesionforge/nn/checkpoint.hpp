#pragma once

#include <filesystem>
#include <map>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "lesionforge/nn/tensor.hpp"

namespace lf::nn {

// On-disk layout:
//   8 bytes   magic "LFCKPT01"
//   8 bytes   little-endian u64 header length
//   header    JSON {"manifest": {...}, "tensors": [{name, dtype, shape, offset, nbytes}]}
//   payload   raw little-endian tensor data, in table order
// Values are stored in their native precision, so reloads are bit-exact.

class CheckpointWriter {
 public:
  template <typename T>
  void add(const std::string& name, const Tensor<T>& t);
  void write(const std::filesystem::path& path, const nlohmann::json& manifest) const;

 private:
  struct Entry {
    std::string name;
    std::string dtype;
    std::vector<int> shape;
    std::vector<char> bytes;
  };
  std::vector<Entry> entries_;
};

class CheckpointReader {
 public:
  explicit CheckpointReader(const std::filesystem::path& path);

  const nlohmann::json& manifest() const { return manifest_; }
  bool contains(const std::string& name) const { return entries_.count(name) > 0; }
  std::vector<std::string> names() const;
  /// Converts between float and double if the stored dtype differs.
  template <typename T>
  Tensor<T> get(const std::string& name) const;

 private:
  struct Entry {
    std::string dtype;
    std::vector<int> shape;
    std::vector<char> bytes;
  };
  nlohmann::json manifest_;
  std::map<std::string, Entry> entries_;
};

template <typename T>
constexpr const char* dtype_name();
template <>
constexpr const char* dtype_name<float>() {
  return "f32";
}
template <>
constexpr const char* dtype_name<double>() {
  return "f64";
}

}  // namespace lf::nn

#pragma once

#include <chrono>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

namespace lf {

/// Hex SHA-256 of a file's bytes. For a directory: hash of the sorted
/// "relative-path\0file-hash\n" listing of every regular file below it.
std::string sha256_path(const std::filesystem::path& path);
std::string sha256_bytes(const std::string& bytes);

/// Reproducibility record written as run.json into an output directory.
class RunManifest {
 public:
  explicit RunManifest(std::string command);

  void set_config(nlohmann::json config) { config_ = std::move(config); }
  void add_seed(const std::string& name, std::uint64_t seed) { seeds_[name] = seed; }
  void add_input(const std::filesystem::path& path);
  void add_artifact(const std::filesystem::path& path);
  void set_argv(std::vector<std::string> argv) { argv_ = std::move(argv); }

  nlohmann::json to_json() const;
  /// Writes dir/run.json, stamping the end time.
  std::filesystem::path write(const std::filesystem::path& dir) const;

 private:
  std::string command_;
  std::vector<std::string> argv_;
  nlohmann::json config_ = nlohmann::json::object();
  nlohmann::json seeds_ = nlohmann::json::object();
  nlohmann::json inputs_ = nlohmann::json::array();
  std::vector<std::string> artifacts_;
  std::chrono::system_clock::time_point start_;
};

}  // namespace lf

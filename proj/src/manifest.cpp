#include "lesionforge/manifest.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <memory>
#include <sstream>

#include "lesionforge/common.hpp"

namespace lf {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new(), &EVP_MD_CTX_free) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1)
      throw std::runtime_error("SHA-256 init failed");
  }
  void update(const void* data, std::size_t n) { EVP_DigestUpdate(ctx_.get(), data, n); }
  std::string hex() {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx_.get(), md, &len);
    std::ostringstream os;
    for (unsigned i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
    return os.str();
  }

 private:
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx_;
};

std::string hash_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw InputError("cannot read " + p.string());
  Sha256 h;
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    h.update(buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  return h.hex();
}

std::string iso_time(std::chrono::system_clock::time_point t) {
  const std::time_t tt = std::chrono::system_clock::to_time_t(t);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

}  // namespace

std::string sha256_bytes(const std::string& bytes) {
  Sha256 h;
  h.update(bytes.data(), bytes.size());
  return h.hex();
}

std::string sha256_path(const fs::path& path) {
  if (fs::is_regular_file(path)) return hash_file(path);
  if (!fs::is_directory(path)) throw InputError("cannot hash missing path " + path.string());
  std::vector<std::string> lines;
  for (const auto& e : fs::recursive_directory_iterator(path))
    if (e.is_regular_file())
      lines.push_back(fs::relative(e.path(), path).generic_string() + '\0' + hash_file(e.path()) + '\n');
  std::sort(lines.begin(), lines.end());
  std::string all;
  for (const auto& l : lines) all += l;
  return sha256_bytes(all);
}

RunManifest::RunManifest(std::string command)
    : command_(std::move(command)), start_(std::chrono::system_clock::now()) {}

void RunManifest::add_input(const fs::path& path) {
  inputs_.push_back({{"path", path.string()}, {"sha256", sha256_path(path)}});
}

void RunManifest::add_artifact(const fs::path& path) { artifacts_.push_back(path.string()); }

json RunManifest::to_json() const {
  const auto end = std::chrono::system_clock::now();
  return json{{"command", command_},
              {"argv", argv_},
              {"version", version_string()},
              {"config", config_},
              {"seeds", seeds_},
              {"inputs", inputs_},
              {"artifacts", artifacts_},
              {"started", iso_time(start_)},
              {"finished", iso_time(end)},
              {"wall_clock_seconds", std::chrono::duration<double>(end - start_).count()}};
}

fs::path RunManifest::write(const fs::path& dir) const {
  fs::create_directories(dir);
  const fs::path p = dir / "run.json";
  std::ofstream(p) << to_json().dump(2) << "\n";
  return p;
}

}  // namespace lf

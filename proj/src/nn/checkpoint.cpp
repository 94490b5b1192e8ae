#include "lesionforge/nn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace lf::nn {

namespace {

constexpr char kMagic[8] = {'L', 'F', 'C', 'K', 'P', 'T', '0', '1'};
static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

}  // namespace

template <typename T>
void CheckpointWriter::add(const std::string& name, const Tensor<T>& t) {
  Entry e{name, dtype_name<T>(), t.shape(), {}};
  e.bytes.resize(t.numel() * sizeof(T));
  std::memcpy(e.bytes.data(), t.data(), e.bytes.size());
  entries_.push_back(std::move(e));
}

void CheckpointWriter::write(const std::filesystem::path& path,
                             const nlohmann::json& manifest) const {
  nlohmann::json table = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& e : entries_) {
    table.push_back({{"name", e.name},
                     {"dtype", e.dtype},
                     {"shape", e.shape},
                     {"offset", offset},
                     {"nbytes", e.bytes.size()}});
    offset += e.bytes.size();
  }
  const std::string header = nlohmann::json{{"manifest", manifest}, {"tensors", table}}.dump();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
    out.write(kMagic, sizeof kMagic);
    const std::uint64_t len = header.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const auto& e : entries_)
      out.write(e.bytes.data(), static_cast<std::streamsize>(e.bytes.size()));
    if (!out) throw std::runtime_error("short write on checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

CheckpointReader::CheckpointReader(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open checkpoint " + path.string());
  char magic[8];
  std::uint64_t len = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    throw InputError("not a lesionforge checkpoint: " + path.string());
  std::string header(len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(len));
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw InputError("corrupt checkpoint header in " + path.string() + ": " + e.what());
  }
  manifest_ = j.at("manifest");
  const auto data_start = static_cast<std::streamoff>(sizeof magic + sizeof len + len);
  for (const auto& t : j.at("tensors")) {
    Entry e{t.at("dtype").get<std::string>(), t.at("shape").get<std::vector<int>>(), {}};
    e.bytes.resize(t.at("nbytes").get<std::size_t>());
    in.seekg(data_start + t.at("offset").get<std::streamoff>());
    in.read(e.bytes.data(), static_cast<std::streamsize>(e.bytes.size()));
    if (!in) throw InputError("truncated checkpoint " + path.string());
    entries_.emplace(t.at("name").get<std::string>(), std::move(e));
  }
}

std::vector<std::string> CheckpointReader::names() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : entries_) out.push_back(k);
  return out;
}

namespace {

template <typename Src, typename Dst>
std::vector<Dst> convert(const std::vector<char>& bytes) {
  std::vector<Src> src(bytes.size() / sizeof(Src));
  std::memcpy(src.data(), bytes.data(), src.size() * sizeof(Src));
  return std::vector<Dst>(src.begin(), src.end());
}

}  // namespace

template <typename T>
Tensor<T> CheckpointReader::get(const std::string& name) const {
  const auto it = entries_.find(name);
  if (it == entries_.end()) throw InputError("checkpoint has no tensor '" + name + "'");
  const Entry& e = it->second;
  if (e.dtype == "f32") return Tensor<T>(e.shape, convert<float, T>(e.bytes));
  if (e.dtype == "f64") return Tensor<T>(e.shape, convert<double, T>(e.bytes));
  throw InputError("unknown dtype " + e.dtype);
}

template void CheckpointWriter::add<float>(const std::string&, const Tensor<float>&);
template void CheckpointWriter::add<double>(const std::string&, const Tensor<double>&);
template Tensor<float> CheckpointReader::get<float>(const std::string&) const;
template Tensor<double> CheckpointReader::get<double>(const std::string&) const;

}  // namespace lf::nn

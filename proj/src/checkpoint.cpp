#include "csasr/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace csasr {
namespace {

constexpr char kMagic[8] = {'C', 'S', 'A', 'S', 'R', 'C', 'K', '\0'};

template <class T>
void put_le(std::ostream& os, T v) {
  unsigned char bytes[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <class T>
T get_le(std::istream& is) {
  unsigned char bytes[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(bytes), sizeof(T))) throw std::runtime_error("checkpoint: truncated file");
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(bytes[i]) << (8 * i);
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const CheckpointFile& ckpt) {
  nlohmann::json header;
  header["format_version"] = kCheckpointFormatVersion;
  header["meta"] = ckpt.meta;
  header["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& t : ckpt.tensors) {
    if (shape_numel(t.shape) != t.data.size())
      throw std::invalid_argument("checkpoint: tensor '" + t.name + "' shape/data mismatch");
    header["tensors"].push_back({{"name", t.name}, {"shape", t.shape}, {"offset", offset}, {"count", t.data.size()}});
    offset += t.data.size();
  }
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path.string() + " for writing");
  os.write(kMagic, sizeof(kMagic));
  put_le<std::uint32_t>(os, kCheckpointFormatVersion);
  put_le<std::uint64_t>(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& t : ckpt.tensors)
    for (double v : t.data) put_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(v));
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path.string());
}

CheckpointFile load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path.string());
  char magic[sizeof(kMagic)];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path.string());
  const auto version = get_le<std::uint32_t>(is);
  if (version != kCheckpointFormatVersion)
    throw std::runtime_error("checkpoint: unsupported format version " + std::to_string(version));
  const auto header_len = get_le<std::uint64_t>(is);
  std::string text(header_len, '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(header_len)))
    throw std::runtime_error("checkpoint: truncated header");
  const auto header = nlohmann::json::parse(text);

  CheckpointFile ckpt;
  ckpt.meta = header.value("meta", nlohmann::json::object());
  for (const auto& entry : header.at("tensors")) {
    TensorRecord rec;
    rec.name = entry.at("name").get<std::string>();
    rec.shape = entry.at("shape").get<Shape>();
    const auto count = entry.at("count").get<std::size_t>();
    if (shape_numel(rec.shape) != count) throw std::runtime_error("checkpoint: inconsistent entry " + rec.name);
    rec.data.resize(count);
    for (auto& v : rec.data) v = std::bit_cast<double>(get_le<std::uint64_t>(is));
    ckpt.tensors.push_back(std::move(rec));
  }
  return ckpt;
}

Tensor ParameterStore::add(const std::string& name, Tensor value) {
  if (index_.count(name)) throw std::invalid_argument("parameter '" + name + "' registered twice");
  Tensor param = Tensor::from_data(value.shape(), std::vector<double>(value.data().begin(), value.data().end()), true);
  index_[name] = items_.size();
  items_.emplace_back(name, param);
  return param;
}

const Tensor& ParameterStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return items_[it->second].second;
}

std::size_t ParameterStore::total_numel() const {
  std::size_t n = 0;
  for (const auto& [_, t] : items_) n += t.numel();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& [_, t] : items_) t.zero_grad();
}

std::vector<TensorRecord> ParameterStore::snapshot() const {
  std::vector<TensorRecord> out;
  out.reserve(items_.size());
  for (const auto& [name, t] : items_)
    out.push_back({name, t.shape(), std::vector<double>(t.data().begin(), t.data().end())});
  return out;
}

void ParameterStore::load(const std::vector<TensorRecord>& records) {
  std::map<std::string, const TensorRecord*> by_name;
  for (const auto& r : records) by_name[r.name] = &r;
  for (auto& [name, t] : items_) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw std::runtime_error("checkpoint lacks parameter '" + name + "'");
    if (it->second->shape != t.shape())
      throw std::runtime_error("parameter '" + name + "' has shape " + shape_str(it->second->shape) +
                               " in checkpoint, expected " + shape_str(t.shape()));
    auto dst = t.mutable_data();
    std::copy(it->second->data.begin(), it->second->data.end(), dst.begin());
  }
}

}  // namespace csasr

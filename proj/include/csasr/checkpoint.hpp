#pragma once

// Named parameter sets and their on-disk form.
//
// File layout (format version 1):
//   8 bytes   magic "CSASRCK\0"
//   u32 LE    format version
//   u64 LE    header length in bytes
//   header    UTF-8 JSON: {"format_version", "meta", "tensors": [{"name","shape","offset","count"}]}
//   payload   little-endian float64 values; `offset` counts values, not bytes

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "csasr/tensor.hpp"

namespace csasr {

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

struct TensorRecord {
  std::string name;
  Shape shape;
  std::vector<double> data;
};

struct CheckpointFile {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<TensorRecord> tensors;
};

void save_checkpoint(const std::filesystem::path& path, const CheckpointFile& ckpt);
// Throws std::runtime_error on a bad magic, unknown version or truncated file.
CheckpointFile load_checkpoint(const std::filesystem::path& path);

// Ordered name -> trainable leaf tensor.
class ParameterStore {
 public:
  // Registers a new parameter. Throws on a duplicate name.
  Tensor add(const std::string& name, Tensor value);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
  std::size_t total_numel() const;
  void zero_grad();

  std::vector<TensorRecord> snapshot() const;
  // Copies values by name; every parameter must be present with the same shape.
  void load(const std::vector<TensorRecord>& records);

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace csasr

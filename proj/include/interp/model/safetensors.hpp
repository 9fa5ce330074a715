#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace interp::model {

/// A dense float32 tensor loaded from (or destined for) a safetensors file.
struct HostTensor {
  std::vector<std::int64_t> shape;
  std::vector<float> data;

  std::int64_t numel() const;
};

/// Reads safetensors files tensor-by-tensor. F32, F16, BF16 and F64 are
/// converted to float32 on load.
class SafetensorsReader {
 public:
  explicit SafetensorsReader(std::filesystem::path path);

  bool contains(const std::string& name) const { return entries_.count(name) > 0; }
  std::vector<std::string> names() const;
  HostTensor read(const std::string& name) const;

 private:
  struct Entry {
    std::string dtype;
    std::vector<std::int64_t> shape;
    std::uint64_t begin = 0;
    std::uint64_t end = 0;
  };
  std::filesystem::path path_;
  std::uint64_t data_offset_ = 0;
  std::map<std::string, Entry> entries_;
};

/// Resolves tensor names across a single file or a sharded
/// `model.safetensors.index.json` checkpoint directory.
class SafetensorsCheckpoint {
 public:
  explicit SafetensorsCheckpoint(const std::filesystem::path& dir);

  bool contains(const std::string& name) const;
  HostTensor read(const std::string& name) const;

 private:
  std::vector<SafetensorsReader> shards_;
  std::map<std::string, std::size_t> index_;
};

/// Writes float32 tensors in safetensors layout (sorted by name).
void write_safetensors(const std::filesystem::path& path, const std::map<std::string, HostTensor>& tensors);

}  // namespace interp::model

#include "interp/model/safetensors.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "interp/error.hpp"

namespace interp::model {

namespace {

using json = nlohmann::json;

float half_to_float(std::uint16_t h) {
  const std::uint32_t sign = (h & 0x8000u) << 16;
  std::uint32_t exp = (h >> 10) & 0x1F;
  std::uint32_t mant = h & 0x3FF;
  std::uint32_t bits;
  if (exp == 0) {
    if (mant == 0) {
      bits = sign;
    } else {
      exp = 127 - 15 + 1;
      while ((mant & 0x400) == 0) {
        mant <<= 1;
        --exp;
      }
      mant &= 0x3FF;
      bits = sign | (exp << 23) | (mant << 13);
    }
  } else if (exp == 31) {
    bits = sign | 0x7F800000u | (mant << 13);
  } else {
    bits = sign | ((exp + 127 - 15) << 23) | (mant << 13);
  }
  return std::bit_cast<float>(bits);
}

std::size_t dtype_size(const std::string& dtype) {
  if (dtype == "F32") return 4;
  if (dtype == "F16" || dtype == "BF16") return 2;
  if (dtype == "F64") return 8;
  throw ConfigError("unsupported safetensors dtype " + dtype);
}

}  // namespace

std::int64_t HostTensor::numel() const {
  return std::accumulate(shape.begin(), shape.end(), std::int64_t{1}, std::multiplies<>());
}

SafetensorsReader::SafetensorsReader(std::filesystem::path path) : path_(std::move(path)) {
  std::ifstream in(path_, std::ios::binary);
  if (!in) throw IoError("cannot open " + path_.string());
  std::uint64_t header_len = 0;
  in.read(reinterpret_cast<char*>(&header_len), 8);
  if (!in || header_len > (1ull << 30)) throw IoError("bad safetensors header in " + path_.string());
  std::string header(header_len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_len));
  data_offset_ = 8 + header_len;
  const json doc = json::parse(header);
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    if (it.key() == "__metadata__") continue;
    Entry e;
    e.dtype = it.value().at("dtype").get<std::string>();
    e.shape = it.value().at("shape").get<std::vector<std::int64_t>>();
    const auto offs = it.value().at("data_offsets");
    e.begin = offs.at(0).get<std::uint64_t>();
    e.end = offs.at(1).get<std::uint64_t>();
    entries_[it.key()] = std::move(e);
  }
}

std::vector<std::string> SafetensorsReader::names() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : entries_) out.push_back(k);
  return out;
}

HostTensor SafetensorsReader::read(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw NotFoundError("tensor '" + name + "' not in " + path_.string());
  const Entry& e = it->second;
  HostTensor t;
  t.shape = e.shape;
  const auto n = static_cast<std::size_t>(t.numel());
  const std::size_t width = dtype_size(e.dtype);
  if (e.end - e.begin != n * width) throw IoError("tensor '" + name + "' has inconsistent byte size");
  std::vector<char> raw(e.end - e.begin);
  std::ifstream in(path_, std::ios::binary);
  in.seekg(static_cast<std::streamoff>(data_offset_ + e.begin));
  in.read(raw.data(), static_cast<std::streamsize>(raw.size()));
  if (!in) throw IoError("short read for tensor '" + name + "'");
  t.data.resize(n);
  if (e.dtype == "F32") {
    std::memcpy(t.data.data(), raw.data(), raw.size());
  } else if (e.dtype == "F64") {
    for (std::size_t i = 0; i < n; ++i) {
      double d;
      std::memcpy(&d, raw.data() + 8 * i, 8);
      t.data[i] = static_cast<float>(d);
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      std::uint16_t h;
      std::memcpy(&h, raw.data() + 2 * i, 2);
      t.data[i] = e.dtype == "F16" ? half_to_float(h)
                                    : std::bit_cast<float>(static_cast<std::uint32_t>(h) << 16);
    }
  }
  return t;
}

SafetensorsCheckpoint::SafetensorsCheckpoint(const std::filesystem::path& dir) {
  const auto index_path = dir / "model.safetensors.index.json";
  if (std::filesystem::exists(index_path)) {
    std::ifstream in(index_path);
    const json idx = json::parse(in);
    std::map<std::string, std::size_t> shard_of_file;
    for (auto it = idx.at("weight_map").begin(); it != idx.at("weight_map").end(); ++it) {
      const auto file = it.value().get<std::string>();
      auto [pos, inserted] = shard_of_file.emplace(file, shards_.size());
      if (inserted) shards_.emplace_back(dir / file);
      index_[it.key()] = pos->second;
    }
    return;
  }
  const auto single = dir / "model.safetensors";
  if (!std::filesystem::exists(single)) throw NotFoundError("no safetensors weights in " + dir.string());
  shards_.emplace_back(single);
  for (const auto& n : shards_.front().names()) index_[n] = 0;
}

bool SafetensorsCheckpoint::contains(const std::string& name) const { return index_.count(name) > 0; }

HostTensor SafetensorsCheckpoint::read(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw NotFoundError("tensor '" + name + "' not in checkpoint");
  return shards_[it->second].read(name);
}

void write_safetensors(const std::filesystem::path& path, const std::map<std::string, HostTensor>& tensors) {
  json header = json::object();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    const std::uint64_t bytes = t.data.size() * 4;
    header[name] = {{"dtype", "F32"}, {"shape", t.shape}, {"data_offsets", {offset, offset + bytes}}};
    offset += bytes;
  }
  std::string h = header.dump();
  while ((h.size() + 8) % 8 != 0) h.push_back(' ');
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  const std::uint64_t len = h.size();
  out.write(reinterpret_cast<const char*>(&len), 8);
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  for (const auto& [name, t] : tensors) {
    out.write(reinterpret_cast<const char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * 4));
  }
}

}  // namespace interp::model

#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include "json.hpp"
#include "srirgen/core/layers.hpp"

namespace srirgen {

// Binary checkpoint container, little-endian throughout:
//   "SRIRCKPT" | u32 version | u32 entry count
//   per entry: u32 name length | UTF-8 name | u32 ndim | u64 dims[ndim] | f32 data
//   u64 metadata length | UTF-8 JSON metadata
struct Checkpoint {
  static constexpr char kMagic[8] = {'S', 'R', 'I', 'R', 'C', 'K', 'P', 'T'};
  static constexpr std::uint32_t kVersion = 1;

  std::map<std::string, Tensor<float>> entries;
  nlohmann::json metadata = nlohmann::json::object();

  const Tensor<float>& at(const std::string& name) const {
    auto it = entries.find(name);
    if (it == entries.end()) {
      throw std::runtime_error("checkpoint: missing entry '" + name + "'");
    }
    return it->second;
  }
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

template <typename U>
void put_le(std::ostream& os, U v) {
  unsigned char buf[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    buf[i] = static_cast<unsigned char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff);
  }
  os.write(reinterpret_cast<const char*>(buf), sizeof(U));
}

template <typename U>
U get_le(std::istream& is, const std::string& path) {
  unsigned char buf[sizeof(U)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(U))) {
    throw CheckpointError("checkpoint truncated: " + path);
  }
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return static_cast<U>(v);
}

inline void put_f32(std::ostream& os, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_le<std::uint32_t>(os, bits);
}

inline float get_f32(std::istream& is, const std::string& path) {
  const auto bits = get_le<std::uint32_t>(is, path);
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}

}  // namespace detail

// Writes to a temporary sibling and renames, so readers never see a partial file.
inline void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw CheckpointError("cannot open for writing: " + tmp.string());
    os.write(Checkpoint::kMagic, 8);
    detail::put_le<std::uint32_t>(os, Checkpoint::kVersion);
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(ckpt.entries.size()));
    for (const auto& [name, t] : ckpt.entries) {
      detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
      os.write(name.data(), static_cast<std::streamsize>(name.size()));
      detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.ndim()));
      for (std::size_t d : t.shape()) detail::put_le<std::uint64_t>(os, d);
      for (float v : t) detail::put_f32(os, v);
    }
    const std::string meta = ckpt.metadata.dump();
    detail::put_le<std::uint64_t>(os, meta.size());
    os.write(meta.data(), static_cast<std::streamsize>(meta.size()));
    if (!os) throw CheckpointError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  const std::string p = path.string();
  if (!is) throw CheckpointError("cannot open checkpoint: " + p);
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, Checkpoint::kMagic, 8) != 0) {
    throw CheckpointError("not a checkpoint (bad magic): " + p);
  }
  const auto version = detail::get_le<std::uint32_t>(is, p);
  if (version != Checkpoint::kVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version) +
                          ": " + p);
  }
  Checkpoint ckpt;
  const auto count = detail::get_le<std::uint32_t>(is, p);
  for (std::uint32_t e = 0; e < count; ++e) {
    const auto len = detail::get_le<std::uint32_t>(is, p);
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw CheckpointError("checkpoint truncated: " + p);
    const auto ndim = detail::get_le<std::uint32_t>(is, p);
    Shape shape(ndim);
    for (auto& d : shape) d = detail::get_le<std::uint64_t>(is, p);
    std::vector<float> data(shape_numel(shape));
    for (auto& v : data) v = detail::get_f32(is, p);
    ckpt.entries.emplace(name, Tensor<float>(shape, std::move(data)));
  }
  const auto meta_len = detail::get_le<std::uint64_t>(is, p);
  std::string meta(meta_len, '\0');
  if (!is.read(meta.data(), static_cast<std::streamsize>(meta_len))) {
    throw CheckpointError("checkpoint metadata truncated: " + p);
  }
  ckpt.metadata = nlohmann::json::parse(meta);
  return ckpt;
}

template <typename T>
void store_params(Checkpoint& ckpt, const std::vector<Param<T>*>& params) {
  for (const auto* p : params) ckpt.entries[p->name] = p->value.template cast<float>();
}

template <typename T>
void restore_params(const Checkpoint& ckpt, const std::vector<Param<T>*>& params) {
  for (auto* p : params) {
    const Tensor<float>& src = ckpt.at(p->name);
    if (src.shape() != p->value.shape()) {
      throw CheckpointError("checkpoint entry '" + p->name + "' has shape " +
                            shape_string(src.shape()) + ", expected " +
                            shape_string(p->value.shape()));
    }
    p->value = src.template cast<T>();
  }
}

}  // namespace srirgen

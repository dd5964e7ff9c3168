#pragma once

// Checkpoint container: magic "TSANCKPT", u32 version, length-prefixed UTF-8
// JSON header (configs, counters, RNG state), then named tensor records
// (name, rank, extents, raw little-endian f32 payload). Each parameter
// contributes three records: its value plus ".m"/".v" optimizer moments.

#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include <json.hpp>

#include "tsan/nn/parameter.hpp"

namespace tsan {

namespace detail {

constexpr char kCkptMagic[8] = {'T', 'S', 'A', 'N', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCkptVersion = 1;

template <typename T>
void write_pod(std::ofstream& f, const T& v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& f, const std::string& path) {
  T v;
  f.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!f) throw IoError(path + ": truncated checkpoint");
  return v;
}

inline void write_record(std::ofstream& f, const std::string& name, const Shape& shape,
                         const float* data, std::int64_t count) {
  write_pod(f, static_cast<std::uint32_t>(name.size()));
  f.write(name.data(), static_cast<std::streamsize>(name.size()));
  write_pod(f, static_cast<std::uint32_t>(shape.rank()));
  for (int i = 0; i < shape.rank(); ++i) write_pod(f, static_cast<std::uint32_t>(shape[i]));
  write_pod(f, static_cast<std::uint64_t>(count));
  f.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * 4));
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, const nlohmann::json& header,
                            const ParamStore<float>& store) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError(path.string() + ": cannot open checkpoint for writing");
    f.write(detail::kCkptMagic, 8);
    detail::write_pod(f, detail::kCkptVersion);
    const std::string head = header.dump();
    detail::write_pod(f, static_cast<std::uint64_t>(head.size()));
    f.write(head.data(), static_cast<std::streamsize>(head.size()));
    detail::write_pod(f, static_cast<std::uint32_t>(store.size() * 3));
    for (const auto& p : store.items()) {
      detail::write_record(f, p->name, p->value.shape, p->value.data.data(), p->numel());
      detail::write_record(f, p->name + ".m", p->value.shape, p->m.data(), p->numel());
      detail::write_record(f, p->name + ".v", p->value.shape, p->v.data(), p->numel());
    }
    if (!f) throw IoError(path.string() + ": checkpoint write failed");
  }
  std::filesystem::rename(tmp, path);
}

struct LoadedCheckpoint {
  nlohmann::json header;
  std::map<std::string, Tensor<float>> tensors;
};

inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError(path.string() + ": cannot open checkpoint");
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, detail::kCkptMagic, 8) != 0)
    throw IoError(path.string() + ": not a TSAN checkpoint (bad magic)");
  const auto version = detail::read_pod<std::uint32_t>(f, path.string());
  if (version != detail::kCkptVersion)
    throw IoError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  const auto head_len = detail::read_pod<std::uint64_t>(f, path.string());
  std::string head(head_len, '\0');
  f.read(head.data(), static_cast<std::streamsize>(head_len));
  if (!f) throw IoError(path.string() + ": truncated checkpoint header");

  LoadedCheckpoint out;
  try {
    out.header = nlohmann::json::parse(head);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": malformed checkpoint header: " + e.what());
  }
  const auto n_records = detail::read_pod<std::uint32_t>(f, path.string());
  for (std::uint32_t i = 0; i < n_records; ++i) {
    const auto name_len = detail::read_pod<std::uint32_t>(f, path.string());
    std::string name(name_len, '\0');
    f.read(name.data(), name_len);
    const auto rank = detail::read_pod<std::uint32_t>(f, path.string());
    if (rank > 4) throw IoError(path.string() + ": bad tensor rank in checkpoint");
    int dims[4] = {1, 1, 1, 1};
    for (std::uint32_t d = 0; d < rank; ++d)
      dims[d] = static_cast<int>(detail::read_pod<std::uint32_t>(f, path.string()));
    Shape shape;
    switch (rank) {
      case 0: shape = Shape::scalar(); break;
      case 1: shape = Shape{dims[0]}; break;
      case 2: shape = Shape{dims[0], dims[1]}; break;
      case 3: shape = Shape{dims[0], dims[1], dims[2]}; break;
      default: shape = Shape{dims[0], dims[1], dims[2], dims[3]}; break;
    }
    const auto count = detail::read_pod<std::uint64_t>(f, path.string());
    if (static_cast<std::int64_t>(count) != shape.numel())
      throw IoError(path.string() + ": tensor payload disagrees with extents");
    Tensor<float> t(shape);
    f.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(count * 4));
    if (!f) throw IoError(path.string() + ": truncated tensor payload");
    out.tensors.emplace(std::move(name), std::move(t));
  }
  return out;
}

// Strict application: every parameter must be present with matching shape.
inline void apply_checkpoint(const LoadedCheckpoint& ck, ParamStore<float>& store) {
  for (auto& p : store.items()) {
    const auto it = ck.tensors.find(p->name);
    if (it == ck.tensors.end())
      throw IoError("checkpoint is missing tensor '" + p->name + "'");
    if (!(it->second.shape == p->value.shape))
      throw IoError("checkpoint tensor '" + p->name + "' has shape " + it->second.shape.str() +
                    ", model expects " + p->value.shape.str());
    p->value.data = it->second.data;
    const auto im = ck.tensors.find(p->name + ".m");
    const auto iv = ck.tensors.find(p->name + ".v");
    if (im == ck.tensors.end() || iv == ck.tensors.end())
      throw IoError("checkpoint is missing moments for '" + p->name + "'");
    p->m = im->second.data;
    p->v = iv->second.data;
  }
}

}  // namespace tsan

#pragma once

// Checkpoint container:
//   bytes 0..7   magic "OTSVADCK"
//   u32          schema version
//   u64          manifest length in bytes
//   manifest     UTF-8 JSON: {"schema_version", "metadata", "tensors": [
//                  {"name", "shape", "offset", "kind"}]}; offsets are in
//                  bytes from the start of the data section
//   data         concatenated little-endian IEEE-754 float32 values

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "otsvad/core/params.hpp"

namespace otsvad {

inline constexpr std::uint32_t kCheckpointSchemaVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'O', 'T', 'S', 'V', 'A', 'D', 'C', 'K'};

namespace detail {

template <class U>
U byteswap(U v) {
  unsigned char b[sizeof v];
  std::memcpy(b, &v, sizeof v);
  std::reverse(b, b + sizeof v);
  std::memcpy(&v, b, sizeof v);
  return v;
}

template <class U>
void write_le(std::ostream& os, U v) {
  if constexpr (std::endian::native == std::endian::big) v = byteswap(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class U>
U read_le(std::istream& is) {
  U v{};
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw DataError("checkpoint truncated");
  if constexpr (std::endian::native == std::endian::big) v = byteswap(v);
  return v;
}

}  // namespace detail

template <class T>
void save_checkpoint(const std::string& path, const ParameterStore<T>& store, const nlohmann::json& metadata) {
  nlohmann::json manifest;
  manifest["schema_version"] = kCheckpointSchemaVersion;
  manifest["metadata"] = metadata;
  manifest["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& name : store.names()) {
    const auto& e = store.entry(name);
    manifest["tensors"].push_back({{"name", name},
                                   {"shape", e.tensor.shape()},
                                   {"offset", offset},
                                   {"kind", e.kind == EntryKind::kParameter ? "parameter" : "buffer"}});
    offset += e.tensor.numel() * sizeof(float);
  }
  const std::string text = manifest.dump();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open checkpoint for writing: " + path);
  os.write(kCheckpointMagic, sizeof kCheckpointMagic);
  detail::write_le<std::uint32_t>(os, kCheckpointSchemaVersion);
  detail::write_le<std::uint64_t>(os, text.size());
  os.write(text.data(), std::streamsize(text.size()));
  for (const auto& name : store.names()) {
    for (const T v : store.at(name).values()) {
      detail::write_le<std::uint32_t>(os, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
  }
  if (!os) throw DataError("failed writing checkpoint: " + path);
}

// Reads the manifest only.
inline nlohmann::json read_checkpoint_manifest(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint: " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kCheckpointMagic, 8) != 0) throw DataError("not a checkpoint file: " + path);
  const auto version = detail::read_le<std::uint32_t>(is);
  if (version != kCheckpointSchemaVersion)
    throw DataError("checkpoint schema version " + std::to_string(version) + " unsupported (expected " +
                    std::to_string(kCheckpointSchemaVersion) + ")");
  const auto len = detail::read_le<std::uint64_t>(is);
  std::string text(len, '\0');
  is.read(text.data(), std::streamsize(len));
  if (!is) throw DataError("checkpoint manifest truncated");
  return nlohmann::json::parse(text);
}

// Loads every tensor of the store from path. Names and shapes must match
// exactly; tensors in the file but absent from the store are an error too.
template <class T>
nlohmann::json load_checkpoint(const std::string& path, ParameterStore<T>& store) {
  const auto manifest = read_checkpoint_manifest(path);
  std::ifstream is(path, std::ios::binary);
  is.seekg(8 + 4);
  const auto len = detail::read_le<std::uint64_t>(is);
  const std::streamoff data_start = 8 + 4 + 8 + std::streamoff(len);
  std::size_t seen = 0;
  for (const auto& t : manifest.at("tensors")) {
    const auto name = t.at("name").get<std::string>();
    if (!store.contains(name)) throw DataError("checkpoint tensor not in model: " + name);
    auto& dst = store.at(name);
    const auto shape = t.at("shape").get<Shape>();
    if (shape != dst.shape())
      throw DataError("checkpoint tensor " + name + " has shape " + shape_str(shape) + ", model expects " +
                      shape_str(dst.shape()));
    is.seekg(data_start + std::streamoff(t.at("offset").get<std::uint64_t>()));
    for (auto& v : dst.values()) v = T(std::bit_cast<float>(detail::read_le<std::uint32_t>(is)));
    ++seen;
  }
  if (seen != store.names().size()) throw DataError("checkpoint is missing model tensors");
  return manifest.at("metadata");
}

}  // namespace otsvad

#pragma once

// Checkpoint archive:
//
//   "DNTMCKPT"            8-byte magic
//   u64 (little endian)   manifest length in bytes
//   manifest              UTF-8 JSON
//   arrays                raw little-endian values, in manifest order
//
// The manifest lists every array by name and shape together with the dtype,
// format version, RNG state and any caller metadata.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dntm/array.hpp"

namespace dntm {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr char kCheckpointMagic[8] = {'D', 'N', 'T', 'M', 'C', 'K', 'P', 'T'};
inline constexpr int kCheckpointVersion = 1;

template <typename Real>
constexpr const char* dtype_name() {
  static_assert(std::is_same_v<Real, double> || std::is_same_v<Real, float>);
  return std::is_same_v<Real, double> ? "float64" : "float32";
}

template <typename Real>
struct Checkpoint {
  nlohmann::json meta = nlohmann::json::object();
  std::string rng_state;
  std::vector<std::pair<std::string, Array<Real>>> arrays;

  void add(std::string name, Array<Real> value) { arrays.emplace_back(std::move(name), std::move(value)); }

  const Array<Real>* find(const std::string& name) const {
    for (const auto& [n, a] : arrays) {
      if (n == name) return &a;
    }
    return nullptr;
  }
};

namespace detail {

template <typename T>
void to_little_endian(T* values, std::size_t count) {
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < count; ++i) {
      auto* b = reinterpret_cast<unsigned char*>(values + i);
      std::reverse(b, b + sizeof(T));
    }
  } else {
    (void)values;
    (void)count;
  }
}

}  // namespace detail

// Writes to a sibling temporary file first, then renames over `path`.
template <typename Real>
void save_checkpoint(const std::string& path, const Checkpoint<Real>& ckpt) {
  nlohmann::json manifest;
  manifest["format"] = "dntm-checkpoint";
  manifest["format_version"] = kCheckpointVersion;
  manifest["dtype"] = dtype_name<Real>();
  manifest["rng_state"] = ckpt.rng_state;
  manifest["meta"] = ckpt.meta;
  manifest["arrays"] = nlohmann::json::array();
  for (const auto& [name, a] : ckpt.arrays) manifest["arrays"].push_back({{"name", name}, {"shape", a.shape()}});
  const std::string text = manifest.dump();

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write " + tmp);
    out.write(kCheckpointMagic, sizeof kCheckpointMagic);
    std::uint64_t len = text.size();
    detail::to_little_endian(&len, 1);
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, a] : ckpt.arrays) {
      std::vector<Real> buf(a.data().begin(), a.data().end());
      detail::to_little_endian(buf.data(), buf.size());
      out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(Real)));
    }
    if (!out) throw CheckpointError("write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

namespace detail {

inline nlohmann::json read_manifest(std::istream& in, const std::string& path) {
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) {
    throw CheckpointError(path + ": not a checkpoint archive");
  }
  std::uint64_t len = 0;
  if (!in.read(reinterpret_cast<char*>(&len), sizeof len)) throw CheckpointError(path + ": truncated header");
  to_little_endian(&len, 1);
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len))) throw CheckpointError(path + ": truncated manifest");
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(path + ": bad manifest: " + e.what());
  }
}

}  // namespace detail

// "float64" or "float32", read from the manifest alone.
inline std::string checkpoint_dtype(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path);
  return detail::read_manifest(in, path).value("dtype", "");
}

template <typename Real>
Checkpoint<Real> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path);
  const nlohmann::json manifest = detail::read_manifest(in, path);
  if (manifest.value("format_version", 0) != kCheckpointVersion) {
    throw CheckpointError(path + ": unsupported format version " + manifest.value("format_version", nlohmann::json()).dump());
  }
  if (manifest.value("dtype", "") != dtype_name<Real>()) {
    throw CheckpointError(path + ": dtype " + manifest.value("dtype", "?") + " does not match " + dtype_name<Real>());
  }

  Checkpoint<Real> ckpt;
  ckpt.meta = manifest.value("meta", nlohmann::json::object());
  ckpt.rng_state = manifest.value("rng_state", "");
  for (const auto& entry : manifest.at("arrays")) {
    const auto name = entry.at("name").get<std::string>();
    const auto shape = entry.at("shape").get<Shape>();
    std::vector<Real> data(element_count(shape));
    if (!in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(Real)))) {
      throw CheckpointError(path + ": truncated array " + name);
    }
    detail::to_little_endian(data.data(), data.size());
    ckpt.add(name, Array<Real>(shape, std::move(data)));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw CheckpointError(path + ": trailing bytes after arrays");
  return ckpt;
}

}  // namespace dntm

#pragma once

// Checkpoint layout:
//   8 bytes  magic "PDNCKPT1"
//   u32      format version
//   u64      header length
//   header   JSON: {"config": ModelConfig, "dtype": "f32"|"f64",
//                   "arrays": [{"name", "shape", "offset", "count"}...],
//                   "meta": {...}}
//   payload  little-endian values, arrays back to back in header order

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <type_traits>

#include <json.hpp>

#include "pdnforge/error.hpp"
#include "pdnforge/surrogate/model.hpp"

namespace pdnforge::nn {

inline constexpr char kCheckpointMagic[8] = {'P', 'D', 'N', 'C', 'K', 'P', 'T', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <class T>
constexpr const char* dtype_name() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? "f32" : "f64";
}

namespace ckpt_detail {

template <class U>
void put(std::ostream& os, U v) {
  unsigned char b[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), sizeof(U));
}

template <class U>
U get(std::istream& is) {
  unsigned char b[sizeof(U)];
  is.read(reinterpret_cast<char*>(b), sizeof(U));
  if (is.gcount() != static_cast<std::streamsize>(sizeof(U))) throw FormatError("checkpoint: truncated header");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(b[i]) << (8 * i));
  return v;
}

template <class T>
using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;

}  // namespace ckpt_detail

template <class T>
void save_checkpoint(std::ostream& os, const ModelParams<T>& p, const nlohmann::json& meta = nlohmann::json::object()) {
  nlohmann::json header;
  header["config"] = p.config;
  header["dtype"] = dtype_name<T>();
  header["meta"] = meta;
  nlohmann::json arrays = nlohmann::json::array();
  std::size_t offset = 0;
  p.visit([&](const std::string& name, const std::vector<std::int64_t>& shape, const T*, std::size_t n, bool) {
    arrays.push_back({{"name", name}, {"shape", shape}, {"offset", offset}, {"count", n}});
    offset += n;
  });
  header["arrays"] = arrays;
  const std::string h = header.dump();
  os.write(kCheckpointMagic, 8);
  ckpt_detail::put<std::uint32_t>(os, kCheckpointVersion);
  ckpt_detail::put<std::uint64_t>(os, h.size());
  os.write(h.data(), static_cast<std::streamsize>(h.size()));
  std::vector<char> buf;
  p.visit([&](const std::string&, const std::vector<std::int64_t>&, const T* data, std::size_t n, bool) {
    buf.resize(n * sizeof(T));
    for (std::size_t i = 0; i < n; ++i) {
      const auto u = std::bit_cast<ckpt_detail::Bits<T>>(data[i]);
      for (std::size_t k = 0; k < sizeof(T); ++k) buf[i * sizeof(T) + k] = static_cast<char>(u >> (8 * k));
    }
    os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  });
  if (!os) throw Error("checkpoint: write failed");
}

/// Writes to a temporary file then renames, so an interrupted write never
/// replaces the previous checkpoint.
template <class T>
void save_checkpoint(const std::filesystem::path& path, const ModelParams<T>& p,
                     const nlohmann::json& meta = nlohmann::json::object()) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("cannot open " + tmp.string() + " for writing");
    save_checkpoint(os, p, meta);
  }
  std::filesystem::rename(tmp, path);
}

struct CheckpointHeader {
  ModelConfig config;
  std::string dtype;
  nlohmann::json meta;
  nlohmann::json arrays;
};

inline CheckpointHeader read_checkpoint_header(std::istream& is) {
  char magic[8] = {};
  is.read(magic, 8);
  if (is.gcount() != 8 || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw FormatError("checkpoint: bad magic");
  const auto version = ckpt_detail::get<std::uint32_t>(is);
  if (version != kCheckpointVersion) throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  const auto len = ckpt_detail::get<std::uint64_t>(is);
  if (len > (1u << 26)) throw FormatError("checkpoint: header too large");
  std::string h(len, '\0');
  is.read(h.data(), static_cast<std::streamsize>(len));
  if (static_cast<std::uint64_t>(is.gcount()) != len) throw FormatError("checkpoint: truncated header");
  CheckpointHeader out;
  try {
    const auto j = nlohmann::json::parse(h);
    out.config = j.at("config").get<ModelConfig>();
    out.dtype = j.at("dtype").get<std::string>();
    out.meta = j.value("meta", nlohmann::json::object());
    out.arrays = j.at("arrays");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: bad header: ") + e.what());
  }
  return out;
}

template <class T>
ModelParams<T> load_checkpoint(std::istream& is, nlohmann::json* meta = nullptr) {
  const CheckpointHeader h = read_checkpoint_header(is);
  if (h.dtype != dtype_name<T>()) throw FormatError("checkpoint: stored dtype " + h.dtype + " does not match");
  ModelParams<T> p;
  try {
    p = zero_params<T>(h.config);
  } catch (const ContractError& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
  std::size_t idx = 0;
  std::vector<char> buf;
  p.visit([&](const std::string& name, const std::vector<std::int64_t>& shape, T* data, std::size_t n, bool) {
    if (idx >= h.arrays.size()) throw FormatError("checkpoint: missing array " + name);
    const auto& a = h.arrays[idx++];
    if (a.at("name").get<std::string>() != name || a.at("shape").get<std::vector<std::int64_t>>() != shape)
      throw FormatError("checkpoint: array " + name + " does not match the shape manifest");
    buf.resize(n * sizeof(T));
    is.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (static_cast<std::size_t>(is.gcount()) != buf.size()) throw FormatError("checkpoint: truncated array " + name);
    for (std::size_t i = 0; i < n; ++i) {
      ckpt_detail::Bits<T> u = 0;
      for (std::size_t k = 0; k < sizeof(T); ++k)
        u |= static_cast<ckpt_detail::Bits<T>>(static_cast<unsigned char>(buf[i * sizeof(T) + k])) << (8 * k);
      data[i] = std::bit_cast<T>(u);
      if (!std::isfinite(data[i])) throw FormatError("checkpoint: non-finite value in " + name);
    }
  });
  if (idx != h.arrays.size()) throw FormatError("checkpoint: unexpected extra arrays");
  if (meta) *meta = h.meta;
  return p;
}

template <class T>
ModelParams<T> load_checkpoint(const std::filesystem::path& path, nlohmann::json* meta = nullptr) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path.string());
  return load_checkpoint<T>(is, meta);
}

}  // namespace pdnforge::nn

#pragma once

// Binary checkpoint container.
//
//   magic "TMEGCKPT" | u32 format_version | u64 config_hash
//   u64 config_json_len | config_json bytes
//   u64 param_count | per param: u64 name_len, name, u64 rows, u64 cols, f64 values
//   u64 adam_step | per param (same order): f64 first moment, f64 second moment
//
// Integers and floats are little-endian; floats are IEEE-754 binary64.

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

#include "tmeg/params.hpp"

namespace tmeg {

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;
inline constexpr std::array<char, 8> kCheckpointMagic = {'T', 'M', 'E', 'G', 'C', 'K', 'P', 'T'};

inline std::uint64_t config_hash(const std::string& config_json) { return Fnv1a().str(config_json).value(); }

namespace detail {

inline void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}
inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}
inline void put_f64(std::ostream& os, double v) { put_u64(os, std::bit_cast<std::uint64_t>(v)); }

inline std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw DataError("checkpoint: truncated file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}
inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw DataError("checkpoint: truncated file");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}
inline double get_f64(std::istream& is) { return std::bit_cast<double>(get_u64(is)); }
inline std::string get_string(std::istream& is, std::uint64_t max_len) {
  const std::uint64_t n = get_u64(is);
  if (n > max_len) throw DataError("checkpoint: implausible string length");
  std::string s(n, '\0');
  if (n && !is.read(s.data(), static_cast<std::streamsize>(n))) throw DataError("checkpoint: truncated file");
  return s;
}

inline void put_array(std::ostream& os, const DenseArray& a) {
  for (Real v : a.values()) put_f64(os, static_cast<double>(v));
}
inline void get_array(std::istream& is, DenseArray& a) {
  for (Real& v : a.values()) v = static_cast<Real>(get_f64(is));
}

}  // namespace detail

inline void write_checkpoint(std::ostream& os, const ParamStore& store, const std::string& config_json) {
  os.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  detail::put_u32(os, kCheckpointFormatVersion);
  detail::put_u64(os, config_hash(config_json));
  detail::put_u64(os, config_json.size());
  os.write(config_json.data(), static_cast<std::streamsize>(config_json.size()));
  detail::put_u64(os, store.size());
  for (const Parameter& p : store.params()) {
    detail::put_u64(os, p.name.size());
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    detail::put_u64(os, p.value.rows());
    detail::put_u64(os, p.value.cols());
    detail::put_array(os, p.value);
  }
  detail::put_u64(os, store.step());
  for (const Parameter& p : store.params()) {
    detail::put_array(os, p.first_moment);
    detail::put_array(os, p.second_moment);
  }
}

inline void save_checkpoint(const std::string& path, const ParamStore& store, const std::string& config_json) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open checkpoint for writing: " + path);
  write_checkpoint(os, store, config_json);
  if (!os) throw DataError("failed writing checkpoint: " + path);
}

// Reads just the embedded model config, validating magic, version, and hash.
inline std::string read_checkpoint_config(std::istream& is) {
  std::array<char, 8> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kCheckpointMagic) throw DataError("checkpoint: bad magic");
  const std::uint32_t version = detail::get_u32(is);
  if (version != kCheckpointFormatVersion)
    throw DataError("checkpoint: unsupported format_version " + std::to_string(version));
  const std::uint64_t hash = detail::get_u64(is);
  std::string config = detail::get_string(is, 1ULL << 32);
  if (config_hash(config) != hash) throw DataError("checkpoint: embedded config does not match its hash");
  return config;
}

// Loads values and optimizer state into a store whose layout was built from
// `expected_config_json`. Fails on hash, name, or shape mismatch.
inline void read_checkpoint(std::istream& is, ParamStore& store, const std::string& expected_config_json) {
  const std::string config = read_checkpoint_config(is);
  if (config_hash(config) != config_hash(expected_config_json))
    throw ConfigError("checkpoint: model config hash mismatch");
  const std::uint64_t count = detail::get_u64(is);
  if (count != store.size())
    throw DataError("checkpoint: parameter count " + std::to_string(count) + " != " + std::to_string(store.size()));
  for (Parameter& p : store.params()) {
    const std::string name = detail::get_string(is, 1 << 16);
    if (name != p.name) throw DataError("checkpoint: expected parameter " + p.name + ", found " + name);
    const std::uint64_t r = detail::get_u64(is), c = detail::get_u64(is);
    if (r != p.value.rows() || c != p.value.cols()) throw DataError("checkpoint: shape mismatch for " + name);
    detail::get_array(is, p.value);
  }
  store.set_step(detail::get_u64(is));
  for (Parameter& p : store.params()) {
    detail::get_array(is, p.first_moment);
    detail::get_array(is, p.second_moment);
    p.grad.fill(0);
  }
}

inline std::string read_checkpoint_config_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint: " + path);
  return read_checkpoint_config(is);
}

inline void load_checkpoint(const std::string& path, ParamStore& store, const std::string& expected_config_json) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint: " + path);
  read_checkpoint(is, store, expected_config_json);
}

}  // namespace tmeg

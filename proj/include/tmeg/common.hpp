#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace tmeg {

#ifdef TMEG_SINGLE_PRECISION
using Real = float;
#else
using Real = double;
#endif

// Error categories. The CLI maps each to a distinct exit code.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
  virtual int exit_code() const { return 1; }
};

// Malformed or invariant-violating input data.
struct DataError : Error {
  using Error::Error;
  int exit_code() const override { return 2; }
};

// Invalid or infeasible configuration.
struct ConfigError : Error {
  using Error::Error;
  int exit_code() const override { return 3; }
};

// Incompatible array extents or out-of-range indices.
struct ShapeError : Error {
  using Error::Error;
  int exit_code() const override { return 4; }
};

// NaN/inf or otherwise undefined numerical result.
struct NumericError : Error {
  using Error::Error;
  int exit_code() const override { return 5; }
};

// 64-bit FNV-1a. Stable across platforms, used for RNG stream derivation
// and checkpoint config hashes.
class Fnv1a {
 public:
  Fnv1a& bytes(const void* data, std::size_t n) {
    auto p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h_ ^= p[i];
      h_ *= 0x100000001b3ULL;
    }
    return *this;
  }
  Fnv1a& str(std::string_view s) {
    bytes(s.data(), s.size());
    // separator so ("ab","c") and ("a","bc") differ
    const unsigned char sep = 0xff;
    return bytes(&sep, 1);
  }
  Fnv1a& u64(std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    return bytes(b, 8);
  }
  std::uint64_t value() const { return h_; }

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

using Rng = std::mt19937_64;

// Named, seeded stream: results depend only on (master seed, name parts).
template <typename... Parts>
Rng derive_stream(std::uint64_t master_seed, const Parts&... parts) {
  Fnv1a h;
  h.u64(master_seed);
  (h.str(std::string_view(parts)), ...);
  return Rng(h.value());
}

inline Rng derive_stream_n(std::uint64_t master_seed, std::string_view name, std::uint64_t n) {
  Fnv1a h;
  h.u64(master_seed).str(name).u64(n);
  return Rng(h.value());
}

}  // namespace tmeg

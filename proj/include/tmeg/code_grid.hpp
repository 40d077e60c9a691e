#pragma once

#include <cstdint>
#include <vector>

namespace tmeg {

// Square matrix of small integer edge codes, row-major.
struct CodeGrid {
  std::size_t n = 0;
  std::vector<std::uint8_t> codes;

  CodeGrid() = default;
  explicit CodeGrid(std::size_t size) : n(size), codes(size * size, 0) {}

  std::uint8_t at(std::size_t r, std::size_t c) const { return codes[r * n + c]; }
  std::uint8_t& at(std::size_t r, std::size_t c) { return codes[r * n + c]; }

  // Sets (r,c) and (c,r) if both are still 0. Returns whether it wrote.
  bool set_if_none(std::size_t r, std::size_t c, std::uint8_t code) {
    if (r == c || at(r, c) != 0) return false;
    at(r, c) = code;
    at(c, r) = code;
    return true;
  }

  CodeGrid transposed() const {
    CodeGrid t(n);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < n; ++c) t.at(c, r) = at(r, c);
    return t;
  }

  std::size_t count(std::uint8_t code) const {
    std::size_t k = 0;
    for (auto v : codes) k += v == code;
    return k;
  }

  friend bool operator==(const CodeGrid&, const CodeGrid&) = default;
};

}  // namespace tmeg

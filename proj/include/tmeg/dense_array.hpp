#pragma once

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "tmeg/common.hpp"

namespace tmeg {

// Row-major 2-D array of reals. Vectors are 1 x n.
class DenseArray {
 public:
  DenseArray() = default;
  DenseArray(std::size_t rows, std::size_t cols, Real fill = Real(0))
      : rows_(rows), cols_(cols), values_(rows * cols, fill) {}
  DenseArray(std::size_t rows, std::size_t cols, std::vector<Real> values)
      : rows_(rows), cols_(cols), values_(std::move(values)) {
    if (values_.size() != rows_ * cols_)
      throw ShapeError("DenseArray: value count " + std::to_string(values_.size()) +
                       " does not match shape " + std::to_string(rows_) + "x" + std::to_string(cols_));
  }

  static DenseArray row(std::initializer_list<Real> v) { return DenseArray(1, v.size(), std::vector<Real>(v)); }
  static DenseArray row(std::span<const Real> v) {
    return DenseArray(1, v.size(), std::vector<Real>(v.begin(), v.end()));
  }
  static DenseArray from_rows(std::initializer_list<std::initializer_list<Real>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<Real> v;
    v.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw ShapeError("DenseArray::from_rows: ragged rows");
      v.insert(v.end(), row.begin(), row.end());
    }
    return DenseArray(r, c, std::move(v));
  }
  static DenseArray identity(std::size_t n) {
    DenseArray a(n, n);
    for (std::size_t i = 0; i < n; ++i) a(i, i) = 1;
    return a;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return values_.size(); }
  std::vector<std::size_t> shape() const { return {rows_, cols_}; }
  bool empty() const { return values_.empty(); }

  Real& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
  Real operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }
  Real& operator[](std::size_t i) { return values_[i]; }
  Real operator[](std::size_t i) const { return values_[i]; }

  std::span<Real> row_span(std::size_t r) { return {values_.data() + r * cols_, cols_}; }
  std::span<const Real> row_span(std::size_t r) const { return {values_.data() + r * cols_, cols_}; }
  std::span<Real> values() { return values_; }
  std::span<const Real> values() const { return values_; }
  Real* data() { return values_.data(); }
  const Real* data() const { return values_.data(); }

  bool same_shape(const DenseArray& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
  void fill(Real v) { std::fill(values_.begin(), values_.end(), v); }
  bool all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](Real x) { return std::isfinite(x); });
  }

  DenseArray transposed() const {
    DenseArray t(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r)
      for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
    return t;
  }

  std::string shape_string() const { return std::to_string(rows_) + "x" + std::to_string(cols_); }

  friend bool operator==(const DenseArray&, const DenseArray&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<Real> values_;
};

inline Real max_abs_diff(const DenseArray& a, const DenseArray& b) {
  if (!a.same_shape(b)) throw ShapeError("max_abs_diff: " + a.shape_string() + " vs " + b.shape_string());
  Real m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace tmeg

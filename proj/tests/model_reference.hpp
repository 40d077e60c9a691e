#pragma once

// Plain loops over DenseArray: a bias-free post-LN transformer layer read
// straight from a ParamStore, with no tape involved.

#include <cmath>
#include <string>

#include "tmeg/params.hpp"

namespace reference {

using tmeg::DenseArray;
using tmeg::ParamStore;
using tmeg::Real;

inline DenseArray affine(const DenseArray& x, const DenseArray& w, const DenseArray* b) {
  DenseArray y(x.rows(), w.cols());
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < w.cols(); ++c) {
      Real acc = 0;
      for (std::size_t k = 0; k < x.cols(); ++k) acc += x(r, k) * w(k, c);
      y(r, c) = acc + (b ? (*b)(0, c) : 0);
    }
  return y;
}

inline DenseArray norm(const DenseArray& x, const DenseArray& gamma, const DenseArray& beta) {
  DenseArray y(x.rows(), x.cols());
  const Real n = static_cast<Real>(x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    Real mean = 0;
    for (std::size_t c = 0; c < x.cols(); ++c) mean += x(r, c);
    mean /= n;
    Real var = 0;
    for (std::size_t c = 0; c < x.cols(); ++c) var += (x(r, c) - mean) * (x(r, c) - mean);
    var /= n;
    for (std::size_t c = 0; c < x.cols(); ++c)
      y(r, c) = gamma(0, c) * (x(r, c) - mean) / std::sqrt(var + 1e-12) + beta(0, c);
  }
  return y;
}

inline DenseArray plain_layer(const ParamStore& s, const std::string& p, const DenseArray& h, std::size_t n_heads) {
  auto W = [&](const std::string& n) -> const DenseArray& { return s.get(p + "." + n).value; };
  const DenseArray q = affine(h, W("query.weight"), &W("query.bias"));
  const DenseArray k = affine(h, W("key.weight"), nullptr);
  const DenseArray v = affine(h, W("value.weight"), &W("value.bias"));
  const std::size_t n = h.rows(), d = h.cols(), dh = d / n_heads;
  DenseArray cat(n, d);
  for (std::size_t hd = 0; hd < n_heads; ++hd)
    for (std::size_t j = 0; j < n; ++j) {
      std::vector<Real> e(n);
      Real mx = -1e300;
      for (std::size_t i = 0; i < n; ++i) {
        Real dot = 0;
        for (std::size_t c = 0; c < dh; ++c) dot += q(j, hd * dh + c) * k(i, hd * dh + c);
        e[i] = dot / std::sqrt(static_cast<Real>(dh));
        mx = std::max(mx, e[i]);
      }
      Real z = 0;
      for (auto& x : e) z += (x = std::exp(x - mx));
      for (std::size_t c = 0; c < dh; ++c) {
        Real acc = 0;
        for (std::size_t i = 0; i < n; ++i) acc += e[i] / z * v(i, hd * dh + c);
        cat(j, hd * dh + c) = acc;
      }
    }
  DenseArray a = affine(cat, W("output.weight"), &W("output.bias"));
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += h[i];
  const DenseArray h1 = norm(a, W("norm1.gamma"), W("norm1.beta"));
  DenseArray f = affine(h1, W("ffn.0.weight"), &W("ffn.0.bias"));
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = 0.5 * f[i] * (1 + std::erf(f[i] / std::sqrt(2.0)));
  DenseArray out = affine(f, W("ffn.1.weight"), &W("ffn.1.bias"));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += h1[i];
  return norm(out, W("norm2.gamma"), W("norm2.beta"));
}

}  // namespace reference

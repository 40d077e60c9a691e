#pragma once

// Tape-based reverse-mode differentiation over DenseArray values.
//
// Every op records its output value and a closure that pushes the output
// gradient back to its inputs. Parameter leaves accumulate straight into
// Parameter::grad, so one backward() over a batch loss populates the store.

#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <numbers>
#include <unordered_map>
#include <vector>

#include "tmeg/code_grid.hpp"
#include "tmeg/dense_array.hpp"
#include "tmeg/params.hpp"

namespace tmeg::ad {

enum class Op : int {
  Leaf,
  MatMul,
  MatMulNT,
  Add,
  AddRow,
  Scale,
  Tanh,
  Gelu,
  SoftmaxRows,
  LayerNorm,
  GatherRows,
  ConcatRows,
  ConcatCols,
  SliceCols,
  EdgeBias,
  NormalizeRows,
  LogSumExpRows,
  Element,
  Sum,
  Count
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::MatMul: return "matmul";
    case Op::MatMulNT: return "matmul_nt";
    case Op::Add: return "add";
    case Op::AddRow: return "add_row";
    case Op::Scale: return "scale";
    case Op::Tanh: return "tanh";
    case Op::Gelu: return "gelu";
    case Op::SoftmaxRows: return "softmax_rows";
    case Op::LayerNorm: return "layer_norm";
    case Op::GatherRows: return "gather_rows";
    case Op::ConcatRows: return "concat_rows";
    case Op::ConcatCols: return "concat_cols";
    case Op::SliceCols: return "slice_cols";
    case Op::EdgeBias: return "edge_bias";
    case Op::NormalizeRows: return "normalize_rows";
    case Op::LogSumExpRows: return "logsumexp_rows";
    case Op::Element: return "element";
    case Op::Sum: return "sum";
    case Op::Count: break;
  }
  return "?";
}

// Mutation-testing hook: the backward rule of `corrupted` scales its input
// gradients by `factor`. Never set outside tests.
namespace fault {
inline Op corrupted = Op::Count;
inline Real factor = Real(1.5);
inline Real scale_for(Op op) { return op == corrupted ? factor : Real(1); }

struct Scope {
  explicit Scope(Op op) { corrupted = op; }
  ~Scope() { corrupted = Op::Count; }
  Scope(const Scope&) = delete;
  Scope& operator=(const Scope&) = delete;
};
}  // namespace fault

class Tape;

class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  const DenseArray& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  std::size_t id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var constant(DenseArray v) {
    nodes_.push_back(Node{std::move(v), {}, nullptr, false, Op::Leaf, nullptr});
    return Var(this, nodes_.size() - 1);
  }

  // Leaf bound to a parameter; repeated calls return the same node.
  Var param(Parameter& p) {
    auto it = param_ids_.find(&p);
    if (it != param_ids_.end()) return Var(this, it->second);
    nodes_.push_back(Node{p.value, {}, &p, grad_enabled_, Op::Leaf, nullptr});
    param_ids_[&p] = nodes_.size() - 1;
    return Var(this, nodes_.size() - 1);
  }

  // Records an op output. `backward` runs only if some input requires grad.
  Var record(DenseArray v, Op op, std::initializer_list<Var> inputs, Backward backward) {
    if (!v.all_finite()) throw NumericError(std::string("non-finite value produced by ") + op_name(op));
    bool rg = false;
    if (grad_enabled_)
      for (const Var& in : inputs) rg = rg || requires_grad(in);
    return push(std::move(v), op, rg, std::move(backward));
  }
  Var record(DenseArray v, Op op, const std::vector<Var>& inputs, Backward backward) {
    if (!v.all_finite()) throw NumericError(std::string("non-finite value produced by ") + op_name(op));
    bool rg = false;
    if (grad_enabled_)
      for (const Var& in : inputs) rg = rg || requires_grad(in);
    return push(std::move(v), op, rg, std::move(backward));
  }

  const DenseArray& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(const Var& v) const { return nodes_[v.id()].requires_grad; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  // Gradient buffer for a node; parameter leaves alias Parameter::grad.
  DenseArray& grad(std::size_t id) {
    Node& n = nodes_[id];
    if (n.param) return n.param->grad;
    if (n.grad.size() != n.value.size()) n.grad = DenseArray(n.value.rows(), n.value.cols());
    return n.grad;
  }

  // Reverse sweep from a scalar (1x1) loss.
  void backward(const Var& loss) {
    if (loss.tape() != this) throw ShapeError("backward: loss belongs to another tape");
    const DenseArray& lv = value(loss.id());
    if (lv.rows() != 1 || lv.cols() != 1)
      throw ShapeError("backward: loss must be scalar, got " + lv.shape_string());
    if (!grad_enabled_) throw ShapeError("backward: tape was created without gradients");
    if (!nodes_[loss.id()].requires_grad) return;
    grad(loss.id())[0] += 1;
    for (std::size_t id = loss.id() + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.requires_grad || !n.backward) continue;
      if (n.grad.size() != n.value.size()) continue;  // no gradient reached this node
      n.backward(*this, id);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    DenseArray value;
    DenseArray grad;
    Parameter* param;
    bool requires_grad;
    Op op;
    Backward backward;
  };

  Var push(DenseArray v, Op op, bool rg, Backward backward) {
    nodes_.push_back(Node{std::move(v), {}, nullptr, rg, op, rg ? std::move(backward) : Backward{}});
    return Var(this, nodes_.size() - 1);
  }

  bool grad_enabled_;
  std::deque<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_ids_;
};

inline const DenseArray& Var::value() const { return tape_->value(id_); }

namespace detail {
inline Tape& same_tape(const Var& a, const Var& b) {
  if (a.tape() != b.tape()) throw ShapeError("operands belong to different tapes");
  return *a.tape();
}
inline void require_same_shape(const DenseArray& a, const DenseArray& b, const char* what) {
  if (!a.same_shape(b)) throw ShapeError(std::string(what) + ": shape " + a.shape_string() + " vs " + b.shape_string());
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

// A B
inline Var matmul(const Var& a, const Var& b) {
  Tape& t = detail::same_tape(a, b);
  const DenseArray& A = a.value();
  const DenseArray& B = b.value();
  if (A.cols() != B.rows()) throw ShapeError("matmul: " + A.shape_string() + " * " + B.shape_string());
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  DenseArray C(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    Real* crow = C.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const Real aip = A(i, p);
      if (aip == 0) continue;
      const Real* brow = B.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(C), Op::MatMul, {a, b}, [ia, ib, m, k, n](Tape& t, std::size_t self) {
    const Real s = fault::scale_for(Op::MatMul);
    const DenseArray& G = t.grad(self);
    const DenseArray& A = t.value(ia);
    const DenseArray& B = t.value(ib);
    if (t.requires_grad(ia)) {
      DenseArray& dA = t.grad(ia);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          Real acc = 0;
          for (std::size_t j = 0; j < n; ++j) acc += G(i, j) * B(p, j);
          dA(i, p) += s * acc;
        }
    }
    if (t.requires_grad(ib)) {
      DenseArray& dB = t.grad(ib);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const Real aip = s * A(i, p);
          if (aip == 0) continue;
          for (std::size_t j = 0; j < n; ++j) dB(p, j) += aip * G(i, j);
        }
    }
  });
}

// alpha * A B^T
inline Var matmul_nt(const Var& a, const Var& b, Real alpha = 1) {
  Tape& t = detail::same_tape(a, b);
  const DenseArray& A = a.value();
  const DenseArray& B = b.value();
  if (A.cols() != B.cols()) throw ShapeError("matmul_nt: " + A.shape_string() + " * T(" + B.shape_string() + ")");
  const std::size_t m = A.rows(), k = A.cols(), n = B.rows();
  DenseArray C(m, n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      Real acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += A(i, p) * B(j, p);
      C(i, j) = alpha * acc;
    }
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(C), Op::MatMulNT, {a, b}, [ia, ib, m, k, n, alpha](Tape& t, std::size_t self) {
    const Real s = alpha * fault::scale_for(Op::MatMulNT);
    const DenseArray& G = t.grad(self);
    const DenseArray& A = t.value(ia);
    const DenseArray& B = t.value(ib);
    if (t.requires_grad(ia)) {
      DenseArray& dA = t.grad(ia);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const Real g = s * G(i, j);
          if (g == 0) continue;
          for (std::size_t p = 0; p < k; ++p) dA(i, p) += g * B(j, p);
        }
    }
    if (t.requires_grad(ib)) {
      DenseArray& dB = t.grad(ib);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const Real g = s * G(i, j);
          if (g == 0) continue;
          for (std::size_t p = 0; p < k; ++p) dB(j, p) += g * A(i, p);
        }
    }
  });
}

inline Var add(const Var& a, const Var& b) {
  Tape& t = detail::same_tape(a, b);
  detail::require_same_shape(a.value(), b.value(), "add");
  DenseArray C = a.value();
  const DenseArray& B = b.value();
  for (std::size_t i = 0; i < C.size(); ++i) C[i] += B[i];
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(C), Op::Add, {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Real s = fault::scale_for(Op::Add);
    const DenseArray& G = t.grad(self);
    for (std::size_t in : {ia, ib}) {
      if (!t.requires_grad(in)) continue;
      DenseArray& d = t.grad(in);
      for (std::size_t i = 0; i < G.size(); ++i) d[i] += s * G[i];
    }
  });
}

// A + 1 b (row broadcast)
inline Var add_row(const Var& a, const Var& b) {
  Tape& t = detail::same_tape(a, b);
  const DenseArray& B = b.value();
  if (B.rows() != 1 || B.cols() != a.cols())
    throw ShapeError("add_row: " + a.value().shape_string() + " + " + B.shape_string());
  DenseArray C = a.value();
  for (std::size_t r = 0; r < C.rows(); ++r)
    for (std::size_t c = 0; c < C.cols(); ++c) C(r, c) += B[c];
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(C), Op::AddRow, {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Real s = fault::scale_for(Op::AddRow);
    const DenseArray& G = t.grad(self);
    if (t.requires_grad(ia)) {
      DenseArray& d = t.grad(ia);
      for (std::size_t i = 0; i < G.size(); ++i) d[i] += s * G[i];
    }
    if (t.requires_grad(ib)) {
      DenseArray& d = t.grad(ib);
      for (std::size_t r = 0; r < G.rows(); ++r)
        for (std::size_t c = 0; c < G.cols(); ++c) d[c] += s * G(r, c);
    }
  });
}

inline Var scale(const Var& a, Real alpha) {
  Tape& t = *a.tape();
  DenseArray C = a.value();
  for (std::size_t i = 0; i < C.size(); ++i) C[i] *= alpha;
  const std::size_t ia = a.id();
  return t.record(std::move(C), Op::Scale, {a}, [ia, alpha](Tape& t, std::size_t self) {
    const Real s = alpha * fault::scale_for(Op::Scale);
    const DenseArray& G = t.grad(self);
    DenseArray& d = t.grad(ia);
    for (std::size_t i = 0; i < G.size(); ++i) d[i] += s * G[i];
  });
}

inline Var sub(const Var& a, const Var& b) { return add(a, scale(b, -1)); }

// ---------------------------------------------------------------------------
// Pointwise nonlinearities

inline Var tanh(const Var& a) {
  Tape& t = *a.tape();
  DenseArray Y = a.value();
  for (std::size_t i = 0; i < Y.size(); ++i) Y[i] = std::tanh(Y[i]);
  const std::size_t ia = a.id();
  return t.record(std::move(Y), Op::Tanh, {a}, [ia](Tape& t, std::size_t self) {
    const Real s = fault::scale_for(Op::Tanh);
    const DenseArray& G = t.grad(self);
    const DenseArray& Y = t.value(self);
    DenseArray& d = t.grad(ia);
    for (std::size_t i = 0; i < G.size(); ++i) d[i] += s * G[i] * (1 - Y[i] * Y[i]);
  });
}

// x * Phi(x), Phi the standard normal CDF.
inline Var gelu(const Var& a) {
  Tape& t = *a.tape();
  DenseArray Y = a.value();
  for (std::size_t i = 0; i < Y.size(); ++i) {
    const Real x = Y[i];
    Y[i] = Real(0.5) * x * (1 + std::erf(x / std::numbers::sqrt2_v<Real>));
  }
  const std::size_t ia = a.id();
  return t.record(std::move(Y), Op::Gelu, {a}, [ia](Tape& t, std::size_t self) {
    const Real s = fault::scale_for(Op::Gelu);
    const DenseArray& G = t.grad(self);
    const DenseArray& X = t.value(ia);
    DenseArray& d = t.grad(ia);
    const Real inv_sqrt_2pi = std::numbers::inv_sqrtpi_v<Real> / std::numbers::sqrt2_v<Real>;
    for (std::size_t i = 0; i < G.size(); ++i) {
      const Real x = X[i];
      const Real cdf = Real(0.5) * (1 + std::erf(x / std::numbers::sqrt2_v<Real>));
      const Real pdf = inv_sqrt_2pi * std::exp(Real(-0.5) * x * x);
      d[i] += s * G[i] * (cdf + x * pdf);
    }
  });
}

// ---------------------------------------------------------------------------
// Normalizations

// Plain (non-taped) row softmax with max subtraction.
inline DenseArray softmax_rows_value(const DenseArray& X) {
  for (std::size_t i = 0; i < X.size(); ++i)
    if (std::isnan(X[i])) throw NumericError("softmax: NaN input");
  DenseArray Y(X.rows(), X.cols());
  for (std::size_t r = 0; r < X.rows(); ++r) {
    auto x = X.row_span(r);
    auto y = Y.row_span(r);
    Real mx = x.empty() ? 0 : *std::max_element(x.begin(), x.end());
    Real z = 0;
    for (std::size_t c = 0; c < x.size(); ++c) z += (y[c] = std::exp(x[c] - mx));
    for (auto& v : y) v /= z;
  }
  return Y;
}

inline Var softmax_rows(const Var& a) {
  Tape& t = *a.tape();
  DenseArray Y = softmax_rows_value(a.value());
  const std::size_t ia = a.id();
  return t.record(std::move(Y), Op::SoftmaxRows, {a}, [ia](Tape& t, std::size_t self) {
    const Real s = fault::scale_for(Op::SoftmaxRows);
    const DenseArray& G = t.grad(self);
    const DenseArray& Y = t.value(self);
    DenseArray& d = t.grad(ia);
    for (std::size_t r = 0; r < Y.rows(); ++r) {
      Real dot = 0;
      for (std::size_t c = 0; c < Y.cols(); ++c) dot += G(r, c) * Y(r, c);
      for (std::size_t c = 0; c < Y.cols(); ++c) d(r, c) += s * Y(r, c) * (G(r, c) - dot);
    }
  });
}

// Row-wise (x - mean) / sqrt(var + eps) * gamma + beta, biased variance.
inline Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, Real eps = Real(1e-12)) {
  Tape& t = detail::same_tape(x, gamma);
  detail::same_tape(x, beta);
  const DenseArray& X = x.value();
  const std::size_t m = X.rows(), n = X.cols();
  if (gamma.rows() != 1 || gamma.cols() != n || beta.rows() != 1 || beta.cols() != n)
    throw ShapeError("layer_norm: gamma/beta must be 1x" + std::to_string(n));
  auto xhat = std::make_shared<DenseArray>(m, n);
  auto inv_std = std::make_shared<std::vector<Real>>(m);
  DenseArray Y(m, n);
  const DenseArray& Gm = gamma.value();
  const DenseArray& Bt = beta.value();
  for (std::size_t r = 0; r < m; ++r) {
    Real mean = 0;
    for (std::size_t c = 0; c < n; ++c) mean += X(r, c);
    mean /= static_cast<Real>(n);
    Real var = 0;
    for (std::size_t c = 0; c < n; ++c) var += (X(r, c) - mean) * (X(r, c) - mean);
    var /= static_cast<Real>(n);
    const Real is = 1 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t c = 0; c < n; ++c) {
      const Real h = (X(r, c) - mean) * is;
      (*xhat)(r, c) = h;
      Y(r, c) = Gm[c] * h + Bt[c];
    }
  }
  const std::size_t ix = x.id(), ig = gamma.id(), ib = beta.id();
  return t.record(std::move(Y), Op::LayerNorm, {x, gamma, beta},
                  [ix, ig, ib, xhat, inv_std, m, n](Tape& t, std::size_t self) {
                    const Real s = fault::scale_for(Op::LayerNorm);
                    const DenseArray& G = t.grad(self);
                    const DenseArray& Gm = t.value(ig);
                    if (t.requires_grad(ig)) {
                      DenseArray& dg = t.grad(ig);
                      for (std::size_t r = 0; r < m; ++r)
                        for (std::size_t c = 0; c < n; ++c) dg[c] += s * G(r, c) * (*xhat)(r, c);
                    }
                    if (t.requires_grad(ib)) {
                      DenseArray& db = t.grad(ib);
                      for (std::size_t r = 0; r < m; ++r)
                        for (std::size_t c = 0; c < n; ++c) db[c] += s * G(r, c);
                    }
                    if (t.requires_grad(ix)) {
                      DenseArray& dx = t.grad(ix);
                      const Real nn = static_cast<Real>(n);
                      for (std::size_t r = 0; r < m; ++r) {
                        Real sum_dh = 0, sum_dh_h = 0;
                        for (std::size_t c = 0; c < n; ++c) {
                          const Real dh = G(r, c) * Gm[c];
                          sum_dh += dh;
                          sum_dh_h += dh * (*xhat)(r, c);
                        }
                        const Real k = s * (*inv_std)[r] / nn;
                        for (std::size_t c = 0; c < n; ++c) {
                          const Real dh = G(r, c) * Gm[c];
                          dx(r, c) += k * (nn * dh - sum_dh - (*xhat)(r, c) * sum_dh_h);
                        }
                      }
                    }
                  });
}

// x / ||x|| per row. Zero rows have no direction.
inline Var normalize_rows(const Var& a) {
  Tape& t = *a.tape();
  const DenseArray& X = a.value();
  DenseArray Y(X.rows(), X.cols());
  auto norms = std::make_shared<std::vector<Real>>(X.rows());
  for (std::size_t r = 0; r < X.rows(); ++r) {
    Real n2 = 0;
    for (Real v : X.row_span(r)) n2 += v * v;
    if (!(n2 > 0)) throw NumericError("normalize_rows: zero-norm vector (cosine similarity undefined)");
    const Real nr = std::sqrt(n2);
    (*norms)[r] = nr;
    for (std::size_t c = 0; c < X.cols(); ++c) Y(r, c) = X(r, c) / nr;
  }
  const std::size_t ia = a.id();
  return t.record(std::move(Y), Op::NormalizeRows, {a}, [ia, norms](Tape& t, std::size_t self) {
    const Real s = fault::scale_for(Op::NormalizeRows);
    const DenseArray& G = t.grad(self);
    const DenseArray& Y = t.value(self);
    DenseArray& d = t.grad(ia);
    for (std::size_t r = 0; r < Y.rows(); ++r) {
      Real dot = 0;
      for (std::size_t c = 0; c < Y.cols(); ++c) dot += G(r, c) * Y(r, c);
      const Real k = s / (*norms)[r];
      for (std::size_t c = 0; c < Y.cols(); ++c) d(r, c) += k * (G(r, c) - Y(r, c) * dot);
    }
  });
}

// log sum_c exp(x_rc) per row -> m x 1
inline Var logsumexp_rows(const Var& a) {
  Tape& t = *a.tape();
  const DenseArray& X = a.value();
  if (X.cols() == 0) throw ShapeError("logsumexp_rows: empty row");
  DenseArray Y(X.rows(), 1);
  for (std::size_t r = 0; r < X.rows(); ++r) {
    auto x = X.row_span(r);
    const Real mx = *std::max_element(x.begin(), x.end());
    Real z = 0;
    for (Real v : x) z += std::exp(v - mx);
    Y(r, 0) = mx + std::log(z);
  }
  const std::size_t ia = a.id();
  return t.record(std::move(Y), Op::LogSumExpRows, {a}, [ia](Tape& t, std::size_t self) {
    const Real s = fault::scale_for(Op::LogSumExpRows);
    const DenseArray& G = t.grad(self);
    const DenseArray& Y = t.value(self);
    const DenseArray& X = t.value(ia);
    DenseArray& d = t.grad(ia);
    for (std::size_t r = 0; r < X.rows(); ++r)
      for (std::size_t c = 0; c < X.cols(); ++c) d(r, c) += s * G(r, 0) * std::exp(X(r, c) - Y(r, 0));
  });
}

// ---------------------------------------------------------------------------
// Indexing and layout

// Rows of `a` at `indices` (embedding lookup, row selection, permutation).
inline Var gather_rows(const Var& a, std::vector<std::size_t> indices) {
  Tape& t = *a.tape();
  const DenseArray& A = a.value();
  DenseArray Y(indices.size(), A.cols());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= A.rows())
      throw ShapeError("gather_rows: index " + std::to_string(indices[r]) + " out of range for " +
                       std::to_string(A.rows()) + " rows");
    std::copy_n(A.data() + indices[r] * A.cols(), A.cols(), Y.data() + r * A.cols());
  }
  const std::size_t ia = a.id();
  return t.record(std::move(Y), Op::GatherRows, {a},
                  [ia, idx = std::move(indices)](Tape& t, std::size_t self) {
                    const Real s = fault::scale_for(Op::GatherRows);
                    const DenseArray& G = t.grad(self);
                    DenseArray& d = t.grad(ia);
                    const std::size_t n = G.cols();
                    for (std::size_t r = 0; r < idx.size(); ++r)
                      for (std::size_t c = 0; c < n; ++c) d(idx[r], c) += s * G(r, c);
                  });
}

inline Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  Tape& t = *parts.front().tape();
  const std::size_t n = parts.front().cols();
  std::size_t m = 0;
  for (const Var& p : parts) {
    if (p.tape() != &t) throw ShapeError("concat_rows: operands belong to different tapes");
    if (p.cols() != n) throw ShapeError("concat_rows: column mismatch");
    m += p.rows();
  }
  DenseArray Y(m, n);
  std::vector<std::size_t> ids, offsets;
  std::size_t off = 0;
  for (const Var& p : parts) {
    std::copy_n(p.value().data(), p.value().size(), Y.data() + off * n);
    ids.push_back(p.id());
    offsets.push_back(off);
    off += p.rows();
  }
  return t.record(std::move(Y), Op::ConcatRows, parts, [ids, offsets](Tape& t, std::size_t self) {
    const Real s = fault::scale_for(Op::ConcatRows);
    const DenseArray& G = t.grad(self);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!t.requires_grad(ids[k])) continue;
      DenseArray& d = t.grad(ids[k]);
      const Real* g = G.data() + offsets[k] * G.cols();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += s * g[i];
    }
  });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  Tape& t = *parts.front().tape();
  const std::size_t m = parts.front().rows();
  std::size_t n = 0;
  for (const Var& p : parts) {
    if (p.tape() != &t) throw ShapeError("concat_cols: operands belong to different tapes");
    if (p.rows() != m) throw ShapeError("concat_cols: row mismatch");
    n += p.cols();
  }
  DenseArray Y(m, n);
  std::vector<std::size_t> ids, offsets;
  std::size_t off = 0;
  for (const Var& p : parts) {
    const DenseArray& P = p.value();
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < P.cols(); ++c) Y(r, off + c) = P(r, c);
    ids.push_back(p.id());
    offsets.push_back(off);
    off += P.cols();
  }
  return t.record(std::move(Y), Op::ConcatCols, parts, [ids, offsets](Tape& t, std::size_t self) {
    const Real s = fault::scale_for(Op::ConcatCols);
    const DenseArray& G = t.grad(self);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!t.requires_grad(ids[k])) continue;
      DenseArray& d = t.grad(ids[k]);
      for (std::size_t r = 0; r < d.rows(); ++r)
        for (std::size_t c = 0; c < d.cols(); ++c) d(r, c) += s * G(r, offsets[k] + c);
    }
  });
}

// Columns [begin, end).
inline Var slice_cols(const Var& a, std::size_t begin, std::size_t end) {
  Tape& t = *a.tape();
  const DenseArray& A = a.value();
  if (begin > end || end > A.cols()) throw ShapeError("slice_cols: bad range");
  DenseArray Y(A.rows(), end - begin);
  for (std::size_t r = 0; r < A.rows(); ++r)
    for (std::size_t c = begin; c < end; ++c) Y(r, c - begin) = A(r, c);
  const std::size_t ia = a.id();
  return t.record(std::move(Y), Op::SliceCols, {a}, [ia, begin](Tape& t, std::size_t self) {
    const Real s = fault::scale_for(Op::SliceCols);
    const DenseArray& G = t.grad(self);
    DenseArray& d = t.grad(ia);
    for (std::size_t r = 0; r < G.rows(); ++r)
      for (std::size_t c = 0; c < G.cols(); ++c) d(r, begin + c) += s * G(r, c);
  });
}

inline Var element(const Var& a, std::size_t r, std::size_t c) {
  Tape& t = *a.tape();
  const DenseArray& A = a.value();
  if (r >= A.rows() || c >= A.cols()) throw ShapeError("element: index out of range");
  DenseArray Y(1, 1, A(r, c));
  const std::size_t ia = a.id();
  return t.record(std::move(Y), Op::Element, {a}, [ia, r, c](Tape& t, std::size_t self) {
    t.grad(ia)(r, c) += fault::scale_for(Op::Element) * t.grad(self)[0];
  });
}

// Sum of 1x1 scalars.
inline Var sum(const std::vector<Var>& scalars) {
  if (scalars.empty()) throw ShapeError("sum: no inputs");
  Tape& t = *scalars.front().tape();
  Real acc = 0;
  std::vector<std::size_t> ids;
  for (const Var& v : scalars) {
    if (v.rows() != 1 || v.cols() != 1) throw ShapeError("sum: inputs must be scalars");
    acc += v.value()[0];
    ids.push_back(v.id());
  }
  return t.record(DenseArray(1, 1, acc), Op::Sum, scalars, [ids](Tape& t, std::size_t self) {
    const Real g = fault::scale_for(Op::Sum) * t.grad(self)[0];
    for (std::size_t id : ids)
      if (t.requires_grad(id)) t.grad(id)[0] += g;
  });
}

inline Var mean(const std::vector<Var>& scalars) {
  return scale(sum(scalars), Real(1) / static_cast<Real>(scalars.size()));
}

// out(r,c) = sum_k table_k[code_k(r,c) - 1], code 0 contributes exactly 0.
// Each table is 1 x (vocabulary - 1).
inline Var edge_bias(const std::vector<Var>& tables, std::vector<std::shared_ptr<const CodeGrid>> grids) {
  if (tables.empty() || tables.size() != grids.size()) throw ShapeError("edge_bias: tables/grids mismatch");
  Tape& t = *tables.front().tape();
  const std::size_t n = grids.front()->n;
  DenseArray Y(n, n);
  for (std::size_t k = 0; k < tables.size(); ++k) {
    const DenseArray& T = tables[k].value();
    const CodeGrid& g = *grids[k];
    if (g.n != n || T.rows() != 1) throw ShapeError("edge_bias: grid/table shape");
    for (std::size_t i = 0; i < n * n; ++i) {
      const std::uint8_t code = g.codes[i];
      if (code == 0) continue;
      if (code > T.cols()) throw ShapeError("edge_bias: code " + std::to_string(code) + " outside table");
      Y[i] += T[code - 1];
    }
  }
  std::vector<std::size_t> ids;
  for (const Var& v : tables) ids.push_back(v.id());
  return t.record(std::move(Y), Op::EdgeBias, tables, [ids, grids = std::move(grids)](Tape& t, std::size_t self) {
    const Real s = fault::scale_for(Op::EdgeBias);
    const DenseArray& G = t.grad(self);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!t.requires_grad(ids[k])) continue;
      DenseArray& d = t.grad(ids[k]);
      const CodeGrid& g = *grids[k];
      for (std::size_t i = 0; i < g.codes.size(); ++i)
        if (g.codes[i]) d[g.codes[i] - 1] += s * G[i];
    }
  });
}

// Softmax cross-entropy of a 1 x n logit row against `gold`.
inline Var cross_entropy(const Var& logits, std::size_t gold) {
  if (logits.rows() != 1 || gold >= logits.cols()) throw ShapeError("cross_entropy: bad logits/gold");
  return sub(logsumexp_rows(logits), element(logits, 0, gold));
}

}  // namespace tmeg::ad

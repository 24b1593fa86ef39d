// Copyright 2026 The c2f-lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major float64 tensors and a reverse-mode autodiff tape.
//
// Every operation appends one node to the tape; nodes are stored in creation
// order, which is a topological order because an op can only consume nodes
// that already exist. `Tape::backward` walks the nodes once, in reverse.
// Broadcasting is limited to the bias-add op.

#ifndef C2F_TENSOR_HPP_
#define C2F_TENSOR_HPP_

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "c2f/error.hpp"

namespace c2f {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

struct Tensor {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty when no gradient is attached

  Tensor() = default;

  explicit Tensor(Shape s) : shape(std::move(s)), data(shape_numel(shape), 0.0) {
    check_shape();
  }

  Tensor(Shape s, std::vector<double> values)
      : shape(std::move(s)), data(std::move(values)) {
    check_shape();
    if (data.size() != shape_numel(shape)) {
      throw config_error("tensor data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_string(shape));
    }
  }

  std::size_t numel() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t rows() const { return shape.empty() ? 1 : shape.front(); }
  std::size_t cols() const { return shape.size() < 2 ? numel() : shape.back(); }
  bool has_grad() const { return !grad.empty(); }

  double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

 private:
  void check_shape() const {
    for (std::size_t d : shape) {
      if (d == 0) throw config_error("tensor dimensions must be positive");
    }
  }
};

// Bitwise equality of shape and values (distinguishes -0.0 from 0.0).
inline bool bit_equal(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::bit_cast<std::uint64_t>(a[i]) != std::bit_cast<std::uint64_t>(b[i]))
      return false;
  }
  return true;
}

inline bool bit_equal(const Tensor& a, const Tensor& b) {
  return a.shape == b.shape && bit_equal(a.data, b.data);
}

class Tape;

// Handle to a node on a tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value) { return own(std::move(value), false); }
  Var leaf(Tensor value) { return own(std::move(value), true); }

  // References `value` without copying; the tensor must outlive the tape.
  Var view(const Tensor& value, bool requires_grad) {
    Node node;
    node.shape = value.shape;
    node.external = value.data.data();
    node.numel = value.numel();
    node.requires_grad = requires_grad;
    nodes_.push_back(std::move(node));
    return Var{this, nodes_.size() - 1};
  }

  Var push(Shape shape, std::vector<double> value, bool requires_grad,
           BackwardFn fn) {
    Node node;
    node.shape = std::move(shape);
    node.numel = value.size();
    node.owned = std::move(value);
    node.requires_grad = requires_grad;
    if (requires_grad) node.backward = std::move(fn);
    nodes_.push_back(std::move(node));
    return Var{this, nodes_.size() - 1};
  }

  std::span<const double> value(Var v) const { return nodes_[v.id].data(); }
  std::span<const double> value(std::size_t id) const {
    return nodes_[id].data();
  }
  const Shape& shape(Var v) const { return nodes_[v.id].shape; }
  const Shape& shape(std::size_t id) const { return nodes_[id].shape; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  Tensor tensor(Var v) const {
    auto data = value(v);
    return Tensor(shape(v), std::vector<double>(data.begin(), data.end()));
  }

  double scalar(Var v) const {
    if (nodes_[v.id].numel != 1) throw config_error("node is not a scalar");
    return value(v)[0];
  }

  // Gradient accumulated into a node; all zeros if nothing reached it.
  std::vector<double> grad(Var v) const {
    const Node& node = nodes_[v.id];
    if (node.grad.empty()) return std::vector<double>(node.numel, 0.0);
    return node.grad;
  }

  bool has_grad(Var v) const { return !nodes_[v.id].grad.empty(); }

  std::span<double> grad_mut(std::size_t id) {
    Node& node = nodes_[id];
    if (node.grad.empty()) node.grad.assign(node.numel, 0.0);
    return node.grad;
  }

  std::span<const double> grad_or_empty(std::size_t id) const {
    return nodes_[id].grad;
  }

  // Populates d(root)/d(node) for every node that reaches root.
  void backward(Var root) {
    if (root.tape != this) throw config_error("backward: root from another tape");
    Node& r = nodes_[root.id];
    if (r.numel != 1) {
      throw config_error("backward: root must be a scalar, got shape " +
                         shape_string(r.shape));
    }
    if (!r.requires_grad) return;
    grad_mut(root.id)[0] += 1.0;
    for (std::size_t i = root.id + 1; i-- > 0;) {
      Node& node = nodes_[i];
      if (node.backward && !node.grad.empty()) node.backward(*this, i);
    }
  }

 private:
  struct Node {
    Shape shape;
    std::vector<double> owned;
    const double* external = nullptr;
    std::size_t numel = 0;
    std::vector<double> grad;
    bool requires_grad = false;
    BackwardFn backward;

    std::span<const double> data() const {
      return external ? std::span<const double>(external, numel)
                      : std::span<const double>(owned);
    }
  };

  Var own(Tensor value, bool requires_grad) {
    return push(std::move(value.shape), std::move(value.data), requires_grad,
                nullptr);
  }

  std::vector<Node> nodes_;
};

namespace detail {

inline Tape& same_tape(Var a, Var b) {
  if (a.tape == nullptr || a.tape != b.tape) {
    throw config_error("operands live on different tapes");
  }
  return *a.tape;
}

inline void require_rank2(const Shape& s, const char* op) {
  if (s.size() != 2) {
    throw config_error(std::string(op) + ": expected a matrix, got " +
                       shape_string(s));
  }
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// log(1 + exp(x)) without overflow.
inline double softplus(double x) {
  if (x > 0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

}  // namespace detail

using detail::sigmoid;
using detail::softplus;

// ---------------------------------------------------------------------------
// Elementwise and reduction ops.

inline Var add(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  if (t.shape(a) != t.shape(b)) {
    throw config_error("add: shape mismatch " + shape_string(t.shape(a)) +
                       " vs " + shape_string(t.shape(b)));
  }
  auto va = t.value(a), vb = t.value(b);
  std::vector<double> out(va.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] + vb[i];
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  return t.push(t.shape(a), std::move(out), rg,
                [a = a.id, b = b.id](Tape& tp, std::size_t o) {
                  auto g = tp.grad_or_empty(o);
                  for (std::size_t in : {a, b}) {
                    if (!tp.requires_grad(in)) continue;
                    auto gi = tp.grad_mut(in);
                    for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
                  }
                });
}

inline Var sub(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  if (t.shape(a) != t.shape(b)) throw config_error("sub: shape mismatch");
  auto va = t.value(a), vb = t.value(b);
  std::vector<double> out(va.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] - vb[i];
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  return t.push(t.shape(a), std::move(out), rg,
                [a = a.id, b = b.id](Tape& tp, std::size_t o) {
                  auto g = tp.grad_or_empty(o);
                  if (tp.requires_grad(a)) {
                    auto ga = tp.grad_mut(a);
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                  }
                  if (tp.requires_grad(b)) {
                    auto gb = tp.grad_mut(b);
                    for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                  }
                });
}

inline Var mul(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  if (t.shape(a) != t.shape(b)) throw config_error("mul: shape mismatch");
  auto va = t.value(a), vb = t.value(b);
  std::vector<double> out(va.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] * vb[i];
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  return t.push(t.shape(a), std::move(out), rg,
                [a = a.id, b = b.id](Tape& tp, std::size_t o) {
                  auto g = tp.grad_or_empty(o);
                  auto va = tp.value(a), vb = tp.value(b);
                  if (tp.requires_grad(a)) {
                    auto ga = tp.grad_mut(a);
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * vb[i];
                  }
                  if (tp.requires_grad(b)) {
                    auto gb = tp.grad_mut(b);
                    for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * va[i];
                  }
                });
}

inline Var scale(Var a, double c) {
  Tape& t = *a.tape;
  auto va = t.value(a);
  std::vector<double> out(va.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] * c;
  return t.push(t.shape(a), std::move(out), t.requires_grad(a),
                [a = a.id, c](Tape& tp, std::size_t o) {
                  auto g = tp.grad_or_empty(o);
                  auto ga = tp.grad_mut(a);
                  for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
                });
}

inline Var sum(Var a) {
  Tape& t = *a.tape;
  auto va = t.value(a);
  double s = 0.0;
  for (double x : va) s += x;
  return t.push({1}, {s}, t.requires_grad(a), [a = a.id](Tape& tp, std::size_t o) {
    const double g = tp.grad_or_empty(o)[0];
    for (double& gi : tp.grad_mut(a)) gi += g;
  });
}

inline Var mean(Var a) {
  const double n = static_cast<double>(a.tape->value(a).size());
  return scale(sum(a), 1.0 / n);
}

inline Var softplus(Var a) {
  Tape& t = *a.tape;
  auto va = t.value(a);
  std::vector<double> out(va.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = detail::softplus(va[i]);
  return t.push(t.shape(a), std::move(out), t.requires_grad(a),
                [a = a.id](Tape& tp, std::size_t o) {
                  auto g = tp.grad_or_empty(o);
                  auto va = tp.value(a);
                  auto ga = tp.grad_mut(a);
                  for (std::size_t i = 0; i < g.size(); ++i)
                    ga[i] += g[i] * detail::sigmoid(va[i]);
                });
}

inline Var silu(Var a) {
  Tape& t = *a.tape;
  auto va = t.value(a);
  std::vector<double> out(va.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] * detail::sigmoid(va[i]);
  return t.push(t.shape(a), std::move(out), t.requires_grad(a),
                [a = a.id](Tape& tp, std::size_t o) {
                  auto g = tp.grad_or_empty(o);
                  auto va = tp.value(a);
                  auto ga = tp.grad_mut(a);
                  for (std::size_t i = 0; i < g.size(); ++i) {
                    const double s = detail::sigmoid(va[i]);
                    ga[i] += g[i] * s * (1.0 + va[i] * (1.0 - s));
                  }
                });
}

// ---------------------------------------------------------------------------
// Matrix ops.

inline Var matmul(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  const Shape& sa = t.shape(a);
  const Shape& sb = t.shape(b);
  detail::require_rank2(sa, "matmul");
  detail::require_rank2(sb, "matmul");
  if (sa[1] != sb[0]) {
    throw config_error("matmul: inner dimensions differ " + shape_string(sa) +
                       " x " + shape_string(sb));
  }
  const std::size_t m = sa[0], k = sa[1], n = sb[1];
  auto A = t.value(a), B = t.value(b);
  std::vector<double> C(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* c = C.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      const double* brow = B.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += av * brow[j];
    }
  }
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  return t.push({m, n}, std::move(C), rg,
                [a = a.id, b = b.id, m, k, n](Tape& tp, std::size_t o) {
                  auto dC = tp.grad_or_empty(o);
                  auto A = tp.value(a), B = tp.value(b);
                  if (tp.requires_grad(a)) {  // dA = dC * B^T
                    auto dA = tp.grad_mut(a);
                    for (std::size_t i = 0; i < m; ++i) {
                      const double* dc = dC.data() + i * n;
                      for (std::size_t p = 0; p < k; ++p) {
                        const double* brow = B.data() + p * n;
                        double s = 0.0;
                        for (std::size_t j = 0; j < n; ++j) s += dc[j] * brow[j];
                        dA[i * k + p] += s;
                      }
                    }
                  }
                  if (tp.requires_grad(b)) {  // dB = A^T * dC
                    auto dB = tp.grad_mut(b);
                    for (std::size_t i = 0; i < m; ++i) {
                      const double* dc = dC.data() + i * n;
                      for (std::size_t p = 0; p < k; ++p) {
                        const double av = A[i * k + p];
                        double* db = dB.data() + p * n;
                        for (std::size_t j = 0; j < n; ++j) db[j] += av * dc[j];
                      }
                    }
                  }
                });
}

// x[m x n] + bias[n], broadcast over rows.
inline Var add_bias(Var x, Var bias) {
  Tape& t = detail::same_tape(x, bias);
  const Shape& sx = t.shape(x);
  detail::require_rank2(sx, "add_bias");
  const std::size_t m = sx[0], n = sx[1];
  if (shape_numel(t.shape(bias)) != n) {
    throw config_error("add_bias: bias length does not match columns");
  }
  auto vx = t.value(x), vb = t.value(bias);
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = vx[i * n + j] + vb[j];
  const bool rg = t.requires_grad(x) || t.requires_grad(bias);
  return t.push(sx, std::move(out), rg,
                [x = x.id, bias = bias.id, m, n](Tape& tp, std::size_t o) {
                  auto g = tp.grad_or_empty(o);
                  if (tp.requires_grad(x)) {
                    auto gx = tp.grad_mut(x);
                    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                  }
                  if (tp.requires_grad(bias)) {
                    auto gb = tp.grad_mut(bias);
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
                  }
                });
}

// Rows `ids` of `table` stacked into a [len x cols] matrix.
inline Var embedding(Var table, std::span<const int> ids) {
  Tape& t = *table.tape;
  const Shape& st = t.shape(table);
  detail::require_rank2(st, "embedding");
  const std::size_t rows = st[0], d = st[1];
  if (ids.empty()) throw config_error("embedding: empty id list");
  auto vt = t.value(table);
  std::vector<double> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= rows) {
      throw config_error("embedding: id " + std::to_string(ids[i]) +
                         " out of range");
    }
    std::copy_n(vt.data() + static_cast<std::size_t>(ids[i]) * d, d,
                out.data() + i * d);
  }
  std::vector<int> idv(ids.begin(), ids.end());
  return t.push({ids.size(), d}, std::move(out), t.requires_grad(table),
                [table = table.id, idv = std::move(idv), d](Tape& tp, std::size_t o) {
                  auto g = tp.grad_or_empty(o);
                  auto gt = tp.grad_mut(table);
                  for (std::size_t i = 0; i < idv.size(); ++i) {
                    double* dst = gt.data() + static_cast<std::size_t>(idv[i]) * d;
                    for (std::size_t j = 0; j < d; ++j) dst[j] += g[i * d + j];
                  }
                });
}

// Selects whole rows of a matrix (or elements of a vector) by index.
inline Var select_rows(Var x, std::span<const std::size_t> rows) {
  Tape& t = *x.tape;
  const Shape& sx = t.shape(x);
  const std::size_t n_rows = sx.size() == 2 ? sx[0] : shape_numel(sx);
  const std::size_t d = sx.size() == 2 ? sx[1] : 1;
  if (rows.empty()) throw config_error("select_rows: empty selection");
  auto vx = t.value(x);
  std::vector<double> out(rows.size() * d);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= n_rows) throw config_error("select_rows: index out of range");
    std::copy_n(vx.data() + rows[i] * d, d, out.data() + i * d);
  }
  Shape shape = sx.size() == 2 ? Shape{rows.size(), d} : Shape{rows.size()};
  std::vector<std::size_t> rv(rows.begin(), rows.end());
  return t.push(std::move(shape), std::move(out), t.requires_grad(x),
                [x = x.id, rv = std::move(rv), d](Tape& tp, std::size_t o) {
                  auto g = tp.grad_or_empty(o);
                  auto gx = tp.grad_mut(x);
                  for (std::size_t i = 0; i < rv.size(); ++i)
                    for (std::size_t j = 0; j < d; ++j) gx[rv[i] * d + j] += g[i * d + j];
                });
}

// Row-wise RMS normalisation with a learned gain.
inline Var rms_norm(Var x, Var gain, double eps = 1e-5) {
  Tape& t = detail::same_tape(x, gain);
  const Shape& sx = t.shape(x);
  detail::require_rank2(sx, "rms_norm");
  const std::size_t m = sx[0], n = sx[1];
  if (shape_numel(t.shape(gain)) != n) throw config_error("rms_norm: gain size");
  auto vx = t.value(x), vg = t.value(gain);
  std::vector<double> out(m * n);
  std::vector<double> inv_rms(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = vx.data() + i * n;
    double ss = 0.0;
    for (std::size_t j = 0; j < n; ++j) ss += row[j] * row[j];
    inv_rms[i] = 1.0 / std::sqrt(ss / static_cast<double>(n) + eps);
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = row[j] * inv_rms[i] * vg[j];
  }
  const bool rg = t.requires_grad(x) || t.requires_grad(gain);
  return t.push(sx, std::move(out), rg,
                [x = x.id, gain = gain.id, m, n, inv_rms = std::move(inv_rms)](
                    Tape& tp, std::size_t o) {
                  auto g = tp.grad_or_empty(o);
                  auto vx = tp.value(x), vg = tp.value(gain);
                  const bool gx_needed = tp.requires_grad(x);
                  const bool gg_needed = tp.requires_grad(gain);
                  for (std::size_t i = 0; i < m; ++i) {
                    const double r = inv_rms[i];
                    const double* row = vx.data() + i * n;
                    const double* gr = g.data() + i * n;
                    if (gg_needed) {
                      auto gg = tp.grad_mut(gain);
                      for (std::size_t j = 0; j < n; ++j) gg[j] += gr[j] * row[j] * r;
                    }
                    if (gx_needed) {
                      // dx = r * (dxhat - xhat * mean(dxhat * xhat))
                      double dot = 0.0;
                      for (std::size_t j = 0; j < n; ++j)
                        dot += gr[j] * vg[j] * row[j] * r;
                      dot /= static_cast<double>(n);
                      auto gx = tp.grad_mut(x);
                      for (std::size_t j = 0; j < n; ++j)
                        gx[i * n + j] += r * (gr[j] * vg[j] - row[j] * r * dot);
                    }
                  }
                });
}

// Multi-head causal self-attention over a packed [len x 3d] q|k|v matrix.
inline Var causal_attention(Var qkv, std::size_t n_heads) {
  Tape& t = *qkv.tape;
  const Shape& s = t.shape(qkv);
  detail::require_rank2(s, "causal_attention");
  const std::size_t len = s[0];
  if (s[1] % 3 != 0 || (s[1] / 3) % n_heads != 0) {
    throw config_error("causal_attention: bad packed width");
  }
  const std::size_t d = s[1] / 3, hd = d / n_heads, w = s[1];
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
  auto v = t.value(qkv);
  std::vector<double> out(len * d, 0.0);
  // probs[h][i][j], j <= i, stored densely as len x len per head.
  std::vector<double> probs(n_heads * len * len, 0.0);
  std::vector<double> scores(len);
  for (std::size_t h = 0; h < n_heads; ++h) {
    const std::size_t qo = h * hd, ko = d + h * hd, vo = 2 * d + h * hd;
    for (std::size_t i = 0; i < len; ++i) {
      const double* q = v.data() + i * w + qo;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j <= i; ++j) {
        const double* k = v.data() + j * w + ko;
        double dot = 0.0;
        for (std::size_t c = 0; c < hd; ++c) dot += q[c] * k[c];
        scores[j] = dot * inv_sqrt;
        mx = std::max(mx, scores[j]);
      }
      double z = 0.0;
      for (std::size_t j = 0; j <= i; ++j) {
        scores[j] = std::exp(scores[j] - mx);
        z += scores[j];
      }
      double* p = probs.data() + (h * len + i) * len;
      double* o = out.data() + i * d + h * hd;
      for (std::size_t j = 0; j <= i; ++j) {
        p[j] = scores[j] / z;
        const double* vv = v.data() + j * w + vo;
        for (std::size_t c = 0; c < hd; ++c) o[c] += p[j] * vv[c];
      }
    }
  }
  return t.push(
      {len, d}, std::move(out), t.requires_grad(qkv),
      [qkv = qkv.id, len, d, hd, w, n_heads, inv_sqrt,
       probs = std::move(probs)](Tape& tp, std::size_t o) {
        auto g = tp.grad_or_empty(o);
        auto v = tp.value(qkv);
        auto gq = tp.grad_mut(qkv);
        std::vector<double> dp(len);
        for (std::size_t h = 0; h < n_heads; ++h) {
          const std::size_t qo = h * hd, ko = d + h * hd, vo = 2 * d + h * hd;
          for (std::size_t i = 0; i < len; ++i) {
            const double* p = probs.data() + (h * len + i) * len;
            const double* go = g.data() + i * d + h * hd;
            double pdp = 0.0;
            for (std::size_t j = 0; j <= i; ++j) {
              const double* vv = v.data() + j * w + vo;
              double s = 0.0;
              for (std::size_t c = 0; c < hd; ++c) s += go[c] * vv[c];
              dp[j] = s;
              pdp += p[j] * s;
              double* gv = gq.data() + j * w + vo;
              for (std::size_t c = 0; c < hd; ++c) gv[c] += p[j] * go[c];
            }
            const double* q = v.data() + i * w + qo;
            double* gqi = gq.data() + i * w + qo;
            for (std::size_t j = 0; j <= i; ++j) {
              const double ds = p[j] * (dp[j] - pdp) * inv_sqrt;
              const double* k = v.data() + j * w + ko;
              double* gk = gq.data() + j * w + ko;
              for (std::size_t c = 0; c < hd; ++c) {
                gqi[c] += ds * k[c];
                gk[c] += ds * q[c];
              }
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Losses and log-probabilities.

// Mean over positions of -log softmax(logits)[target]. Targets < 0 are ignored.
inline Var softmax_cross_entropy(Var logits, std::span<const int> targets) {
  Tape& t = *logits.tape;
  const Shape& s = t.shape(logits);
  detail::require_rank2(s, "softmax_cross_entropy");
  const std::size_t n = s[0], vocab = s[1];
  if (targets.size() != n) throw config_error("softmax_cross_entropy: target count");
  auto v = t.value(logits);
  std::vector<double> probs(n * vocab, 0.0);
  double loss = 0.0;
  std::size_t counted = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] < 0) continue;
    if (static_cast<std::size_t>(targets[i]) >= vocab) {
      throw config_error("softmax_cross_entropy: target " +
                         std::to_string(targets[i]) + " out of range");
    }
    const double* row = v.data() + i * vocab;
    const double mx = *std::max_element(row, row + vocab);
    double z = 0.0;
    for (std::size_t j = 0; j < vocab; ++j) z += std::exp(row[j] - mx);
    const double log_z = mx + std::log(z);
    for (std::size_t j = 0; j < vocab; ++j)
      probs[i * vocab + j] = std::exp(row[j] - log_z);
    loss += log_z - row[targets[i]];
    ++counted;
  }
  if (counted == 0) throw config_error("softmax_cross_entropy: no targets");
  loss /= static_cast<double>(counted);
  std::vector<int> tv(targets.begin(), targets.end());
  return t.push({1}, {loss}, t.requires_grad(logits),
                [logits = logits.id, probs = std::move(probs), tv = std::move(tv),
                 vocab, counted](Tape& tp, std::size_t o) {
                  const double g = tp.grad_or_empty(o)[0] / static_cast<double>(counted);
                  auto gl = tp.grad_mut(logits);
                  for (std::size_t i = 0; i < tv.size(); ++i) {
                    if (tv[i] < 0) continue;
                    for (std::size_t j = 0; j < vocab; ++j)
                      gl[i * vocab + j] += g * probs[i * vocab + j];
                    gl[i * vocab + static_cast<std::size_t>(tv[i])] -= g;
                  }
                });
}

// log softmax(logits[i])[targets[i]] for each row. A banned token has its logit
// treated as -infinity, so the distribution is renormalised over the rest.
inline Var log_softmax_gather(Var logits, std::span<const int> targets,
                              std::optional<int> banned = std::nullopt) {
  Tape& t = *logits.tape;
  const Shape& s = t.shape(logits);
  detail::require_rank2(s, "log_softmax_gather");
  const std::size_t n = s[0], vocab = s[1];
  if (targets.size() != n) throw config_error("log_softmax_gather: target count");
  auto v = t.value(logits);
  std::vector<double> probs(n * vocab, 0.0);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int tgt = targets[i];
    if (tgt < 0 || static_cast<std::size_t>(tgt) >= vocab || (banned && tgt == *banned)) {
      throw config_error("log_softmax_gather: invalid target " + std::to_string(tgt));
    }
    const double* row = v.data() + i * vocab;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < vocab; ++j)
      if (!(banned && static_cast<int>(j) == *banned)) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < vocab; ++j)
      if (!(banned && static_cast<int>(j) == *banned)) z += std::exp(row[j] - mx);
    const double log_z = mx + std::log(z);
    for (std::size_t j = 0; j < vocab; ++j) {
      if (banned && static_cast<int>(j) == *banned) continue;
      probs[i * vocab + j] = std::exp(row[j] - log_z);
    }
    out[i] = row[tgt] - log_z;
  }
  std::vector<int> tv(targets.begin(), targets.end());
  return t.push({n}, std::move(out), t.requires_grad(logits),
                [logits = logits.id, probs = std::move(probs), tv = std::move(tv),
                 vocab](Tape& tp, std::size_t o) {
                  auto g = tp.grad_or_empty(o);
                  auto gl = tp.grad_mut(logits);
                  for (std::size_t i = 0; i < tv.size(); ++i) {
                    for (std::size_t j = 0; j < vocab; ++j)
                      gl[i * vocab + j] -= g[i] * probs[i * vocab + j];
                    gl[i * vocab + static_cast<std::size_t>(tv[i])] += g[i];
                  }
                });
}

// Per-token PPO surrogate terms min(r*A, clip(r, 1-eps, 1+eps)*A), r = exp(new - old).
inline std::vector<double> clipped_surrogate_terms(std::span<const double> new_logp,
                                                   std::span<const double> old_logp,
                                                   std::span<const double> advantages,
                                                   double clip_epsilon) {
  if (new_logp.size() != old_logp.size() || new_logp.size() != advantages.size()) {
    throw config_error("clipped surrogate: misaligned arrays");
  }
  std::vector<double> terms(new_logp.size());
  for (std::size_t i = 0; i < terms.size(); ++i) {
    const double r = std::exp(new_logp[i] - old_logp[i]);
    const double rc = std::clamp(r, 1.0 - clip_epsilon, 1.0 + clip_epsilon);
    terms[i] = std::min(r * advantages[i], rc * advantages[i]);
  }
  return terms;
}

// -mean(min(r*A, clip(r)*A)), differentiable in new_logp. Where the clipped
// branch is the smaller one the token contributes no gradient.
inline Var clipped_policy_loss(Var new_logp, std::span<const double> old_logp,
                               std::span<const double> advantages,
                               double clip_epsilon) {
  Tape& t = *new_logp.tape;
  auto vn = t.value(new_logp);
  const std::size_t n = vn.size();
  if (n == 0) throw config_error("clipped_policy_loss: empty input");
  auto terms = clipped_surrogate_terms(vn, old_logp, advantages, clip_epsilon);
  std::vector<double> dterm(n, 0.0);  // d term / d new_logp
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    total += terms[i];
    const double r = std::exp(vn[i] - old_logp[i]);
    const double rc = std::clamp(r, 1.0 - clip_epsilon, 1.0 + clip_epsilon);
    if (r * advantages[i] <= rc * advantages[i]) dterm[i] = r * advantages[i];
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  return t.push({1}, {-total * inv_n}, t.requires_grad(new_logp),
                [nl = new_logp.id, dterm = std::move(dterm), inv_n](Tape& tp,
                                                                    std::size_t o) {
                  const double g = tp.grad_or_empty(o)[0];
                  auto gn = tp.grad_mut(nl);
                  for (std::size_t i = 0; i < dterm.size(); ++i)
                    gn[i] -= g * inv_n * dterm[i];
                });
}

// 0.5 * mean((target - pred)^2).
inline Var half_mse(Var pred, std::span<const double> target) {
  Tape& t = *pred.tape;
  auto vp = t.value(pred);
  const std::size_t n = vp.size();
  if (n == 0 || target.size() != n) throw config_error("half_mse: misaligned arrays");
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += (target[i] - vp[i]) * (target[i] - vp[i]);
  std::vector<double> tv(target.begin(), target.end());
  return t.push({1}, {0.5 * s / static_cast<double>(n)}, t.requires_grad(pred),
                [p = pred.id, tv = std::move(tv)](Tape& tp, std::size_t o) {
                  const double g = tp.grad_or_empty(o)[0] / static_cast<double>(tv.size());
                  auto vp = tp.value(p);
                  auto gp = tp.grad_mut(p);
                  for (std::size_t i = 0; i < tv.size(); ++i) gp[i] += g * (vp[i] - tv[i]);
                });
}

}  // namespace c2f

#endif  // C2F_TENSOR_HPP_

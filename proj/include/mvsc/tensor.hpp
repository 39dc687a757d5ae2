#pragma once

// Dense f64 tensors with reverse-mode automatic differentiation.
//
// Every operation runs eagerly and records a node holding its inputs and a
// backward closure; backward(loss) walks the recorded graph once in reverse
// topological order. Gradients accumulate additively when a tensor fans out
// to several consumers. Single-threaded by construction: identical inputs
// and parameters give bit-identical outputs.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numbers>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "mvsc/errors.hpp"
#include "mvsc/rng.hpp"

namespace mvsc {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // allocated lazily; same length as value
  bool requires_grad = false;
  bool needs_grad = false;  // requires_grad or downstream of something that does
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void()> backward;

  std::size_t size() const { return value.size(); }

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return make(std::move(shape), {}, requires_grad, /*fill=*/true);
  }

  static Tensor constant(Shape shape, std::vector<double> data) {
    return make(std::move(shape), std::move(data), false, false);
  }

  static Tensor param(Shape shape, std::vector<double> data) {
    return make(std::move(shape), std::move(data), true, false);
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return make({1}, {v}, requires_grad, false);
  }

  static Tensor full(Shape shape, double v, bool requires_grad = false) {
    std::size_t n = numel(shape);
    return make(std::move(shape), std::vector<double>(n, v), requires_grad,
                false);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t size() const { return node_->size(); }
  std::size_t rank() const { return node_->shape.size(); }
  const char* op() const { return node_->op; }
  bool requires_grad() const { return node_->requires_grad; }

  const std::vector<double>& values() const { return node_->value; }

  // Leaf mutation used by the optimizer and the gradient checker. Mutating a
  // non-leaf would desynchronize the recorded graph.
  std::vector<double>& mutable_values() {
    if (node_->backward) {
      throw ContractError("mutable_values: only leaf tensors may be mutated");
    }
    return node_->value;
  }

  double item() const {
    if (size() != 1) {
      throw ContractError("item: tensor " + shape_str(shape()) +
                          " is not a scalar");
    }
    return node_->value[0];
  }

  const std::vector<double>& grad() const {
    node_->ensure_grad();
    return node_->grad;
  }

  void zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& handle() const { return node_; }

  static Tensor wrap(std::shared_ptr<detail::Node> node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
  }

 private:
  static Tensor make(Shape shape, std::vector<double> data, bool requires_grad,
                     bool fill) {
    auto n = std::make_shared<detail::Node>();
    std::size_t count = numel(shape);
    n->shape = std::move(shape);
    if (fill) {
      n->value.assign(count, 0.0);
    } else {
      if (data.size() != count) {
        throw ShapeError("tensor data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(n->shape));
      }
      n->value = std::move(data);
    }
    n->requires_grad = requires_grad;
    n->needs_grad = requires_grad;
    Tensor t;
    t.node_ = std::move(n);
    return t;
  }

  std::shared_ptr<detail::Node> node_;
};

namespace detail {

inline Tensor make_op(const char* op, Shape shape, std::vector<double> value,
                      std::vector<Tensor> parents) {
  auto n = std::make_shared<Node>();
  if (value.size() != numel(shape)) {
    throw ShapeError(std::string(op) + ": output buffer does not match shape");
  }
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->op = op;
  bool needs = false;
  n->parents.reserve(parents.size());
  for (const Tensor& p : parents) {
    needs = needs || p.node()->needs_grad;
    n->parents.push_back(p.handle());
  }
  n->needs_grad = needs;
  return Tensor::wrap(std::move(n));
}

inline void accumulate(Node* dst, std::size_t index, double v) {
  dst->grad[index] += v;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Graph traversal and backward
// ---------------------------------------------------------------------------

// Topological order with the root last. Each reachable node appears exactly
// once; the graph is acyclic because nodes only point at preexisting parents.
inline std::vector<detail::Node*> topo_order(const Tensor& root) {
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  // Iterative DFS; recursion would overflow on long op chains.
  struct Frame {
    detail::Node* node;
    std::size_t next_parent;
  };
  std::vector<Frame> stack;
  if (!seen.insert(root.node()).second) return order;
  stack.push_back({root.node(), 0});
  while (!stack.empty()) {
    Frame& top = stack.back();
    if (top.next_parent < top.node->parents.size()) {
      detail::Node* parent = top.node->parents[top.next_parent++].get();
      if (seen.insert(parent).second) stack.push_back({parent, 0});
    } else {
      order.push_back(top.node);
      stack.pop_back();
    }
  }
  return order;
}

// Reverse-mode sweep from a scalar loss. Gradients of all reachable
// needs_grad tensors are accumulated; untouched parameters keep (or lazily
// expose) zero gradients.
inline void backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw ContractError("backward: loss must be scalar, got " +
                        shape_str(loss.shape()));
  }
  std::vector<detail::Node*> order = topo_order(loss);
  for (detail::Node* n : order) {
    if (n->needs_grad) n->ensure_grad();
  }
  loss.node()->ensure_grad();
  loss.node()->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->needs_grad && n->backward) n->backward();
  }
}

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

inline void check_same_shape(const char* op, const Tensor& a,
                             const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape("add", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = a.values()[i] + b.values()[i];
  }
  Tensor t = detail::make_op("add", a.shape(), std::move(out), {a, b});
  detail::Node* n = t.node();
  detail::Node* pa = a.node();
  detail::Node* pb = b.node();
  n->backward = [n, pa, pb] {
    for (std::size_t i = 0; i < n->size(); ++i) {
      if (pa->needs_grad) pa->grad[i] += n->grad[i];
      if (pb->needs_grad) pb->grad[i] += n->grad[i];
    }
  };
  return t;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape("mul", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = a.values()[i] * b.values()[i];
  }
  Tensor t = detail::make_op("mul", a.shape(), std::move(out), {a, b});
  detail::Node* n = t.node();
  detail::Node* pa = a.node();
  detail::Node* pb = b.node();
  n->backward = [n, pa, pb] {
    for (std::size_t i = 0; i < n->size(); ++i) {
      if (pa->needs_grad) pa->grad[i] += n->grad[i] * pb->value[i];
      if (pb->needs_grad) pb->grad[i] += n->grad[i] * pa->value[i];
    }
  };
  return t;
}

inline Tensor scale(const Tensor& x, double s) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] * s;
  Tensor t = detail::make_op("scale", x.shape(), std::move(out), {x});
  detail::Node* n = t.node();
  detail::Node* px = x.node();
  n->backward = [n, px, s] {
    for (std::size_t i = 0; i < n->size(); ++i) px->grad[i] += n->grad[i] * s;
  };
  return t;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  return add(a, scale(b, -1.0));
}

inline Tensor add_scalar(const Tensor& x, double c) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] + c;
  Tensor t = detail::make_op("add_scalar", x.shape(), std::move(out), {x});
  detail::Node* n = t.node();
  detail::Node* px = x.node();
  n->backward = [n, px] {
    for (std::size_t i = 0; i < n->size(); ++i) px->grad[i] += n->grad[i];
  };
  return t;
}

// x * s where s is a learnable scalar tensor.
inline Tensor scale_by(const Tensor& x, const Tensor& s) {
  if (s.size() != 1) {
    throw ShapeError("scale_by: scale must be a scalar tensor");
  }
  const double sv = s.values()[0];
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] * sv;
  Tensor t = detail::make_op("scale_by", x.shape(), std::move(out), {x, s});
  detail::Node* n = t.node();
  detail::Node* px = x.node();
  detail::Node* ps = s.node();
  n->backward = [n, px, ps, sv] {
    for (std::size_t i = 0; i < n->size(); ++i) {
      if (px->needs_grad) px->grad[i] += n->grad[i] * sv;
      if (ps->needs_grad) ps->grad[0] += n->grad[i] * px->value[i];
    }
  };
  return t;
}

// Exact GELU: 0.5 x (1 + erf(x / sqrt(2))).
inline Tensor gelu(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x.values()[i];
    out[i] = 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 * 0.5));
  }
  Tensor t = detail::make_op("gelu", x.shape(), std::move(out), {x});
  detail::Node* n = t.node();
  detail::Node* px = x.node();
  n->backward = [n, px] {
    constexpr double inv_sqrt_2pi = 0.3989422804014326779;
    for (std::size_t i = 0; i < n->size(); ++i) {
      const double v = px->value[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 * 0.5));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      px->grad[i] += n->grad[i] * (cdf + v * pdf);
    }
  };
  return t;
}

// ---------------------------------------------------------------------------
// Row-vector broadcasts over matrices
// ---------------------------------------------------------------------------

inline void check_matrix(const char* op, const Tensor& m) {
  if (m.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected a matrix, got " +
                     shape_str(m.shape()));
  }
}

inline void check_rowvec(const char* op, const Tensor& m, const Tensor& v) {
  const std::size_t cols = m.shape()[1];
  const bool ok = (v.rank() == 1 && v.shape()[0] == cols) ||
                  (v.rank() == 2 && v.shape()[0] == 1 && v.shape()[1] == cols);
  if (!ok) {
    throw ShapeError(std::string(op) + ": vector " + shape_str(v.shape()) +
                     " does not broadcast over rows of " +
                     shape_str(m.shape()));
  }
}

inline Tensor add_rowvec(const Tensor& m, const Tensor& v) {
  check_matrix("add_rowvec", m);
  check_rowvec("add_rowvec", m, v);
  const std::size_t rows = m.shape()[0], cols = m.shape()[1];
  std::vector<double> out(m.size());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      out[r * cols + c] = m.values()[r * cols + c] + v.values()[c];
    }
  }
  Tensor t = detail::make_op("add_rowvec", m.shape(), std::move(out), {m, v});
  detail::Node* n = t.node();
  detail::Node* pm = m.node();
  detail::Node* pv = v.node();
  n->backward = [n, pm, pv, rows, cols] {
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        const double g = n->grad[r * cols + c];
        if (pm->needs_grad) pm->grad[r * cols + c] += g;
        if (pv->needs_grad) pv->grad[c] += g;
      }
    }
  };
  return t;
}

inline Tensor mul_rowvec(const Tensor& m, const Tensor& v) {
  check_matrix("mul_rowvec", m);
  check_rowvec("mul_rowvec", m, v);
  const std::size_t rows = m.shape()[0], cols = m.shape()[1];
  std::vector<double> out(m.size());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      out[r * cols + c] = m.values()[r * cols + c] * v.values()[c];
    }
  }
  Tensor t = detail::make_op("mul_rowvec", m.shape(), std::move(out), {m, v});
  detail::Node* n = t.node();
  detail::Node* pm = m.node();
  detail::Node* pv = v.node();
  n->backward = [n, pm, pv, rows, cols] {
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        const double g = n->grad[r * cols + c];
        if (pm->needs_grad) pm->grad[r * cols + c] += g * pv->value[c];
        if (pv->needs_grad) pv->grad[c] += g * pm->value[r * cols + c];
      }
    }
  };
  return t;
}

// ---------------------------------------------------------------------------
// Structural ops
// ---------------------------------------------------------------------------

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                     shape_str(shape));
  }
  Tensor t = detail::make_op("reshape", std::move(shape),
                             std::vector<double>(x.values()), {x});
  detail::Node* n = t.node();
  detail::Node* px = x.node();
  n->backward = [n, px] {
    for (std::size_t i = 0; i < n->size(); ++i) px->grad[i] += n->grad[i];
  };
  return t;
}

inline Tensor transpose(const Tensor& x) {
  check_matrix("transpose", x);
  const std::size_t rows = x.shape()[0], cols = x.shape()[1];
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      out[c * rows + r] = x.values()[r * cols + c];
    }
  }
  Tensor t = detail::make_op("transpose", {cols, rows}, std::move(out), {x});
  detail::Node* n = t.node();
  detail::Node* px = x.node();
  n->backward = [n, px, rows, cols] {
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        px->grad[r * cols + c] += n->grad[c * rows + r];
      }
    }
  };
  return t;
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  const std::size_t cols =
      parts[0].rank() == 1 ? parts[0].shape()[0] : parts[0].shape()[1];
  std::size_t rows = 0;
  for (const Tensor& p : parts) {
    if (p.rank() == 1) {
      if (p.shape()[0] != cols) {
        throw ShapeError("concat_rows: column mismatch");
      }
      rows += 1;
    } else {
      check_matrix("concat_rows", p);
      if (p.shape()[1] != cols) {
        throw ShapeError("concat_rows: column mismatch");
      }
      rows += p.shape()[0];
    }
  }
  std::vector<double> out;
  out.reserve(rows * cols);
  for (const Tensor& p : parts) {
    out.insert(out.end(), p.values().begin(), p.values().end());
  }
  Tensor t = detail::make_op("concat_rows", {rows, cols}, std::move(out),
                             parts);
  detail::Node* n = t.node();
  n->backward = [n] {
    std::size_t offset = 0;
    for (auto& parent : n->parents) {
      const std::size_t count = parent->size();
      if (parent->needs_grad) {
        for (std::size_t i = 0; i < count; ++i) {
          parent->grad[i] += n->grad[offset + i];
        }
      }
      offset += count;
    }
  };
  return t;
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  const std::size_t rows = parts[0].shape()[0];
  std::size_t cols = 0;
  for (const Tensor& p : parts) {
    check_matrix("concat_cols", p);
    if (p.shape()[0] != rows) throw ShapeError("concat_cols: row mismatch");
    cols += p.shape()[1];
  }
  std::vector<double> out(rows * cols);
  std::size_t col_offset = 0;
  for (const Tensor& p : parts) {
    const std::size_t pc = p.shape()[1];
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < pc; ++c) {
        out[r * cols + col_offset + c] = p.values()[r * pc + c];
      }
    }
    col_offset += pc;
  }
  Tensor t = detail::make_op("concat_cols", {rows, cols}, std::move(out),
                             parts);
  detail::Node* n = t.node();
  n->backward = [n, rows, cols] {
    std::size_t col_offset = 0;
    for (auto& parent : n->parents) {
      const std::size_t pc = parent->shape[1];
      if (parent->needs_grad) {
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < pc; ++c) {
            parent->grad[r * pc + c] += n->grad[r * cols + col_offset + c];
          }
        }
      }
      col_offset += pc;
    }
  };
  return t;
}

inline Tensor slice_cols(const Tensor& m, std::size_t c0, std::size_t c1) {
  check_matrix("slice_cols", m);
  const std::size_t rows = m.shape()[0], cols = m.shape()[1];
  if (c0 >= c1 || c1 > cols) {
    throw ShapeError("slice_cols: range [" + std::to_string(c0) + "," +
                     std::to_string(c1) + ") out of " + std::to_string(cols));
  }
  const std::size_t width = c1 - c0;
  std::vector<double> out(rows * width);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < width; ++c) {
      out[r * width + c] = m.values()[r * cols + c0 + c];
    }
  }
  Tensor t = detail::make_op("slice_cols", {rows, width}, std::move(out), {m});
  detail::Node* n = t.node();
  detail::Node* pm = m.node();
  n->backward = [n, pm, rows, cols, width, c0] {
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < width; ++c) {
        pm->grad[r * cols + c0 + c] += n->grad[r * width + c];
      }
    }
  };
  return t;
}

// Row gather; duplicate indices accumulate additively on backward.
inline Tensor gather_rows(const Tensor& m, std::vector<std::size_t> rows) {
  check_matrix("gather_rows", m);
  const std::size_t src_rows = m.shape()[0], cols = m.shape()[1];
  for (std::size_t r : rows) {
    if (r >= src_rows) {
      throw ShapeError("gather_rows: row " + std::to_string(r) +
                       " out of range " + std::to_string(src_rows));
    }
  }
  std::vector<double> out(rows.size() * cols);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double* src = m.values().data() + rows[i] * cols;
    std::copy(src, src + cols, out.data() + i * cols);
  }
  Tensor t = detail::make_op("gather_rows", {rows.size(), cols},
                             std::move(out), {m});
  detail::Node* n = t.node();
  detail::Node* pm = m.node();
  n->backward = [n, pm, rows = std::move(rows), cols] {
    for (std::size_t i = 0; i < rows.size(); ++i) {
      for (std::size_t c = 0; c < cols; ++c) {
        pm->grad[rows[i] * cols + c] += n->grad[i * cols + c];
      }
    }
  };
  return t;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline Tensor sum_all(const Tensor& x) {
  double total = 0.0;
  for (double v : x.values()) total += v;
  Tensor t = detail::make_op("sum_all", {1}, {total}, {x});
  detail::Node* n = t.node();
  detail::Node* px = x.node();
  n->backward = [n, px] {
    const double g = n->grad[0];
    for (std::size_t i = 0; i < px->size(); ++i) px->grad[i] += g;
  };
  return t;
}

inline Tensor mean_all(const Tensor& x) {
  return scale(sum_all(x), 1.0 / static_cast<double>(x.size()));
}

// ---------------------------------------------------------------------------
// Matmul / softmax / cross-entropy
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  check_matrix("matmul", a);
  check_matrix("matmul", b);
  const std::size_t m = a.shape()[0], k = a.shape()[1];
  const std::size_t k2 = b.shape()[0], nn = b.shape()[1];
  if (k != k2) {
    throw ShapeError("matmul: inner dimensions disagree, " +
                     shape_str(a.shape()) + " * " + shape_str(b.shape()));
  }
  std::vector<double> out(m * nn, 0.0);
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double aik = av[i * k + kk];
      const double* brow = bv.data() + kk * nn;
      double* orow = out.data() + i * nn;
      for (std::size_t j = 0; j < nn; ++j) orow[j] += aik * brow[j];
    }
  }
  Tensor t = detail::make_op("matmul", {m, nn}, std::move(out), {a, b});
  detail::Node* n = t.node();
  detail::Node* pa = a.node();
  detail::Node* pb = b.node();
  n->backward = [n, pa, pb, m, k, nn] {
    // dA = G * B^T, dB = A^T * G
    if (pa->needs_grad) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t kk = 0; kk < k; ++kk) {
          double acc = 0.0;
          const double* grow = n->grad.data() + i * nn;
          const double* brow = pb->value.data() + kk * nn;
          for (std::size_t j = 0; j < nn; ++j) acc += grow[j] * brow[j];
          pa->grad[i * k + kk] += acc;
        }
      }
    }
    if (pb->needs_grad) {
      for (std::size_t kk = 0; kk < k; ++kk) {
        for (std::size_t i = 0; i < m; ++i) {
          const double aik = pa->value[i * k + kk];
          const double* grow = n->grad.data() + i * nn;
          double* brow = pb->grad.data() + kk * nn;
          for (std::size_t j = 0; j < nn; ++j) brow[j] += aik * grow[j];
        }
      }
    }
  };
  return t;
}

namespace detail {

// Stabilized softmax over contiguous rows of length `cols`.
inline void softmax_rows_raw(const double* in, double* out, std::size_t rows,
                             std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = in + r * cols;
    double* y = out + r * cols;
    double mx = x[0];
    for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, x[c]);
    double sum = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      y[c] = std::exp(x[c] - mx);
      sum += y[c];
    }
    const double inv = 1.0 / sum;
    for (std::size_t c = 0; c < cols; ++c) y[c] *= inv;
  }
}

}  // namespace detail

// Softmax along `axis`. Vectors use axis 0; matrices support axis 0
// (columns) and 1 (rows). Stabilized by max subtraction.
inline Tensor softmax(const Tensor& x, std::size_t axis) {
  if (x.rank() == 1) {
    if (axis != 0) throw ShapeError("softmax: vector axis must be 0");
    Tensor row = reshape(x, {1, x.shape()[0]});
    return reshape(softmax(row, 1), x.shape());
  }
  check_matrix("softmax", x);
  if (axis == 0) return transpose(softmax(transpose(x), 1));
  if (axis != 1) throw ShapeError("softmax: matrix axis must be 0 or 1");
  const std::size_t rows = x.shape()[0], cols = x.shape()[1];
  std::vector<double> out(x.size());
  detail::softmax_rows_raw(x.values().data(), out.data(), rows, cols);
  Tensor t = detail::make_op("softmax", x.shape(), std::move(out), {x});
  detail::Node* n = t.node();
  detail::Node* px = x.node();
  n->backward = [n, px, rows, cols] {
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = n->value.data() + r * cols;
      const double* g = n->grad.data() + r * cols;
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += y[c] * g[c];
      for (std::size_t c = 0; c < cols; ++c) {
        px->grad[r * cols + c] += y[c] * (g[c] - dot);
      }
    }
  };
  return t;
}

// Mean negative log-likelihood of the labelled class under softmax(logits).
// logits: [B x C]; labels: one class index per row.
inline Tensor cross_entropy_mean(const Tensor& logits,
                                 const std::vector<std::size_t>& labels) {
  check_matrix("cross_entropy", logits);
  const std::size_t batch = logits.shape()[0], classes = logits.shape()[1];
  if (labels.size() != batch) {
    throw ContractError("cross_entropy: one label per logit row required");
  }
  for (std::size_t l : labels) {
    if (l >= classes) {
      throw ContractError("cross_entropy: label " + std::to_string(l) +
                          " out of range " + std::to_string(classes));
    }
  }
  std::vector<double> probs(logits.size());
  detail::softmax_rows_raw(logits.values().data(), probs.data(), batch,
                           classes);
  double loss = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    loss -= std::log(probs[b * classes + labels[b]]);
  }
  loss /= static_cast<double>(batch);
  Tensor t = detail::make_op("cross_entropy", {1}, {loss}, {logits});
  detail::Node* n = t.node();
  detail::Node* pl = logits.node();
  n->backward = [n, pl, probs = std::move(probs), labels, batch, classes] {
    const double g = n->grad[0] / static_cast<double>(batch);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t c = 0; c < classes; ++c) {
        const double onehot = (c == labels[b]) ? 1.0 : 0.0;
        pl->grad[b * classes + c] += g * (probs[b * classes + c] - onehot);
      }
    }
  };
  return t;
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

// Layer normalization over the last axis with per-feature gain and bias.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain,
                         const Tensor& bias, double eps = 1e-5) {
  const std::size_t cols = x.shape().back();
  const std::size_t rows = x.size() / cols;
  if (gain.size() != cols || bias.size() != cols) {
    throw ShapeError("layer_norm: gain/bias must match the last axis");
  }
  std::vector<double> out(x.size());
  std::vector<double> xhat(x.size());
  std::vector<double> inv_sigma(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.values().data() + r * cols;
    double mean = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mean += xr[c];
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      const double d = xr[c] - mean;
      var += d * d;
    }
    var /= static_cast<double>(cols);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_sigma[r] = inv;
    for (std::size_t c = 0; c < cols; ++c) {
      const double h = (xr[c] - mean) * inv;
      xhat[r * cols + c] = h;
      out[r * cols + c] = gain.values()[c] * h + bias.values()[c];
    }
  }
  Tensor t =
      detail::make_op("layer_norm", x.shape(), std::move(out), {x, gain, bias});
  detail::Node* n = t.node();
  detail::Node* px = x.node();
  detail::Node* pg = gain.node();
  detail::Node* pb = bias.node();
  n->backward = [n, px, pg, pb, xhat = std::move(xhat),
                 inv_sigma = std::move(inv_sigma), rows, cols] {
    for (std::size_t r = 0; r < rows; ++r) {
      const double* g = n->grad.data() + r * cols;
      const double* h = xhat.data() + r * cols;
      if (pg->needs_grad || pb->needs_grad) {
        for (std::size_t c = 0; c < cols; ++c) {
          if (pg->needs_grad) pg->grad[c] += g[c] * h[c];
          if (pb->needs_grad) pb->grad[c] += g[c];
        }
      }
      if (px->needs_grad) {
        double sum_gh = 0.0, sum_ghh = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
          const double gh = pg->value[c] * g[c];
          sum_gh += gh;
          sum_ghh += gh * h[c];
        }
        const double inv_cols = 1.0 / static_cast<double>(cols);
        for (std::size_t c = 0; c < cols; ++c) {
          const double gh = pg->value[c] * g[c];
          px->grad[r * cols + c] +=
              inv_sigma[r] *
              (gh - sum_gh * inv_cols - h[c] * sum_ghh * inv_cols);
        }
      }
    }
  };
  return t;
}

// Batch normalization over axis 0 of [B x F]. Training mode uses batch
// statistics (population variance) and updates the running buffers in place
// with the given momentum.
inline Tensor batch_norm_train(const Tensor& x, const Tensor& gain,
                               const Tensor& bias,
                               std::vector<double>& running_mean,
                               std::vector<double>& running_var,
                               double momentum = 0.1, double eps = 1e-5) {
  check_matrix("batch_norm", x);
  const std::size_t batch = x.shape()[0], feat = x.shape()[1];
  if (gain.size() != feat || bias.size() != feat ||
      running_mean.size() != feat || running_var.size() != feat) {
    throw ShapeError("batch_norm: parameter width mismatch");
  }
  std::vector<double> mean(feat, 0.0), var(feat, 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t f = 0; f < feat; ++f) mean[f] += x.values()[b * feat + f];
  }
  for (std::size_t f = 0; f < feat; ++f) mean[f] /= static_cast<double>(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t f = 0; f < feat; ++f) {
      const double d = x.values()[b * feat + f] - mean[f];
      var[f] += d * d;
    }
  }
  for (std::size_t f = 0; f < feat; ++f) var[f] /= static_cast<double>(batch);
  for (std::size_t f = 0; f < feat; ++f) {
    running_mean[f] = (1.0 - momentum) * running_mean[f] + momentum * mean[f];
    running_var[f] = (1.0 - momentum) * running_var[f] + momentum * var[f];
  }
  std::vector<double> out(x.size());
  std::vector<double> xhat(x.size());
  std::vector<double> inv_sigma(feat);
  for (std::size_t f = 0; f < feat; ++f) {
    inv_sigma[f] = 1.0 / std::sqrt(var[f] + eps);
  }
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t f = 0; f < feat; ++f) {
      const double h = (x.values()[b * feat + f] - mean[f]) * inv_sigma[f];
      xhat[b * feat + f] = h;
      out[b * feat + f] = gain.values()[f] * h + bias.values()[f];
    }
  }
  Tensor t = detail::make_op("batch_norm_train", x.shape(), std::move(out),
                             {x, gain, bias});
  detail::Node* n = t.node();
  detail::Node* px = x.node();
  detail::Node* pg = gain.node();
  detail::Node* pb = bias.node();
  n->backward = [n, px, pg, pb, xhat = std::move(xhat),
                 inv_sigma = std::move(inv_sigma), batch, feat] {
    const double inv_batch = 1.0 / static_cast<double>(batch);
    for (std::size_t f = 0; f < feat; ++f) {
      double sum_g = 0.0, sum_gh = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const double g = n->grad[b * feat + f];
        sum_g += g;
        sum_gh += g * xhat[b * feat + f];
      }
      if (pg->needs_grad) pg->grad[f] += sum_gh;
      if (pb->needs_grad) pb->grad[f] += sum_g;
      if (px->needs_grad) {
        const double scale = pg->value[f] * inv_sigma[f];
        for (std::size_t b = 0; b < batch; ++b) {
          const double g = n->grad[b * feat + f];
          px->grad[b * feat + f] +=
              scale * (g - sum_g * inv_batch -
                       xhat[b * feat + f] * sum_gh * inv_batch);
        }
      }
    }
  };
  return t;
}

// Evaluation-mode batch normalization against fixed running statistics.
// Rows are independent, so outputs do not depend on batch size.
inline Tensor batch_norm_eval(const Tensor& x, const Tensor& gain,
                              const Tensor& bias,
                              const std::vector<double>& running_mean,
                              const std::vector<double>& running_var,
                              double eps = 1e-5) {
  check_matrix("batch_norm", x);
  const std::size_t batch = x.shape()[0], feat = x.shape()[1];
  if (gain.size() != feat || bias.size() != feat ||
      running_mean.size() != feat || running_var.size() != feat) {
    throw ShapeError("batch_norm: parameter width mismatch");
  }
  std::vector<double> inv_sigma(feat);
  for (std::size_t f = 0; f < feat; ++f) {
    inv_sigma[f] = 1.0 / std::sqrt(running_var[f] + eps);
  }
  std::vector<double> out(x.size());
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t f = 0; f < feat; ++f) {
      out[b * feat + f] =
          gain.values()[f] * (x.values()[b * feat + f] - running_mean[f]) *
              inv_sigma[f] +
          bias.values()[f];
    }
  }
  Tensor t = detail::make_op("batch_norm_eval", x.shape(), std::move(out),
                             {x, gain, bias});
  detail::Node* n = t.node();
  detail::Node* px = x.node();
  detail::Node* pg = gain.node();
  detail::Node* pb = bias.node();
  n->backward = [n, px, pg, pb, inv_sigma = std::move(inv_sigma),
                 mean = running_mean, batch, feat] {
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t f = 0; f < feat; ++f) {
        const double g = n->grad[b * feat + f];
        const double h = (px->value[b * feat + f] - mean[f]) * inv_sigma[f];
        if (pg->needs_grad) pg->grad[f] += g * h;
        if (pb->needs_grad) pb->grad[f] += g;
        if (px->needs_grad) {
          px->grad[b * feat + f] += g * pg->value[f] * inv_sigma[f];
        }
      }
    }
  };
  return t;
}

// ---------------------------------------------------------------------------
// Convolutions (kernel == stride, so patches never overlap)
// ---------------------------------------------------------------------------

// x: [Cin x H x W], w: [Cout x Cin x s x s], b: [Cout] -> [Cout x H/s x W/s].
inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b,
                     std::size_t stride) {
  if (x.rank() != 3 || w.rank() != 4) {
    throw ShapeError("conv2d: expected x[C,H,W], w[Cout,Cin,s,s]");
  }
  const std::size_t cin = x.shape()[0], h = x.shape()[1], wdt = x.shape()[2];
  const std::size_t cout = w.shape()[0];
  const std::size_t s = stride;
  if (w.shape()[1] != cin || w.shape()[2] != s || w.shape()[3] != s) {
    throw ShapeError("conv2d: weight shape " + shape_str(w.shape()) +
                     " inconsistent with input channels/stride");
  }
  if (b.size() != cout) throw ShapeError("conv2d: bias width mismatch");
  if (h % s != 0 || wdt % s != 0) {
    throw ShapeError("conv2d: spatial dims " + std::to_string(h) + "x" +
                     std::to_string(wdt) + " not divisible by stride " +
                     std::to_string(s));
  }
  const std::size_t gh = h / s, gw = wdt / s;
  std::vector<double> out(cout * gh * gw, 0.0);
  const auto& xv = x.values();
  const auto& wv = w.values();
  for (std::size_t co = 0; co < cout; ++co) {
    for (std::size_t gy = 0; gy < gh; ++gy) {
      for (std::size_t gx = 0; gx < gw; ++gx) {
        double acc = b.values()[co];
        for (std::size_t ci = 0; ci < cin; ++ci) {
          for (std::size_t ky = 0; ky < s; ++ky) {
            const double* xrow = xv.data() + (ci * h + gy * s + ky) * wdt +
                                 gx * s;
            const double* wrow = wv.data() + ((co * cin + ci) * s + ky) * s;
            for (std::size_t kx = 0; kx < s; ++kx) acc += wrow[kx] * xrow[kx];
          }
        }
        out[(co * gh + gy) * gw + gx] = acc;
      }
    }
  }
  Tensor t = detail::make_op("conv2d", {cout, gh, gw}, std::move(out),
                             {x, w, b});
  detail::Node* n = t.node();
  detail::Node* px = x.node();
  detail::Node* pw = w.node();
  detail::Node* pb = b.node();
  n->backward = [n, px, pw, pb, cin, cout, h, wdt, s, gh, gw] {
    for (std::size_t co = 0; co < cout; ++co) {
      for (std::size_t gy = 0; gy < gh; ++gy) {
        for (std::size_t gx = 0; gx < gw; ++gx) {
          const double g = n->grad[(co * gh + gy) * gw + gx];
          if (pb->needs_grad) pb->grad[co] += g;
          for (std::size_t ci = 0; ci < cin; ++ci) {
            for (std::size_t ky = 0; ky < s; ++ky) {
              const std::size_t xbase =
                  (ci * h + gy * s + ky) * wdt + gx * s;
              const std::size_t wbase = ((co * cin + ci) * s + ky) * s;
              for (std::size_t kx = 0; kx < s; ++kx) {
                if (px->needs_grad) {
                  px->grad[xbase + kx] += g * pw->value[wbase + kx];
                }
                if (pw->needs_grad) {
                  pw->grad[wbase + kx] += g * px->value[xbase + kx];
                }
              }
            }
          }
        }
      }
    }
  };
  return t;
}

// z: [Cin x h x w], w: [Cin x Cout x s x s], b: [Cout] -> [Cout x h*s x w*s].
// Each input token writes exactly one s x s output block.
inline Tensor conv_transpose2d(const Tensor& z, const Tensor& w,
                               const Tensor& b, std::size_t stride) {
  if (z.rank() != 3 || w.rank() != 4) {
    throw ShapeError("conv_transpose2d: expected z[C,h,w], w[Cin,Cout,s,s]");
  }
  const std::size_t cin = z.shape()[0], gh = z.shape()[1], gw = z.shape()[2];
  const std::size_t s = stride;
  if (w.shape()[0] != cin || w.shape()[2] != s || w.shape()[3] != s) {
    throw ShapeError("conv_transpose2d: weight shape " + shape_str(w.shape()) +
                     " inconsistent with input channels/stride");
  }
  const std::size_t cout = w.shape()[1];
  if (b.size() != cout) throw ShapeError("conv_transpose2d: bias mismatch");
  const std::size_t h = gh * s, wdt = gw * s;
  std::vector<double> out(cout * h * wdt, 0.0);
  const auto& zv = z.values();
  const auto& wv = w.values();
  for (std::size_t co = 0; co < cout; ++co) {
    for (std::size_t i = 0; i < h * wdt; ++i) {
      out[co * h * wdt + i] = b.values()[co];
    }
  }
  for (std::size_t ci = 0; ci < cin; ++ci) {
    for (std::size_t gy = 0; gy < gh; ++gy) {
      for (std::size_t gx = 0; gx < gw; ++gx) {
        const double v = zv[(ci * gh + gy) * gw + gx];
        for (std::size_t co = 0; co < cout; ++co) {
          for (std::size_t ky = 0; ky < s; ++ky) {
            double* orow =
                out.data() + (co * h + gy * s + ky) * wdt + gx * s;
            const double* wrow = wv.data() + ((ci * cout + co) * s + ky) * s;
            for (std::size_t kx = 0; kx < s; ++kx) orow[kx] += v * wrow[kx];
          }
        }
      }
    }
  }
  Tensor t = detail::make_op("conv_transpose2d", {cout, h, wdt},
                             std::move(out), {z, w, b});
  detail::Node* n = t.node();
  detail::Node* pz = z.node();
  detail::Node* pw = w.node();
  detail::Node* pb = b.node();
  n->backward = [n, pz, pw, pb, cin, cout, h, wdt, s, gh, gw] {
    if (pb->needs_grad) {
      for (std::size_t co = 0; co < cout; ++co) {
        double acc = 0.0;
        for (std::size_t i = 0; i < h * wdt; ++i) {
          acc += n->grad[co * h * wdt + i];
        }
        pb->grad[co] += acc;
      }
    }
    for (std::size_t ci = 0; ci < cin; ++ci) {
      for (std::size_t gy = 0; gy < gh; ++gy) {
        for (std::size_t gx = 0; gx < gw; ++gx) {
          const std::size_t zidx = (ci * gh + gy) * gw + gx;
          double dz = 0.0;
          for (std::size_t co = 0; co < cout; ++co) {
            for (std::size_t ky = 0; ky < s; ++ky) {
              const double* grow =
                  n->grad.data() + (co * h + gy * s + ky) * wdt + gx * s;
              const std::size_t wbase = ((ci * cout + co) * s + ky) * s;
              for (std::size_t kx = 0; kx < s; ++kx) {
                dz += grow[kx] * pw->value[wbase + kx];
                if (pw->needs_grad) {
                  pw->grad[wbase + kx] += grow[kx] * pz->value[zidx];
                }
              }
            }
          }
          if (pz->needs_grad) pz->grad[zidx] += dz;
        }
      }
    }
  };
  return t;
}

// ---------------------------------------------------------------------------
// Initializers
// ---------------------------------------------------------------------------

inline Tensor randn(Shape shape, Rng& rng, double stddev = 1.0,
                    bool requires_grad = true) {
  std::vector<double> data(numel(shape));
  for (double& v : data) v = rng.normal(0.0, stddev);
  return requires_grad ? Tensor::param(std::move(shape), std::move(data))
                       : Tensor::constant(std::move(shape), std::move(data));
}

// U(-1/sqrt(fan_in), +1/sqrt(fan_in)), the default for linear/conv weights.
inline Tensor fan_in_uniform(Shape shape, std::size_t fan_in, Rng& rng,
                             bool requires_grad = true) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> data(numel(shape));
  for (double& v : data) v = rng.uniform(-bound, bound);
  return requires_grad ? Tensor::param(std::move(shape), std::move(data))
                       : Tensor::constant(std::move(shape), std::move(data));
}

inline bool all_finite(const Tensor& t) {
  for (double v : t.values()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace mvsc

#pragma once

// Minimal dense reverse-mode automatic differentiation: shaped tensors, a
// per-forward-pass tape, segment operations for graph attention, a GRU
// cell, and a finite-difference gradient checker.
//
// Leaf tensors (parameters, constants) live off-tape and persist across
// passes; every operation records its output on the thread's active tape.
// backward() walks the tape once in reverse and then consumes it.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "flowgnn/core.hpp"

namespace flowgnn {

namespace detail {

struct TensorNode {
  std::vector<std::size_t> shape;
  std::vector<real_t> value;
  std::vector<real_t> grad;  // allocated lazily, same length as value
  bool requires_grad = false;
  std::function<void()> backward;  // null for leaves

  std::size_t size() const { return value.size(); }
  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0);
  }
};

using NodePtr = std::shared_ptr<TensorNode>;

inline std::size_t shape_size(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

}  // namespace detail

class Tape;

namespace detail {
Tape*& active_tape();
}

// Records operation outputs in execution order (inputs always precede
// outputs, so the record is topologically sorted). One tape per forward
// pass; backward() consumes it.
class Tape {
 public:
  Tape() {
    if (detail::active_tape() != nullptr)
      throw Error("Tape: another tape is already active on this thread");
    detail::active_tape() = this;
  }
  ~Tape() {
    if (detail::active_tape() == this) detail::active_tape() = nullptr;
  }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(detail::NodePtr node) {
    if (!all_finite(node->value))
      throw NonFiniteError("Tape: operation produced a non-finite value");
    nodes_.push_back(std::move(node));
  }

  std::size_t num_recorded() const { return nodes_.size(); }

  // Runs all backward functions in reverse execution order, then frees the
  // recorded graph.
  void run_backward() {
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it)
      if ((*it)->backward && (*it)->requires_grad) (*it)->backward();
    nodes_.clear();
  }

 private:
  std::vector<detail::NodePtr> nodes_;
};

namespace detail {
inline Tape*& active_tape() {
  thread_local Tape* tape = nullptr;
  return tape;
}

inline Tape& require_tape() {
  Tape* t = active_tape();
  if (t == nullptr) throw Error("no active Tape: operations must run inside a Tape scope");
  return *t;
}
}  // namespace detail

// Value-semantic handle to a tensor node.
class Tensor {
 public:
  Tensor() = default;

  static Tensor param(std::vector<std::size_t> shape, std::vector<real_t> data) {
    return leaf(std::move(shape), std::move(data), true);
  }
  static Tensor constant(std::vector<std::size_t> shape, std::vector<real_t> data) {
    return leaf(std::move(shape), std::move(data), false);
  }
  static Tensor scalar(real_t v) { return constant({}, {v}); }
  static Tensor zeros(std::vector<std::size_t> shape) {
    auto n = detail::shape_size(shape);
    return constant(std::move(shape), std::vector<real_t>(n, 0));
  }
  static Tensor from_matrix(const Matrix& m) {
    return constant({m.rows, m.cols}, m.data);
  }

  bool valid() const { return node_ != nullptr; }
  const std::vector<std::size_t>& shape() const { return node_->shape; }
  std::size_t size() const { return node_->size(); }
  std::size_t rank() const { return node_->shape.size(); }
  bool requires_grad() const { return node_->requires_grad; }

  const std::vector<real_t>& value() const { return node_->value; }
  std::vector<real_t>& mutable_value() { return node_->value; }
  const std::vector<real_t>& grad() const {
    node_->ensure_grad();
    return node_->grad;
  }

  real_t item() const {
    if (size() != 1) throw ShapeError("Tensor::item: tensor is not scalar");
    return node_->value[0];
  }

  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0);
  }

  detail::NodePtr node() const { return node_; }

 private:
  static Tensor leaf(std::vector<std::size_t> shape, std::vector<real_t> data, bool requires_grad) {
    if (detail::shape_size(shape) != data.size())
      throw ShapeError("Tensor: shape does not match data length");
    if (!all_finite(data)) throw NonFiniteError("Tensor: leaf holds a non-finite value");
    auto node = std::make_shared<detail::TensorNode>();
    node->shape = std::move(shape);
    node->value = std::move(data);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  explicit Tensor(detail::NodePtr node) : node_(std::move(node)) {}
  detail::NodePtr node_;

  friend Tensor make_op(std::vector<std::size_t> shape, std::vector<real_t> value,
                        const std::vector<Tensor>& parents,
                        std::function<void(detail::TensorNode&)> backward);
};

// Creates an op node on the active tape. `backward` receives the output
// node and must accumulate into the parents' grads.
inline Tensor make_op(std::vector<std::size_t> shape, std::vector<real_t> value,
                      const std::vector<Tensor>& parents,
                      std::function<void(detail::TensorNode&)> backward) {
  auto node = std::make_shared<detail::TensorNode>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  for (const Tensor& p : parents)
    if (p.requires_grad()) node->requires_grad = true;
  if (node->requires_grad && backward) {
    node->ensure_grad();
    detail::TensorNode* raw = node.get();
    node->backward = [raw, fn = std::move(backward)]() { fn(*raw); };
  }
  detail::require_tape().record(node);
  return Tensor(std::move(node));
}

namespace detail {
inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) throw ShapeError(std::string(op) + ": shape mismatch");
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and arithmetic primitives
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "add");
  std::vector<real_t> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i] + b.value()[i];
  auto an = a.node(), bn = b.node();
  return make_op(a.shape(), std::move(v), {a, b}, [an, bn](detail::TensorNode& out) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (std::size_t i = 0; i < out.size(); ++i) an->grad[i] += out.grad[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::size_t i = 0; i < out.size(); ++i) bn->grad[i] += out.grad[i];
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "sub");
  std::vector<real_t> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i] - b.value()[i];
  auto an = a.node(), bn = b.node();
  return make_op(a.shape(), std::move(v), {a, b}, [an, bn](detail::TensorNode& out) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (std::size_t i = 0; i < out.size(); ++i) an->grad[i] += out.grad[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::size_t i = 0; i < out.size(); ++i) bn->grad[i] -= out.grad[i];
    }
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "mul");
  std::vector<real_t> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i] * b.value()[i];
  auto an = a.node(), bn = b.node();
  return make_op(a.shape(), std::move(v), {a, b}, [an, bn](detail::TensorNode& out) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (std::size_t i = 0; i < out.size(); ++i) an->grad[i] += out.grad[i] * bn->value[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::size_t i = 0; i < out.size(); ++i) bn->grad[i] += out.grad[i] * an->value[i];
    }
  });
}

inline Tensor scale(const Tensor& a, real_t c) {
  std::vector<real_t> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = c * a.value()[i];
  auto an = a.node();
  return make_op(a.shape(), std::move(v), {a}, [an, c](detail::TensorNode& out) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (std::size_t i = 0; i < out.size(); ++i) an->grad[i] += c * out.grad[i];
  });
}

inline Tensor one_minus(const Tensor& a) {
  std::vector<real_t> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = 1 - a.value()[i];
  auto an = a.node();
  return make_op(a.shape(), std::move(v), {a}, [an](detail::TensorNode& out) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (std::size_t i = 0; i < out.size(); ++i) an->grad[i] -= out.grad[i];
  });
}

namespace detail {

template <typename Fwd, typename Dfn>
Tensor elementwise(const Tensor& a, Fwd fwd, Dfn dfn) {
  std::vector<real_t> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = fwd(a.value()[i]);
  auto an = a.node();
  return make_op(a.shape(), std::move(v), {a}, [an, dfn](TensorNode& out) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (std::size_t i = 0; i < out.size(); ++i)
      an->grad[i] += out.grad[i] * dfn(an->value[i], out.value[i]);
  });
}

}  // namespace detail

inline Tensor leaky_relu(const Tensor& a, real_t slope) {
  return detail::elementwise(
      a, [slope](real_t x) { return x >= 0 ? x : slope * x; },
      [slope](real_t x, real_t) { return x > 0 ? real_t(1) : slope; });
}

inline Tensor relu(const Tensor& a) { return leaky_relu(a, 0); }

inline Tensor sigmoid(const Tensor& a) {
  return detail::elementwise(
      a,
      [](real_t x) {
        return x >= 0 ? 1 / (1 + std::exp(-x)) : std::exp(x) / (1 + std::exp(x));
      },
      [](real_t, real_t y) { return y * (1 - y); });
}

inline Tensor tanh(const Tensor& a) {
  return detail::elementwise(a, [](real_t x) { return std::tanh(x); },
                             [](real_t, real_t y) { return 1 - y * y; });
}

// Inverted dropout: identity at evaluation time, retained entries scaled by
// 1/(1-rate) at training time.
inline Tensor dropout(const Tensor& a, real_t rate, bool train, Rng& rng) {
  if (rate < 0 || rate >= 1) throw std::invalid_argument("dropout: rate must be in [0,1)");
  if (!train || rate == 0) return a;
  const real_t keep = 1 - rate;
  std::vector<real_t> mask(a.size());
  for (auto& m : mask) m = rng.uniform() < rate ? real_t(0) : real_t(1) / keep;
  std::vector<real_t> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i] * mask[i];
  auto an = a.node();
  return make_op(a.shape(), std::move(v), {a},
                 [an, mask = std::move(mask)](detail::TensorNode& out) {
                   if (!an->requires_grad) return;
                   an->ensure_grad();
                   for (std::size_t i = 0; i < out.size(); ++i)
                     an->grad[i] += out.grad[i] * mask[i];
                 });
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

// matmul supports {m,k}x{k,n} -> {m,n}, {m,k}x{k} -> {m}, {k}x{k,n} -> {n},
// and {k}x{k} -> scalar.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  const bool a_vec = a.rank() == 1, b_vec = b.rank() == 1;
  if ((a.rank() != 1 && a.rank() != 2) || (b.rank() != 1 && b.rank() != 2))
    throw ShapeError("matmul: operands must be rank 1 or 2");
  const std::size_t m = a_vec ? 1 : a.shape()[0];
  const std::size_t k = a_vec ? a.shape()[0] : a.shape()[1];
  const std::size_t k2 = b_vec ? b.shape()[0] : b.shape()[0];
  const std::size_t n = b_vec ? 1 : b.shape()[1];
  if (k != k2) throw ShapeError("matmul: inner dimensions disagree");

  std::vector<real_t> v(m * n, 0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const real_t av = a.value()[i * k + p];
      for (std::size_t j = 0; j < n; ++j) v[i * n + j] += av * b.value()[p * n + j];
    }

  std::vector<std::size_t> shape;
  if (!a_vec) shape.push_back(m);
  if (!b_vec) shape.push_back(n);

  auto an = a.node(), bn = b.node();
  return make_op(std::move(shape), std::move(v), {a, b},
                 [an, bn, m, k, n](detail::TensorNode& out) {
                   if (an->requires_grad) {
                     an->ensure_grad();
                     // dA = dY * B^T
                     for (std::size_t i = 0; i < m; ++i)
                       for (std::size_t p = 0; p < k; ++p) {
                         real_t s = 0;
                         for (std::size_t j = 0; j < n; ++j)
                           s += out.grad[i * n + j] * bn->value[p * n + j];
                         an->grad[i * k + p] += s;
                       }
                   }
                   if (bn->requires_grad) {
                     bn->ensure_grad();
                     // dB = A^T * dY
                     for (std::size_t p = 0; p < k; ++p)
                       for (std::size_t j = 0; j < n; ++j) {
                         real_t s = 0;
                         for (std::size_t i = 0; i < m; ++i)
                           s += an->value[i * k + p] * out.grad[i * n + j];
                         bn->grad[p * n + j] += s;
                       }
                   }
                 });
}

inline Tensor dot(const Tensor& a, const Tensor& b) {
  if (a.rank() != 1 || b.rank() != 1) throw ShapeError("dot: operands must be vectors");
  return matmul(a, b);
}

// y = x W^T (+ b). W is {out,in}; x is {n,in} or {in}.
inline Tensor linear(const Tensor& x, const Tensor& W, const Tensor& b = Tensor()) {
  if (W.rank() != 2) throw ShapeError("linear: weight must be a matrix");
  const std::size_t out_dim = W.shape()[0], in_dim = W.shape()[1];
  const bool x_vec = x.rank() == 1;
  const std::size_t rows = x_vec ? 1 : x.shape()[0];
  if ((x_vec ? x.shape()[0] : x.shape()[1]) != in_dim)
    throw ShapeError("linear: input dimension disagrees with weight");
  const bool has_bias = b.valid();
  if (has_bias && (b.rank() != 1 || b.shape()[0] != out_dim))
    throw ShapeError("linear: bias has wrong shape");

  std::vector<real_t> v(rows * out_dim, 0);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t o = 0; o < out_dim; ++o) {
      real_t s = has_bias ? b.value()[o] : 0;
      for (std::size_t p = 0; p < in_dim; ++p)
        s += x.value()[i * in_dim + p] * W.value()[o * in_dim + p];
      v[i * out_dim + o] = s;
    }

  std::vector<std::size_t> shape = x_vec ? std::vector<std::size_t>{out_dim}
                                         : std::vector<std::size_t>{rows, out_dim};
  std::vector<Tensor> parents = {x, W};
  if (has_bias) parents.push_back(b);
  auto xn = x.node(), Wn = W.node();
  auto bnode = has_bias ? b.node() : detail::NodePtr();
  return make_op(std::move(shape), std::move(v), parents,
                 [xn, Wn, bnode, rows, in_dim, out_dim](detail::TensorNode& out) {
                   if (xn->requires_grad) {
                     xn->ensure_grad();
                     for (std::size_t i = 0; i < rows; ++i)
                       for (std::size_t p = 0; p < in_dim; ++p) {
                         real_t s = 0;
                         for (std::size_t o = 0; o < out_dim; ++o)
                           s += out.grad[i * out_dim + o] * Wn->value[o * in_dim + p];
                         xn->grad[i * in_dim + p] += s;
                       }
                   }
                   if (Wn->requires_grad) {
                     Wn->ensure_grad();
                     for (std::size_t o = 0; o < out_dim; ++o)
                       for (std::size_t p = 0; p < in_dim; ++p) {
                         real_t s = 0;
                         for (std::size_t i = 0; i < rows; ++i)
                           s += out.grad[i * out_dim + o] * xn->value[i * in_dim + p];
                         Wn->grad[o * in_dim + p] += s;
                       }
                   }
                   if (bnode && bnode->requires_grad) {
                     bnode->ensure_grad();
                     for (std::size_t i = 0; i < rows; ++i)
                       for (std::size_t o = 0; o < out_dim; ++o)
                         bnode->grad[o] += out.grad[i * out_dim + o];
                   }
                 });
}

// ---------------------------------------------------------------------------
// Shape manipulation
// ---------------------------------------------------------------------------

// Concatenates vectors (dim 0) or matrices (dim 0 stacks rows, dim 1 joins
// columns).
inline Tensor concat(const std::vector<Tensor>& parts, int dim = 0) {
  if (parts.empty()) throw std::invalid_argument("concat: needs at least one part");
  const std::size_t rank = parts[0].rank();
  for (const auto& p : parts)
    if (p.rank() != rank) throw ShapeError("concat: mixed ranks");

  std::vector<std::size_t> shape;
  std::vector<real_t> v;
  if (rank == 1) {
    if (dim != 0) throw ShapeError("concat: vectors only concatenate along dim 0");
    std::size_t total = 0;
    for (const auto& p : parts) total += p.size();
    v.reserve(total);
    for (const auto& p : parts) v.insert(v.end(), p.value().begin(), p.value().end());
    shape = {total};
  } else if (rank == 2 && dim == 0) {
    const std::size_t cols = parts[0].shape()[1];
    std::size_t rows = 0;
    for (const auto& p : parts) {
      if (p.shape()[1] != cols) throw ShapeError("concat: column counts disagree");
      rows += p.shape()[0];
    }
    v.reserve(rows * cols);
    for (const auto& p : parts) v.insert(v.end(), p.value().begin(), p.value().end());
    shape = {rows, cols};
  } else if (rank == 2 && dim == 1) {
    const std::size_t rows = parts[0].shape()[0];
    std::size_t cols = 0;
    for (const auto& p : parts) {
      if (p.shape()[0] != rows) throw ShapeError("concat: row counts disagree");
      cols += p.shape()[1];
    }
    v.assign(rows * cols, 0);
    std::size_t col_off = 0;
    for (const auto& p : parts) {
      const std::size_t pc = p.shape()[1];
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < pc; ++c) v[r * cols + col_off + c] = p.value()[r * pc + c];
      col_off += pc;
    }
    shape = {rows, cols};
  } else {
    throw ShapeError("concat: unsupported rank/dim combination");
  }

  std::vector<detail::NodePtr> nodes;
  nodes.reserve(parts.size());
  for (const auto& p : parts) nodes.push_back(p.node());
  const std::size_t out_cols = rank == 2 ? shape[1] : 0;
  return make_op(std::move(shape), std::move(v), parts,
                 [nodes, rank, dim, out_cols](detail::TensorNode& out) {
                   if (rank == 1 || dim == 0) {
                     std::size_t off = 0;
                     for (const auto& n : nodes) {
                       if (n->requires_grad) {
                         n->ensure_grad();
                         for (std::size_t i = 0; i < n->size(); ++i)
                           n->grad[i] += out.grad[off + i];
                       }
                       off += n->size();
                     }
                   } else {
                     std::size_t col_off = 0;
                     const std::size_t rows = out.shape[0];
                     for (const auto& n : nodes) {
                       const std::size_t pc = n->shape[1];
                       if (n->requires_grad) {
                         n->ensure_grad();
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t c = 0; c < pc; ++c)
                             n->grad[r * pc + c] += out.grad[r * out_cols + col_off + c];
                       }
                       col_off += pc;
                     }
                   }
                 });
}

// Stacks k equally sized vectors into a {k, h} matrix.
inline Tensor stack_rows(const std::vector<Tensor>& rows) {
  if (rows.empty()) throw std::invalid_argument("stack_rows: needs at least one row");
  const std::size_t h = rows[0].size();
  std::vector<real_t> v;
  v.reserve(rows.size() * h);
  for (const auto& r : rows) {
    if (r.rank() != 1 || r.size() != h) throw ShapeError("stack_rows: rows must be equal-length vectors");
    v.insert(v.end(), r.value().begin(), r.value().end());
  }
  std::vector<detail::NodePtr> nodes;
  for (const auto& r : rows) nodes.push_back(r.node());
  return make_op({rows.size(), h}, std::move(v), rows, [nodes, h](detail::TensorNode& out) {
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      if (!nodes[i]->requires_grad) continue;
      nodes[i]->ensure_grad();
      for (std::size_t c = 0; c < h; ++c) nodes[i]->grad[c] += out.grad[i * h + c];
    }
  });
}

// Selects rows of a matrix; indices may repeat. Backward scatter-adds.
inline Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& idx) {
  if (x.rank() != 2) throw ShapeError("gather_rows: input must be a matrix");
  const std::size_t rows = x.shape()[0], cols = x.shape()[1];
  std::vector<real_t> v(idx.size() * cols);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= rows) throw std::out_of_range("gather_rows: index out of range");
    for (std::size_t c = 0; c < cols; ++c) v[i * cols + c] = x.value()[idx[i] * cols + c];
  }
  auto xn = x.node();
  return make_op({idx.size(), cols}, std::move(v), {x}, [xn, idx, cols](detail::TensorNode& out) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t c = 0; c < cols; ++c)
        xn->grad[idx[i] * cols + c] += out.grad[i * cols + c];
  });
}

// Extracts one row of a matrix as a vector.
inline Tensor row(const Tensor& x, std::size_t r) {
  if (x.rank() != 2) throw ShapeError("row: input must be a matrix");
  const std::size_t cols = x.shape()[1];
  if (r >= x.shape()[0]) throw std::out_of_range("row: index out of range");
  std::vector<real_t> v(x.value().begin() + static_cast<std::ptrdiff_t>(r * cols),
                        x.value().begin() + static_cast<std::ptrdiff_t>((r + 1) * cols));
  auto xn = x.node();
  return make_op({cols}, std::move(v), {x}, [xn, r, cols](detail::TensorNode& out) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (std::size_t c = 0; c < cols; ++c) xn->grad[r * cols + c] += out.grad[c];
  });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline Tensor sum(const Tensor& a) {
  real_t s = 0;
  for (real_t x : a.value()) s += x;
  auto an = a.node();
  return make_op({}, {s}, {a}, [an](detail::TensorNode& out) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (std::size_t i = 0; i < an->size(); ++i) an->grad[i] += out.grad[0];
  });
}

inline Tensor mean(const Tensor& a) { return scale(sum(a), real_t(1) / static_cast<real_t>(a.size())); }

// Sums each row of a matrix into a vector of length rows.
inline Tensor row_sum(const Tensor& x) {
  if (x.rank() != 2) throw ShapeError("row_sum: input must be a matrix");
  const std::size_t rows = x.shape()[0], cols = x.shape()[1];
  std::vector<real_t> v(rows, 0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) v[r] += x.value()[r * cols + c];
  auto xn = x.node();
  return make_op({rows}, std::move(v), {x}, [xn, rows, cols](detail::TensorNode& out) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) xn->grad[r * cols + c] += out.grad[r];
  });
}

// Columnwise max over the rows of a matrix. Ties route gradient to the
// first maximal row, keeping backward deterministic.
inline Tensor max_pool_rows(const Tensor& x) {
  if (x.rank() != 2) throw ShapeError("max_pool_rows: input must be a matrix");
  const std::size_t rows = x.shape()[0], cols = x.shape()[1];
  if (rows == 0) throw std::invalid_argument("max_pool_rows: empty pooling set");
  std::vector<real_t> v(cols, -std::numeric_limits<real_t>::infinity());
  std::vector<std::size_t> argmax(cols, 0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      if (x.value()[r * cols + c] > v[c]) {
        v[c] = x.value()[r * cols + c];
        argmax[c] = r;
      }
  auto xn = x.node();
  return make_op({cols}, std::move(v), {x},
                 [xn, argmax = std::move(argmax), cols](detail::TensorNode& out) {
                   if (!xn->requires_grad) return;
                   xn->ensure_grad();
                   for (std::size_t c = 0; c < cols; ++c)
                     xn->grad[argmax[c] * cols + c] += out.grad[c];
                 });
}

// Adds a scalar tensor to every entry of a vector.
inline Tensor bcast_add(const Tensor& v, const Tensor& s) {
  if (v.rank() != 1 || s.size() != 1) throw ShapeError("bcast_add: expects vector and scalar");
  std::vector<real_t> out(v.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = v.value()[i] + s.value()[0];
  auto vn = v.node(), sn = s.node();
  return make_op(v.shape(), std::move(out), {v, s}, [vn, sn](detail::TensorNode& o) {
    if (vn->requires_grad) {
      vn->ensure_grad();
      for (std::size_t i = 0; i < o.size(); ++i) vn->grad[i] += o.grad[i];
    }
    if (sn->requires_grad) {
      sn->ensure_grad();
      for (std::size_t i = 0; i < o.size(); ++i) sn->grad[0] += o.grad[i];
    }
  });
}

// Extracts entry i of a vector as a scalar.
inline Tensor element(const Tensor& v, std::size_t i) {
  if (v.rank() != 1) throw ShapeError("element: expects a vector");
  if (i >= v.size()) throw std::out_of_range("element: index out of range");
  auto vn = v.node();
  return make_op({}, {v.value()[i]}, {v}, [vn, i](detail::TensorNode& o) {
    if (!vn->requires_grad) return;
    vn->ensure_grad();
    vn->grad[i] += o.grad[0];
  });
}

// Joins k scalars into a vector of length k.
inline Tensor stack_scalars(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("stack_scalars: needs at least one part");
  std::vector<real_t> v(parts.size());
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (parts[i].size() != 1) throw ShapeError("stack_scalars: parts must be scalars");
    v[i] = parts[i].value()[0];
  }
  std::vector<detail::NodePtr> nodes;
  for (const auto& p : parts) nodes.push_back(p.node());
  return make_op({parts.size()}, std::move(v), parts, [nodes](detail::TensorNode& o) {
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      if (!nodes[i]->requires_grad) continue;
      nodes[i]->ensure_grad();
      nodes[i]->grad[0] += o.grad[i];
    }
  });
}

// Picks entry labels[i] of row i; used by the NLL loss.
inline Tensor pick(const Tensor& x, const std::vector<std::size_t>& labels) {
  if (x.rank() != 2) throw ShapeError("pick: input must be a matrix");
  const std::size_t rows = x.shape()[0], cols = x.shape()[1];
  if (labels.size() != rows) throw ShapeError("pick: one label per row");
  std::vector<real_t> v(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    if (labels[r] >= cols) throw std::out_of_range("pick: label out of range");
    v[r] = x.value()[r * cols + labels[r]];
  }
  auto xn = x.node();
  return make_op({rows}, std::move(v), {x}, [xn, labels, cols](detail::TensorNode& out) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (std::size_t r = 0; r < labels.size(); ++r)
      xn->grad[r * cols + labels[r]] += out.grad[r];
  });
}

// ---------------------------------------------------------------------------
// Segment operations
// ---------------------------------------------------------------------------

namespace detail {
inline void check_segments(const std::vector<std::size_t>& segment_ids, std::size_t count,
                           std::size_t num_segments, const char* op) {
  if (segment_ids.size() != count) throw ShapeError(std::string(op) + ": one segment id per entry");
  for (std::size_t s : segment_ids)
    if (s >= num_segments) throw std::out_of_range(std::string(op) + ": invalid segment id");
}
}  // namespace detail

// Softmax within each segment, stabilized by per-segment max subtraction.
// Entries of a nonempty segment sum to 1; empty segments contribute nothing.
inline Tensor segment_softmax(const Tensor& scores, const std::vector<std::size_t>& segment_ids,
                              std::size_t num_segments) {
  if (scores.rank() != 1) throw ShapeError("segment_softmax: scores must be a vector");
  const std::size_t n = scores.size();
  detail::check_segments(segment_ids, n, num_segments, "segment_softmax");

  std::vector<real_t> seg_max(num_segments, -std::numeric_limits<real_t>::infinity());
  for (std::size_t i = 0; i < n; ++i)
    seg_max[segment_ids[i]] = std::max(seg_max[segment_ids[i]], scores.value()[i]);

  std::vector<real_t> v(n), seg_sum(num_segments, 0);
  for (std::size_t i = 0; i < n; ++i) {
    v[i] = std::exp(scores.value()[i] - seg_max[segment_ids[i]]);
    seg_sum[segment_ids[i]] += v[i];
  }
  for (std::size_t i = 0; i < n; ++i) v[i] /= seg_sum[segment_ids[i]];

  auto sn = scores.node();
  return make_op({n}, std::move(v), {scores},
                 [sn, segment_ids, num_segments](detail::TensorNode& out) {
                   if (!sn->requires_grad) return;
                   sn->ensure_grad();
                   // ds_i = y_i * (dy_i - sum_{j in seg} dy_j y_j)
                   std::vector<real_t> seg_dot(num_segments, 0);
                   for (std::size_t i = 0; i < out.size(); ++i)
                     seg_dot[segment_ids[i]] += out.grad[i] * out.value[i];
                   for (std::size_t i = 0; i < out.size(); ++i)
                     sn->grad[i] += out.value[i] * (out.grad[i] - seg_dot[segment_ids[i]]);
                 });
}

inline Tensor softmax(const Tensor& scores) {
  return segment_softmax(scores, std::vector<std::size_t>(scores.size(), 0), 1);
}

// Sums rows that share a segment id; empty segments produce zero rows.
inline Tensor segment_sum(const Tensor& values, const std::vector<std::size_t>& segment_ids,
                          std::size_t num_segments) {
  if (values.rank() != 2) throw ShapeError("segment_sum: values must be a matrix");
  const std::size_t n = values.shape()[0], cols = values.shape()[1];
  detail::check_segments(segment_ids, n, num_segments, "segment_sum");

  std::vector<real_t> v(num_segments * cols, 0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < cols; ++c)
      v[segment_ids[i] * cols + c] += values.value()[i * cols + c];

  auto vn = values.node();
  return make_op({num_segments, cols}, std::move(v), {values},
                 [vn, segment_ids, cols](detail::TensorNode& out) {
                   if (!vn->requires_grad) return;
                   vn->ensure_grad();
                   for (std::size_t i = 0; i < segment_ids.size(); ++i)
                     for (std::size_t c = 0; c < cols; ++c)
                       vn->grad[i * cols + c] += out.grad[segment_ids[i] * cols + c];
                 });
}

// Scales row i of x by w[i].
inline Tensor scale_rows(const Tensor& x, const Tensor& w) {
  if (x.rank() != 2 || w.rank() != 1 || w.size() != x.shape()[0])
    throw ShapeError("scale_rows: need a matrix and one weight per row");
  const std::size_t rows = x.shape()[0], cols = x.shape()[1];
  std::vector<real_t> v(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) v[r * cols + c] = x.value()[r * cols + c] * w.value()[r];
  auto xn = x.node(), wn = w.node();
  return make_op({rows, cols}, std::move(v), {x, w}, [xn, wn, rows, cols](detail::TensorNode& out) {
    if (xn->requires_grad) {
      xn->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c)
          xn->grad[r * cols + c] += out.grad[r * cols + c] * wn->value[r];
    }
    if (wn->requires_grad) {
      wn->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        real_t s = 0;
        for (std::size_t c = 0; c < cols; ++c) s += out.grad[r * cols + c] * xn->value[r * cols + c];
        wn->grad[r] += s;
      }
    }
  });
}

// Row-wise log-softmax, the standard stable form.
inline Tensor log_softmax_rows(const Tensor& x) {
  if (x.rank() != 2) throw ShapeError("log_softmax_rows: input must be a matrix");
  const std::size_t rows = x.shape()[0], cols = x.shape()[1];
  std::vector<real_t> v(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    real_t mx = -std::numeric_limits<real_t>::infinity();
    for (std::size_t c = 0; c < cols; ++c) mx = std::max(mx, x.value()[r * cols + c]);
    real_t z = 0;
    for (std::size_t c = 0; c < cols; ++c) z += std::exp(x.value()[r * cols + c] - mx);
    const real_t log_z = mx + std::log(z);
    for (std::size_t c = 0; c < cols; ++c) v[r * cols + c] = x.value()[r * cols + c] - log_z;
  }
  auto xn = x.node();
  return make_op({rows, cols}, std::move(v), {x}, [xn, rows, cols](detail::TensorNode& out) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      real_t gsum = 0;
      for (std::size_t c = 0; c < cols; ++c) gsum += out.grad[r * cols + c];
      for (std::size_t c = 0; c < cols; ++c)
        xn->grad[r * cols + c] += out.grad[r * cols + c] - std::exp(out.value[r * cols + c]) * gsum;
    }
  });
}

// ---------------------------------------------------------------------------
// GRU cell
// ---------------------------------------------------------------------------

struct GruParams {
  Tensor Wr, Wz, Wn;  // hidden x input
  Tensor Ur, Uz, Un;  // hidden x hidden
  Tensor br, bz, bn;  // hidden

  std::size_t hidden_dim() const { return Wr.shape()[0]; }
  std::size_t input_dim() const { return Wr.shape()[1]; }
};

inline GruParams init_gru(std::size_t hidden, std::size_t input, Rng& rng) {
  auto mat = [&](std::size_t r, std::size_t c) {
    const real_t bound = real_t(1) / std::sqrt(static_cast<real_t>(c));
    std::vector<real_t> d(r * c);
    for (auto& x : d) x = static_cast<real_t>(rng.uniform(-bound, bound));
    return Tensor::param({r, c}, std::move(d));
  };
  GruParams p;
  p.Wr = mat(hidden, input);
  p.Wz = mat(hidden, input);
  p.Wn = mat(hidden, input);
  p.Ur = mat(hidden, hidden);
  p.Uz = mat(hidden, hidden);
  p.Un = mat(hidden, hidden);
  p.br = Tensor::param({hidden}, std::vector<real_t>(hidden, 0));
  p.bz = Tensor::param({hidden}, std::vector<real_t>(hidden, 0));
  p.bn = Tensor::param({hidden}, std::vector<real_t>(hidden, 0));
  return p;
}

// Standard GRU:
//   r  = sigmoid(Wr m + Ur h + br)
//   z  = sigmoid(Wz m + Uz h + bz)
//   n  = tanh(Wn m + r (.) (Un h) + bn)
//   h' = (1 - z) (.) n + z (.) h
// The reset gate multiplies Un h, not h itself.
inline Tensor gru_cell(const Tensor& h, const Tensor& m, const GruParams& p) {
  if (h.rank() != 1 || m.rank() != 1) throw ShapeError("gru_cell: state and input must be vectors");
  if (h.size() != p.hidden_dim() || m.size() != p.input_dim())
    throw ShapeError("gru_cell: dimensions disagree with parameters");
  Tensor r = sigmoid(add(add(matmul(p.Wr, m), matmul(p.Ur, h)), p.br));
  Tensor z = sigmoid(add(add(matmul(p.Wz, m), matmul(p.Uz, h)), p.bz));
  Tensor n = tanh(add(add(matmul(p.Wn, m), mul(r, matmul(p.Un, h))), p.bn));
  return add(mul(one_minus(z), n), mul(z, h));
}

// ---------------------------------------------------------------------------
// Backward pass and gradient checking
// ---------------------------------------------------------------------------

// Seeds d(loss)/d(loss) = 1 and consumes the active tape.
inline void backward(const Tensor& loss) {
  if (loss.size() != 1 || loss.rank() != 0)
    throw ShapeError("backward: loss must be a scalar tensor");
  Tape& tape = detail::require_tape();
  auto node = loss.node();
  node->ensure_grad();
  node->grad[0] += 1;
  tape.run_backward();
}

inline void zero_grad(const std::vector<Tensor>& params) {
  for (auto p : params) p.zero_grad();
}

// Central-difference check of every coordinate of every parameter. Returns
// the maximum relative error max |analytic - numeric| / max(1e-8,
// |analytic| + |numeric|). `f` must rebuild the forward pass on each call.
inline double grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& params,
                         double eps = 1e-6) {
  if (eps <= 0) throw std::invalid_argument("grad_check: eps must be positive");
  zero_grad(params);
  std::vector<std::vector<real_t>> analytic;
  {
    Tape tape;
    Tensor loss = f();
    backward(loss);
  }
  for (const auto& p : params) analytic.push_back(p.grad());

  auto eval = [&]() {
    Tape tape;
    const double v = f().item();
    if (!std::isfinite(v)) throw NonFiniteError("grad_check: non-finite loss");
    return v;
  };

  double max_rel = 0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor p = params[pi];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const real_t saved = p.mutable_value()[i];
      p.mutable_value()[i] = saved + static_cast<real_t>(eps);
      const double f_plus = eval();
      p.mutable_value()[i] = saved - static_cast<real_t>(eps);
      const double f_minus = eval();
      p.mutable_value()[i] = saved;
      const double numeric = (f_plus - f_minus) / (2 * eps);
      const double a = analytic[pi][i];
      const double denom = std::max(1e-8, std::abs(a) + std::abs(numeric));
      max_rel = std::max(max_rel, std::abs(a - numeric) / denom);
    }
  }
  return max_rel;
}

// Uniform(-bound, bound) parameter initializers.
inline Tensor init_matrix(std::size_t rows, std::size_t cols, Rng& rng, real_t bound = 0) {
  if (bound <= 0) bound = real_t(1) / std::sqrt(static_cast<real_t>(cols));
  std::vector<real_t> d(rows * cols);
  for (auto& x : d) x = static_cast<real_t>(rng.uniform(-bound, bound));
  return Tensor::param({rows, cols}, std::move(d));
}

inline Tensor init_vector(std::size_t n, Rng& rng, real_t bound) {
  std::vector<real_t> d(n);
  for (auto& x : d) x = static_cast<real_t>(rng.uniform(-bound, bound));
  return Tensor::param({n}, std::move(d));
}

}  // namespace flowgnn

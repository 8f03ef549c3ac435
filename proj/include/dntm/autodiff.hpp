#pragma once

// Tape-based reverse-mode automatic differentiation over dense arrays.
//
// A Graph records every operation as a node holding its value, the ids of its
// parents and an adjoint rule. Nodes are appended in evaluation order, so the
// insertion order is already a topological order and backward() simply walks
// the tape from the loss towards the leaves, visiting each node once.
//
// Rank-2 arrays are the working shape: rows index the batch, columns the
// features. Binary elementwise operations broadcast a dimension of size 1.

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dntm/array.hpp"
#include "dntm/parameters.hpp"

namespace dntm {

template <typename Real>
class Graph;

// Handle to a node on a Graph. Cheap to copy; valid while the Graph lives.
template <typename Real>
class Var {
 public:
  Var() = default;
  Var(Graph<Real>* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph<Real>* graph() const noexcept { return graph_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return graph_ != nullptr; }

  const Array<Real>& value() const { return graph_->value(id_); }
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  Real item() const { return value().item(); }

 private:
  Graph<Real>* graph_ = nullptr;
  std::size_t id_ = 0;
};

template <typename Real>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var<Real> constant(Array<Real> value) {
    nodes_.push_back({std::move(value), {}, {}, false, {}});
    return {this, nodes_.size() - 1};
  }

  // Leaf bound to a named parameter. Repeated requests for the same name return
  // the same node so that gradients from every use accumulate in one place.
  Var<Real> parameter(const ParameterStore<Real>& store, const std::string& name) {
    if (auto it = param_ids_.find(name); it != param_ids_.end()) return {this, it->second};
    const auto& entry = store.entry(name);
    nodes_.push_back({entry.value, {}, {}, entry.trainable, name});
    param_ids_.emplace(name, nodes_.size() - 1);
    return {this, nodes_.size() - 1};
  }

  // Appends a computed node. The node requires a gradient iff any parent does;
  // otherwise the adjoint rule is dropped.
  Var<Real> record(Array<Real> value, std::initializer_list<std::size_t> parents, BackwardFn fn) {
    return record(std::move(value), std::span<const std::size_t>(parents.begin(), parents.size()),
                  std::move(fn));
  }

  Var<Real> record(Array<Real> value, std::span<const std::size_t> parents, BackwardFn fn) {
    bool needs = false;
    for (auto p : parents) needs = needs || nodes_[p].requires_grad;
    nodes_.push_back({std::move(value), {}, needs ? std::move(fn) : BackwardFn{}, needs, {}});
    return {this, nodes_.size() - 1};
  }

  // Node whose value passes through but which blocks every gradient.
  Var<Real> stop_gradient(Var<Real> x) { return constant(x.value()); }

  const Array<Real>& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  // Upstream gradient of a node; empty when nothing flowed into it.
  std::span<const Real> grad_of(std::size_t id) const { return nodes_[id].grad; }

  // Mutable gradient buffer of a node, zero-allocated on first touch.
  std::vector<Real>& grad_ref(std::size_t id) {
    auto& node = nodes_[id];
    if (node.grad.empty()) node.grad.assign(node.value.size(), Real{0});
    return node.grad;
  }

  // Gradient of a scalar loss with respect to every trainable parameter leaf on
  // this graph. Parameters the loss does not reach get zero arrays.
  Gradients<Real> backward(Var<Real> loss) {
    if (loss.graph() != this) throw std::invalid_argument("backward: loss belongs to another graph");
    if (loss.value().size() != 1) throw ShapeError("backward", loss.shape(), Shape{1, 1});
    for (auto& node : nodes_) node.grad.clear();
    grad_ref(loss.id())[0] = Real{1};
    for (std::size_t id = loss.id() + 1; id-- > 0;) {
      auto& node = nodes_[id];
      if (node.grad.empty() || !node.backward) continue;
      node.backward(*this, id);
    }
    Gradients<Real> out;
    for (const auto& [name, id] : param_ids_) {
      const auto& node = nodes_[id];
      if (!node.requires_grad) continue;
      Array<Real> g(node.value.shape());
      if (!node.grad.empty()) std::copy(node.grad.begin(), node.grad.end(), g.storage().begin());
      out.emplace(name, std::move(g));
    }
    return out;
  }

 private:
  struct Node {
    Array<Real> value;
    std::vector<Real> grad;
    BackwardFn backward;
    bool requires_grad = false;
    std::string param;
  };

  std::vector<Node> nodes_;
  std::unordered_map<std::string, std::size_t> param_ids_;
};

namespace detail {

template <typename Real>
using RowMajor = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Real>
Eigen::Map<const RowMajor<Real>> as_matrix(const Array<Real>& a) {
  return {a.data().data(), static_cast<Eigen::Index>(a.rows()), static_cast<Eigen::Index>(a.cols())};
}

template <typename Real>
Eigen::Map<RowMajor<Real>> as_matrix(std::vector<Real>& buf, std::size_t rows, std::size_t cols) {
  return {buf.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
}

template <typename Real>
Eigen::Map<const RowMajor<Real>> as_matrix(std::span<const Real> buf, std::size_t rows,
                                           std::size_t cols) {
  return {buf.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
}

template <typename Real>
void require_rank2(const char* op, const Array<Real>& a) {
  if (a.rank() != 2) throw ShapeError(op, a.shape(), Shape{0, 0});
}

template <typename Real>
void require_same_graph(const char* op, Var<Real> a, Var<Real> b) {
  if (a.graph() != b.graph()) throw std::invalid_argument(std::string(op) + ": operands on different graphs");
}

// Rank-2 broadcasting plan: each operand either matches the output along a
// dimension or has extent 1 there.
struct Broadcast {
  std::size_t rows, cols;
  bool a_rows, a_cols, b_rows, b_cols;  // true when the operand spans that dim

  std::size_t a_index(std::size_t r, std::size_t c, std::size_t a_width) const {
    return (a_rows ? r : 0) * a_width + (a_cols ? c : 0);
  }
  std::size_t b_index(std::size_t r, std::size_t c, std::size_t b_width) const {
    return (b_rows ? r : 0) * b_width + (b_cols ? c : 0);
  }
};

inline Broadcast plan_broadcast(const char* op, const Shape& a, const Shape& b) {
  if (a.size() != 2 || b.size() != 2) throw ShapeError(op, a, b);
  auto dim = [&](std::size_t x, std::size_t y) {
    if (x == y || y == 1) return x;
    if (x == 1) return y;
    throw ShapeError(op, a, b);
  };
  Broadcast p{dim(a[0], b[0]), dim(a[1], b[1]), false, false, false, false};
  p.a_rows = a[0] == p.rows && p.rows != 1;
  p.a_cols = a[1] == p.cols && p.cols != 1;
  p.b_rows = b[0] == p.rows && p.rows != 1;
  p.b_cols = b[1] == p.cols && p.cols != 1;
  return p;
}

// Elementwise binary op. `fn(a, b)` computes the value; `dfa(a, b, y)` and
// `dfb(a, b, y)` the local partials.
template <typename Real, typename F, typename DA, typename DB>
Var<Real> binary(const char* op, Var<Real> a, Var<Real> b, F fn, DA dfa, DB dfb) {
  require_same_graph(op, a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  const Broadcast p = plan_broadcast(op, av.shape(), bv.shape());
  const std::size_t aw = av.cols(), bw = bv.cols();
  Array<Real> out({p.rows, p.cols});
  for (std::size_t r = 0; r < p.rows; ++r) {
    for (std::size_t c = 0; c < p.cols; ++c) {
      out.at(r, c) = fn(av[p.a_index(r, c, aw)], bv[p.b_index(r, c, bw)]);
    }
  }
  const std::size_t ai = a.id(), bi = b.id();
  return a.graph()->record(std::move(out), {ai, bi}, [=](Graph<Real>& g, std::size_t self) {
    const auto& av = g.value(ai);
    const auto& bv = g.value(bi);
    const auto& yv = g.value(self);
    const auto gy = g.grad_of(self);
    const bool need_a = g.requires_grad(ai), need_b = g.requires_grad(bi);
    std::vector<Real>* ga = need_a ? &g.grad_ref(ai) : nullptr;
    std::vector<Real>* gb = need_b ? &g.grad_ref(bi) : nullptr;
    for (std::size_t r = 0; r < p.rows; ++r) {
      for (std::size_t c = 0; c < p.cols; ++c) {
        const std::size_t o = r * p.cols + c;
        const Real x = av[p.a_index(r, c, aw)];
        const Real y = bv[p.b_index(r, c, bw)];
        if (ga) (*ga)[p.a_index(r, c, aw)] += gy[o] * dfa(x, y, yv[o]);
        if (gb) (*gb)[p.b_index(r, c, bw)] += gy[o] * dfb(x, y, yv[o]);
      }
    }
  });
}

// Elementwise unary op; `df(x, y)` is dy/dx given input and output.
template <typename Real, typename F, typename DF>
Var<Real> unary(Var<Real> x, F fn, DF df) {
  const auto& xv = x.value();
  Array<Real> out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fn(xv[i]);
  const std::size_t xi = x.id();
  return x.graph()->record(std::move(out), {xi}, [=](Graph<Real>& g, std::size_t self) {
    const auto& xv = g.value(xi);
    const auto& yv = g.value(self);
    const auto gy = g.grad_of(self);
    auto& gx = g.grad_ref(xi);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * df(xv[i], yv[i]);
  });
}

template <typename Real>
Real stable_sigmoid(Real x) {
  if (x >= 0) return Real{1} / (Real{1} + std::exp(-x));
  const Real e = std::exp(x);
  return e / (Real{1} + e);
}

template <typename Real>
Real stable_softplus(Real x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

// Smallest argument accepted by log(); keeps log and its derivative finite.
template <typename Real>
constexpr Real log_floor() {
  return std::numeric_limits<Real>::min();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

template <typename Real>
Var<Real> add(Var<Real> a, Var<Real> b) {
  return detail::binary<Real>(
      "add", a, b, [](Real x, Real y) { return x + y; }, [](Real, Real, Real) { return Real{1}; },
      [](Real, Real, Real) { return Real{1}; });
}

template <typename Real>
Var<Real> sub(Var<Real> a, Var<Real> b) {
  return detail::binary<Real>(
      "sub", a, b, [](Real x, Real y) { return x - y; }, [](Real, Real, Real) { return Real{1}; },
      [](Real, Real, Real) { return Real{-1}; });
}

template <typename Real>
Var<Real> mul(Var<Real> a, Var<Real> b) {
  return detail::binary<Real>(
      "mul", a, b, [](Real x, Real y) { return x * y; }, [](Real, Real y, Real) { return y; },
      [](Real x, Real, Real) { return x; });
}

template <typename Real>
Var<Real> div(Var<Real> a, Var<Real> b) {
  return detail::binary<Real>(
      "div", a, b, [](Real x, Real y) { return x / y; }, [](Real, Real y, Real) { return Real{1} / y; },
      [](Real x, Real y, Real) { return -x / (y * y); });
}

template <typename Real>
Var<Real> scale(Var<Real> x, Real c) {
  return detail::unary<Real>(x, [c](Real v) { return c * v; }, [c](Real, Real) { return c; });
}

template <typename Real>
Var<Real> shift(Var<Real> x, Real c) {
  return detail::unary<Real>(x, [c](Real v) { return v + c; }, [](Real, Real) { return Real{1}; });
}

template <typename Real>
Var<Real> operator+(Var<Real> a, Var<Real> b) { return add(a, b); }
template <typename Real>
Var<Real> operator-(Var<Real> a, Var<Real> b) { return sub(a, b); }
template <typename Real>
Var<Real> operator*(Var<Real> a, Var<Real> b) { return mul(a, b); }
template <typename Real>
Var<Real> operator/(Var<Real> a, Var<Real> b) { return div(a, b); }
template <typename Real>
Var<Real> operator-(Var<Real> a) { return scale(a, Real{-1}); }
template <typename Real>
Var<Real> operator*(Var<Real> a, Real c) { return scale(a, c); }
template <typename Real>
Var<Real> operator*(Real c, Var<Real> a) { return scale(a, c); }
template <typename Real>
Var<Real> operator+(Var<Real> a, Real c) { return shift(a, c); }
template <typename Real>
Var<Real> operator-(Real c, Var<Real> a) { return shift(scale(a, Real{-1}), c); }

// ---------------------------------------------------------------------------
// Nonlinearities

template <typename Real>
Var<Real> sigmoid(Var<Real> x) {
  return detail::unary<Real>(x, detail::stable_sigmoid<Real>, [](Real, Real y) { return y * (Real{1} - y); });
}

template <typename Real>
Var<Real> tanh(Var<Real> x) {
  return detail::unary<Real>(
      x, [](Real v) { return std::tanh(v); }, [](Real, Real y) { return Real{1} - y * y; });
}

template <typename Real>
Var<Real> relu(Var<Real> x) {
  return detail::unary<Real>(
      x, [](Real v) { return v > 0 ? v : Real{0}; }, [](Real v, Real) { return v > 0 ? Real{1} : Real{0}; });
}

template <typename Real>
Var<Real> softplus(Var<Real> x) {
  return detail::unary<Real>(x, detail::stable_softplus<Real>,
                             [](Real v, Real) { return detail::stable_sigmoid(v); });
}

template <typename Real>
Var<Real> exp(Var<Real> x) {
  return detail::unary<Real>(
      x, [](Real v) { return std::exp(v); }, [](Real, Real y) { return y; });
}

// Natural log; arguments below the smallest normal are clamped.
template <typename Real>
Var<Real> log(Var<Real> x) {
  return detail::unary<Real>(
      x, [](Real v) { return std::log(std::max(v, detail::log_floor<Real>())); },
      [](Real v, Real) { return Real{1} / std::max(v, detail::log_floor<Real>()); });
}

template <typename Real>
Var<Real> sqrt(Var<Real> x) {
  return detail::unary<Real>(
      x, [](Real v) { return std::sqrt(std::max(v, Real{0})); },
      [](Real, Real y) { return y > 0 ? Real{0.5} / y : Real{0}; });
}

template <typename Real>
Var<Real> square(Var<Real> x) {
  return detail::unary<Real>(
      x, [](Real v) { return v * v; }, [](Real v, Real) { return Real{2} * v; });
}

// Huber penalty: z^2 inside |z| <= delta, delta * (2|z| - delta) outside.
template <typename Real>
Var<Real> huber(Var<Real> z, Real delta) {
  if (!(delta > 0)) throw ConfigError("huber: delta must be positive");
  return detail::unary<Real>(
      z,
      [delta](Real v) {
        const Real a = std::abs(v);
        return a <= delta ? v * v : delta * (Real{2} * a - delta);
      },
      [delta](Real v, Real) {
        return std::abs(v) <= delta ? Real{2} * v : (v > 0 ? Real{2} * delta : Real{-2} * delta);
      });
}

// Elementwise binary cross-entropy of sigmoid(logits) against fixed targets,
// evaluated without forming the sigmoid.
template <typename Real>
Var<Real> bce_with_logits(Var<Real> logits, const Array<Real>& targets) {
  const auto& lv = logits.value();
  if (lv.shape() != targets.shape()) throw ShapeError("bce_with_logits", lv.shape(), targets.shape());
  Array<Real> out(lv.shape());
  for (std::size_t i = 0; i < lv.size(); ++i) {
    const Real x = lv[i];
    out[i] = std::max(x, Real{0}) - x * targets[i] + std::log1p(std::exp(-std::abs(x)));
  }
  const std::size_t li = logits.id();
  return logits.graph()->record(std::move(out), {li}, [li, targets](Graph<Real>& g, std::size_t self) {
    const auto& lv = g.value(li);
    const auto gy = g.grad_of(self);
    auto& gl = g.grad_ref(li);
    for (std::size_t i = 0; i < gy.size(); ++i) gl[i] += gy[i] * (detail::stable_sigmoid(lv[i]) - targets[i]);
  });
}

// ---------------------------------------------------------------------------
// Row-wise reductions and normalizations (rank 2)

// Softmax over each row, max-subtracted.
template <typename Real>
Var<Real> softmax(Var<Real> x) {
  const auto& xv = x.value();
  detail::require_rank2("softmax", xv);
  Array<Real> out(xv.shape());
  const std::size_t cols = xv.cols();
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    const auto in = xv.row_span(r);
    auto o = out.row_span(r);
    const Real m = *std::max_element(in.begin(), in.end());
    Real s = 0;
    for (std::size_t c = 0; c < cols; ++c) s += (o[c] = std::exp(in[c] - m));
    for (std::size_t c = 0; c < cols; ++c) o[c] /= s;
  }
  const std::size_t xi = x.id();
  return x.graph()->record(std::move(out), {xi}, [xi, cols](Graph<Real>& g, std::size_t self) {
    const auto& y = g.value(self);
    const auto gy = g.grad_of(self);
    auto& gx = g.grad_ref(xi);
    for (std::size_t r = 0; r < y.rows(); ++r) {
      Real dot = 0;
      for (std::size_t c = 0; c < cols; ++c) dot += gy[r * cols + c] * y.at(r, c);
      for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += y.at(r, c) * (gy[r * cols + c] - dot);
    }
  });
}

template <typename Real>
Var<Real> log_softmax(Var<Real> x) {
  const auto& xv = x.value();
  detail::require_rank2("log_softmax", xv);
  Array<Real> out(xv.shape());
  const std::size_t cols = xv.cols();
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    const auto in = xv.row_span(r);
    const Real m = *std::max_element(in.begin(), in.end());
    Real s = 0;
    for (auto v : in) s += std::exp(v - m);
    const Real lse = m + std::log(s);
    for (std::size_t c = 0; c < cols; ++c) out.at(r, c) = in[c] - lse;
  }
  const std::size_t xi = x.id();
  return x.graph()->record(std::move(out), {xi}, [xi, cols](Graph<Real>& g, std::size_t self) {
    const auto& y = g.value(self);
    const auto gy = g.grad_of(self);
    auto& gx = g.grad_ref(xi);
    for (std::size_t r = 0; r < y.rows(); ++r) {
      Real total = 0;
      for (std::size_t c = 0; c < cols; ++c) total += gy[r * cols + c];
      for (std::size_t c = 0; c < cols; ++c) {
        gx[r * cols + c] += gy[r * cols + c] - std::exp(y.at(r, c)) * total;
      }
    }
  });
}

// Sum of each row: [R, C] -> [R, 1].
template <typename Real>
Var<Real> row_sum(Var<Real> x) {
  const auto& xv = x.value();
  detail::require_rank2("row_sum", xv);
  Array<Real> out({xv.rows(), 1});
  const std::size_t cols = xv.cols();
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    Real s = 0;
    for (auto v : xv.row_span(r)) s += v;
    out[r] = s;
  }
  const std::size_t xi = x.id();
  return x.graph()->record(std::move(out), {xi}, [xi, cols](Graph<Real>& g, std::size_t self) {
    const auto gy = g.grad_of(self);
    auto& gx = g.grad_ref(xi);
    for (std::size_t r = 0; r < gy.size(); ++r) {
      for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += gy[r];
    }
  });
}

// Euclidean norm of each row: [R, C] -> [R, 1]. Gradient is zero at the origin.
template <typename Real>
Var<Real> l2_norm(Var<Real> x) {
  const auto& xv = x.value();
  detail::require_rank2("l2_norm", xv);
  Array<Real> out({xv.rows(), 1});
  const std::size_t cols = xv.cols();
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    Real s = 0;
    for (auto v : xv.row_span(r)) s += v * v;
    out[r] = std::sqrt(s);
  }
  const std::size_t xi = x.id();
  return x.graph()->record(std::move(out), {xi}, [xi, cols](Graph<Real>& g, std::size_t self) {
    const auto& xv = g.value(xi);
    const auto& n = g.value(self);
    const auto gy = g.grad_of(self);
    auto& gx = g.grad_ref(xi);
    for (std::size_t r = 0; r < n.size(); ++r) {
      if (n[r] == 0) continue;
      for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += gy[r] * xv[r * cols + c] / n[r];
    }
  });
}

// Sum of all elements -> [1, 1].
template <typename Real>
Var<Real> sum(Var<Real> x) {
  Real s = 0;
  for (auto v : x.value().data()) s += v;
  const std::size_t xi = x.id();
  return x.graph()->record(Array<Real>::scalar(s), {xi}, [xi](Graph<Real>& g, std::size_t self) {
    const Real gy = g.grad_of(self)[0];
    for (auto& v : g.grad_ref(xi)) v += gy;
  });
}

template <typename Real>
Var<Real> mean(Var<Real> x) {
  return scale(sum(x), Real{1} / static_cast<Real>(x.value().size()));
}

// Composite cosine similarity of matching rows: x.y / (|x||y| + eps).
template <typename Real>
Var<Real> cosine_similarity(Var<Real> x, Var<Real> y, Real eps) {
  if (x.shape() != y.shape()) throw ShapeError("cosine_similarity", x.shape(), y.shape());
  return row_sum(x * y) / shift(l2_norm(x) * l2_norm(y), eps);
}

// ---------------------------------------------------------------------------
// Linear algebra and structure

// [n, k] x [k, m] -> [n, m].
template <typename Real>
Var<Real> matmul(Var<Real> a, Var<Real> b) {
  detail::require_same_graph("matmul", a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.rows()) throw ShapeError("matmul", av.shape(), bv.shape());
  const std::size_t n = av.rows(), k = av.cols(), m = bv.cols();
  Array<Real> out({n, m});
  detail::as_matrix(out.storage(), n, m).noalias() = detail::as_matrix(av) * detail::as_matrix(bv);
  const std::size_t ai = a.id(), bi = b.id();
  return a.graph()->record(std::move(out), {ai, bi}, [=](Graph<Real>& g, std::size_t self) {
    const auto gy = detail::as_matrix<Real>(g.grad_of(self), n, m);
    if (g.requires_grad(ai)) {
      detail::as_matrix(g.grad_ref(ai), n, k).noalias() += gy * detail::as_matrix(g.value(bi)).transpose();
    }
    if (g.requires_grad(bi)) {
      detail::as_matrix(g.grad_ref(bi), k, m).noalias() += detail::as_matrix(g.value(ai)).transpose() * gy;
    }
  });
}

// Column-wise concatenation of rank-2 arrays with equal row counts.
template <typename Real>
Var<Real> concat_cols(const std::vector<Var<Real>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no operands");
  const std::size_t rows = parts.front().rows();
  std::size_t width = 0;
  std::vector<std::size_t> ids, widths;
  for (const auto& p : parts) {
    detail::require_rank2("concat_cols", p.value());
    if (p.rows() != rows) throw ShapeError("concat_cols", parts.front().shape(), p.shape());
    detail::require_same_graph("concat_cols", parts.front(), p);
    ids.push_back(p.id());
    widths.push_back(p.cols());
    width += p.cols();
  }
  Array<Real> out({rows, width});
  for (std::size_t r = 0, off = 0; r < rows; ++r, off = 0) {
    for (std::size_t i = 0; i < parts.size(); ++i) {
      const auto src = parts[i].value().row_span(r);
      std::copy(src.begin(), src.end(), out.row_span(r).begin() + off);
      off += widths[i];
    }
  }
  return parts.front().graph()->record(std::move(out), ids, [ids, widths, rows, width](Graph<Real>& g, std::size_t self) {
    const auto gy = g.grad_of(self);
    std::size_t off = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (g.requires_grad(ids[i])) {
        auto& gx = g.grad_ref(ids[i]);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < widths[i]; ++c) gx[r * widths[i] + c] += gy[r * width + off + c];
        }
      }
      off += widths[i];
    }
  });
}

// Row-wise concatenation of rank-2 arrays with equal column counts.
template <typename Real>
Var<Real> concat_rows(const std::vector<Var<Real>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no operands");
  const std::size_t cols = parts.front().cols();
  std::vector<std::size_t> ids, counts;
  std::vector<Real> data;
  for (const auto& p : parts) {
    detail::require_rank2("concat_rows", p.value());
    if (p.cols() != cols) throw ShapeError("concat_rows", parts.front().shape(), p.shape());
    ids.push_back(p.id());
    counts.push_back(p.value().size());
    data.insert(data.end(), p.value().data().begin(), p.value().data().end());
  }
  const std::size_t rows = data.size() / cols;
  Array<Real> out({rows, cols}, std::move(data));
  return parts.front().graph()->record(std::move(out), ids, [ids, counts](Graph<Real>& g, std::size_t self) {
    const auto gy = g.grad_of(self);
    std::size_t off = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (g.requires_grad(ids[i])) {
        auto& gx = g.grad_ref(ids[i]);
        for (std::size_t j = 0; j < counts[i]; ++j) gx[j] += gy[off + j];
      }
      off += counts[i];
    }
  });
}

// Columns [start, start + len) of a rank-2 array.
template <typename Real>
Var<Real> slice_cols(Var<Real> x, std::size_t start, std::size_t len) {
  const auto& xv = x.value();
  detail::require_rank2("slice_cols", xv);
  if (len == 0 || start + len > xv.cols()) throw ShapeError("slice_cols", xv.shape(), Shape{start, len});
  const std::size_t rows = xv.rows(), cols = xv.cols();
  Array<Real> out({rows, len});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < len; ++c) out.at(r, c) = xv.at(r, start + c);
  }
  const std::size_t xi = x.id();
  return x.graph()->record(std::move(out), {xi}, [=](Graph<Real>& g, std::size_t self) {
    const auto gy = g.grad_of(self);
    auto& gx = g.grad_ref(xi);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < len; ++c) gx[r * cols + start + c] += gy[r * len + c];
    }
  });
}

// Rows [start, start + len) of a rank-2 array.
template <typename Real>
Var<Real> slice_rows(Var<Real> x, std::size_t start, std::size_t len) {
  const auto& xv = x.value();
  detail::require_rank2("slice_rows", xv);
  if (len == 0 || start + len > xv.rows()) throw ShapeError("slice_rows", xv.shape(), Shape{start, len});
  const std::size_t cols = xv.cols();
  Array<Real> out({len, cols});
  std::copy_n(xv.data().begin() + start * cols, len * cols, out.storage().begin());
  const std::size_t xi = x.id();
  return x.graph()->record(std::move(out), {xi}, [=](Graph<Real>& g, std::size_t self) {
    const auto gy = g.grad_of(self);
    auto& gx = g.grad_ref(xi);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[start * cols + i] += gy[i];
  });
}

// One element per row: out[r] = x[r, index[r]]. Shape [R, 1].
template <typename Real>
Var<Real> pick(Var<Real> x, const std::vector<std::size_t>& index) {
  const auto& xv = x.value();
  detail::require_rank2("pick", xv);
  if (index.size() != xv.rows()) throw ShapeError("pick", xv.shape(), Shape{index.size()});
  Array<Real> out({xv.rows(), 1});
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= xv.cols()) throw ShapeError("pick", xv.shape(), Shape{r, index[r]});
    out[r] = xv.at(r, index[r]);
  }
  const std::size_t xi = x.id(), cols = xv.cols();
  return x.graph()->record(std::move(out), {xi}, [xi, cols, index](Graph<Real>& g, std::size_t self) {
    const auto gy = g.grad_of(self);
    auto& gx = g.grad_ref(xi);
    for (std::size_t r = 0; r < index.size(); ++r) gx[r * cols + index[r]] += gy[r];
  });
}

// Row lookup into a [V, d] table: out[r] = table[ids[r]].
template <typename Real>
Var<Real> gather_rows(Var<Real> table, const std::vector<std::size_t>& ids) {
  const auto& tv = table.value();
  detail::require_rank2("gather_rows", tv);
  if (ids.empty()) throw ShapeError("gather_rows", tv.shape(), Shape{0});
  const std::size_t cols = tv.cols();
  Array<Real> out({ids.size(), cols});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] >= tv.rows()) throw ShapeError("gather_rows", tv.shape(), Shape{ids[r]});
    const auto src = tv.row_span(ids[r]);
    std::copy(src.begin(), src.end(), out.row_span(r).begin());
  }
  const std::size_t ti = table.id();
  return table.graph()->record(std::move(out), {ti}, [ti, cols, ids](Graph<Real>& g, std::size_t self) {
    const auto gy = g.grad_of(self);
    auto& gt = g.grad_ref(ti);
    for (std::size_t r = 0; r < ids.size(); ++r) {
      for (std::size_t c = 0; c < cols; ++c) gt[ids[r] * cols + c] += gy[r * cols + c];
    }
  });
}

}  // namespace dntm

#pragma once

// Tape-based reverse-mode automatic differentiation over float64 tensors.
//
// A Graph is an append-only list of nodes. Every op evaluates eagerly and
// records a pullback; backward() walks the tape in reverse append order,
// which is a valid reverse topological order. Graphs are rebuilt per step
// and are not thread-safe while under construction.

#include "masslearn/tensor.hpp"

#include <cstddef>
#include <functional>
#include <stdexcept>
#include <span>
#include <vector>

namespace masslearn::ad {

class Graph;

// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
class Var {
 public:
  Var() = default;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph& graph() const { return *graph_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool valid() const { return graph_ != nullptr; }

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

// Accumulates adjoints during one backward pass.
class Adjoints {
 public:
  explicit Adjoints(const Graph& graph);
  // Zero-initialised on first access.
  Tensor& of(std::size_t id);
  bool has(std::size_t id) const { return present_[id]; }
  bool wants(std::size_t id) const;

 private:
  const Graph* graph_;
  std::vector<Tensor> grads_;
  std::vector<bool> present_;
};

using Pullback = std::function<void(const Tensor& upstream, Adjoints& adj)>;

// Gradient of a scalar output with respect to every trainable leaf.
class Gradients {
 public:
  Gradients(std::vector<Tensor> grads, std::vector<bool> is_leaf)
      : grads_(std::move(grads)), is_leaf_(std::move(is_leaf)) {}
  const Tensor& operator[](Var leaf) const;
  const Tensor& at(std::size_t id) const;
  bool contains(Var v) const;

 private:
  std::vector<Tensor> grads_;
  std::vector<bool> is_leaf_;
};

class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Trainable input; receives a gradient.
  Var leaf(Tensor value);
  // Input treated as a constant.
  Var constant(Tensor value);
  // Records an op node. `inputs` lists the node ids the pullback writes to.
  Var record(Tensor value, std::vector<std::size_t> inputs, Pullback pullback);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  bool is_leaf(std::size_t id) const { return nodes_[id].is_leaf; }
  std::size_t size() const { return nodes_.size(); }

  // Reverse accumulation from a size-1 node. Leaves that do not influence
  // the output get zero gradients.
  Gradients backward(Var output) const;

 private:
  struct Node {
    Tensor value;
    std::vector<std::size_t> inputs;
    Pullback pullback;
    bool requires_grad = false;
    bool is_leaf = false;
  };
  std::vector<Node> nodes_;
};

// ---- elementwise ----------------------------------------------------------
// Binary elementwise ops accept equal shapes, or a size-1 operand on either
// side (scalar broadcast).
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var neg(Var a);
Var scale(Var a, double factor);
Var add_scalar(Var a, double offset);
Var exp(Var a);
Var log(Var a);
Var square(Var a);
Var pow(Var a, double exponent);
Var softplus(Var a);
// x if x > 0 else exp(x) - 1.
Var elu(Var a);
// Derivative of elu: 1 if x >= 0 else exp(x).
Var elu_derivative(Var a);

// ---- reductions -----------------------------------------------------------
Var sum(Var a);
Var mean(Var a);
Var dot(Var a, Var b);
Var logsumexp(Var v);
// Per-row logsumexp of a rank-2 tensor, giving a rank-1 tensor of rows.
Var logsumexp_rows(Var m);
// Rank-2 (n x m) -> rank-1 length m.
Var col_sums(Var m);
// Rank-2 (n x m) -> rank-1 length n.
Var row_sums(Var m);

// ---- linear algebra -------------------------------------------------------
Var matmul(Var a, Var b);
// a * b^T
Var matmul_nt(Var a, Var b);
Var transpose(Var a);
// m (n x k) + bias (k) on every row.
Var add_bias(Var m, Var bias);
// m[i, :] * v[i].
Var scale_rows(Var m, Var v);
// m[:, j] * v[j].
Var scale_cols(Var m, Var v);
Var add_diag(Var m, double value);
Var diag(Var m);
// log det M for symmetric positive definite M, via 2 * sum log L_ii.
// Throws NotPositiveDefinite without recording a node.
Var logdet_spd(Var m);
// X solving L X = B for lower-triangular L.
Var tri_solve_lower(Var l, Var b);
// Lower triangle of `raw` with softplus applied to the diagonal.
Var chol_from_raw(Var raw);

// ---- indexing -------------------------------------------------------------
Var row(Var m, std::size_t index);
Var select(Var t, std::size_t flat_index);
// out[i] = m[i, columns[i]].
Var pick(Var m, std::span<const int> columns);
// Column-stack rank-1 tensors of equal length into an n x k matrix.
Var stack_cols(std::span<const Var> columns);
Var reshape(Var a, Shape shape);
// Contiguous run of `length` values of a flattened tensor, as rank 1.
Var slice(Var a, std::size_t offset, std::size_t length);

// ---- numeric helpers (no tape) ---------------------------------------------
struct NotPositiveDefinite : std::runtime_error {
  NotPositiveDefinite() : std::runtime_error("not positive definite") {}
};

double logsumexp(std::span<const double> v);
// Lower Cholesky factor; throws NotPositiveDefinite on a non-positive pivot.
Tensor cholesky(const Tensor& m);
double logdet_spd(const Tensor& m);
double softplus(double x);
double softplus_inverse(double y);

// Builds a scalar-valued graph from a leaf at `point`.
using GraphBuilder = std::function<Var(Graph&, Var)>;

// Central finite differences per coordinate against backward(); returns
// max |analytic - numeric| / max(1, |analytic|).
double grad_check(const GraphBuilder& build, const Tensor& point, double eps);

}  // namespace masslearn::ad

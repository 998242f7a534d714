#include "masslearn/diffcore.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace masslearn::ad {

namespace {

void require(bool ok, const std::string& message) {
  if (!ok) throw std::invalid_argument(message);
}

void require_rank(Var v, std::size_t rank, const char* op) {
  require(v.value().rank() == rank, std::string(op) + ": expected rank " +
                                        std::to_string(rank) + ", got " +
                                        shape_string(v.shape()));
}

void require_same_graph(Var a, Var b) {
  require(&a.graph() == &b.graph(), "variables belong to different graphs");
}

// Adds `g` into the adjoint of `id`, summing everything if the target is a
// broadcast scalar.
void accumulate(Adjoints& adj, std::size_t id, const Graph& g, const Tensor& contribution) {
  if (!adj.wants(id)) return;
  Tensor& target = adj.of(id);
  if (target.size() == contribution.size()) {
    for (std::size_t i = 0; i < target.size(); ++i) target[i] += contribution[i];
  } else {
    double total = 0.0;
    for (double v : contribution.data()) total += v;
    target[0] += total;
  }
  (void)g;
}

// Shape of an elementwise binary result.
Shape broadcast_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return a.shape();
  if (b.size() == 1) return a.shape();
  if (a.size() == 1) return b.shape();
  throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                              shape_string(a.shape()) + " vs " + shape_string(b.shape()));
}

double at_broadcast(const Tensor& t, std::size_t i) { return t.size() == 1 ? t[0] : t[i]; }

template <class Fn, class Deriv>
Var unary(Var a, Fn fn, Deriv deriv) {
  Graph& g = a.graph();
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = fn(x[i]);
  const std::size_t ia = a.id();
  return g.record(std::move(y), {ia}, [&g, ia, deriv](const Tensor& up, Adjoints& adj) {
    const Tensor& x = g.value(ia);
    Tensor& ga = adj.of(ia);
    for (std::size_t i = 0; i < x.size(); ++i) ga[i] += up[i] * deriv(x[i]);
  });
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Solves L x = b in place (forward substitution) for column `col` of B.
void forward_substitute(const Tensor& l, Tensor& b) {
  const std::size_t n = l.rows();
  const std::size_t m = b.cols();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < i; ++k) {
      const double lik = l.at(i, k);
      if (lik == 0.0) continue;
      for (std::size_t j = 0; j < m; ++j) b.at(i, j) -= lik * b.at(k, j);
    }
    const double d = l.at(i, i);
    for (std::size_t j = 0; j < m; ++j) b.at(i, j) /= d;
  }
}

// Solves L^T x = b in place (back substitution).
void back_substitute_transposed(const Tensor& l, Tensor& b) {
  const std::size_t n = l.rows();
  const std::size_t m = b.cols();
  for (std::size_t ii = n; ii-- > 0;) {
    for (std::size_t k = ii + 1; k < n; ++k) {
      const double lki = l.at(k, ii);
      if (lki == 0.0) continue;
      for (std::size_t j = 0; j < m; ++j) b.at(ii, j) -= lki * b.at(k, j);
    }
    const double d = l.at(ii, ii);
    for (std::size_t j = 0; j < m; ++j) b.at(ii, j) /= d;
  }
}

Tensor symmetrized(const Tensor& m) {
  Tensor s(m.shape());
  const std::size_t n = m.rows();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) s.at(i, j) = 0.5 * (m.at(i, j) + m.at(j, i));
  }
  return s;
}

}  // namespace

// ---- Var / Adjoints / Gradients -------------------------------------------

const Tensor& Var::value() const { return graph_->value(id_); }

Adjoints::Adjoints(const Graph& graph)
    : graph_(&graph), grads_(graph.size()), present_(graph.size(), false) {}

Tensor& Adjoints::of(std::size_t id) {
  if (!present_[id]) {
    grads_[id] = Tensor::zeros(graph_->value(id).shape());
    present_[id] = true;
  }
  return grads_[id];
}

bool Adjoints::wants(std::size_t id) const { return graph_->requires_grad(id); }

const Tensor& Gradients::at(std::size_t id) const {
  if (id >= grads_.size() || !is_leaf_[id]) {
    throw std::out_of_range("gradient requested for node " + std::to_string(id) +
                            " which is not a trainable leaf");
  }
  return grads_[id];
}

const Tensor& Gradients::operator[](Var leaf) const { return at(leaf.id()); }

bool Gradients::contains(Var v) const { return v.id() < grads_.size() && is_leaf_[v.id()]; }

// ---- Graph ----------------------------------------------------------------

Var Graph::leaf(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, true, true});
  return {this, nodes_.size() - 1};
}

Var Graph::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, false, false});
  return {this, nodes_.size() - 1};
}

Var Graph::record(Tensor value, std::vector<std::size_t> inputs, Pullback pullback) {
  bool needs = false;
  for (std::size_t id : inputs) needs = needs || nodes_[id].requires_grad;
  nodes_.push_back(Node{std::move(value), std::move(inputs),
                        needs ? std::move(pullback) : Pullback{}, needs, false});
  return {this, nodes_.size() - 1};
}

Gradients Graph::backward(Var output) const {
  require(&output.graph() == this, "backward: output belongs to another graph");
  const Tensor& out = nodes_[output.id()].value;
  require(out.size() == 1, "backward: output must be scalar, got shape " +
                               shape_string(out.shape()));
  Adjoints adj(*this);
  if (nodes_[output.id()].requires_grad) adj.of(output.id())[0] = 1.0;
  for (std::size_t id = output.id() + 1; id-- > 0;) {
    const Node& node = nodes_[id];
    if (node.is_leaf || !node.requires_grad || !adj.has(id)) continue;
    node.pullback(adj.of(id), adj);
  }
  std::vector<Tensor> grads(nodes_.size());
  std::vector<bool> leaf_mask(nodes_.size(), false);
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    if (!nodes_[id].is_leaf) continue;
    leaf_mask[id] = true;
    grads[id] = adj.has(id) ? adj.of(id) : Tensor::zeros(nodes_[id].value.shape());
  }
  return Gradients(std::move(grads), std::move(leaf_mask));
}

// ---- elementwise ----------------------------------------------------------

Var add(Var a, Var b) {
  require_same_graph(a, b);
  Graph& g = a.graph();
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  Tensor out(broadcast_shape(x, y, "add"));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = at_broadcast(x, i) + at_broadcast(y, i);
  const std::size_t ia = a.id(), ib = b.id();
  return g.record(std::move(out), {ia, ib}, [&g, ia, ib](const Tensor& up, Adjoints& adj) {
    accumulate(adj, ia, g, up);
    accumulate(adj, ib, g, up);
  });
}

Var sub(Var a, Var b) {
  require_same_graph(a, b);
  Graph& g = a.graph();
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  Tensor out(broadcast_shape(x, y, "sub"));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = at_broadcast(x, i) - at_broadcast(y, i);
  const std::size_t ia = a.id(), ib = b.id();
  return g.record(std::move(out), {ia, ib}, [&g, ia, ib](const Tensor& up, Adjoints& adj) {
    accumulate(adj, ia, g, up);
    if (adj.wants(ib)) {
      Tensor negated = up;
      for (double& v : negated.data()) v = -v;
      accumulate(adj, ib, g, negated);
    }
  });
}

Var mul(Var a, Var b) {
  require_same_graph(a, b);
  Graph& g = a.graph();
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  Tensor out(broadcast_shape(x, y, "mul"));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = at_broadcast(x, i) * at_broadcast(y, i);
  const std::size_t ia = a.id(), ib = b.id();
  return g.record(std::move(out), {ia, ib}, [&g, ia, ib](const Tensor& up, Adjoints& adj) {
    const Tensor& x = g.value(ia);
    const Tensor& y = g.value(ib);
    if (adj.wants(ia)) {
      Tensor c(up.shape());
      for (std::size_t i = 0; i < up.size(); ++i) c[i] = up[i] * at_broadcast(y, i);
      accumulate(adj, ia, g, c);
    }
    if (adj.wants(ib)) {
      Tensor c(up.shape());
      for (std::size_t i = 0; i < up.size(); ++i) c[i] = up[i] * at_broadcast(x, i);
      accumulate(adj, ib, g, c);
    }
  });
}

Var neg(Var a) { return scale(a, -1.0); }

Var scale(Var a, double factor) {
  return unary(a, [factor](double x) { return factor * x; },
               [factor](double) { return factor; });
}

Var add_scalar(Var a, double offset) {
  return unary(a, [offset](double x) { return x + offset; }, [](double) { return 1.0; });
}

Var exp(Var a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double x) { return std::exp(x); });
}

Var log(Var a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x) { return 1.0 / x; });
}

Var square(Var a) {
  return unary(a, [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
}

Var pow(Var a, double exponent) {
  return unary(
      a, [exponent](double x) { return std::pow(x, exponent); },
      [exponent](double x) { return exponent * std::pow(x, exponent - 1.0); });
}

Var softplus(Var a) {
  return unary(a, [](double x) { return softplus(x); }, [](double x) { return sigmoid(x); });
}

Var elu(Var a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x : std::expm1(x); },
      [](double x) { return x >= 0.0 ? 1.0 : std::exp(x); });
}

Var elu_derivative(Var a) {
  return unary(
      a, [](double x) { return x >= 0.0 ? 1.0 : std::exp(x); },
      [](double x) { return x >= 0.0 ? 0.0 : std::exp(x); });
}

// ---- reductions -----------------------------------------------------------

Var sum(Var a) {
  Graph& g = a.graph();
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  const std::size_t ia = a.id();
  return g.record(Tensor::scalar(total), {ia}, [ia](const Tensor& up, Adjoints& adj) {
    Tensor& ga = adj.of(ia);
    for (double& v : ga.data()) v += up[0];
  });
}

Var mean(Var a) {
  require(a.value().size() > 0, "empty reduction");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var dot(Var a, Var b) {
  require(a.value().size() == b.value().size(), "dot: size mismatch");
  return sum(mul(a, b));
}

Var logsumexp(Var v) {
  require_rank(v, 1, "logsumexp");
  require(v.value().size() > 0, "empty reduction");
  Graph& g = v.graph();
  const double value = logsumexp(v.value().data());
  const std::size_t iv = v.id();
  return g.record(Tensor::scalar(value), {iv}, [&g, iv, value](const Tensor& up, Adjoints& adj) {
    const Tensor& x = g.value(iv);
    Tensor& gv = adj.of(iv);
    for (std::size_t i = 0; i < x.size(); ++i) gv[i] += up[0] * std::exp(x[i] - value);
  });
}

Var logsumexp_rows(Var m) {
  require_rank(m, 2, "logsumexp_rows");
  require(m.value().cols() > 0, "empty reduction");
  Graph& g = m.graph();
  const Tensor& x = m.value();
  Tensor out({x.rows()});
  for (std::size_t i = 0; i < x.rows(); ++i) out[i] = logsumexp(x.row(i));
  const std::size_t im = m.id();
  Tensor saved = out;
  return g.record(std::move(out), {im},
                  [&g, im, saved = std::move(saved)](const Tensor& up, Adjoints& adj) {
                    const Tensor& x = g.value(im);
                    Tensor& gm = adj.of(im);
                    for (std::size_t i = 0; i < x.rows(); ++i) {
                      for (std::size_t j = 0; j < x.cols(); ++j) {
                        gm.at(i, j) += up[i] * std::exp(x.at(i, j) - saved[i]);
                      }
                    }
                  });
}

Var col_sums(Var m) {
  require_rank(m, 2, "col_sums");
  Graph& g = m.graph();
  const Tensor& x = m.value();
  Tensor out({x.cols()});
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < x.cols(); ++j) out[j] += x.at(i, j);
  }
  const std::size_t im = m.id();
  return g.record(std::move(out), {im}, [im](const Tensor& up, Adjoints& adj) {
    Tensor& gm = adj.of(im);
    for (std::size_t i = 0; i < gm.rows(); ++i) {
      for (std::size_t j = 0; j < gm.cols(); ++j) gm.at(i, j) += up[j];
    }
  });
}

Var row_sums(Var m) {
  require_rank(m, 2, "row_sums");
  Graph& g = m.graph();
  const Tensor& x = m.value();
  Tensor out({x.rows()});
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < x.cols(); ++j) out[i] += x.at(i, j);
  }
  const std::size_t im = m.id();
  return g.record(std::move(out), {im}, [im](const Tensor& up, Adjoints& adj) {
    Tensor& gm = adj.of(im);
    for (std::size_t i = 0; i < gm.rows(); ++i) {
      for (std::size_t j = 0; j < gm.cols(); ++j) gm.at(i, j) += up[i];
    }
  });
}

// ---- linear algebra -------------------------------------------------------

Var matmul(Var a, Var b) {
  require_same_graph(a, b);
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  Graph& g = a.graph();
  Tensor out = masslearn::matmul(a.value(), b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return g.record(std::move(out), {ia, ib}, [&g, ia, ib](const Tensor& up, Adjoints& adj) {
    // dA = up * B^T, dB = A^T * up
    if (adj.wants(ia)) masslearn::matmul_accumulate(up, g.value(ib), adj.of(ia), false, true);
    if (adj.wants(ib)) masslearn::matmul_accumulate(g.value(ia), up, adj.of(ib), true, false);
  });
}

Var matmul_nt(Var a, Var b) {
  require_same_graph(a, b);
  require_rank(a, 2, "matmul_nt");
  require_rank(b, 2, "matmul_nt");
  Graph& g = a.graph();
  Tensor out = masslearn::matmul(a.value(), b.value(), false, true);
  const std::size_t ia = a.id(), ib = b.id();
  return g.record(std::move(out), {ia, ib}, [&g, ia, ib](const Tensor& up, Adjoints& adj) {
    // dA = up * B, dB = up^T * A
    if (adj.wants(ia)) masslearn::matmul_accumulate(up, g.value(ib), adj.of(ia), false, false);
    if (adj.wants(ib)) masslearn::matmul_accumulate(up, g.value(ia), adj.of(ib), true, false);
  });
}

Var transpose(Var a) {
  require_rank(a, 2, "transpose");
  Graph& g = a.graph();
  const std::size_t ia = a.id();
  return g.record(masslearn::transpose(a.value()), {ia}, [ia](const Tensor& up, Adjoints& adj) {
    Tensor& ga = adj.of(ia);
    for (std::size_t i = 0; i < up.rows(); ++i) {
      for (std::size_t j = 0; j < up.cols(); ++j) ga.at(j, i) += up.at(i, j);
    }
  });
}

Var add_bias(Var m, Var bias) {
  require_same_graph(m, bias);
  require_rank(m, 2, "add_bias");
  require_rank(bias, 1, "add_bias");
  require(m.value().cols() == bias.value().size(),
          "add_bias: bias length " + std::to_string(bias.value().size()) +
              " does not match width " + std::to_string(m.value().cols()));
  Graph& g = m.graph();
  Tensor out = m.value();
  const Tensor& b = bias.value();
  for (std::size_t i = 0; i < out.rows(); ++i) {
    for (std::size_t j = 0; j < out.cols(); ++j) out.at(i, j) += b[j];
  }
  const std::size_t im = m.id(), ib = bias.id();
  return g.record(std::move(out), {im, ib}, [im, ib](const Tensor& up, Adjoints& adj) {
    if (adj.wants(im)) {
      Tensor& gm = adj.of(im);
      for (std::size_t i = 0; i < up.size(); ++i) gm[i] += up[i];
    }
    if (adj.wants(ib)) {
      Tensor& gb = adj.of(ib);
      for (std::size_t i = 0; i < up.rows(); ++i) {
        for (std::size_t j = 0; j < up.cols(); ++j) gb[j] += up.at(i, j);
      }
    }
  });
}

Var scale_rows(Var m, Var v) {
  require_same_graph(m, v);
  require_rank(m, 2, "scale_rows");
  require(v.value().size() == m.value().rows(), "scale_rows: length mismatch");
  Graph& g = m.graph();
  Tensor out = m.value();
  const Tensor& s = v.value();
  for (std::size_t i = 0; i < out.rows(); ++i) {
    for (std::size_t j = 0; j < out.cols(); ++j) out.at(i, j) *= s[i];
  }
  const std::size_t im = m.id(), iv = v.id();
  return g.record(std::move(out), {im, iv}, [&g, im, iv](const Tensor& up, Adjoints& adj) {
    const Tensor& x = g.value(im);
    const Tensor& s = g.value(iv);
    if (adj.wants(im)) {
      Tensor& gm = adj.of(im);
      for (std::size_t i = 0; i < up.rows(); ++i) {
        for (std::size_t j = 0; j < up.cols(); ++j) gm.at(i, j) += up.at(i, j) * s[i];
      }
    }
    if (adj.wants(iv)) {
      Tensor& gv = adj.of(iv);
      for (std::size_t i = 0; i < up.rows(); ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < up.cols(); ++j) acc += up.at(i, j) * x.at(i, j);
        gv[i] += acc;
      }
    }
  });
}

Var scale_cols(Var m, Var v) {
  require_same_graph(m, v);
  require_rank(m, 2, "scale_cols");
  require(v.value().size() == m.value().cols(), "scale_cols: length mismatch");
  Graph& g = m.graph();
  Tensor out = m.value();
  const Tensor& s = v.value();
  for (std::size_t i = 0; i < out.rows(); ++i) {
    for (std::size_t j = 0; j < out.cols(); ++j) out.at(i, j) *= s[j];
  }
  const std::size_t im = m.id(), iv = v.id();
  return g.record(std::move(out), {im, iv}, [&g, im, iv](const Tensor& up, Adjoints& adj) {
    const Tensor& x = g.value(im);
    const Tensor& s = g.value(iv);
    if (adj.wants(im)) {
      Tensor& gm = adj.of(im);
      for (std::size_t i = 0; i < up.rows(); ++i) {
        for (std::size_t j = 0; j < up.cols(); ++j) gm.at(i, j) += up.at(i, j) * s[j];
      }
    }
    if (adj.wants(iv)) {
      Tensor& gv = adj.of(iv);
      for (std::size_t i = 0; i < up.rows(); ++i) {
        for (std::size_t j = 0; j < up.cols(); ++j) gv[j] += up.at(i, j) * x.at(i, j);
      }
    }
  });
}

Var add_diag(Var m, double value) {
  require_rank(m, 2, "add_diag");
  require(m.value().rows() == m.value().cols(), "add_diag: matrix must be square");
  Graph& g = m.graph();
  Tensor out = m.value();
  for (std::size_t i = 0; i < out.rows(); ++i) out.at(i, i) += value;
  const std::size_t im = m.id();
  return g.record(std::move(out), {im}, [im](const Tensor& up, Adjoints& adj) {
    Tensor& gm = adj.of(im);
    for (std::size_t i = 0; i < up.size(); ++i) gm[i] += up[i];
  });
}

Var diag(Var m) {
  require_rank(m, 2, "diag");
  require(m.value().rows() == m.value().cols(), "diag: matrix must be square");
  Graph& g = m.graph();
  const std::size_t n = m.value().rows();
  Tensor out({n});
  for (std::size_t i = 0; i < n; ++i) out[i] = m.value().at(i, i);
  const std::size_t im = m.id();
  return g.record(std::move(out), {im}, [im](const Tensor& up, Adjoints& adj) {
    Tensor& gm = adj.of(im);
    for (std::size_t i = 0; i < up.size(); ++i) gm.at(i, i) += up[i];
  });
}

Var logdet_spd(Var m) {
  require_rank(m, 2, "logdet_spd");
  require(m.value().rows() == m.value().cols(), "logdet_spd: matrix must be square");
  Graph& g = m.graph();
  const Tensor l = cholesky(symmetrized(m.value()));
  double value = 0.0;
  for (std::size_t i = 0; i < l.rows(); ++i) value += 2.0 * std::log(l.at(i, i));
  const std::size_t im = m.id();
  return g.record(Tensor::scalar(value), {im}, [im, l](const Tensor& up, Adjoints& adj) {
    // d log det M / dM = M^{-1} = L^{-T} L^{-1}
    Tensor inv = Tensor::identity(l.rows());
    forward_substitute(l, inv);
    back_substitute_transposed(l, inv);
    Tensor& gm = adj.of(im);
    for (std::size_t i = 0; i < inv.size(); ++i) gm[i] += up[0] * inv[i];
  });
}

Var tri_solve_lower(Var l, Var b) {
  require_same_graph(l, b);
  require_rank(l, 2, "tri_solve_lower");
  require_rank(b, 2, "tri_solve_lower");
  require(l.value().rows() == l.value().cols() && l.value().rows() == b.value().rows(),
          "tri_solve_lower: incompatible shapes " + shape_string(l.shape()) + " and " +
              shape_string(b.shape()));
  Graph& g = l.graph();
  Tensor x = b.value();
  forward_substitute(l.value(), x);
  const std::size_t il = l.id(), ib = b.id();
  const std::size_t ix = g.size();
  return g.record(std::move(x), {il, ib}, [&g, il, ib, ix](const Tensor& up, Adjoints& adj) {
    // dB = L^{-T} up ; dL = -tril(dB X^T)
    const Tensor& lv = g.value(il);
    const Tensor& xv = g.value(ix);
    Tensor db = up;
    back_substitute_transposed(lv, db);
    if (adj.wants(ib)) {
      Tensor& gb = adj.of(ib);
      for (std::size_t i = 0; i < db.size(); ++i) gb[i] += db[i];
    }
    if (adj.wants(il)) {
      Tensor& gl = adj.of(il);
      const std::size_t n = lv.rows();
      const std::size_t m = xv.cols();
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k <= i; ++k) {
          double acc = 0.0;
          for (std::size_t j = 0; j < m; ++j) acc += db.at(i, j) * xv.at(k, j);
          gl.at(i, k) -= acc;
        }
      }
    }
  });
}

Var chol_from_raw(Var raw) {
  require_rank(raw, 2, "chol_from_raw");
  const Tensor& r = raw.value();
  require(r.rows() == r.cols(), "chol_from_raw: matrix must be square");
  Graph& g = raw.graph();
  const std::size_t n = r.rows();
  Tensor out({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < i; ++j) out.at(i, j) = r.at(i, j);
    out.at(i, i) = softplus(r.at(i, i));
  }
  const std::size_t ir = raw.id();
  return g.record(std::move(out), {ir}, [&g, ir](const Tensor& up, Adjoints& adj) {
    const Tensor& r = g.value(ir);
    Tensor& gr = adj.of(ir);
    const std::size_t n = r.rows();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < i; ++j) gr.at(i, j) += up.at(i, j);
      gr.at(i, i) += up.at(i, i) * sigmoid(r.at(i, i));
    }
  });
}

// ---- indexing -------------------------------------------------------------

Var row(Var m, std::size_t index) {
  require_rank(m, 2, "row");
  require(index < m.value().rows(), "row: index out of range");
  Graph& g = m.graph();
  const auto src = m.value().row(index);
  Tensor out = Tensor::vector(std::vector<double>(src.begin(), src.end()));
  const std::size_t im = m.id();
  return g.record(std::move(out), {im}, [im, index](const Tensor& up, Adjoints& adj) {
    auto dst = adj.of(im).row(index);
    for (std::size_t j = 0; j < up.size(); ++j) dst[j] += up[j];
  });
}

Var select(Var t, std::size_t flat_index) {
  require(flat_index < t.value().size(), "select: index out of range");
  Graph& g = t.graph();
  const std::size_t it = t.id();
  return g.record(Tensor::scalar(t.value()[flat_index]), {it},
                  [it, flat_index](const Tensor& up, Adjoints& adj) {
                    adj.of(it)[flat_index] += up[0];
                  });
}

Var pick(Var m, std::span<const int> columns) {
  require_rank(m, 2, "pick");
  const Tensor& x = m.value();
  require(columns.size() == x.rows(), "pick: need one column index per row");
  std::vector<int> cols(columns.begin(), columns.end());
  Tensor out({x.rows()});
  for (std::size_t i = 0; i < x.rows(); ++i) {
    require(cols[i] >= 0 && static_cast<std::size_t>(cols[i]) < x.cols(),
            "pick: column index " + std::to_string(cols[i]) + " out of range");
    out[i] = x.at(i, static_cast<std::size_t>(cols[i]));
  }
  Graph& g = m.graph();
  const std::size_t im = m.id();
  return g.record(std::move(out), {im},
                  [im, cols = std::move(cols)](const Tensor& up, Adjoints& adj) {
                    Tensor& gm = adj.of(im);
                    for (std::size_t i = 0; i < cols.size(); ++i) {
                      gm.at(i, static_cast<std::size_t>(cols[i])) += up[i];
                    }
                  });
}

Var stack_cols(std::span<const Var> columns) {
  require(!columns.empty(), "stack_cols: no columns");
  Graph& g = columns[0].graph();
  const std::size_t n = columns[0].value().size();
  const std::size_t k = columns.size();
  Tensor out({n, k});
  std::vector<std::size_t> ids;
  ids.reserve(k);
  for (std::size_t j = 0; j < k; ++j) {
    require(&columns[j].graph() == &g, "variables belong to different graphs");
    require_rank(columns[j], 1, "stack_cols");
    require(columns[j].value().size() == n, "stack_cols: length mismatch");
    for (std::size_t i = 0; i < n; ++i) out.at(i, j) = columns[j].value()[i];
    ids.push_back(columns[j].id());
  }
  std::vector<std::size_t> inputs = ids;
  return g.record(std::move(out), std::move(inputs),
                  [ids = std::move(ids)](const Tensor& up, Adjoints& adj) {
                    for (std::size_t j = 0; j < ids.size(); ++j) {
                      if (!adj.wants(ids[j])) continue;
                      Tensor& gc = adj.of(ids[j]);
                      for (std::size_t i = 0; i < gc.size(); ++i) gc[i] += up.at(i, j);
                    }
                  });
}

Var reshape(Var a, Shape shape) {
  require(shape_size(shape) == a.value().size(), "reshape: size mismatch");
  Graph& g = a.graph();
  const std::size_t ia = a.id();
  return g.record(a.value().reshaped(std::move(shape)), {ia},
                  [ia](const Tensor& up, Adjoints& adj) {
                    Tensor& ga = adj.of(ia);
                    for (std::size_t i = 0; i < up.size(); ++i) ga[i] += up[i];
                  });
}

Var slice(Var a, std::size_t offset, std::size_t length) {
  require(offset + length <= a.value().size(), "slice: range out of bounds");
  Graph& g = a.graph();
  const auto src = a.value().data().subspan(offset, length);
  const std::size_t ia = a.id();
  return g.record(Tensor::vector({src.begin(), src.end()}), {ia},
                  [ia, offset](const Tensor& up, Adjoints& adj) {
                    Tensor& ga = adj.of(ia);
                    for (std::size_t i = 0; i < up.size(); ++i) ga[offset + i] += up[i];
                  });
}

// ---- numeric helpers ------------------------------------------------------

double logsumexp(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("empty reduction");
  const double m = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(m)) return m;
  double acc = 0.0;
  for (double x : v) acc += std::exp(x - m);
  return m + std::log(acc);
}

Tensor cholesky(const Tensor& m) {
  if (m.rank() != 2 || m.rows() != m.cols()) {
    throw std::invalid_argument("cholesky: matrix must be square");
  }
  const std::size_t n = m.rows();
  Tensor l({n, n});
  for (std::size_t j = 0; j < n; ++j) {
    double d = m.at(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= l.at(j, k) * l.at(j, k);
    if (!(d > 0.0) || !std::isfinite(d)) throw NotPositiveDefinite();
    const double ljj = std::sqrt(d);
    l.at(j, j) = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = m.at(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l.at(i, k) * l.at(j, k);
      l.at(i, j) = s / ljj;
    }
  }
  return l;
}

double logdet_spd(const Tensor& m) {
  const Tensor l = cholesky(m);
  double value = 0.0;
  for (std::size_t i = 0; i < l.rows(); ++i) value += 2.0 * std::log(l.at(i, i));
  return value;
}

double softplus(double x) { return std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0); }

double softplus_inverse(double y) {
  if (!(y > 0.0)) throw std::invalid_argument("softplus_inverse: argument must be positive");
  // log(exp(y) - 1), stable for large y
  return y + std::log(-std::expm1(-y));
}

double grad_check(const GraphBuilder& build, const Tensor& point, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("grad_check: eps must be positive");
  Tensor analytic;
  {
    Graph g;
    Var x = g.leaf(point);
    Var out = build(g, x);
    if (!out.value().all_finite()) throw std::domain_error("grad_check: non-finite value");
    analytic = g.backward(out)[x];
  }
  auto evaluate = [&](const Tensor& at) {
    Graph g;
    Var x = g.leaf(at);
    const double v = build(g, x).value().item();
    if (!std::isfinite(v)) throw std::domain_error("grad_check: non-finite value");
    return v;
  };
  double worst = 0.0;
  Tensor probe = point;
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double x0 = point[i];
    probe[i] = x0 + eps;
    const double plus = evaluate(probe);
    probe[i] = x0 - eps;
    const double minus = evaluate(probe);
    probe[i] = x0;
    const double numeric = (plus - minus) / (2.0 * eps);
    if (!std::isfinite(analytic[i])) throw std::domain_error("grad_check: non-finite gradient");
    worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i])));
  }
  return worst;
}

}  // namespace masslearn::ad

#pragma once

// Graph builders shared by the gradient-check tests and the acceptance run.

#include "masslearn/objective.hpp"

#include "test_util.hpp"

#include <map>
#include <string>

namespace masslearn::testing {

// Scalar head: sum(v * W) with W fixed by a seed.
ad::Var weighted(ad::Var v, std::uint64_t seed = 99) {
  Rng rng(seed);
  return ad::sum(ad::mul(v, v.graph().constant(random_tensor(v.shape(), rng, 0.5, 1.5))));
}

ad::Var part(ad::Var x, std::size_t offset, Shape shape) {
  const std::size_t n = shape_size(shape);
  return ad::reshape(ad::slice(x, offset, n), std::move(shape));
}

struct OpCase {
  std::size_t size;
  double lo;
  double hi;
  ad::GraphBuilder build;
};

std::map<std::string, OpCase> primitive_cases() {
  std::map<std::string, OpCase> cases;
  cases["add"] = {12, -2, 2, [](ad::Graph&, ad::Var x) { return weighted(ad::add(part(x, 0, {2, 3}), part(x, 6, {2, 3}))); }};
  cases["add_scalar_broadcast"] = {7, -2, 2, [](ad::Graph&, ad::Var x) { return weighted(ad::add(part(x, 0, {2, 3}), part(x, 6, {1}))); }};
  cases["sub"] = {12, -2, 2, [](ad::Graph&, ad::Var x) { return weighted(ad::sub(part(x, 0, {2, 3}), part(x, 6, {2, 3}))); }};
  cases["sub_scalar_broadcast"] = {7, -2, 2, [](ad::Graph&, ad::Var x) { return weighted(ad::sub(part(x, 0, {1}), part(x, 1, {2, 3}))); }};
  cases["mul"] = {12, -2, 2, [](ad::Graph&, ad::Var x) { return weighted(ad::mul(part(x, 0, {2, 3}), part(x, 6, {2, 3}))); }};
  cases["mul_scalar_broadcast"] = {7, -2, 2, [](ad::Graph&, ad::Var x) { return weighted(ad::mul(part(x, 0, {2, 3}), part(x, 6, {1}))); }};
  cases["neg"] = {5, -2, 2, [](ad::Graph&, ad::Var x) { return weighted(ad::neg(x)); }};
  cases["scale"] = {5, -2, 2, [](ad::Graph&, ad::Var x) { return weighted(ad::scale(x, -1.7)); }};
  cases["add_scalar"] = {5, -2, 2, [](ad::Graph&, ad::Var x) { return weighted(ad::add_scalar(x, 0.3)); }};
  cases["exp"] = {5, -2, 2, [](ad::Graph&, ad::Var x) { return weighted(ad::exp(x)); }};
  cases["log"] = {5, 0.2, 3, [](ad::Graph&, ad::Var x) { return weighted(ad::log(x)); }};
  cases["square"] = {5, -2, 2, [](ad::Graph&, ad::Var x) { return weighted(ad::square(x)); }};
  cases["pow"] = {5, 0.2, 3, [](ad::Graph&, ad::Var x) { return weighted(ad::pow(x, -0.5)); }};
  cases["softplus"] = {5, -4, 4, [](ad::Graph&, ad::Var x) { return weighted(ad::softplus(x)); }};
  cases["elu"] = {8, -2, 2, [](ad::Graph&, ad::Var x) { return weighted(ad::elu(x)); }};
  cases["elu_derivative"] = {8, -2, -0.01, [](ad::Graph&, ad::Var x) { return weighted(ad::elu_derivative(x)); }};
  cases["sum"] = {5, -2, 2, [](ad::Graph&, ad::Var x) { return ad::square(ad::sum(x)); }};
  cases["mean"] = {5, -2, 2, [](ad::Graph&, ad::Var x) { return ad::square(ad::mean(x)); }};
  cases["dot"] = {8, -2, 2, [](ad::Graph&, ad::Var x) { return ad::dot(ad::slice(x, 0, 4), ad::slice(x, 4, 4)); }};
  cases["logsumexp"] = {6, -3, 3, [](ad::Graph&, ad::Var x) { return ad::logsumexp(x); }};
  cases["logsumexp_rows"] = {6, -3, 3, [](ad::Graph&, ad::Var x) { return weighted(ad::logsumexp_rows(part(x, 0, {2, 3}))); }};
  cases["col_sums"] = {6, -2, 2, [](ad::Graph&, ad::Var x) { return weighted(ad::square(ad::col_sums(part(x, 0, {2, 3})))); }};
  cases["row_sums"] = {6, -2, 2, [](ad::Graph&, ad::Var x) { return weighted(ad::square(ad::row_sums(part(x, 0, {2, 3})))); }};
  cases["matmul"] = {12, -2, 2, [](ad::Graph&, ad::Var x) { return weighted(ad::matmul(part(x, 0, {2, 3}), part(x, 6, {3, 2}))); }};
  cases["matmul_nt"] = {12, -2, 2, [](ad::Graph&, ad::Var x) { return weighted(ad::matmul_nt(part(x, 0, {2, 3}), part(x, 6, {2, 3}))); }};
  cases["transpose"] = {6, -2, 2, [](ad::Graph&, ad::Var x) { return weighted(ad::transpose(part(x, 0, {2, 3}))); }};
  cases["add_bias"] = {9, -2, 2, [](ad::Graph&, ad::Var x) { return weighted(ad::square(ad::add_bias(part(x, 0, {2, 3}), part(x, 6, {3})))); }};
  cases["scale_rows"] = {8, -2, 2, [](ad::Graph&, ad::Var x) { return weighted(ad::scale_rows(part(x, 0, {2, 3}), part(x, 6, {2}))); }};
  cases["scale_cols"] = {9, -2, 2, [](ad::Graph&, ad::Var x) { return weighted(ad::scale_cols(part(x, 0, {2, 3}), part(x, 6, {3}))); }};
  cases["add_diag"] = {9, -2, 2, [](ad::Graph&, ad::Var x) { return weighted(ad::square(ad::add_diag(part(x, 0, {3, 3}), 0.7))); }};
  cases["diag"] = {9, -2, 2, [](ad::Graph&, ad::Var x) { return weighted(ad::square(ad::diag(part(x, 0, {3, 3})))); }};
  cases["logdet_spd"] = {9, -1, 1, [](ad::Graph&, ad::Var x) {
    ad::Var a = part(x, 0, {3, 3});
    return ad::logdet_spd(ad::add_diag(ad::matmul_nt(a, a), 0.5));
  }};
  cases["logdet_spd_nonsymmetric_input"] = {9, -0.3, 0.3, [](ad::Graph&, ad::Var x) {
    return ad::logdet_spd(ad::add_diag(part(x, 0, {3, 3}), 2.0));
  }};
  cases["tri_solve_lower"] = {15, -1, 1, [](ad::Graph&, ad::Var x) {
    ad::Var l = ad::add_diag(part(x, 0, {3, 3}), 2.5);
    return weighted(ad::tri_solve_lower(l, part(x, 9, {3, 2})));
  }};
  cases["chol_from_raw"] = {9, -2, 2, [](ad::Graph&, ad::Var x) { return weighted(ad::chol_from_raw(part(x, 0, {3, 3}))); }};
  cases["row"] = {6, -2, 2, [](ad::Graph&, ad::Var x) { return weighted(ad::square(ad::row(part(x, 0, {2, 3}), 1))); }};
  cases["select"] = {6, -2, 2, [](ad::Graph&, ad::Var x) { return ad::square(ad::select(x, 4)); }};
  cases["pick"] = {6, -2, 2, [](ad::Graph&, ad::Var x) {
    static const std::vector<int> cols{2, 0};
    return weighted(ad::square(ad::pick(part(x, 0, {2, 3}), cols)));
  }};
  cases["stack_cols"] = {6, -2, 2, [](ad::Graph&, ad::Var x) {
    std::vector<ad::Var> cols{ad::slice(x, 0, 3), ad::slice(x, 3, 3)};
    return weighted(ad::square(ad::stack_cols(cols)));
  }};
  cases["reshape"] = {6, -2, 2, [](ad::Graph&, ad::Var x) { return weighted(ad::square(ad::reshape(x, {3, 2}))); }};
  cases["slice"] = {6, -2, 2, [](ad::Graph&, ad::Var x) { return weighted(ad::square(ad::slice(x, 1, 4))); }};
  return cases;
}

ClassConditionalMixture random_q(std::size_t c, std::size_t k, std::size_t r, std::uint64_t seed) {
  ClassConditionalMixture q = mixture_init(c, k, r, seed, 1.0);
  Rng rng(seed + 7);
  for (auto& comps : q.per_class) {
    for (auto& comp : comps) comp.chol_raw = random_tensor({r, r}, rng, -0.3, 0.3);
  }
  for (auto& l : q.weight_logits) l = random_tensor({k}, rng);
  return q;
}

// Every trainable tensor of the network and mixture as slices of one leaf.
struct Flat {
  MlpVars net;
  MixtureVars q;
};

std::size_t flat_size(const MlpParams& net, const ClassConditionalMixture& q) {
  std::size_t n = 0;
  for (const Tensor* t : net.trainable()) n += t->size();
  for (const Tensor* t : q.trainable()) n += t->size();
  return n;
}

Tensor flatten(const MlpParams& net, const ClassConditionalMixture& q) {
  std::vector<double> v;
  for (const Tensor* t : net.trainable()) v.insert(v.end(), t->data().begin(), t->data().end());
  for (const Tensor* t : q.trainable()) v.insert(v.end(), t->data().begin(), t->data().end());
  return Tensor::vector(std::move(v));
}

Flat unflatten(ad::Var theta, const MlpParams& net, const ClassConditionalMixture& q) {
  std::size_t offset = 0;
  auto take = [&](const Tensor& like) {
    const std::size_t n = like.size();
    ad::Var v = ad::reshape(ad::slice(theta, offset, n), like.shape());
    offset += n;
    return v;
  };
  Flat f;
  for (const auto& layer : net.layers) {
    f.net.weights.push_back(take(layer.weight));
    f.net.biases.push_back(take(layer.bias));
  }
  for (const auto& bn : net.batchnorm) {
    f.net.bn_scale.push_back(take(bn.scale));
    f.net.bn_shift.push_back(take(bn.shift));
  }
  for (const auto& comps : q.per_class) {
    for (const auto& c : comps) {
      f.q.means.push_back(take(c.mean));
      f.q.chol_raw.push_back(take(c.chol_raw));
    }
  }
  for (const auto& l : q.weight_logits) f.q.logits.push_back(take(l));
  return f;
}

}  // namespace masslearn::testing

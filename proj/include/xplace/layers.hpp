#pragma once

#include "xplace/autodiff.hpp"
#include "xplace/rng.hpp"

#include <string>

namespace xplace {

/// y = x * weight + bias, weight is (in x out), bias is (1 x out).
template <class T>
struct LinearT {
  T weight;
  T bias;

  template <class Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    fn(prefix + ".weight", weight);
    fn(prefix + ".bias", bias);
  }
};

/// Pre-norm transformer block: x + MHA(LN(x)), then x + FFN(LN(x)).
template <class T>
struct TransformerBlockT {
  T ln1_gamma, ln1_beta;
  LinearT<T> query, key, value, out;
  T ln2_gamma, ln2_beta;
  LinearT<T> ff1, ff2;

  template <class Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    fn(prefix + ".ln1.gamma", ln1_gamma);
    fn(prefix + ".ln1.beta", ln1_beta);
    query.visit(prefix + ".attn.query", fn);
    key.visit(prefix + ".attn.key", fn);
    value.visit(prefix + ".attn.value", fn);
    out.visit(prefix + ".attn.out", fn);
    fn(prefix + ".ln2.gamma", ln2_gamma);
    fn(prefix + ".ln2.beta", ln2_beta);
    ff1.visit(prefix + ".ff1", fn);
    ff2.visit(prefix + ".ff2", fn);
  }
};

using Linear = LinearT<Matrix>;
using TransformerBlock = TransformerBlockT<Matrix>;

/// Weights ~ N(0, gain^2 / in), zero bias.
Linear init_linear(Eigen::Index in, Eigen::Index out, Rng& rng, double gain = 1.0);
/// `residual_gain` scales the two projections that write back into the
/// residual stream (attention output, second feed-forward layer).
TransformerBlock init_transformer_block(Eigen::Index width, Eigen::Index ff_mult, Rng& rng, double gain = 1.0,
                                        double residual_gain = 1.0);

ad::Var linear(const LinearT<ad::Var>& l, ad::Var x);
ad::Var transformer_block(const TransformerBlockT<ad::Var>& b, ad::Var x, int heads);

/// Fixed sinusoidal table, rows = positions, cols = width.
Matrix sinusoidal_positions(Eigen::Index positions, Eigen::Index width);

/// Records every tensor of `weights` as a tape leaf, producing the
/// Var-typed mirror of the same structure.
template <template <class> class W>
W<ad::Var> bind(ad::Tape& tape, const W<Matrix>& weights, bool requires_grad) {
  // visit() is non-const only because it hands out mutable references; the
  // tensors are read, never written, here.
  std::vector<const Matrix*> src;
  const_cast<W<Matrix>&>(weights).visit("", [&](const std::string&, Matrix& m) { src.push_back(&m); });
  W<ad::Var> out;
  std::size_t i = 0;
  out.visit("", [&](const std::string&, ad::Var& v) { v = tape.leaf(*src[i++], requires_grad); });
  return out;
}

/// Collects d(root)/d(tensor) for every tensor of a bound structure.
template <template <class> class W>
std::vector<Matrix> gradients(const ad::Tape& tape, W<ad::Var>& bound) {
  std::vector<Matrix> out;
  bound.visit("", [&](const std::string&, ad::Var& v) { out.push_back(tape.grad(v.id)); });
  return out;
}

}  // namespace xplace

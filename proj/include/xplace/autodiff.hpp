#pragma once

#include "xplace/numerics.hpp"

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

// Minimal reverse-mode differentiation over dense matrices.
//
// A Tape records every intermediate value together with a closure that
// pushes the output gradient back to its inputs. Nodes are appended in
// topological order, so backward() is a single reverse sweep.
namespace xplace::ad {

class Tape;

struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
};

class Tape {
 public:
  // Receives the output gradient and the output value.
  using Backward = std::function<void(Tape&, const Matrix& out_grad, const Matrix& out_value)>;

  Var leaf(Matrix value, bool requires_grad);
  Var constant(Matrix value) { return leaf(std::move(value), false); }

  /// Appends a computed node. `backward` is dropped when no input needs a
  /// gradient.
  Var push(Matrix value, std::initializer_list<Var> inputs, Backward backward);
  Var push(Matrix value, std::span<const Var> inputs, Backward backward);

  /// Seeds d(root)/d(root) = 1 for a 1x1 root and sweeps the tape.
  void backward(Var root);

  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  /// Gradient of a node after backward(); zeros when nothing reached it.
  Matrix grad(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Adds `g` into the gradient of `v` if it participates in differentiation.
  template <class Expr>
  void accumulate(Var v, const Expr& g) {
    auto& n = nodes_[v.id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    Backward backward;
  };
  std::vector<Node> nodes_;
};

inline const Matrix& Var::value() const { return tape->value(id); }

// Elementwise / linear algebra.
Var matmul(Var a, Var b);
/// a * b^T, common enough in attention to avoid the transpose node.
Var matmul_nt(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var hadamard(Var a, Var b);
Var scale(Var a, double s);
/// a + row broadcast over every row (row is 1 x cols).
Var add_row(Var a, Var row);
/// a + col broadcast over every column (col is rows x 1).
Var add_col(Var a, Var col);
/// Row i of a scaled by col(i, 0).
Var mul_col(Var a, Var col);
/// a / s for a 1x1 node s.
Var div_scalar(Var a, Var s);
Var relu(Var a);
Var exp(Var a);
/// log(1 + exp(x)) elementwise.
Var softplus(Var a);

// Reductions.
/// Column vector of per-row log-sum-exp.
Var lse_rows(Var a);
/// Row vector of per-column log-sum-exp.
Var lse_cols(Var a);
Var softmax_rows(Var a);
Var mean_rows(Var a);
/// Max over the rows of each segment; `ends` are exclusive segment ends.
Var segment_max_rows(Var a, std::span<const std::size_t> ends);
Var sum_all(Var a);

// Shape.
/// Row-major flatten to 1 x (rows * cols).
Var flatten(Var a);
Var slice_cols(Var a, Eigen::Index start, Eigen::Index count);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var row(Var a, Eigen::Index r);

// Normalization.
/// Divides the whole matrix by its Frobenius norm.
Var normalize(Var a);
/// Each row divided by its L2 norm.
Var normalize_rows(Var a);
Var layer_norm_rows(Var x, Var gamma, Var beta, double eps = 1e-5);

/// mean_i -log softmax(logits[i, :])[i] for a square logits matrix.
Var cross_entropy_diag(Var logits);

}  // namespace xplace::ad

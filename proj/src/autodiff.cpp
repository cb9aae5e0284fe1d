#include "xplace/autodiff.hpp"

#include <cmath>

namespace xplace::ad {

namespace {

void require_same_tape(Var a, Var b) {
  if (a.tape != b.tape) throw ConfigError("autodiff: operands recorded on different tapes");
}

void require_shape(bool ok, const char* what) {
  if (!ok) throw ConfigError(std::string("autodiff: shape mismatch in ") + what);
}

}  // namespace

Var Tape::leaf(Matrix value, bool requires_grad) {
  nodes_.push_back(Node{std::move(value), Matrix(), requires_grad, nullptr});
  return Var{this, nodes_.size() - 1};
}

Var Tape::push(Matrix value, std::initializer_list<Var> inputs, Backward backward) {
  return push(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
              std::move(backward));
}

Var Tape::push(Matrix value, std::span<const Var> inputs, Backward backward) {
  bool rg = false;
  for (const Var& v : inputs) rg = rg || nodes_[v.id].requires_grad;
  nodes_.push_back(Node{std::move(value), Matrix(), rg, rg ? std::move(backward) : nullptr});
  return Var{this, nodes_.size() - 1};
}

void Tape::backward(Var root) {
  if (root.tape != this) throw ConfigError("backward: root from another tape");
  if (nodes_[root.id].value.size() != 1) throw ConfigError("backward: root must be 1x1");
  for (auto& n : nodes_) n.grad.resize(0, 0);
  nodes_[root.id].grad = Matrix::Ones(1, 1);
  for (std::size_t i = root.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.size() == 0) continue;
    // Closures only write into earlier nodes, so n.grad stays valid.
    n.backward(*this, n.grad, n.value);
  }
}

Matrix Tape::grad(std::size_t id) const {
  const auto& n = nodes_[id];
  if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

Var matmul(Var a, Var b) {
  require_same_tape(a, b);
  require_shape(a.cols() == b.rows(), "matmul");
  Matrix out = a.value() * b.value();
  return a.tape->push(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g, const Matrix&) {
    if (t.requires_grad(a.id)) t.accumulate(a, g * t.value(b.id).transpose());
    if (t.requires_grad(b.id)) t.accumulate(b, t.value(a.id).transpose() * g);
  });
}

Var matmul_nt(Var a, Var b) {
  require_same_tape(a, b);
  require_shape(a.cols() == b.cols(), "matmul_nt");
  Matrix out = a.value() * b.value().transpose();
  return a.tape->push(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g, const Matrix&) {
    if (t.requires_grad(a.id)) t.accumulate(a, g * t.value(b.id));
    if (t.requires_grad(b.id)) t.accumulate(b, g.transpose() * t.value(a.id));
  });
}

Var transpose(Var a) {
  Matrix out = a.value().transpose();
  return a.tape->push(std::move(out), {a},
                      [a](Tape& t, const Matrix& g, const Matrix&) { t.accumulate(a, g.transpose()); });
}

Var add(Var a, Var b) {
  require_same_tape(a, b);
  require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "add");
  Matrix out = a.value() + b.value();
  return a.tape->push(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g, const Matrix&) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var sub(Var a, Var b) {
  require_same_tape(a, b);
  require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "sub");
  Matrix out = a.value() - b.value();
  return a.tape->push(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g, const Matrix&) {
    t.accumulate(a, g);
    t.accumulate(b, -g);
  });
}

Var hadamard(Var a, Var b) {
  require_same_tape(a, b);
  require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "hadamard");
  Matrix out = a.value().cwiseProduct(b.value());
  return a.tape->push(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g, const Matrix&) {
    if (t.requires_grad(a.id)) t.accumulate(a, g.cwiseProduct(t.value(b.id)));
    if (t.requires_grad(b.id)) t.accumulate(b, g.cwiseProduct(t.value(a.id)));
  });
}

Var scale(Var a, double s) {
  Matrix out = a.value() * s;
  return a.tape->push(std::move(out), {a},
                      [a, s](Tape& t, const Matrix& g, const Matrix&) { t.accumulate(a, g * s); });
}

Var add_row(Var a, Var r) {
  require_same_tape(a, r);
  require_shape(r.rows() == 1 && r.cols() == a.cols(), "add_row");
  Matrix out = a.value().rowwise() + r.value().row(0);
  return a.tape->push(std::move(out), {a, r}, [a, r](Tape& t, const Matrix& g, const Matrix&) {
    t.accumulate(a, g);
    if (t.requires_grad(r.id)) t.accumulate(r, g.colwise().sum());
  });
}

Var add_col(Var a, Var c) {
  require_same_tape(a, c);
  require_shape(c.cols() == 1 && c.rows() == a.rows(), "add_col");
  Matrix out = a.value().colwise() + c.value().col(0);
  return a.tape->push(std::move(out), {a, c}, [a, c](Tape& t, const Matrix& g, const Matrix&) {
    t.accumulate(a, g);
    if (t.requires_grad(c.id)) t.accumulate(c, g.rowwise().sum());
  });
}

Var mul_col(Var a, Var c) {
  require_same_tape(a, c);
  require_shape(c.cols() == 1 && c.rows() == a.rows(), "mul_col");
  Matrix out = c.value().col(0).asDiagonal() * a.value();
  return a.tape->push(std::move(out), {a, c}, [a, c](Tape& t, const Matrix& g, const Matrix&) {
    if (t.requires_grad(a.id)) t.accumulate(a, t.value(c.id).col(0).asDiagonal() * g);
    if (t.requires_grad(c.id)) t.accumulate(c, g.cwiseProduct(t.value(a.id)).rowwise().sum());
  });
}

Var div_scalar(Var a, Var s) {
  require_same_tape(a, s);
  require_shape(s.rows() == 1 && s.cols() == 1, "div_scalar");
  const double d = s.scalar();
  if (d == 0.0) throw DomainError("div_scalar: division by zero");
  Matrix out = a.value() / d;
  return a.tape->push(std::move(out), {a, s}, [a, s, d](Tape& t, const Matrix& g, const Matrix& y) {
    t.accumulate(a, g / d);
    if (t.requires_grad(s.id)) {
      Matrix gs(1, 1);
      gs(0, 0) = -(g.cwiseProduct(y)).sum() / d;
      t.accumulate(s, gs);
    }
  });
}

Var relu(Var a) {
  Matrix out = a.value().cwiseMax(0.0);
  return a.tape->push(std::move(out), {a}, [a](Tape& t, const Matrix& g, const Matrix&) {
    t.accumulate(a, (t.value(a.id).array() > 0.0).select(g, 0.0));
  });
}

Var exp(Var a) {
  Matrix out = a.value().array().exp().matrix();
  return a.tape->push(std::move(out), {a}, [a](Tape& t, const Matrix& g, const Matrix& y) {
    t.accumulate(a, g.cwiseProduct(y));
  });
}

Var softplus(Var a) {
  Matrix out = a.value().unaryExpr([](double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
  });
  return a.tape->push(std::move(out), {a}, [a](Tape& t, const Matrix& g, const Matrix&) {
    const Matrix sig = t.value(a.id).unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
    t.accumulate(a, g.cwiseProduct(sig));
  });
}

namespace {

// Row-wise softmax of m, computed with the row max subtracted.
Matrix softmax_rows_value(const Matrix& m) {
  Matrix out(m.rows(), m.cols());
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double mx = m.row(i).maxCoeff();
    out.row(i) = (m.row(i).array() - mx).exp().matrix();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

Matrix lse_rows_value(const Matrix& m) {
  Matrix out(m.rows(), 1);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double mx = m.row(i).maxCoeff();
    out(i, 0) = mx + std::log((m.row(i).array() - mx).exp().sum());
  }
  return out;
}

}  // namespace

Var lse_rows(Var a) {
  Matrix out = lse_rows_value(a.value());
  return a.tape->push(std::move(out), {a}, [a](Tape& t, const Matrix& g, const Matrix& y) {
    const Matrix& x = t.value(a.id);
    Matrix p = (x.colwise() - y.col(0)).array().exp().matrix();
    t.accumulate(a, g.col(0).asDiagonal() * p);
  });
}

Var lse_cols(Var a) {
  Matrix out = lse_rows_value(a.value().transpose()).transpose();
  return a.tape->push(std::move(out), {a}, [a](Tape& t, const Matrix& g, const Matrix& y) {
    const Matrix& x = t.value(a.id);
    Matrix p = (x.rowwise() - y.row(0)).array().exp().matrix();
    t.accumulate(a, p * g.row(0).asDiagonal());
  });
}

Var softmax_rows(Var a) {
  Matrix out = softmax_rows_value(a.value());
  return a.tape->push(std::move(out), {a}, [a](Tape& t, const Matrix& g, const Matrix& y) {
    const Eigen::VectorXd dot = g.cwiseProduct(y).rowwise().sum();
    t.accumulate(a, y.cwiseProduct(g.colwise() - dot));
  });
}

Var mean_rows(Var a) {
  const double n = static_cast<double>(a.rows());
  Matrix out = a.value().colwise().mean();
  return a.tape->push(std::move(out), {a}, [a, n](Tape& t, const Matrix& g, const Matrix&) {
    t.accumulate(a, g.replicate(t.value(a.id).rows(), 1) / n);
  });
}

Var segment_max_rows(Var a, std::span<const std::size_t> ends) {
  const Matrix& x = a.value();
  if (ends.empty() || ends.back() != static_cast<std::size_t>(x.rows()))
    throw ConfigError("segment_max_rows: segment ends must finish at the row count");
  const auto segs = static_cast<Eigen::Index>(ends.size());
  Matrix out(segs, x.cols());
  std::vector<Eigen::Index> arg(static_cast<std::size_t>(segs * x.cols()));
  std::size_t begin = 0;
  for (Eigen::Index s = 0; s < segs; ++s) {
    const std::size_t end = ends[static_cast<std::size_t>(s)];
    if (end <= begin) throw ConfigError("segment_max_rows: empty or decreasing segment");
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      auto best = static_cast<Eigen::Index>(begin);
      for (auto r = static_cast<Eigen::Index>(begin) + 1; r < static_cast<Eigen::Index>(end); ++r)
        if (x(r, c) > x(best, c)) best = r;
      out(s, c) = x(best, c);
      arg[static_cast<std::size_t>(s * x.cols() + c)] = best;
    }
    begin = end;
  }
  return a.tape->push(std::move(out), {a}, [a, arg = std::move(arg)](Tape& t, const Matrix& g, const Matrix&) {
    const Matrix& x = t.value(a.id);
    Matrix ga = Matrix::Zero(x.rows(), x.cols());
    for (Eigen::Index s = 0; s < g.rows(); ++s)
      for (Eigen::Index c = 0; c < g.cols(); ++c)
        ga(arg[static_cast<std::size_t>(s * g.cols() + c)], c) += g(s, c);
    t.accumulate(a, ga);
  });
}

Var sum_all(Var a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return a.tape->push(std::move(out), {a}, [a](Tape& t, const Matrix& g, const Matrix&) {
    const Matrix& x = t.value(a.id);
    t.accumulate(a, Matrix::Constant(x.rows(), x.cols(), g(0, 0)));
  });
}

Var flatten(Var a) {
  const Matrix& x = a.value();
  Matrix out(1, x.size());
  for (Eigen::Index r = 0; r < x.rows(); ++r) out.block(0, r * x.cols(), 1, x.cols()) = x.row(r);
  const Eigen::Index rows = x.rows(), cols = x.cols();
  return a.tape->push(std::move(out), {a}, [a, rows, cols](Tape& t, const Matrix& g, const Matrix&) {
    Matrix ga(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) ga.row(r) = g.block(0, r * cols, 1, cols);
    t.accumulate(a, ga);
  });
}

Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
  require_shape(start >= 0 && count > 0 && start + count <= a.cols(), "slice_cols");
  Matrix out = a.value().middleCols(start, count);
  return a.tape->push(std::move(out), {a}, [a, start, count](Tape& t, const Matrix& g, const Matrix&) {
    const Matrix& x = t.value(a.id);
    Matrix ga = Matrix::Zero(x.rows(), x.cols());
    ga.middleCols(start, count) = g;
    t.accumulate(a, ga);
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ConfigError("concat_cols: no parts");
  Eigen::Index rows = parts[0].rows(), cols = 0;
  for (const Var& p : parts) {
    require_shape(p.rows() == rows, "concat_cols");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  std::vector<Var> ins(parts.begin(), parts.end());
  return parts[0].tape->push(std::move(out), parts, [ins](Tape& t, const Matrix& g, const Matrix&) {
    Eigen::Index at = 0;
    for (const Var& p : ins) {
      const Eigen::Index c = t.value(p.id).cols();
      t.accumulate(p, g.middleCols(at, c));
      at += c;
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ConfigError("concat_rows: no parts");
  Eigen::Index cols = parts[0].cols(), rows = 0;
  for (const Var& p : parts) {
    require_shape(p.cols() == cols, "concat_rows");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  std::vector<Var> ins(parts.begin(), parts.end());
  return parts[0].tape->push(std::move(out), parts, [ins](Tape& t, const Matrix& g, const Matrix&) {
    Eigen::Index at = 0;
    for (const Var& p : ins) {
      const Eigen::Index r = t.value(p.id).rows();
      t.accumulate(p, g.middleRows(at, r));
      at += r;
    }
  });
}

Var row(Var a, Eigen::Index r) {
  require_shape(r >= 0 && r < a.rows(), "row");
  Matrix out = a.value().row(r);
  return a.tape->push(std::move(out), {a}, [a, r](Tape& t, const Matrix& g, const Matrix&) {
    const Matrix& x = t.value(a.id);
    Matrix ga = Matrix::Zero(x.rows(), x.cols());
    ga.row(r) = g;
    t.accumulate(a, ga);
  });
}

Var normalize(Var a) {
  const double n = a.value().norm();
  if (n == 0.0) throw DomainError("normalize: zero-norm input");
  Matrix out = a.value() / n;
  return a.tape->push(std::move(out), {a}, [a, n](Tape& t, const Matrix& g, const Matrix& y) {
    const double d = g.cwiseProduct(y).sum();
    t.accumulate(a, (g - d * y) / n);
  });
}

Var normalize_rows(Var a) {
  const Matrix& x = a.value();
  Eigen::VectorXd norms = x.rowwise().norm();
  if ((norms.array() == 0.0).any()) throw DomainError("normalize_rows: zero-norm row");
  Matrix out = norms.cwiseInverse().asDiagonal() * x;
  return a.tape->push(std::move(out), {a}, [a, norms](Tape& t, const Matrix& g, const Matrix& y) {
    const Eigen::VectorXd d = g.cwiseProduct(y).rowwise().sum();
    t.accumulate(a, norms.cwiseInverse().asDiagonal() * (g - d.asDiagonal() * y));
  });
}

Var layer_norm_rows(Var x, Var gamma, Var beta, double eps) {
  const Matrix& xv = x.value();
  const Eigen::Index k = xv.cols();
  require_shape(gamma.rows() == 1 && gamma.cols() == k && beta.rows() == 1 && beta.cols() == k,
                "layer_norm_rows");
  Matrix xhat(xv.rows(), k);
  Eigen::VectorXd inv_std(xv.rows());
  for (Eigen::Index i = 0; i < xv.rows(); ++i) {
    const double mu = xv.row(i).mean();
    const double var = (xv.row(i).array() - mu).square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (xv.row(i).array() - mu) * inv_std(i);
  }
  Matrix out = (xhat.array().rowwise() * gamma.value().row(0).array()).matrix();
  out.rowwise() += beta.value().row(0);
  return x.tape->push(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat, inv_std](Tape& t, const Matrix& g, const Matrix&) {
        const auto kd = static_cast<double>(xhat.cols());
        if (t.requires_grad(gamma.id)) t.accumulate(gamma, g.cwiseProduct(xhat).colwise().sum());
        if (t.requires_grad(beta.id)) t.accumulate(beta, g.colwise().sum());
        if (t.requires_grad(x.id)) {
          const Matrix gh = (g.array().rowwise() * t.value(gamma.id).row(0).array()).matrix();
          Matrix gx(gh.rows(), gh.cols());
          for (Eigen::Index i = 0; i < gh.rows(); ++i) {
            const double m1 = gh.row(i).sum() / kd;
            const double m2 = gh.row(i).dot(xhat.row(i)) / kd;
            gx.row(i) = inv_std(i) * (gh.row(i).array() - m1 - xhat.row(i).array() * m2);
          }
          t.accumulate(x, gx);
        }
      });
}

Var cross_entropy_diag(Var logits) {
  const Matrix& l = logits.value();
  require_shape(l.rows() == l.cols() && l.rows() > 0, "cross_entropy_diag");
  const Matrix lse = lse_rows_value(l);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < l.rows(); ++i) loss += lse(i, 0) - l(i, i);
  const double n = static_cast<double>(l.rows());
  Matrix out(1, 1);
  out(0, 0) = loss / n;
  return logits.tape->push(std::move(out), {logits}, [logits, n](Tape& t, const Matrix& g, const Matrix&) {
    Matrix p = softmax_rows_value(t.value(logits.id));
    p.diagonal().array() -= 1.0;
    t.accumulate(logits, p * (g(0, 0) / n));
  });
}

}  // namespace xplace::ad

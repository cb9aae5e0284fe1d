#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>

namespace xplace {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

/// Raised when an input violates a mathematical precondition (empty
/// vector, zero norm, non-positive marginal, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Raised when shapes or configuration values are inconsistent.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// log(sum(exp(v))) with the max subtracted first.
double logsumexp(std::span<const double> v);
double logsumexp(const Eigen::Ref<const Vector>& v);

/// Cosine similarity clamped to [-1, 1].
double cosine(std::span<const double> x, std::span<const double> y);
double cosine(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& y);

/// Returns x / ||x||; throws DomainError on zero norm.
RowVector l2_normalized(const Eigen::Ref<const RowVector>& x);

bool all_finite(const Matrix& m);

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::ptrdiff_t worst_index = -1;
  // Index of the first probe that produced a non-finite value, or -1.
  std::ptrdiff_t non_finite_index = -1;
};

/// Compares an analytic gradient against central differences.
///
/// Error per coordinate is |analytic - fd| / max(1, |fd|); the maximum is
/// returned. `f` must be evaluable at p +- eps * e_i for every i.
GradCheckResult grad_check(const std::function<double(const Vector&)>& f,
                           const Vector& analytic_grad, const Vector& p,
                           double eps = 1e-5);

}  // namespace xplace

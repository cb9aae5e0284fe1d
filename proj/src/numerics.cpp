#include "xplace/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace xplace {

double logsumexp(std::span<const double> v) {
  if (v.empty()) throw DomainError("logsumexp: empty input");
  const double m = *std::max_element(v.begin(), v.end());
  if (v.size() == 1) return m;
  if (!std::isfinite(m)) return m;
  double acc = 0.0;
  for (double x : v) acc += std::exp(x - m);
  return m + std::log(acc);
}

double logsumexp(const Eigen::Ref<const Vector>& v) {
  return logsumexp(std::span<const double>(v.data(), static_cast<std::size_t>(v.size())));
}

double cosine(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DomainError("cosine: length mismatch");
  double xy = 0.0, xx = 0.0, yy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    xy += x[i] * y[i];
    xx += x[i] * x[i];
    yy += y[i] * y[i];
  }
  if (xx == 0.0 || yy == 0.0) throw DomainError("cosine: zero-norm input");
  return std::clamp(xy / (std::sqrt(xx) * std::sqrt(yy)), -1.0, 1.0);
}

double cosine(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& y) {
  return cosine(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())),
                std::span<const double>(y.data(), static_cast<std::size_t>(y.size())));
}

RowVector l2_normalized(const Eigen::Ref<const RowVector>& x) {
  const double n = x.norm();
  if (n == 0.0) throw DomainError("l2_normalized: zero-norm input");
  return x / n;
}

bool all_finite(const Matrix& m) { return m.allFinite(); }

GradCheckResult grad_check(const std::function<double(const Vector&)>& f,
                           const Vector& analytic_grad, const Vector& p, double eps) {
  if (analytic_grad.size() != p.size()) throw ConfigError("grad_check: gradient size mismatch");
  GradCheckResult out;
  Vector probe = p;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    probe[i] = p[i] + eps;
    const double fp = f(probe);
    probe[i] = p[i] - eps;
    const double fm = f(probe);
    probe[i] = p[i];
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      out.non_finite_index = i;
      out.max_rel_error = std::numeric_limits<double>::infinity();
      out.worst_index = i;
      return out;
    }
    const double fd = (fp - fm) / (2.0 * eps);
    const double err = std::abs(analytic_grad[i] - fd) / std::max(1.0, std::abs(fd));
    if (out.worst_index < 0 || err > out.max_rel_error) {
      out.max_rel_error = err;
      out.worst_index = i;
    }
  }
  return out;
}

}  // namespace xplace

#pragma once

// Shared helpers for the unit tests.

#include "xplace/numerics.hpp"
#include "xplace/rng.hpp"

namespace xplace::test {

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double sd = 1.0) {
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = sd * rng.normal();
  return m;
}

inline Matrix unit_rows(Matrix m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) m.row(r).normalize();
  return m;
}

inline double max_abs(const Matrix& m) { return m.cwiseAbs().maxCoeff(); }

}  // namespace xplace::test

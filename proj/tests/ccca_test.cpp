#include "support.hpp"
#include "xplace/ccca.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace xplace;

namespace {

// Independent score: plain loops for attention, fusion and the cosine terms.
namespace ref {

Matrix attend(const Matrix& q, const Matrix& kv) {
  Matrix out = Matrix::Zero(q.rows(), q.cols());
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    std::vector<double> w;
    double z = 0.0;
    for (Eigen::Index j = 0; j < kv.rows(); ++j) {
      w.push_back(std::exp(q.row(i).dot(kv.row(j)) / std::sqrt(static_cast<double>(q.cols()))));
      z += w.back();
    }
    for (Eigen::Index j = 0; j < kv.rows(); ++j) out.row(i) += w[static_cast<std::size_t>(j)] / z * kv.row(j);
  }
  return out;
}

double cos(const RowVector& a, const RowVector& b) { return a.dot(b) / (a.norm() * b.norm()); }

double score(const Matrix& m, const Matrix& qp) {
  const Matrix h = attend(qp, attend(m, qp));
  double s = 0.0;
  for (Eigen::Index r = 0; r < m.rows(); ++r) s += cos(qp.row(r), h.row(r)) + cos(qp.row(r), m.row(r)) + cos(m.row(r), h.row(r));
  return s / static_cast<double>(m.rows());
}

}  // namespace ref

std::vector<int> inverse(const std::vector<int>& p) {
  std::vector<int> inv(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) inv[static_cast<std::size_t>(p[i])] = static_cast<int>(i);
  return inv;
}

}  // namespace

TEST_SUITE("ccca") {

TEST_CASE("cross attention examples") {
  const Matrix one = (Matrix(1, 3) << 0.6, 0.0, 0.8).finished();
  const Matrix other = (Matrix(1, 3) << 1.0, 0.0, 0.0).finished();
  // A single key takes all the weight.
  CHECK(test::max_abs(cross_attention(other, one) - one) < 1e-15);

  const Matrix eye = Matrix::Identity(2, 2);
  const Matrix out = cross_attention(eye, eye);
  const double p = std::exp(1.0 / std::sqrt(2.0)) / (std::exp(1.0 / std::sqrt(2.0)) + 1.0);
  CHECK(out(0, 0) == doctest::Approx(p).epsilon(1e-14));
  CHECK(out(0, 1) == doctest::Approx(1.0 - p).epsilon(1e-14));
  CHECK(out(1, 1) == doctest::Approx(p).epsilon(1e-14));

  // Identity projections change nothing.
  Rng rng(1);
  const Matrix q = test::unit_rows(test::random_matrix(3, 5, rng));
  const Matrix k = test::unit_rows(test::random_matrix(3, 5, rng));
  const AttentionProjections id{Matrix::Identity(5, 5), Matrix::Identity(5, 5), Matrix::Identity(5, 5)};
  CHECK(test::max_abs(cross_attention(q, k, id) - cross_attention(q, k)) < 1e-15);
  CHECK(test::max_abs(cross_attention(q, k) - ref::attend(q, k)) < 1e-14);

  CHECK_THROWS_AS(cross_attention(q, k.topRows(2)), DomainError);
}

TEST_CASE("cascade depth") {
  Rng rng(2);
  const Matrix m = test::unit_rows(test::random_matrix(4, 6, rng));
  const Matrix qp = test::unit_rows(test::random_matrix(4, 6, rng));
  CHECK(test::max_abs(cascaded_fuse(m, qp, 1) - test::unit_rows(ref::attend(m, qp))) < 1e-14);
  CHECK(test::max_abs(cascaded_fuse(m, qp, 2) - test::unit_rows(ref::attend(qp, ref::attend(m, qp)))) < 1e-14);
  CHECK(test::max_abs(cascaded_fuse(m, qp, 3) -
                      test::unit_rows(ref::attend(qp, ref::attend(qp, ref::attend(m, qp))))) < 1e-14);
  CHECK_THROWS_AS(cascaded_fuse(m, qp, 0), ConfigError);
}

TEST_CASE("similarity matches the reference and stays in bounds") {
  Rng rng(3);
  for (int t = 0; t < 50; ++t) {
    const Matrix m = test::unit_rows(test::random_matrix(4, 8, rng));
    const Matrix qp = test::unit_rows(test::random_matrix(4, 8, rng));
    const double s = ccca_similarity(m, qp);
    CHECK(std::abs(s - ref::score(m, qp)) < 1e-13);
    CHECK(s >= -3.0);
    CHECK(s <= 3.0);

    CccaOptions nc;
    nc.scoring = CccaScoring::kNoCascade;
    double plain = 0.0;
    for (int r = 0; r < 4; ++r) plain += ref::cos(m.row(r), qp.row(r));
    CHECK(ccca_similarity(m, qp, nc) == doctest::Approx(plain / 4).epsilon(1e-13));

    CccaOptions ncos;
    ncos.scoring = CccaScoring::kNoCosine;
    CHECK(ccca_similarity(m, qp, ncos) == doctest::Approx(s - plain / 4).epsilon(1e-12));
  }
  // Identical groups hit the maximum.
  const Matrix m = test::unit_rows(test::random_matrix(1, 8, rng));
  CHECK(ccca_similarity(m, m) == doctest::Approx(3.0).epsilon(1e-14));
  CHECK_THROWS_AS(ccca_similarity(m, Matrix::Ones(2, 8)), DomainError);
}

TEST_CASE("single view") {
  const Matrix m = (Matrix(1, 2) << 1.0, 0.0).finished();
  const Matrix q = (Matrix(1, 2) << 0.6, 0.8).finished();
  const auto a = align(m, q);
  CHECK(a.permutation == std::vector<int>{0});
  // The fused row equals q, so the score is 1 + 2 cos(m, q).
  CHECK(a.score == doctest::Approx(1.0 + 2 * 0.6).epsilon(1e-14));
}

TEST_CASE("exhaustive search returns the best of all orderings") {
  Rng rng(4);
  for (int t = 0; t < 20; ++t) {
    const Matrix m = test::unit_rows(test::random_matrix(4, 6, rng));
    const Matrix q = test::unit_rows(test::random_matrix(4, 6, rng));
    const auto a = align(m, q);
    REQUIRE(a.candidates.size() == 24);
    double best = -1e9;
    std::vector<int> perm{0, 1, 2, 3}, arg;
    do {
      const double s = ref::score(m, permute_rows(q, perm));
      if (s > best) {
        best = s;
        arg = perm;
      }
    } while (std::next_permutation(perm.begin(), perm.end()));
    CHECK(a.permutation == arg);
    CHECK(a.score == doctest::Approx(best).epsilon(1e-13));
  }
}

TEST_CASE("recovers the inverse of a shuffle") {
  Rng rng(5);
  int hits = 0;
  for (int t = 0; t < 100; ++t) {
    const Matrix m = test::unit_rows(test::random_matrix(4, 16, rng));
    std::vector<int> sigma{0, 1, 2, 3};
    rng.shuffle(sigma);
    const Matrix noisy = test::unit_rows(m + test::random_matrix(4, 16, rng, 0.05));
    const Matrix q = permute_rows(noisy, sigma);
    const auto a = align(m, q);
    hits += a.permutation == inverse(sigma);
    CHECK(test::max_abs(permute_rows(q, a.permutation) - noisy) < (a.permutation == inverse(sigma) ? 1e-15 : 10.0));
  }
  CHECK(hits == 100);
}

TEST_CASE("ties resolve to the smallest permutation") {
  const Matrix m = Matrix::Ones(3, 2) / std::sqrt(2.0);
  CHECK(align(m, m).permutation == std::vector<int>{0, 1, 2});
}

TEST_CASE("search limits") {
  Rng rng(6);
  const Matrix m = test::unit_rows(test::random_matrix(5, 4, rng));
  CHECK_THROWS_AS(align(m, m), DomainError);
  CccaOptions cyc;
  cyc.search = PermutationSearch::kCyclic;
  const auto a = align(m, permute_rows(m, {2, 3, 4, 0, 1}), cyc);
  CHECK(a.candidates.size() == 5);
  CHECK(a.permutation == inverse({2, 3, 4, 0, 1}));
  CHECK_THROWS_AS(align(m, m.topRows(4)), DomainError);
  CHECK_THROWS_AS(ccca_scoring_from_string("partial"), ConfigError);
}

}  // TEST_SUITE

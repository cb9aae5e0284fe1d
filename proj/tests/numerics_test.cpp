#include "support.hpp"
#include "xplace/hash.hpp"

#include <doctest.h>

#include <cmath>
#include <vector>

using namespace xplace;

TEST_SUITE("numerics") {

TEST_CASE("logsumexp examples") {
  CHECK(logsumexp(std::vector<double>{0.0, 0.0}) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(logsumexp(std::vector<double>{5.0}) == 5.0);

  // Oracle: direct exp-sum-log in extended precision.
  long double direct = std::log(std::exp(1.0L) + std::exp(2.0L) + std::exp(3.0L));
  CHECK(std::abs(logsumexp(std::vector<double>{1.0, 2.0, 3.0}) - static_cast<double>(direct)) < 1e-14);
  CHECK(logsumexp(std::vector<double>{1.0, 2.0, 3.0}) == doctest::Approx(3.407606).epsilon(1e-6));

  CHECK_THROWS_AS(logsumexp(std::vector<double>{}), DomainError);
}

TEST_CASE("logsumexp survives large magnitudes") {
  CHECK(logsumexp(std::vector<double>{1000.0, 1000.0}) == doctest::Approx(1000.0 + std::log(2.0)));
  CHECK(logsumexp(std::vector<double>{-1000.0, -1000.0}) == doctest::Approx(-1000.0 + std::log(2.0)));
}

TEST_CASE("logsumexp shift invariance") {
  Rng rng(3);
  for (int t = 0; t < 200; ++t) {
    Vector v = test::random_matrix(7, 1, rng, 3.0).col(0);
    const double c = 10.0 * rng.normal();
    const Vector shifted = v.array() + c;
    CHECK(std::abs(logsumexp(shifted) - (logsumexp(v) + c)) < 1e-12);
  }
}

TEST_CASE("cosine examples") {
  const std::vector<double> x{0.3, -2.0, 1.5};
  CHECK(cosine(x, x) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(cosine(std::vector<double>{1, 0}, std::vector<double>{0, 1}) == 0.0);
  CHECK(cosine(std::vector<double>{1, 2}, std::vector<double>{2, 1}) == doctest::Approx(4.0 / 5.0).epsilon(1e-15));
  CHECK_THROWS_AS(cosine(std::vector<double>{0, 0}, std::vector<double>{1, 0}), DomainError);
  CHECK_THROWS_AS(cosine(std::vector<double>{1}, std::vector<double>{1, 0}), DomainError);
}

TEST_CASE("cosine is scale invariant and bounded") {
  Rng rng(4);
  for (int t = 0; t < 200; ++t) {
    const Vector x = test::random_matrix(5, 1, rng).col(0);
    const Vector y = test::random_matrix(5, 1, rng).col(0);
    const double alpha = std::exp(3.0 * rng.normal());
    const double c = cosine(x, y);
    CHECK(std::abs(cosine(Vector(alpha * x), y) - c) < 1e-12);
    CHECK(c >= -1.0);
    CHECK(c <= 1.0);
  }
}

TEST_CASE("grad_check on a linear map is exact") {
  const Vector c = (Vector(3) << 0.5, -1.25, 2.0).finished();
  const Vector p = (Vector(3) << 1.0, 2.0, -3.0).finished();
  const auto r = grad_check([&](const Vector& q) { return c.dot(q); }, c, p);
  CHECK(r.max_rel_error <= 1e-10);
  CHECK(r.non_finite_index == -1);
}

TEST_CASE("grad_check on the squared norm") {
  const Vector p = (Vector(2) << 1.0, 2.0).finished();
  const Vector analytic = (Vector(2) << 2.0, 4.0).finished();
  const auto r = grad_check([](const Vector& q) { return q.squaredNorm(); }, analytic, p, 1e-5);
  CHECK(r.max_rel_error < 1e-8);
}

TEST_CASE("grad_check reports a corrupted component") {
  const Vector p = (Vector(2) << 1.0, 2.0).finished();
  // True gradient is (2, 4); the second entry is halved, so |2 - 4| / 4 = 0.5.
  const Vector corrupted = (Vector(2) << 2.0, 2.0).finished();
  const auto r = grad_check([](const Vector& q) { return q.squaredNorm(); }, corrupted, p, 1e-5);
  CHECK(r.max_rel_error == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(r.worst_index == 1);
}

TEST_CASE("grad_check flags non-finite probes") {
  const Vector p = (Vector(2) << 1.0, 0.0).finished();
  const auto r = grad_check([](const Vector& q) { return q[1] > 0.0 ? std::log(-1.0) : 0.0; }, Vector::Zero(2), p);
  CHECK(r.non_finite_index == 1);
}

TEST_CASE("rng streams are reproducible") {
  Rng a(42), b(42), c(43);
  bool differs = false;
  for (int i = 0; i < 1000; ++i) {
    const auto x = a.next_u64();
    CHECK(x == b.next_u64());
    differs = differs || x != c.next_u64();
  }
  CHECK(differs);

  Rng n1(9), n2(9);
  for (int i = 0; i < 101; ++i) CHECK(n1.normal() == n2.normal());

  const Rng root(5);
  CHECK(root.substream(1).next_u64() == root.substream(1).next_u64());
  CHECK(root.substream(1).next_u64() != root.substream(2).next_u64());
}

TEST_CASE("rng ranges") {
  Rng r(1);
  for (int i = 0; i < 10000; ++i) {
    const double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(r.below(7) < 7u);
  }
  Rng s(2);
  double sum = 0.0, sq = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double z = s.normal();
    sum += z;
    sq += z * z;
  }
  CHECK(std::abs(sum / n) < 0.03);
  CHECK(std::abs(sq / n - 1.0) < 0.05);
}

TEST_CASE("fnv1a64 reference vectors") {
  CHECK(hex64(fnv1a64("")) == "cbf29ce484222325");
  CHECK(hex64(fnv1a64("a")) == "af63dc4c8601ec8c");
  CHECK(hex64(fnv1a64("foobar")) == "85944171f73967e8");
}

}  // TEST_SUITE

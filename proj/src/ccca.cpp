#include "xplace/ccca.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace xplace {

std::string_view to_string(CccaScoring s) {
  switch (s) {
    case CccaScoring::kFull: return "full";
    case CccaScoring::kNoCascade: return "no-cascade";
    case CccaScoring::kNoCosine: return "no-cosine";
  }
  return "?";
}

CccaScoring ccca_scoring_from_string(std::string_view s) {
  if (s == "full") return CccaScoring::kFull;
  if (s == "no-cascade") return CccaScoring::kNoCascade;
  if (s == "no-cosine") return CccaScoring::kNoCosine;
  throw ConfigError("unknown ccca scoring: " + std::string(s));
}

std::string_view to_string(PermutationSearch s) { return s == PermutationSearch::kFull ? "full" : "cyclic"; }

PermutationSearch permutation_search_from_string(std::string_view s) {
  if (s == "full") return PermutationSearch::kFull;
  if (s == "cyclic") return PermutationSearch::kCyclic;
  throw ConfigError("unknown permutation search: " + std::string(s));
}

Matrix cross_attention(const ViewGroup& queries, const ViewGroup& keys,
                       const std::optional<AttentionProjections>& proj) {
  if (queries.rows() != keys.rows()) throw DomainError("cross_attention: view count mismatch");
  if (queries.cols() != keys.cols()) throw DomainError("cross_attention: descriptor dim mismatch");
  const Matrix q = proj ? Matrix(queries * proj->query) : queries;
  const Matrix k = proj ? Matrix(keys * proj->key) : keys;
  const Matrix v = proj ? Matrix(keys * proj->value) : keys;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  Matrix logits = q * k.transpose() * inv_sqrt;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double mx = logits.row(r).maxCoeff();
    logits.row(r) = (logits.row(r).array() - mx).exp().matrix();
    logits.row(r) /= logits.row(r).sum();
  }
  return logits * v;
}

Matrix cascaded_fuse(const ViewGroup& m, const ViewGroup& qp, int depth,
                     const std::optional<AttentionProjections>& proj) {
  if (depth < 1) throw ConfigError("cascaded_fuse: depth must be >= 1");
  Matrix h = cross_attention(m, qp, proj);
  for (int layer = 1; layer < depth; ++layer) h = cross_attention(qp, h, proj);
  for (Eigen::Index r = 0; r < h.rows(); ++r) {
    const double n = h.row(r).norm();
    if (n > 0.0) h.row(r) /= n;
  }
  return h;
}

namespace {

double rowwise_mean_cosine(const Matrix& x, const Matrix& y) {
  double acc = 0.0;
  for (Eigen::Index r = 0; r < x.rows(); ++r) acc += cosine(Vector(x.row(r).transpose()), Vector(y.row(r).transpose()));
  return acc / static_cast<double>(x.rows());
}

}  // namespace

double ccca_similarity(const ViewGroup& m, const ViewGroup& qp, const CccaOptions& options) {
  if (m.rows() != qp.rows() || m.cols() != qp.cols()) throw DomainError("ccca_similarity: group shape mismatch");
  if (options.scoring == CccaScoring::kNoCascade) return rowwise_mean_cosine(qp, m);
  const Matrix h = cascaded_fuse(m, qp, options.depth, options.projections);
  double score = rowwise_mean_cosine(qp, h) + rowwise_mean_cosine(m, h);
  if (options.scoring == CccaScoring::kFull) score += rowwise_mean_cosine(qp, m);
  return score;
}

ViewGroup permute_rows(const ViewGroup& q, const std::vector<int>& permutation) {
  ViewGroup out(q.rows(), q.cols());
  for (Eigen::Index r = 0; r < q.rows(); ++r) out.row(r) = q.row(permutation[static_cast<std::size_t>(r)]);
  return out;
}

Alignment align(const ViewGroup& m, const ViewGroup& q, const CccaOptions& options) {
  if (m.rows() != q.rows()) throw DomainError("align: view count mismatch");
  const int v = static_cast<int>(q.rows());
  if (v < 1) throw DomainError("align: empty group");
  if (options.search == PermutationSearch::kFull && v > 4)
    throw DomainError("align: full permutation search is limited to 4 views");

  std::vector<std::vector<int>> candidates;
  std::vector<int> perm(static_cast<std::size_t>(v));
  std::iota(perm.begin(), perm.end(), 0);
  if (options.search == PermutationSearch::kFull) {
    do {
      candidates.push_back(perm);
    } while (std::next_permutation(perm.begin(), perm.end()));
  } else {
    // Rotations by 0..V-1 are already in lexicographic order.
    for (int s = 0; s < v; ++s) {
      for (int r = 0; r < v; ++r) perm[static_cast<std::size_t>(r)] = (r + s) % v;
      candidates.push_back(perm);
    }
  }

  Alignment out;
  bool first = true;
  for (auto& c : candidates) {
    const double s = ccca_similarity(m, permute_rows(q, c), options);
    if (first || s > out.score) {
      out.score = s;
      out.permutation = c;
      first = false;
    }
    out.candidates.emplace_back(std::move(c), s);
  }
  return out;
}

}  // namespace xplace

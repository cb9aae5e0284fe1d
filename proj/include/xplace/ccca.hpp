#pragma once

#include "xplace/numerics.hpp"

#include <optional>
#include <string_view>
#include <vector>

namespace xplace {

/// V descriptors (rows) of one location, one per view slot. Rows are unit
/// norm; 1 <= V <= 4 for alignment.
using ViewGroup = Matrix;

/// Optional learned projections applied to queries, keys and values
/// (each D x D). Attention is parameter-free without them.
struct AttentionProjections {
  Matrix query, key, value;
};

/// Which terms enter the alignment score.
enum class CccaScoring {
  kFull,       // cos(Qp, H) + cos(Qp, M) + cos(M, H)
  kNoCascade,  // cos(Qp, M)
  kNoCosine,   // cos(Qp, H) + cos(M, H)
};

enum class PermutationSearch { kFull, kCyclic };

std::string_view to_string(CccaScoring s);
CccaScoring ccca_scoring_from_string(std::string_view s);
std::string_view to_string(PermutationSearch s);
PermutationSearch permutation_search_from_string(std::string_view s);

struct CccaOptions {
  int depth = 2;
  CccaScoring scoring = CccaScoring::kFull;
  PermutationSearch search = PermutationSearch::kFull;
  std::optional<AttentionProjections> projections;
};

/// Row r = softmax(q_r . K^T / sqrt(D)) . V with K = V = `keys`.
Matrix cross_attention(const ViewGroup& queries, const ViewGroup& keys,
                       const std::optional<AttentionProjections>& proj = std::nullopt);

/// Layer 1 attends from M into Qp; each further layer attends from Qp into
/// the previous output. Output rows are L2-normalized.
Matrix cascaded_fuse(const ViewGroup& m, const ViewGroup& qp, int depth = 2,
                     const std::optional<AttentionProjections>& proj = std::nullopt);

/// Mean over view rows of the selected cosine terms; within [-3, 3].
double ccca_similarity(const ViewGroup& m, const ViewGroup& qp, const CccaOptions& options = {});

struct Alignment {
  /// Row r of M pairs with row permutation[r] of Q.
  std::vector<int> permutation;
  double score = 0.0;
  std::vector<std::pair<std::vector<int>, double>> candidates;
};

/// Rows of `q` reordered so that row r is q[permutation[r]].
ViewGroup permute_rows(const ViewGroup& q, const std::vector<int>& permutation);

/// Searches orderings of Q for the one most similar to M. Ties go to the
/// lexicographically smallest permutation.
Alignment align(const ViewGroup& m, const ViewGroup& q, const CccaOptions& options = {});

}  // namespace xplace

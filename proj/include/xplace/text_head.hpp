#pragma once

#include "xplace/layers.hpp"

#include <string_view>
#include <vector>

namespace xplace {

/// Frozen-backbone token embeddings of one description, split into
/// sentences. `sentence_ends` holds exclusive end indices; the last one
/// equals the token count.
struct TextTokenSequence {
  Matrix tokens;  // token_count x token_dim
  std::vector<std::size_t> sentence_ends;

  std::size_t token_count() const { return static_cast<std::size_t>(tokens.rows()); }
  std::size_t sentence_count() const { return sentence_ends.size(); }
  /// Throws ConfigError when the invariants above are violated.
  void validate() const;

  friend bool operator==(const TextTokenSequence&, const TextTokenSequence&) = default;
};

/// Where transformer blocks sit relative to the sentence MLP.
/// kMlp: pool -> MLP.  kMlpThenTransformer (default): pool -> MLP -> block.
/// kTransformerThenMlp: pool -> block -> MLP.  kBoth: pool -> block -> MLP -> block.
enum class TextHeadVariant { kMlp, kMlpThenTransformer, kTransformerThenMlp, kBoth };

std::string_view to_string(TextHeadVariant v);
TextHeadVariant text_head_variant_from_string(std::string_view s);

struct TextHeadConfig {
  Eigen::Index token_dim = 32;
  Eigen::Index hidden_dim = 64;
  Eigen::Index output_dim = 64;
  int heads = 4;
  Eigen::Index ff_mult = 4;
  TextHeadVariant variant = TextHeadVariant::kMlpThenTransformer;
  double init_gain = 0.05;
  double residual_gain = 0.1;
  double positional_scale = 0.001;
};

template <class T>
struct TextHeadWeights {
  LinearT<T> mlp1, mlp2;
  // Block over pooled sentence vectors at token width (used by T1 variants).
  TransformerBlockT<T> pre;
  // Block over MLP outputs at descriptor width.
  TransformerBlockT<T> post;

  template <class Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    mlp1.visit(prefix + "mlp1", fn);
    mlp2.visit(prefix + "mlp2", fn);
    pre.visit(prefix + "pre_block", fn);
    post.visit(prefix + "post_block", fn);
  }
};

struct TextHeadParams {
  TextHeadConfig config;
  TextHeadWeights<Matrix> weights;

  static TextHeadParams init(const TextHeadConfig& config, Rng& rng);
};

/// Elementwise max over each sentence's tokens; one row per sentence.
Matrix sentence_maxpool(const TextTokenSequence& seq);

/// Recorded forward pass; the returned node is a unit-norm 1 x D row.
ad::Var encode_text(ad::Tape& tape, const TextHeadWeights<ad::Var>& w, const TextHeadConfig& config,
                    const TextTokenSequence& seq);

/// Inference convenience wrapper around the recorded pass.
RowVector encode_text(const TextTokenSequence& seq, const TextHeadParams& params);

}  // namespace xplace

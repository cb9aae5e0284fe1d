#include "xplace/text_head.hpp"

#include <array>
#include <utility>

namespace xplace {

namespace {
constexpr std::array<std::pair<TextHeadVariant, std::string_view>, 4> kVariantNames{{
    {TextHeadVariant::kMlp, "M"},
    {TextHeadVariant::kMlpThenTransformer, "M+T2"},
    {TextHeadVariant::kTransformerThenMlp, "T1+M"},
    {TextHeadVariant::kBoth, "T1+M+T2"},
}};
}  // namespace

std::string_view to_string(TextHeadVariant v) {
  for (const auto& [k, name] : kVariantNames)
    if (k == v) return name;
  return "?";
}

TextHeadVariant text_head_variant_from_string(std::string_view s) {
  for (const auto& [k, name] : kVariantNames)
    if (name == s) return k;
  throw ConfigError("unknown text head variant: " + std::string(s));
}

void TextTokenSequence::validate() const {
  if (tokens.rows() < 1) throw ConfigError("text sequence has no tokens");
  if (sentence_ends.empty()) throw ConfigError("text sequence has no sentences");
  std::size_t prev = 0;
  for (std::size_t e : sentence_ends) {
    if (e <= prev) throw ConfigError("sentence ends must be strictly increasing and positive");
    prev = e;
  }
  if (sentence_ends.back() != token_count())
    throw ConfigError("last sentence end must equal the token count");
  if (!tokens.allFinite()) throw ConfigError("text tokens must be finite");
}

TextHeadParams TextHeadParams::init(const TextHeadConfig& config, Rng& rng) {
  if (config.token_dim < 1 || config.hidden_dim < 1 || config.output_dim < 1)
    throw ConfigError("text head dimensions must be positive");
  TextHeadParams p;
  p.config = config;
  p.weights.mlp1 = init_linear(config.token_dim, config.hidden_dim, rng, config.init_gain);
  p.weights.mlp2 = init_linear(config.hidden_dim, config.output_dim, rng, config.init_gain);
  p.weights.pre = init_transformer_block(config.token_dim, config.ff_mult, rng, config.init_gain, config.residual_gain);
  p.weights.post = init_transformer_block(config.output_dim, config.ff_mult, rng, config.init_gain, config.residual_gain);
  return p;
}

Matrix sentence_maxpool(const TextTokenSequence& seq) {
  seq.validate();
  Matrix out(static_cast<Eigen::Index>(seq.sentence_count()), seq.tokens.cols());
  std::size_t begin = 0;
  for (std::size_t s = 0; s < seq.sentence_count(); ++s) {
    const std::size_t end = seq.sentence_ends[s];
    out.row(static_cast<Eigen::Index>(s)) =
        seq.tokens.middleRows(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(end - begin))
            .colwise()
            .maxCoeff();
    begin = end;
  }
  return out;
}

ad::Var encode_text(ad::Tape& tape, const TextHeadWeights<ad::Var>& w, const TextHeadConfig& config,
                    const TextTokenSequence& seq) {
  seq.validate();
  if (seq.tokens.cols() != config.token_dim)
    throw ConfigError("text token dim " + std::to_string(seq.tokens.cols()) + " does not match head input " +
                      std::to_string(config.token_dim));
  const auto sentences = static_cast<Eigen::Index>(seq.sentence_count());
  const bool pre = config.variant == TextHeadVariant::kTransformerThenMlp || config.variant == TextHeadVariant::kBoth;
  const bool post = config.variant == TextHeadVariant::kMlpThenTransformer || config.variant == TextHeadVariant::kBoth;

  ad::Var x = ad::segment_max_rows(tape.constant(seq.tokens), seq.sentence_ends);
  if (pre) {
    x = ad::add(x, tape.constant(config.positional_scale * sinusoidal_positions(sentences, config.token_dim)));
    x = transformer_block(w.pre, x, config.heads);
  }
  x = linear(w.mlp2, ad::relu(linear(w.mlp1, x)));
  if (post) {
    x = ad::add(x, tape.constant(config.positional_scale * sinusoidal_positions(sentences, config.output_dim)));
    x = transformer_block(w.post, x, config.heads);
  }
  return ad::normalize(ad::mean_rows(x));
}

RowVector encode_text(const TextTokenSequence& seq, const TextHeadParams& params) {
  ad::Tape tape;
  const auto bound = bind(tape, params.weights, false);
  return encode_text(tape, bound, params.config, seq).value().row(0);
}

}  // namespace xplace

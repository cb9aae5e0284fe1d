#include "xplace/config_io.hpp"

#include "xplace/hash.hpp"

#include <set>

namespace xplace {

using nlohmann::json;

ConfigReader::ConfigReader(const json& j, std::string section) : j_(j), section_(std::move(section)) {
  if (!j_.is_object()) throw ConfigError(section_ + ": expected a JSON object");
}

void ConfigReader::fail(const std::string& key, const std::exception& e) const {
  throw ConfigError(section_ + "." + key + ": " + e.what());
}

void ConfigReader::finish() const {
  for (const auto& [key, value] : j_.items())
    if (!seen_.count(key)) throw ConfigError(section_ + ": unknown key \"" + key + "\"");
}

void to_json(json& j, const GenConfig& c) {
  j = json{{"grid_rows", c.grid_rows},
           {"grid_cols", c.grid_cols},
           {"spacing_m", c.spacing_m},
           {"latent_dim", c.latent_dim},
           {"views", c.views},
           {"image_tokens", c.image_tokens},
           {"image_dim", c.image_dim},
           {"text_tokens", c.text_tokens},
           {"text_dim", c.text_dim},
           {"sentence_len", c.sentence_len},
           {"image_maps", c.image_maps},
           {"sentence_focus", c.sentence_focus},
           {"image_distractors", c.image_distractors},
           {"distractor_scale", c.distractor_scale},
           {"image_noise", c.image_noise},
           {"text_noise", c.text_noise},
           {"correlation", c.correlation},
           {"view_offset", c.view_offset},
           {"view_sharing", c.view_sharing},
           {"global_token", c.global_token},
           {"seed", c.seed}};
}

void from_json(const json& j, GenConfig& c) {
  ConfigReader r(j, "gen");
  r("grid_rows", c.grid_rows);
  r("grid_cols", c.grid_cols);
  r("spacing_m", c.spacing_m);
  r("latent_dim", c.latent_dim);
  r("views", c.views);
  r("image_tokens", c.image_tokens);
  r("image_dim", c.image_dim);
  r("text_tokens", c.text_tokens);
  r("text_dim", c.text_dim);
  r("sentence_len", c.sentence_len);
  r("image_maps", c.image_maps);
  r("sentence_focus", c.sentence_focus);
  r("image_distractors", c.image_distractors);
  r("distractor_scale", c.distractor_scale);
  r("image_noise", c.image_noise);
  r("text_noise", c.text_noise);
  r("correlation", c.correlation);
  r("view_offset", c.view_offset);
  r("view_sharing", c.view_sharing);
  r("global_token", c.global_token);
  r("seed", c.seed);
  r.finish();
}

void to_json(json& j, const TextHeadConfig& c) {
  j = json{{"token_dim", c.token_dim},
           {"hidden_dim", c.hidden_dim},
           {"output_dim", c.output_dim},
           {"heads", c.heads},
           {"ff_mult", c.ff_mult},
           {"variant", std::string(to_string(c.variant))},
           {"init_gain", c.init_gain},
           {"residual_gain", c.residual_gain},
           {"positional_scale", c.positional_scale}};
}

void from_json(const json& j, TextHeadConfig& c) {
  ConfigReader r(j, "model.text");
  r("token_dim", c.token_dim);
  r("hidden_dim", c.hidden_dim);
  r("output_dim", c.output_dim);
  r("heads", c.heads);
  r("ff_mult", c.ff_mult);
  r.parse("variant", c.variant, text_head_variant_from_string);
  r("init_gain", c.init_gain);
  r("residual_gain", c.residual_gain);
  r("positional_scale", c.positional_scale);
  r.finish();
}

void to_json(json& j, const AggregatorConfig& c) {
  j = json{{"token_dim", c.token_dim},
           {"hidden_dim", c.hidden_dim},
           {"clusters", c.clusters},
           {"cluster_dim", c.cluster_dim},
           {"reg", c.reg},
           {"scores_are_affinity", c.scores_are_affinity},
           {"learnable_temperature", c.learnable_temperature},
           {"train_iters", c.train_iters},
           {"eval_iters", c.eval_iters},
           {"eval_tol", c.eval_tol},
           {"aggregation", std::string(to_string(c.aggregation))},
           {"init_gain", c.init_gain}};
}

void from_json(const json& j, AggregatorConfig& c) {
  ConfigReader r(j, "model.image");
  r("token_dim", c.token_dim);
  r("hidden_dim", c.hidden_dim);
  r("clusters", c.clusters);
  r("cluster_dim", c.cluster_dim);
  r("reg", c.reg);
  r("scores_are_affinity", c.scores_are_affinity);
  r("learnable_temperature", c.learnable_temperature);
  r("train_iters", c.train_iters);
  r("eval_iters", c.eval_iters);
  r("eval_tol", c.eval_tol);
  r.parse("aggregation", c.aggregation, aggregation_from_string);
  r("init_gain", c.init_gain);
  r.finish();
}

void to_json(json& j, const ModelConfig& c) { j = json{{"text", c.text}, {"image", c.image}}; }

void from_json(const json& j, ModelConfig& c) {
  ConfigReader r(j, "model");
  r("text", c.text);
  r("image", c.image);
  r.finish();
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"batch_size", c.batch_size},
           {"learning_rate", c.learning_rate},
           {"epochs", c.epochs},
           {"contrastive_temperature", c.contrastive_temperature},
           {"direction", std::string(to_string(c.direction))},
           {"strategy", std::string(to_string(c.strategy))},
           {"seed", c.seed}};
}

void from_json(const json& j, TrainConfig& c) {
  ConfigReader r(j, "train");
  r("batch_size", c.batch_size);
  r("learning_rate", c.learning_rate);
  r("epochs", c.epochs);
  r("contrastive_temperature", c.contrastive_temperature);
  r.parse("direction", c.direction, loss_direction_from_string);
  r.parse("strategy", c.strategy, train_strategy_from_string);
  r("seed", c.seed);
  r.finish();
}

void to_json(json& j, const CccaOptions& c) {
  j = json{{"depth", c.depth},
           {"scoring", std::string(to_string(c.scoring))},
           {"search", std::string(to_string(c.search))}};
}

void from_json(const json& j, CccaOptions& c) {
  ConfigReader r(j, "ccca");
  r("depth", c.depth);
  r.parse("scoring", c.scoring, ccca_scoring_from_string);
  r.parse("search", c.search, permutation_search_from_string);
  r.finish();
}

ModelConfig model_config_for(const GenConfig& gen, ModelConfig base) {
  base.text.token_dim = gen.text_dim;
  base.image.token_dim = gen.image_dim;
  base.text.output_dim = base.image.descriptor_dim();
  return base;
}

std::string config_hash(const json& j) { return hex64(fnv1a64(j.dump())); }

}  // namespace xplace

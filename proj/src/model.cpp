#include "xplace/model.hpp"

namespace xplace {

void ModelConfig::validate() const {
  if (text.output_dim != image.descriptor_dim())
    throw ConfigError("text descriptor dim " + std::to_string(text.output_dim) + " != image descriptor dim " +
                      std::to_string(image.descriptor_dim()));
  if (text.output_dim % text.heads != 0 || text.token_dim % text.heads != 0)
    throw ConfigError("text head widths must be divisible by the attention head count");
}

ModelParams ModelParams::init(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  Rng text_rng = rng.substream(1);
  Rng image_rng = rng.substream(2);
  ModelParams p;
  p.config = config;
  p.text = TextHeadParams::init(config.text, text_rng);
  p.image = AggregatorParams::init(config.image, image_rng);
  return p;
}

void ModelParams::set_weights(ModelWeights<Matrix> w) {
  text.weights = std::move(w.text);
  image.weights = std::move(w.image);
}

std::vector<std::pair<std::string, Matrix*>> ModelParams::named_tensors() {
  std::vector<std::pair<std::string, Matrix*>> out;
  text.weights.visit("text.", [&](const std::string& name, Matrix& m) { out.emplace_back(name, &m); });
  image.weights.visit("image.", [&](const std::string& name, Matrix& m) { out.emplace_back(name, &m); });
  return out;
}

std::vector<std::pair<std::string, const Matrix*>> ModelParams::named_tensors() const {
  std::vector<std::pair<std::string, const Matrix*>> out;
  for (auto& [name, m] : const_cast<ModelParams*>(this)->named_tensors()) out.emplace_back(name, m);
  return out;
}

}  // namespace xplace

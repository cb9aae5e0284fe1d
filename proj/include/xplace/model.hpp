#pragma once

#include "xplace/image_aggregator.hpp"
#include "xplace/text_head.hpp"

#include <string>
#include <vector>

namespace xplace {

struct ModelConfig {
  TextHeadConfig text;
  AggregatorConfig image;

  /// Throws ConfigError unless both heads emit descriptors of equal width.
  void validate() const;
};

template <class T>
struct ModelWeights {
  TextHeadWeights<T> text;
  AggregatorWeights<T> image;

  template <class Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    text.visit(prefix + "text.", fn);
    image.visit(prefix + "image.", fn);
  }
};

/// All trainable tensors of both heads.
struct ModelParams {
  static constexpr int kVersion = 1;

  ModelConfig config;
  TextHeadParams text;
  AggregatorParams image;

  static ModelParams init(const ModelConfig& config, std::uint64_t seed);

  Eigen::Index descriptor_dim() const { return config.image.descriptor_dim(); }

  ModelWeights<Matrix> weights() const { return {text.weights, image.weights}; }
  void set_weights(ModelWeights<Matrix> w);

  /// (name, tensor) pairs in a fixed order; the checkpoint layout.
  std::vector<std::pair<std::string, const Matrix*>> named_tensors() const;
  std::vector<std::pair<std::string, Matrix*>> named_tensors();
};

}  // namespace xplace

#pragma once

#include "xplace/dataset.hpp"
#include "xplace/model.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace xplace {

enum class LossDirection { kTextToImage, kSymmetric };
enum class TrainStrategy { kSingle, kGroup };

std::string_view to_string(LossDirection d);
LossDirection loss_direction_from_string(std::string_view s);
std::string_view to_string(TrainStrategy s);
TrainStrategy train_strategy_from_string(std::string_view s);

struct TrainConfig {
  int batch_size = 64;
  double learning_rate = 1e-4;
  int epochs = 10;
  double contrastive_temperature = 0.07;
  LossDirection direction = LossDirection::kSymmetric;
  TrainStrategy strategy = TrainStrategy::kSingle;
  std::uint64_t seed = 1;

  void validate() const;
};

/// Mean InfoNCE over anchors with cosine similarity. Rows of the two
/// matrices are paired descriptors.
double info_nce(const Matrix& text, const Matrix& image, double temperature,
                LossDirection direction = LossDirection::kSymmetric);

/// Recorded loss on unit-norm descriptor rows.
ad::Var info_nce(ad::Var text, ad::Var image, double temperature, LossDirection direction);

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<Matrix> m, v;
  long step = 0;
};

/// Bias-corrected Adam update. A non-finite gradient aborts the step
/// before any tensor changes; the error names the offending tensor.
void adam_step(std::span<Matrix* const> params, std::span<const Matrix> grads, std::span<const std::string> names,
               AdamState& state, const AdamConfig& config);

struct EpochRecord {
  double mean_loss = 0.0;
  double val_recall = 0.0;  // recall@1 at 5 m on the validation split
  double seconds = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::string config_hash;
  int best_epoch = -1;

  /// Hash over losses and recalls (wall clock excluded).
  std::string digest() const;
};

struct TrainResult {
  ModelParams best;   // highest validation recall
  ModelParams final;  // after the last epoch
  AdamState optimizer;
  TrainHistory history;
};

struct TrainHooks {
  // Called after every epoch with the current parameters.
  std::function<void(int epoch, const ModelParams&, const AdamState&, const TrainHistory&)> on_epoch;
  // Skip validation (val_recall stays 0); useful for quick experiments.
  bool skip_validation = false;
};

/// Mean loss of one batch and the gradient of every tensor in
/// `named_tensors()` order.
struct BatchGradient {
  double loss = 0.0;
  std::vector<Matrix> grads;
};

/// Single strategy: one element per (location, view) pair.
BatchGradient batch_gradient(const ModelParams& params, std::span<const ViewData* const> pairs,
                             const TrainConfig& config);
/// Group strategy: one element per location, views concatenated.
BatchGradient group_batch_gradient(const ModelParams& params, std::span<const LocationEntry* const> locations,
                                   const TrainConfig& config);

TrainResult train(const std::vector<LocationEntry>& train_set, const std::vector<LocationEntry>& val_set,
                  const ModelConfig& model_config, const TrainConfig& config, const TrainHooks& hooks = {});

/// Checkpoint container; see docs/checkpoint_format.md.
void save_checkpoint(const std::filesystem::path& path, const ModelParams& params, std::string_view config_hash,
                     const AdamState* optimizer = nullptr);
struct Checkpoint {
  std::string config_hash;
  std::string metadata;  // JSON; "model" holds the ModelConfig
  std::vector<std::pair<std::string, Matrix>> tensors;
  std::optional<AdamState> optimizer;
};
Checkpoint read_checkpoint(const std::filesystem::path& path);
/// Copies checkpoint tensors into `params`, checking names and shapes.
void load_into(const Checkpoint& ckpt, ModelParams& params);

}  // namespace xplace

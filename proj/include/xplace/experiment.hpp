#pragma once

#include "xplace/dataset.hpp"
#include "xplace/pipeline.hpp"
#include "xplace/trainer.hpp"

#include <json.hpp>

#include <array>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace xplace {

/// Everything needed to go from a generator seed to a recall table.
struct ExperimentConfig {
  GenConfig gen;
  ModelConfig model;
  TrainConfig train;
  std::array<double, 3> ratios{5.0 / 7.0, 1.0 / 7.0, 1.0 / 7.0};
  std::uint64_t split_seed = 11;
  EvalSettings eval;

  /// Same experiment with every seed (generator, split, init, shuffles)
  /// derived from `seed`.
  ExperimentConfig with_seed(std::uint64_t seed) const;
  std::string hash() const;
};

void to_json(nlohmann::json& j, const EvalSettings& s);
void from_json(const nlohmann::json& j, EvalSettings& s);
/// Sections: gen, model, train, split {ratios, seed}, eval.
void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);

struct PreparedData {
  std::vector<LocationEntry> train, val, test;
};

PreparedData prepare(const Dataset& split_dataset);
PreparedData prepare(const ExperimentConfig& config);

/// Trains with `config`; the model input widths follow the data.
TrainResult train_model(const ExperimentConfig& config, const PreparedData& data, const TrainHooks& hooks = {});

RecallTable evaluate_model(const ModelParams& params, const std::vector<LocationEntry>& locations,
                           const EvalSettings& settings, const EncodeOptions& encode = {});

inline constexpr std::array<std::string_view, 7> kAblationAxes{
    "training-strategy", "text-head", "aggregation", "temperature", "ccca-variant", "truncation", "views"};

struct AblationRow {
  std::string variant;
  RecallTable table;
};

/// Sweeps one axis on the test split, one row per variant.
std::vector<AblationRow> run_ablation(std::string_view axis, const ExperimentConfig& config);

void write_ablation_tsv(std::ostream& os, std::string_view axis, const std::vector<AblationRow>& rows,
                        std::string_view config_hash);
/// Aligned-column text: variant, then one "a/b/c" cell per k.
std::string format_ablation(const std::vector<AblationRow>& rows);

}  // namespace xplace

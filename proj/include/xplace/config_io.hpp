#pragma once

// JSON mapping for every configuration struct. Readers only override the
// keys that are present, so partial config files layer over defaults;
// unknown keys are rejected.

#include "xplace/dataset.hpp"
#include "xplace/model.hpp"
#include "xplace/retrieval.hpp"
#include "xplace/trainer.hpp"

#include <json.hpp>

#include <set>
#include <string>

namespace xplace {

/// Reads optional keys of one JSON object and remembers which were seen.
class ConfigReader {
 public:
  ConfigReader(const nlohmann::json& j, std::string section);

  template <class T>
  void operator()(const char* key, T& field) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      it->get_to(field);
    } catch (const nlohmann::json::exception& e) {
      fail(key, e);
    }
  }

  /// For enum-like fields stored as strings.
  template <class T, class Parse>
  void parse(const char* key, T& field, Parse&& from_string) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    if (!it->is_string()) throw ConfigError(section_ + "." + key + ": expected a string");
    field = from_string(it->template get<std::string>());
  }

  /// Marks a key as handled by the caller.
  void allow(const char* key) { seen_.insert(key); }

  /// Throws ConfigError naming the first key that was never asked for.
  void finish() const;

 private:
  [[noreturn]] void fail(const std::string& key, const std::exception& e) const;

  const nlohmann::json& j_;
  std::string section_;
  std::set<std::string> seen_;
};

void to_json(nlohmann::json& j, const GenConfig& c);
void from_json(const nlohmann::json& j, GenConfig& c);
void to_json(nlohmann::json& j, const TextHeadConfig& c);
void from_json(const nlohmann::json& j, TextHeadConfig& c);
void to_json(nlohmann::json& j, const AggregatorConfig& c);
void from_json(const nlohmann::json& j, AggregatorConfig& c);
void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void to_json(nlohmann::json& j, const CccaOptions& c);
void from_json(const nlohmann::json& j, CccaOptions& c);

/// Model configuration whose input widths match a GenConfig's token dims.
ModelConfig model_config_for(const GenConfig& gen, ModelConfig base = {});

/// FNV-1a of the compact dump, as 16 hex digits.
std::string config_hash(const nlohmann::json& j);

}  // namespace xplace

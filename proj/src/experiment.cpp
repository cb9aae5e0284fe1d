#include "xplace/experiment.hpp"

#include "xplace/config_io.hpp"

#include <iomanip>
#include <ostream>
#include <sstream>

namespace xplace {

ExperimentConfig ExperimentConfig::with_seed(std::uint64_t seed) const {
  ExperimentConfig c = *this;
  c.gen.seed = seed;
  c.split_seed = seed * 31 + 11;
  c.train.seed = seed * 17 + 1;
  c.eval.shuffle_seed = seed * 13 + 2024;
  return c;
}

std::string ExperimentConfig::hash() const { return config_hash(nlohmann::json(*this)); }

void to_json(nlohmann::json& j, const EvalSettings& s) {
  j = nlohmann::json{{"ks", s.options.ks},
                     {"eps_m", s.options.eps_m},
                     {"align_mode", std::string(to_string(s.options.align_mode))},
                     {"ccca", s.options.ccca},
                     {"per_candidate", s.options.per_candidate},
                     {"shuffle_seed", s.shuffle_seed},
                     {"shuffle", s.shuffle}};
}

void from_json(const nlohmann::json& j, EvalSettings& s) {
  ConfigReader r(j, "eval");
  r("ks", s.options.ks);
  r("eps_m", s.options.eps_m);
  r.parse("align_mode", s.options.align_mode, align_mode_from_string);
  r("ccca", s.options.ccca);
  r("per_candidate", s.options.per_candidate);
  r("shuffle_seed", s.shuffle_seed);
  r("shuffle", s.shuffle);
  r.finish();
}

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = nlohmann::json{{"gen", c.gen},
                     {"model", c.model},
                     {"train", c.train},
                     {"split", {{"ratios", c.ratios}, {"seed", c.split_seed}}},
                     {"eval", c.eval}};
}

void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  ConfigReader r(j, "config");
  r("gen", c.gen);
  r("model", c.model);
  r("train", c.train);
  r("eval", c.eval);
  r.allow("split");
  if (auto it = j.find("split"); it != j.end()) {
    ConfigReader s(*it, "split");
    s("ratios", c.ratios);
    s("seed", c.split_seed);
    s.finish();
  }
  r.finish();
}

PreparedData prepare(const Dataset& ds) {
  return PreparedData{ds.entries_in(Split::kTrain), ds.entries_in(Split::kVal), ds.entries_in(Split::kTest)};
}

PreparedData prepare(const ExperimentConfig& config) {
  return prepare(split(generate(config.gen), config.ratios, config.split_seed));
}

TrainResult train_model(const ExperimentConfig& config, const PreparedData& data, const TrainHooks& hooks) {
  if (data.train.empty()) throw ConfigError("train_model: empty training split");
  ModelConfig mc = config.model;
  const auto& v = data.train.front().views.front();
  mc.text.token_dim = v.text.tokens.cols();
  mc.image.token_dim = v.image.local.cols();
  mc.text.output_dim = mc.image.descriptor_dim();
  return train(data.train, data.val, mc, config.train, hooks);
}

RecallTable evaluate_model(const ModelParams& params, const std::vector<LocationEntry>& locations,
                           const EvalSettings& settings, const EncodeOptions& encode) {
  return evaluate(encode_locations(locations, params, encode), settings);
}

namespace {

PreparedData truncated(const PreparedData& d, double f) {
  auto cut = [f](std::vector<LocationEntry> v) {
    for (auto& e : v)
      for (auto& view : e.views) view.text = truncate_text(view.text, f);
    return v;
  };
  return PreparedData{cut(d.train), cut(d.val), cut(d.test)};
}

std::string fraction_label(double f) {
  std::ostringstream os;
  os << static_cast<int>(f * 100.0 + 0.5) << "%";
  return os.str();
}

}  // namespace

std::vector<AblationRow> run_ablation(std::string_view axis, const ExperimentConfig& config) {
  const PreparedData data = prepare(config);
  std::vector<AblationRow> rows;
  auto trained_default = [&] { return train_model(config, data).best; };

  if (axis == "training-strategy") {
    for (auto s : {TrainStrategy::kGroup, TrainStrategy::kSingle}) {
      ExperimentConfig c = config;
      c.train.strategy = s;
      rows.push_back({std::string(to_string(s)), evaluate_model(train_model(c, data).best, data.test, c.eval)});
    }
  } else if (axis == "text-head") {
    for (auto v : {TextHeadVariant::kBoth, TextHeadVariant::kTransformerThenMlp, TextHeadVariant::kMlp,
                   TextHeadVariant::kMlpThenTransformer}) {
      ExperimentConfig c = config;
      c.model.text.variant = v;
      rows.push_back({std::string(to_string(v)), evaluate_model(train_model(c, data).best, data.test, c.eval)});
    }
  } else if (axis == "aggregation") {
    for (auto a : {Aggregation::kMaxPool, Aggregation::kSinkhorn}) {
      ExperimentConfig c = config;
      c.model.image.aggregation = a;
      rows.push_back({std::string(to_string(a)), evaluate_model(train_model(c, data).best, data.test, c.eval)});
    }
  } else if (axis == "temperature") {
    for (bool learnable : {false, true}) {
      ExperimentConfig c = config;
      c.model.image.learnable_temperature = learnable;
      rows.push_back({learnable ? "learnable" : "removed", evaluate_model(train_model(c, data).best, data.test, c.eval)});
    }
  } else if (axis == "ccca-variant") {
    const ModelParams params = trained_default();
    const auto encoded = encode_locations(data.test, params);
    struct Variant {
      const char* name;
      AlignMode mode;
      CccaScoring scoring;
    };
    for (const Variant& v : {Variant{"none", AlignMode::kNone, CccaScoring::kFull},
                             Variant{"no-cascade", AlignMode::kCcca, CccaScoring::kNoCascade},
                             Variant{"no-cosine", AlignMode::kCcca, CccaScoring::kNoCosine},
                             Variant{"full", AlignMode::kCcca, CccaScoring::kFull},
                             Variant{"oracle", AlignMode::kOracle, CccaScoring::kFull}}) {
      EvalSettings s = config.eval;
      s.options.align_mode = v.mode;
      s.options.ccca.scoring = v.scoring;
      rows.push_back({v.name, evaluate(encoded, s)});
    }
  } else if (axis == "truncation") {
    for (double f : {0.25, 0.5, 0.75, 1.0}) {
      const PreparedData d = f < 1.0 ? truncated(data, f) : data;
      rows.push_back({fraction_label(f), evaluate_model(train_model(config, d).best, d.test, config.eval)});
    }
  } else if (axis == "views") {
    const ModelParams params = trained_default();
    for (std::size_t n = 1; n <= 4; ++n) {
      EncodeOptions enc;
      enc.views = n;
      rows.push_back({std::to_string(n), evaluate_model(params, data.test, config.eval, enc)});
    }
  } else {
    throw ConfigError("unknown ablation axis: " + std::string(axis));
  }
  return rows;
}

void write_ablation_tsv(std::ostream& os, std::string_view axis, const std::vector<AblationRow>& rows,
                        std::string_view config_hash) {
  os << "# config_hash\t" << config_hash << "\n";
  os << "# axis\t" << axis << "\n";
  if (rows.empty()) return;
  const RecallTable& first = rows.front().table;
  os << "variant\tk";
  for (double e : first.eps_m) os << "\teps" << e;
  os << "\n" << std::fixed << std::setprecision(6);
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < r.table.ks.size(); ++i) {
      os << r.variant << "\t" << r.table.ks[i];
      for (std::size_t j = 0; j < r.table.eps_m.size(); ++j)
        os << "\t" << r.table.recall(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      os << "\n";
    }
  }
  os.unsetf(std::ios::floatfield);
}

std::string format_ablation(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  if (rows.empty()) return {};
  std::size_t width = 8;
  for (const auto& r : rows) width = std::max(width, r.variant.size() + 2);
  const RecallTable& first = rows.front().table;
  os << std::left << std::setw(static_cast<int>(width)) << "variant";
  for (std::size_t k : first.ks) os << std::setw(18) << ("k=" + std::to_string(k));
  os << "\n";
  for (const auto& r : rows) {
    os << std::setw(static_cast<int>(width)) << r.variant;
    for (std::size_t i = 0; i < r.table.ks.size(); ++i) os << std::setw(18) << format_recall_row(r.table, i);
    os << "\n";
  }
  return os.str();
}

}  // namespace xplace

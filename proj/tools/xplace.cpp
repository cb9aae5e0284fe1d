// Command-line entry point: gen, train, eval, align, ablate.

#include "xplace/ccca.hpp"
#include "xplace/config_io.hpp"
#include "xplace/experiment.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace xplace;

namespace {

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = ".";
};

ExperimentConfig load_config(const Common& c) {
  ExperimentConfig cfg;
  if (!c.config_path.empty()) {
    std::ifstream is(c.config_path);
    if (!is) throw ConfigError("cannot open config " + c.config_path);
    json j;
    try {
      j = json::parse(is);
    } catch (const json::parse_error& e) {
      throw ConfigError(c.config_path + ": " + e.what());
    }
    from_json(j, cfg);
  }
  if (c.seed) cfg = cfg.with_seed(*c.seed);
  return cfg;
}

fs::path out_path(const Common& c, const std::string& name) {
  fs::create_directories(c.out_dir);
  return fs::path(c.out_dir) / name;
}

// Reports are rendered in memory and renamed into place, so a failing run
// leaves nothing half-written behind.
void write_file(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw ConfigError("cannot write " + tmp.string());
    os << text;
    if (!os) throw ConfigError("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

PreparedData load_data(const std::string& data_path, const ExperimentConfig& cfg) {
  if (data_path.empty()) return prepare(cfg);
  return prepare(split(load_jsonl(fs::path(data_path)), cfg.ratios, cfg.split_seed));
}

template <class T>
std::vector<T> parse_list(const std::string& s, const char* what) {
  std::vector<T> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::istringstream is(item);
    T v;
    if (!(is >> v) || !is.eof()) throw ConfigError(std::string("bad ") + what + " list: " + s);
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError(std::string("empty ") + what + " list");
  return out;
}

ViewGroup read_group(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open " + path);
  const json j = json::parse(is);
  if (!j.is_array() || j.empty()) throw ConfigError(path + ": expected a non-empty array of rows");
  const auto cols = j[0].size();
  ViewGroup g(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < j.size(); ++r) {
    if (!j[r].is_array() || j[r].size() != cols) throw ConfigError(path + ": rows must have equal length");
    for (std::size_t c = 0; c < cols; ++c) g(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = j[r][c];
  }
  return g;
}

std::string history_tsv(const TrainHistory& h) {
  std::ostringstream os;
  os << "# config_hash\t" << h.config_hash << "\n# best_epoch\t" << h.best_epoch << "\nepoch\tmean_loss\tval_r1_5m\n";
  os.precision(17);
  for (std::size_t e = 0; e < h.epochs.size(); ++e)
    os << e << "\t" << h.epochs[e].mean_loss << "\t" << h.epochs[e].val_recall << "\n";
  return os.str();
}

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config_path, "JSON config (sections gen, model, train, split, eval)");
  app->add_option("--seed", c.seed, "Derive every seed from N");
  app->add_option("--out", c.out_dir, "Output directory");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-modal place recognition on token embeddings"};
  app.require_subcommand(1);

  Common gen_c, train_c, eval_c, ablate_c;
  std::string train_data, eval_data, checkpoint, align_mode, k_list, eps_list, split_name = "test";
  std::size_t views = 0;
  double truncate = 1.0;
  std::string align_m, align_q, scoring = "full", search = "full";
  std::string axis;

  auto* gen = app.add_subcommand("gen", "Generate a synthetic dataset (dataset.jsonl)");
  add_common(gen, gen_c);

  auto* train_cmd = app.add_subcommand("train", "Train both heads (checkpoint.bin, history.tsv)");
  add_common(train_cmd, train_c);
  train_cmd->add_option("--data", train_data, "JSONL dataset; generated from the config when omitted");

  auto* eval = app.add_subcommand("eval", "Recall table for a checkpoint (recall.tsv)");
  add_common(eval, eval_c);
  eval->add_option("--data", eval_data, "JSONL dataset; generated from the config when omitted");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  eval->add_option("--split", split_name, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
  eval->add_option("--align-mode", align_mode, "ccca, oracle or none")->check(CLI::IsMember({"ccca", "oracle", "none"}));
  eval->add_option("--views", views, "Use the first N views (0 = all)");
  eval->add_option("--truncate", truncate, "Fraction of each description kept");
  eval->add_option("--k", k_list, "Comma-separated k values");
  eval->add_option("--eps", eps_list, "Comma-separated thresholds in meters");

  auto* align_cmd = app.add_subcommand("align", "Align two descriptor groups given as JSON arrays of rows");
  align_cmd->add_option("m", align_m, "Reference group")->required();
  align_cmd->add_option("q", align_q, "Group to reorder")->required();
  align_cmd->add_option("--scoring", scoring, "full, no-cascade or no-cosine");
  align_cmd->add_option("--search", search, "full or cyclic");

  auto* ablate = app.add_subcommand("ablate", "Sweep one ablation axis (ablation-<axis>.tsv)");
  add_common(ablate, ablate_c);
  ablate->add_option("axis", axis, "Axis to sweep")
      ->required()
      ->check(CLI::IsMember(std::vector<std::string>(kAblationAxes.begin(), kAblationAxes.end())));

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      const ExperimentConfig cfg = load_config(gen_c);
      const auto path = out_path(gen_c, "dataset.jsonl");
      save_jsonl(generate(cfg.gen), path);
      std::cout << path.string() << "\n";
    } else if (train_cmd->parsed()) {
      const ExperimentConfig cfg = load_config(train_c);
      const PreparedData data = load_data(train_data, cfg);
      const std::string hash = cfg.hash();
      const auto last = out_path(train_c, "checkpoint-last.bin");
      TrainHooks hooks;
      hooks.on_epoch = [&](int epoch, const ModelParams& p, const AdamState& adam, const TrainHistory& h) {
        save_checkpoint(last, p, hash, &adam);
        const auto& r = h.epochs.back();
        std::cerr << "epoch " << epoch << "  loss " << r.mean_loss << "  val r@1@5m " << r.val_recall << "  "
                  << r.seconds << " s\n";
      };
      TrainResult result = train_model(cfg, data, hooks);
      result.history.config_hash = hash;
      save_checkpoint(out_path(train_c, "checkpoint.bin"), result.best, hash);
      write_file(out_path(train_c, "history.tsv"), history_tsv(result.history));
      std::cout << "best epoch " << result.history.best_epoch << "\n";
    } else if (eval->parsed()) {
      ExperimentConfig cfg = load_config(eval_c);
      if (!align_mode.empty()) cfg.eval.options.align_mode = align_mode_from_string(align_mode);
      if (!k_list.empty()) cfg.eval.options.ks = parse_list<std::size_t>(k_list, "k");
      if (!eps_list.empty()) cfg.eval.options.eps_m = parse_list<double>(eps_list, "eps");
      const Checkpoint ck = read_checkpoint(checkpoint);
      ModelConfig mc;
      from_json(json::parse(ck.metadata).at("model"), mc);
      ModelParams params = ModelParams::init(mc, 0);
      load_into(ck, params);
      const PreparedData data = load_data(eval_data, cfg);
      const auto& locations = split_name == "train" ? data.train : split_name == "val" ? data.val : data.test;
      const RecallTable table = evaluate_model(params, locations, cfg.eval, EncodeOptions{views, truncate});
      json stamp = cfg;
      stamp["checkpoint"] = ck.config_hash;
      stamp["encode"] = {{"views", views}, {"truncate", truncate}, {"split", split_name}};
      std::ostringstream os;
      write_recall_tsv(os, table, config_hash(stamp));
      write_file(out_path(eval_c, "recall.tsv"), os.str());
      std::cout << format_recall_cells(table);
    } else if (align_cmd->parsed()) {
      CccaOptions opt;
      opt.scoring = ccca_scoring_from_string(scoring);
      opt.search = permutation_search_from_string(search);
      const Alignment a = align(read_group(align_m), read_group(align_q), opt);
      std::cout << "permutation";
      for (int p : a.permutation) std::cout << " " << p;
      std::cout.precision(17);
      std::cout << "\nscore " << a.score << "\n";
    } else if (ablate->parsed()) {
      const ExperimentConfig cfg = load_config(ablate_c);
      const auto rows = run_ablation(axis, cfg);
      std::ostringstream os;
      write_ablation_tsv(os, axis, rows, cfg.hash());
      write_file(out_path(ablate_c, "ablation-" + axis + ".tsv"), os.str());
      std::cout << format_ablation(rows);
    }
  } catch (const std::exception& e) {
    std::cerr << "xplace: error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

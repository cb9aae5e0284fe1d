#include "xplace/dataset.hpp"

#include "xplace/config_io.hpp"
#include "xplace/hash.hpp"
#include "xplace/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

namespace xplace {

using nlohmann::json;

std::string_view to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
    case Split::kUnassigned: return "unassigned";
  }
  return "?";
}

void GenConfig::validate() const {
  if (grid_rows < 1 || grid_cols < 1) throw ConfigError("gen: grid dims must be positive");
  if (!(spacing_m > 0.0)) throw ConfigError("gen: spacing must be positive");
  if (latent_dim < 1 || image_tokens < 1 || image_dim < 1 || text_tokens < 1 || text_dim < 1)
    throw ConfigError("gen: degenerate dimensions");
  if (views < 1 || views > 4) throw ConfigError("gen: views must be in 1..4");
  if (sentence_len < 1) throw ConfigError("gen: sentence length must be positive");
  if (view_sharing < 0.0 || view_sharing > 1.0) throw ConfigError("gen: view_sharing must be in [0, 1]");
  if (image_distractors < 0 || image_distractors >= image_tokens)
    throw ConfigError("gen: image_distractors must be in [0, image_tokens)");
  if (distractor_scale < 0.0) throw ConfigError("gen: distractor_scale must be >= 0");
  if (image_maps < 1) throw ConfigError("gen: image_maps must be >= 1");
  if (sentence_focus < 0.0 || sentence_focus > 1.0) throw ConfigError("gen: sentence_focus must be in [0, 1]");
  if (image_noise < 0.0 || text_noise < 0.0 || view_offset < 0.0) throw ConfigError("gen: noise must be >= 0");
  if (correlation < 0.0 || correlation > 1.0) throw ConfigError("gen: correlation must be in [0, 1]");
}

std::vector<const LocationEntry*> Dataset::subset(Split s) const {
  std::vector<const LocationEntry*> out;
  for (std::size_t i = 0; i < entries.size(); ++i)
    if (i < splits.size() && splits[i] == s) out.push_back(&entries[i]);
  return out;
}

std::vector<LocationEntry> Dataset::entries_in(Split s) const {
  std::vector<LocationEntry> out;
  for (const auto* e : subset(s)) out.push_back(*e);
  return out;
}

double to_file_precision(double x) { return static_cast<double>(static_cast<float>(x)); }

namespace {

Matrix gaussian(Eigen::Index rows, Eigen::Index cols, double sd, Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = sd * rng.normal();
  return m;
}

Matrix random_orthogonal(Eigen::Index n, Rng& rng) {
  const Matrix g = gaussian(n, n, 1.0, rng);
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ();
  // Fix column signs so the result does not depend on QR sign conventions.
  const Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index i = 0; i < n; ++i)
    if (r(i, i) < 0.0) q.col(i) *= -1.0;
  return q;
}

Matrix quantize(Matrix m) {
  return m.unaryExpr([](double x) { return to_file_precision(x); });
}

}  // namespace

Dataset generate(const GenConfig& config) {
  config.validate();
  const Rng root(config.seed);
  const Eigen::Index L = config.latent_dim;

  // Latent dims are split into one block per sentence slot; view rotations
  // mix dims only within a block, so a sentence's content stays tied to its
  // block across views.
  const int sentences = (config.text_tokens + config.sentence_len - 1) / config.sentence_len;
  auto block_of = [&](Eigen::Index j) { return static_cast<int>(j * sentences / L); };

  Rng shared = root.substream(0);
  std::vector<Matrix> rotations;
  std::vector<Vector> offsets;
  for (int v = 0; v < config.views; ++v) {
    Matrix r = Matrix::Zero(L, L);
    for (Eigen::Index start = 0; start < L;) {
      Eigen::Index end = start;
      while (end < L && block_of(end) == block_of(start)) ++end;
      r.block(start, start, end - start, end - start) = random_orthogonal(end - start, shared);
      start = end;
    }
    rotations.push_back(std::move(r));
    offsets.push_back(gaussian(L, 1, config.view_offset, shared).col(0));
  }
  const double map_sd = 1.0 / std::sqrt(static_cast<double>(L));
  std::vector<Matrix> image_maps, text_maps;
  for (int k = 0; k < config.image_maps; ++k) image_maps.push_back(gaussian(config.image_dim, L, map_sd, shared));
  for (int s = 0; s < sentences; ++s) {
    Matrix m = gaussian(config.text_dim, L, map_sd, shared);
    for (Eigen::Index j = 0; j < L; ++j)
      if (block_of(j) != s) m.col(j) *= 1.0 - config.sentence_focus;
    text_maps.push_back(std::move(m));
  }
  const Matrix distractor_map = gaussian(config.image_dim, L, map_sd, shared);

  std::vector<std::size_t> ends;
  for (int e = config.sentence_len; e < config.text_tokens; e += config.sentence_len) ends.push_back(static_cast<std::size_t>(e));
  ends.push_back(static_cast<std::size_t>(config.text_tokens));

  const double rho = config.correlation;
  const double mix = std::sqrt(std::max(0.0, 1.0 - rho * rho));

  Dataset ds;
  const int count = config.grid_rows * config.grid_cols;
  ds.entries.reserve(static_cast<std::size_t>(count));
  for (int idx = 0; idx < count; ++idx) {
    Rng rng = root.substream(1000 + static_cast<std::uint64_t>(idx));
    const int row = idx / config.grid_cols, col = idx % config.grid_cols;
    LocationEntry e;
    char id[32];
    std::snprintf(id, sizeof id, "loc%05d", idx);
    e.id = id;
    e.x_m = col * config.spacing_m;
    e.y_m = row * config.spacing_m;
    const Vector z = gaussian(L, 1, 1.0, rng).col(0);
    for (int v = 0; v < config.views; ++v) {
      const Vector zv = config.view_sharing * z +
                        std::sqrt(1.0 - config.view_sharing * config.view_sharing) * rotations[static_cast<std::size_t>(v)] * z +
                        offsets[static_cast<std::size_t>(v)];
      const Vector zt = rho * zv + mix * gaussian(L, 1, 1.0, rng).col(0);
      ViewData view;
      view.image.local.resize(config.image_tokens, config.image_dim);
      const int informative = config.image_tokens - config.image_distractors;
      for (int k = 0; k < config.image_tokens; ++k) {
        const Vector signal = k < informative
                                  ? Vector(image_maps[static_cast<std::size_t>(k % config.image_maps)] * zv)
                                  : Vector(config.distractor_scale * distractor_map * gaussian(L, 1, 1.0, rng).col(0));
        view.image.local.row(k) = signal.transpose() + gaussian(1, config.image_dim, config.image_noise, rng);
      }
      view.image.local = quantize(view.image.local);
      if (config.global_token) view.image.global = RowVector(quantize(view.image.local.colwise().mean()));
      view.text.tokens.resize(config.text_tokens, config.text_dim);
      for (int k = 0; k < config.text_tokens; ++k)
        view.text.tokens.row(k) =
            (text_maps[static_cast<std::size_t>(k / config.sentence_len)] * zt).transpose() + gaussian(1, config.text_dim, config.text_noise, rng);
      view.text.tokens = quantize(view.text.tokens);
      view.text.sentence_ends = ends;
      e.views.push_back(std::move(view));
    }
    ds.entries.push_back(std::move(e));
  }
  ds.splits.assign(ds.entries.size(), Split::kUnassigned);

  json prov;
  prov["producer"] = "synthetic";
  prov["gen_config"] = config;
  prov["config_hash"] = hex64(fnv1a64(json(config).dump()));
  ds.provenance = prov.dump();
  return ds;
}

// ---------------------------------------------------------------- JSONL

namespace {

void write_float(std::string& out, float f) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, f);
  out.append(buf, p);
}

void write_double(std::string& out, double d) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, d);
  out.append(buf, p);
}

void write_row(std::string& out, const Eigen::Ref<const RowVector>& r) {
  out += '[';
  for (Eigen::Index c = 0; c < r.size(); ++c) {
    if (c) out += ',';
    write_float(out, static_cast<float>(r(c)));
  }
  out += ']';
}

void write_matrix(std::string& out, const Matrix& m) {
  out += '[';
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    if (r) out += ',';
    write_row(out, m.row(r));
  }
  out += ']';
}

void write_prefix(std::string& out, const LocationEntry& e, std::size_t view, const char* modality) {
  out += "{\"location_id\":";
  out += json(e.id).dump();
  out += ",\"x_m\":";
  write_double(out, e.x_m);
  out += ",\"y_m\":";
  write_double(out, e.y_m);
  out += ",\"view\":";
  out += std::to_string(view);
  out += ",\"modality\":\"";
  out += modality;
  out += '"';
}

}  // namespace

void save_jsonl(const Dataset& dataset, std::ostream& os) {
  std::string line;
  if (!dataset.provenance.empty()) {
    json header;
    header["header"] = json::parse(dataset.provenance);
    os << header.dump() << '\n';
  }
  for (const auto& e : dataset.entries) {
    for (std::size_t v = 0; v < e.views.size(); ++v) {
      const auto& view = e.views[v];
      line.clear();
      write_prefix(line, e, v, "image");
      line += ",\"tokens\":";
      write_matrix(line, view.image.local);
      if (view.image.global) {
        line += ",\"global_token\":";
        write_row(line, *view.image.global);
      }
      line += "}\n";
      os << line;

      line.clear();
      write_prefix(line, e, v, "text");
      line += ",\"tokens\":";
      write_matrix(line, view.text.tokens);
      line += ",\"sentence_breaks\":[";
      for (std::size_t s = 0; s < view.text.sentence_ends.size(); ++s) {
        if (s) line += ',';
        line += std::to_string(view.text.sentence_ends[s]);
      }
      line += "]}\n";
      os << line;
    }
  }
  if (!os) throw ConfigError("save_jsonl: write failed");
}

void save_jsonl(const Dataset& dataset, const std::filesystem::path& path) {
  // Written aside and renamed so a failed run never leaves a partial file.
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw ConfigError("save_jsonl: cannot open " + tmp.string());
    save_jsonl(dataset, os);
  }
  std::filesystem::rename(tmp, path);
}

namespace {

[[noreturn]] void fail(std::size_t line, const std::string& msg) {
  throw ConfigError("line " + std::to_string(line) + ": " + msg);
}

Matrix parse_tokens(const json& j, std::size_t line) {
  if (!j.is_array() || j.empty()) fail(line, "\"tokens\" must be a non-empty array of rows");
  const std::size_t cols = j[0].is_array() ? j[0].size() : 0;
  if (cols == 0) fail(line, "token rows must be non-empty arrays");
  Matrix m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < j.size(); ++r) {
    const json& row = j[r];
    if (!row.is_array() || row.size() != cols) fail(line, "ragged token rows");
    for (std::size_t c = 0; c < cols; ++c) {
      if (!row[c].is_number()) fail(line, "token entries must be numbers");
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = to_file_precision(row[c].get<double>());
    }
  }
  if (!m.allFinite()) fail(line, "non-finite token value");
  return m;
}

const json& require(const json& rec, const char* key, std::size_t line) {
  auto it = rec.find(key);
  if (it == rec.end()) fail(line, std::string("missing field \"") + key + "\"");
  return *it;
}

struct PendingView {
  std::optional<ImageTokenSet> image;
  std::optional<TextTokenSequence> text;
};

struct PendingLocation {
  LocationEntry entry;
  std::map<int, PendingView> views;
  std::size_t first_line = 0;
};

}  // namespace

Dataset load_jsonl(std::istream& is) {
  Dataset ds;
  std::vector<PendingLocation> pending;
  std::map<std::string, std::size_t> by_id;
  Eigen::Index image_dim = -1, text_dim = -1;
  std::string line;
  std::size_t lineno = 0;
  json headers = json::array();

  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error& e) {
      fail(lineno, std::string("malformed JSON: ") + e.what());
    }
    if (!rec.is_object()) fail(lineno, "record must be a JSON object");
    if (rec.contains("header")) {
      headers.push_back(rec["header"]);
      continue;
    }
    const json& jid = require(rec, "location_id", lineno);
    const json& jx = require(rec, "x_m", lineno);
    const json& jy = require(rec, "y_m", lineno);
    const json& jview = require(rec, "view", lineno);
    const json& jmod = require(rec, "modality", lineno);
    const json& jtok = require(rec, "tokens", lineno);
    if (!jid.is_string()) fail(lineno, "\"location_id\" must be a string");
    if (!jx.is_number() || !jy.is_number()) fail(lineno, "coordinates must be numbers");
    if (!jview.is_number_integer() || jview.get<int>() < 0 || jview.get<int>() > 3) fail(lineno, "\"view\" must be 0-3");
    if (!jmod.is_string()) fail(lineno, "\"modality\" must be a string");
    const std::string id = jid.get<std::string>();
    const double x = jx.get<double>(), y = jy.get<double>();
    if (!std::isfinite(x) || !std::isfinite(y)) fail(lineno, "coordinates must be finite");
    const int view = jview.get<int>();
    const std::string modality = jmod.get<std::string>();

    auto [it, inserted] = by_id.emplace(id, pending.size());
    if (inserted) {
      PendingLocation p;
      p.entry.id = id;
      p.entry.x_m = x;
      p.entry.y_m = y;
      p.first_line = lineno;
      pending.push_back(std::move(p));
    }
    PendingLocation& loc = pending[it->second];
    if (loc.entry.x_m != x || loc.entry.y_m != y) fail(lineno, "coordinates differ between records of " + id);
    PendingView& pv = loc.views[view];

    Matrix tokens = parse_tokens(jtok, lineno);
    if (modality == "image") {
      if (image_dim < 0) image_dim = tokens.cols();
      if (tokens.cols() != image_dim) fail(lineno, "image token dim differs from earlier image records");
      if (pv.image) fail(lineno, "duplicate image record for " + id + " view " + std::to_string(view));
      ImageTokenSet img;
      img.local = std::move(tokens);
      if (auto g = rec.find("global_token"); g != rec.end() && !g->is_null()) {
        if (!g->is_array() || g->size() != static_cast<std::size_t>(image_dim)) fail(lineno, "bad global_token");
        RowVector gt(image_dim);
        for (Eigen::Index c = 0; c < image_dim; ++c) {
          if (!(*g)[static_cast<std::size_t>(c)].is_number()) fail(lineno, "global_token entries must be numbers");
          gt(c) = to_file_precision((*g)[static_cast<std::size_t>(c)].get<double>());
        }
        img.global = std::move(gt);
      }
      pv.image = std::move(img);
    } else if (modality == "text") {
      if (text_dim < 0) text_dim = tokens.cols();
      if (tokens.cols() != text_dim) fail(lineno, "text token dim differs from earlier text records");
      if (pv.text) fail(lineno, "duplicate text record for " + id + " view " + std::to_string(view));
      const json& jb = require(rec, "sentence_breaks", lineno);
      if (!jb.is_array()) fail(lineno, "\"sentence_breaks\" must be an array");
      TextTokenSequence seq;
      seq.tokens = std::move(tokens);
      for (const auto& b : jb) {
        if (!b.is_number_integer() || b.get<long long>() < 0) fail(lineno, "sentence breaks must be non-negative integers");
        seq.sentence_ends.push_back(b.get<std::size_t>());
      }
      try {
        seq.validate();
      } catch (const ConfigError& e) {
        fail(lineno, e.what());
      }
      pv.text = std::move(seq);
    } else {
      fail(lineno, "unknown modality \"" + modality + "\"");
    }
  }

  for (auto& p : pending) {
    int expected = 0;
    for (auto& [v, pv] : p.views) {
      if (v != expected) fail(p.first_line, "location " + p.entry.id + " has non-contiguous views");
      if (!pv.image || !pv.text) fail(p.first_line, "location " + p.entry.id + " view " + std::to_string(v) + " lacks a modality");
      p.entry.views.push_back(ViewData{std::move(*pv.image), std::move(*pv.text)});
      ++expected;
    }
    ds.entries.push_back(std::move(p.entry));
  }
  ds.splits.assign(ds.entries.size(), Split::kUnassigned);
  if (headers.size() == 1) ds.provenance = headers[0].dump();
  else if (!headers.empty()) ds.provenance = headers.dump();
  return ds;
}

Dataset load_jsonl(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("load_jsonl: cannot open " + path.string());
  return load_jsonl(is);
}

// ---------------------------------------------------------------- splits

Dataset split(Dataset dataset, std::array<double, 3> ratios, std::uint64_t seed) {
  double total = 0.0;
  for (double r : ratios) {
    if (!(r > 0.0)) throw DomainError("split: ratios must be positive");
    total += r;
  }
  if (std::abs(total - 1.0) > 1e-9) throw DomainError("split: ratios must sum to 1");
  const std::size_t n = dataset.entries.size();
  const auto n_val = static_cast<std::size_t>(std::llround(static_cast<double>(n) * ratios[1]));
  const auto n_test = static_cast<std::size_t>(std::llround(static_cast<double>(n) * ratios[2]));
  if (n_val == 0 || n_test == 0 || n_val + n_test >= n)
    throw ConfigError("split: too few locations (" + std::to_string(n) + ") for three non-empty splits");

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  dataset.splits.assign(n, Split::kTrain);
  for (std::size_t i = 0; i < n_val; ++i) dataset.splits[order[i]] = Split::kVal;
  for (std::size_t i = n_val; i < n_val + n_test; ++i) dataset.splits[order[i]] = Split::kTest;
  return dataset;
}

// ---------------------------------------------------------------- transforms

TextTokenSequence truncate_text(const TextTokenSequence& seq, double fraction) {
  if (!(fraction > 0.0) || fraction > 1.0) throw DomainError("truncate_text: fraction must be in (0, 1]");
  seq.validate();
  const auto total = static_cast<double>(seq.token_count());
  // The epsilon keeps exact products such as 0.25 * 8 from rounding up.
  auto keep = static_cast<std::size_t>(std::ceil(fraction * total - 1e-9));
  keep = std::clamp<std::size_t>(keep, 1, seq.token_count());
  TextTokenSequence out;
  out.tokens = seq.tokens.topRows(static_cast<Eigen::Index>(keep));
  for (std::size_t e : seq.sentence_ends) {
    if (e < keep) {
      out.sentence_ends.push_back(e);
    } else {
      out.sentence_ends.push_back(keep);
      break;
    }
  }
  return out;
}

LocationEntry subset_views(const LocationEntry& entry, std::size_t n) {
  if (n < 1 || n > entry.views.size())
    throw DomainError("subset_views: n=" + std::to_string(n) + " outside 1.." + std::to_string(entry.views.size()));
  LocationEntry out;
  out.id = entry.id;
  out.x_m = entry.x_m;
  out.y_m = entry.y_m;
  out.views.assign(entry.views.begin(), entry.views.begin() + static_cast<std::ptrdiff_t>(n));
  return out;
}

Dataset truncate_dataset(Dataset dataset, double fraction) {
  for (auto& e : dataset.entries)
    for (auto& v : e.views) v.text = truncate_text(v.text, fraction);
  return dataset;
}

}  // namespace xplace

#include "xplace/trainer.hpp"

#include "xplace/config_io.hpp"
#include "xplace/hash.hpp"
#include "xplace/pipeline.hpp"
#include "xplace/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace xplace {

std::string_view to_string(LossDirection d) { return d == LossDirection::kSymmetric ? "symmetric" : "text-to-image"; }

LossDirection loss_direction_from_string(std::string_view s) {
  if (s == "symmetric") return LossDirection::kSymmetric;
  if (s == "text-to-image") return LossDirection::kTextToImage;
  throw ConfigError("unknown loss direction: " + std::string(s));
}

std::string_view to_string(TrainStrategy s) { return s == TrainStrategy::kSingle ? "single" : "group"; }

TrainStrategy train_strategy_from_string(std::string_view s) {
  if (s == "single") return TrainStrategy::kSingle;
  if (s == "group") return TrainStrategy::kGroup;
  throw ConfigError("unknown training strategy: " + std::string(s));
}

void TrainConfig::validate() const {
  if (batch_size < 2) throw ConfigError("train: batch_size must be >= 2");
  if (!(learning_rate > 0.0)) throw ConfigError("train: learning_rate must be positive");
  if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (!(contrastive_temperature > 0.0)) throw ConfigError("train: contrastive temperature must be positive");
}

// ---------------------------------------------------------------- loss

double info_nce(const Matrix& text, const Matrix& image, double temperature, LossDirection direction) {
  if (text.rows() == 0) throw DomainError("info_nce: empty batch");
  if (text.rows() != image.rows() || text.cols() != image.cols()) throw ConfigError("info_nce: batch shape mismatch");
  if (!(temperature > 0.0)) throw DomainError("info_nce: temperature must be positive");
  const Eigen::Index n = text.rows();
  Matrix sim(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index k = 0; k < n; ++k)
      sim(i, k) = cosine(Vector(text.row(i).transpose()), Vector(image.row(k).transpose())) / temperature;
  auto directional = [n](const Matrix& logits) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) total += logsumexp(Vector(logits.row(i).transpose())) - logits(i, i);
    return total / static_cast<double>(n);
  };
  const double t2i = directional(sim);
  if (direction == LossDirection::kTextToImage) return t2i;
  return 0.5 * (t2i + directional(sim.transpose()));
}

ad::Var info_nce(ad::Var text, ad::Var image, double temperature, LossDirection direction) {
  ad::Var logits = ad::scale(ad::matmul_nt(text, image), 1.0 / temperature);
  ad::Var t2i = ad::cross_entropy_diag(logits);
  if (direction == LossDirection::kTextToImage) return t2i;
  return ad::scale(ad::add(t2i, ad::cross_entropy_diag(ad::transpose(logits))), 0.5);
}

// ---------------------------------------------------------------- adam

void adam_step(std::span<Matrix* const> params, std::span<const Matrix> grads, std::span<const std::string> names,
               AdamState& state, const AdamConfig& config) {
  if (params.size() != grads.size()) throw ConfigError("adam_step: parameter/gradient count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].rows() != params[i]->rows() || grads[i].cols() != params[i]->cols())
      throw ConfigError("adam_step: gradient shape mismatch for " + (i < names.size() ? names[i] : std::to_string(i)));
    if (!grads[i].allFinite())
      throw DomainError("adam_step: non-finite gradient in " + (i < names.size() ? names[i] : std::to_string(i)));
  }
  if (state.m.empty()) {
    for (auto* p : params) {
      state.m.push_back(Matrix::Zero(p->rows(), p->cols()));
      state.v.push_back(Matrix::Zero(p->rows(), p->cols()));
    }
  }
  if (state.m.size() != params.size()) throw ConfigError("adam_step: optimizer state does not match parameters");
  ++state.step;
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix& m = state.m[i];
    Matrix& v = state.v[i];
    m = config.beta1 * m + (1.0 - config.beta1) * grads[i];
    v = config.beta2 * v + (1.0 - config.beta2) * grads[i].cwiseProduct(grads[i]);
    const Matrix m_hat = m / bc1;
    const Matrix v_hat = v / bc2;
    *params[i] -= (config.lr * m_hat.array() / (v_hat.array().sqrt() + config.eps)).matrix();
  }
}

// ---------------------------------------------------------------- batches

namespace {

BatchGradient finish(ad::Tape& tape, ad::Var loss, TextHeadWeights<ad::Var>& text, AggregatorWeights<ad::Var>& image) {
  tape.backward(loss);
  BatchGradient out;
  out.loss = loss.scalar();
  out.grads = gradients(tape, text);
  for (auto& g : gradients(tape, image)) out.grads.push_back(std::move(g));
  return out;
}

}  // namespace

BatchGradient batch_gradient(const ModelParams& params, std::span<const ViewData* const> pairs,
                             const TrainConfig& config) {
  if (pairs.empty()) throw DomainError("batch_gradient: empty batch");
  ad::Tape tape;
  auto text_w = bind(tape, params.text.weights, true);
  auto image_w = bind(tape, params.image.weights, true);
  std::vector<ad::Var> text_rows, image_rows;
  for (const ViewData* p : pairs) {
    text_rows.push_back(encode_text(tape, text_w, params.text.config, p->text));
    image_rows.push_back(encode_image(tape, image_w, params.image.config, p->image, params.image.config.train_iters));
  }
  ad::Var loss = info_nce(ad::concat_rows(text_rows), ad::concat_rows(image_rows), config.contrastive_temperature,
                          config.direction);
  return finish(tape, loss, text_w, image_w);
}

BatchGradient group_batch_gradient(const ModelParams& params, std::span<const LocationEntry* const> locations,
                                   const TrainConfig& config) {
  if (locations.empty()) throw DomainError("group_batch_gradient: empty batch");
  ad::Tape tape;
  auto text_w = bind(tape, params.text.weights, true);
  auto image_w = bind(tape, params.image.weights, true);
  std::vector<ad::Var> text_rows, image_rows;
  for (const LocationEntry* loc : locations) {
    std::vector<ad::Var> t, q;
    for (const auto& view : loc->views) {
      t.push_back(encode_text(tape, text_w, params.text.config, view.text));
      q.push_back(encode_image(tape, image_w, params.image.config, view.image, params.image.config.train_iters));
    }
    text_rows.push_back(ad::normalize(ad::concat_cols(t)));
    image_rows.push_back(ad::normalize(ad::concat_cols(q)));
  }
  ad::Var loss = info_nce(ad::concat_rows(text_rows), ad::concat_rows(image_rows), config.contrastive_temperature,
                          config.direction);
  return finish(tape, loss, text_w, image_w);
}

// ---------------------------------------------------------------- training

std::string TrainHistory::digest() const {
  std::string s = config_hash;
  char buf[64];
  for (const auto& e : epochs) {
    std::snprintf(buf, sizeof buf, "|%.17g,%.17g", e.mean_loss, e.val_recall);
    s += buf;
  }
  return hex64(fnv1a64(s));
}

TrainResult train(const std::vector<LocationEntry>& train_set, const std::vector<LocationEntry>& val_set,
                  const ModelConfig& model_config, const TrainConfig& config, const TrainHooks& hooks) {
  config.validate();
  model_config.validate();
  if (train_set.empty()) throw ConfigError("train: empty training set");
  for (const auto& e : train_set)
    if (e.views.empty()) throw ConfigError("train: location " + e.id + " has no views");
  if (config.strategy == TrainStrategy::kGroup) {
    for (const auto& e : train_set)
      if (e.views.size() != train_set.front().views.size())
        throw ConfigError("train: group strategy needs a uniform view count");
  }
  // Fail on dimension mismatches before the first step.
  {
    const auto& v = train_set.front().views.front();
    if (v.text.tokens.cols() != model_config.text.token_dim || v.image.local.cols() != model_config.image.token_dim)
      throw ConfigError("train: dataset token dims do not match the model configuration");
  }

  nlohmann::json cfg;
  cfg["model"] = model_config;
  cfg["train"] = config;
  TrainResult result;
  result.history.config_hash = hex64(fnv1a64(cfg.dump()));

  ModelParams params = ModelParams::init(model_config, Rng(config.seed).substream(7).next_u64());
  auto named = params.named_tensors();
  std::vector<Matrix*> tensors;
  std::vector<std::string> names;
  for (auto& [name, m] : named) {
    names.push_back(name);
    tensors.push_back(m);
  }
  AdamState adam;
  const AdamConfig adam_cfg{config.learning_rate};
  const Rng root(config.seed);
  double best_recall = -1.0;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng = root.substream(100 + static_cast<std::uint64_t>(epoch));
    double loss_sum = 0.0;
    int batches = 0;

    auto step = [&](const BatchGradient& bg) {
      adam_step(tensors, bg.grads, names, adam, adam_cfg);
      loss_sum += bg.loss;
      ++batches;
    };

    if (config.strategy == TrainStrategy::kSingle) {
      std::vector<const ViewData*> pairs;
      for (const auto& e : train_set)
        for (const auto& v : e.views) pairs.push_back(&v);
      rng.shuffle(pairs);
      for (std::size_t at = 0; at < pairs.size(); at += static_cast<std::size_t>(config.batch_size)) {
        const std::size_t len = std::min<std::size_t>(static_cast<std::size_t>(config.batch_size), pairs.size() - at);
        if (len < 2) break;
        step(batch_gradient(params, std::span(pairs).subspan(at, len), config));
      }
    } else {
      std::vector<const LocationEntry*> locs;
      for (const auto& e : train_set) locs.push_back(&e);
      rng.shuffle(locs);
      for (std::size_t at = 0; at < locs.size(); at += static_cast<std::size_t>(config.batch_size)) {
        const std::size_t len = std::min<std::size_t>(static_cast<std::size_t>(config.batch_size), locs.size() - at);
        if (len < 2) break;
        step(group_batch_gradient(params, std::span(locs).subspan(at, len), config));
      }
    }

    EpochRecord rec;
    rec.mean_loss = batches ? loss_sum / batches : 0.0;
    if (!hooks.skip_validation && !val_set.empty()) {
      const auto encoded = encode_locations(val_set, params);
      rec.val_recall = evaluate(encoded, EvalSettings{}).at(1, 5.0);
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.epochs.push_back(rec);
    if (rec.val_recall >= best_recall) {
      best_recall = rec.val_recall;
      result.best = params;
      result.history.best_epoch = epoch;
    }
    if (hooks.on_epoch) hooks.on_epoch(epoch, params, adam, result.history);
  }
  result.final = params;
  result.optimizer = std::move(adam);
  return result;
}

// ---------------------------------------------------------------- checkpoints

namespace {

constexpr char kMagic[8] = {'X', 'P', 'L', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kFormatVersion = 1;

template <class T>
void put(std::ostream& os, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  os.write(reinterpret_cast<const char*>(b), sizeof(T));
}

template <class T>
T get(std::istream& is) {
  unsigned char b[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(b), sizeof(T))) throw ConfigError("checkpoint: truncated file");
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  T v;
  std::memcpy(&v, b, sizeof(T));
  return v;
}

void put_string(std::ostream& os, std::string_view s) {
  put<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& is) {
  const auto n = get<std::uint32_t>(is);
  if (n > (1u << 26)) throw ConfigError("checkpoint: implausible string length");
  std::string s(n, '\0');
  if (n && !is.read(s.data(), n)) throw ConfigError("checkpoint: truncated file");
  return s;
}

void put_payload(std::ostream& os, const Matrix& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) put<double>(os, m(r, c));
}

Matrix get_payload(std::istream& is, std::uint32_t rows, std::uint32_t cols) {
  Matrix m(rows, cols);
  for (std::uint32_t r = 0; r < rows; ++r)
    for (std::uint32_t c = 0; c < cols; ++c) m(r, c) = get<double>(is);
  return m;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params, std::string_view config_hash,
                     const AdamState* optimizer) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw ConfigError("checkpoint: cannot open " + tmp);
    os.write(kMagic, sizeof kMagic);
    put<std::uint32_t>(os, kFormatVersion);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(ModelParams::kVersion));
    put_string(os, config_hash);
    nlohmann::json meta;
    meta["model"] = params.config;
    put_string(os, meta.dump());
    const auto named = params.named_tensors();
    put<std::uint32_t>(os, static_cast<std::uint32_t>(named.size()));
    for (const auto& [name, m] : named) {
      put_string(os, name);
      put<std::uint32_t>(os, static_cast<std::uint32_t>(m->rows()));
      put<std::uint32_t>(os, static_cast<std::uint32_t>(m->cols()));
      put_payload(os, *m);
    }
    const bool with_opt = optimizer != nullptr && optimizer->m.size() == named.size();
    put<std::uint8_t>(os, with_opt ? 1 : 0);
    if (with_opt) {
      put<std::int64_t>(os, optimizer->step);
      for (std::size_t i = 0; i < named.size(); ++i) {
        put_payload(os, optimizer->m[i]);
        put_payload(os, optimizer->v[i]);
      }
    }
    if (!os) throw ConfigError("checkpoint: write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("checkpoint: cannot open " + path.string());
  char magic[8];
  if (!is.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0)
    throw ConfigError("checkpoint: bad magic in " + path.string());
  if (get<std::uint32_t>(is) != kFormatVersion) throw ConfigError("checkpoint: unsupported format version");
  if (get<std::uint32_t>(is) != static_cast<std::uint32_t>(ModelParams::kVersion))
    throw ConfigError("checkpoint: unsupported model version");
  Checkpoint ck;
  ck.config_hash = get_string(is);
  ck.metadata = get_string(is);
  const auto count = get<std::uint32_t>(is);
  std::vector<std::pair<std::uint32_t, std::uint32_t>> shapes;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = get_string(is);
    const auto rows = get<std::uint32_t>(is);
    const auto cols = get<std::uint32_t>(is);
    shapes.emplace_back(rows, cols);
    ck.tensors.emplace_back(std::move(name), get_payload(is, rows, cols));
  }
  if (get<std::uint8_t>(is) == 1) {
    AdamState st;
    st.step = get<std::int64_t>(is);
    for (const auto& [r, c] : shapes) {
      st.m.push_back(get_payload(is, r, c));
      st.v.push_back(get_payload(is, r, c));
    }
    ck.optimizer = std::move(st);
  }
  return ck;
}

void load_into(const Checkpoint& ckpt, ModelParams& params) {
  auto named = params.named_tensors();
  if (named.size() != ckpt.tensors.size())
    throw ConfigError("checkpoint: tensor count " + std::to_string(ckpt.tensors.size()) + " does not match model (" +
                      std::to_string(named.size()) + ")");
  for (std::size_t i = 0; i < named.size(); ++i) {
    const auto& [name, m] = ckpt.tensors[i];
    if (name != named[i].first) throw ConfigError("checkpoint: expected tensor " + named[i].first + ", found " + name);
    if (m.rows() != named[i].second->rows() || m.cols() != named[i].second->cols())
      throw ConfigError("checkpoint: shape mismatch for " + name);
    *named[i].second = m;
  }
}

}  // namespace xplace

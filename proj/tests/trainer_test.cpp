#include "support.hpp"
#include "xplace/config_io.hpp"
#include "xplace/trainer.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <utility>

using namespace xplace;
namespace fs = std::filesystem;

namespace {

GenConfig tiny_gen(int rows, int cols, int views = 2) {
  GenConfig g;
  g.grid_rows = rows;
  g.grid_cols = cols;
  g.views = views;
  g.latent_dim = 8;
  g.image_tokens = 8;
  g.image_dim = 12;
  g.text_tokens = 8;
  g.text_dim = 10;
  g.sentence_len = 4;
  g.image_distractors = 2;
  return g;
}

ModelConfig tiny_model(const GenConfig& g) {
  ModelConfig m;
  m.text.hidden_dim = 16;
  m.text.heads = 2;
  m.text.ff_mult = 2;
  m.image.hidden_dim = 8;
  m.image.clusters = 4;
  m.image.cluster_dim = 4;
  m.image.train_iters = 10;
  return model_config_for(g, m);
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "xplace_trainer_test";
  fs::create_directories(dir);
  return dir / name;
}

// Oracle: one direction of the contrastive loss, written as explicit loops.
double one_direction(const Matrix& a, const Matrix& b, double t) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    long double z = 0.0L;
    for (Eigen::Index k = 0; k < b.rows(); ++k)
      z += std::exp(static_cast<long double>(a.row(i).dot(b.row(k)) / (a.row(i).norm() * b.row(k).norm()) / t));
    total += static_cast<double>(std::log(z)) - a.row(i).dot(b.row(i)) / (a.row(i).norm() * b.row(i).norm()) / t;
  }
  return total / static_cast<double>(a.rows());
}

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("info_nce examples") {
  const Matrix eye = Matrix::Identity(2, 2);
  CHECK(info_nce(eye, eye, 1.0) == doctest::Approx(std::log1p(std::exp(-1.0))).epsilon(1e-14));
  // Swapped pairing: the positive is the orthogonal row.
  const Matrix swapped = (Matrix(2, 2) << 0, 1, 1, 0).finished();
  CHECK(info_nce(eye, swapped, 1.0) == doctest::Approx(std::log1p(std::exp(1.0))).epsilon(1e-14));
  // Identical rows everywhere: no information, loss is ln(batch).
  CHECK(info_nce(Matrix::Ones(5, 3), Matrix::Ones(5, 3), 0.07) == doctest::Approx(std::log(5.0)).epsilon(1e-12));

  Rng rng(1);
  const Matrix t = test::random_matrix(6, 4, rng), im = test::random_matrix(6, 4, rng);
  const double t2i = one_direction(t, im, 0.07), i2t = one_direction(im, t, 0.07);
  CHECK(info_nce(t, im, 0.07, LossDirection::kTextToImage) == doctest::Approx(t2i).epsilon(1e-12));
  CHECK(info_nce(t, im, 0.07) == doctest::Approx(0.5 * (t2i + i2t)).epsilon(1e-12));

  // Recorded version on unit rows agrees.
  ad::Tape tape;
  const auto rec = info_nce(tape.constant(test::unit_rows(t)), tape.constant(test::unit_rows(im)), 0.07,
                            LossDirection::kSymmetric);
  CHECK(rec.scalar() == doctest::Approx(0.5 * (t2i + i2t)).epsilon(1e-12));

  CHECK_THROWS_AS(info_nce(Matrix(0, 3), Matrix(0, 3), 0.07), DomainError);
  CHECK_THROWS_AS(info_nce(eye, eye, 0.0), DomainError);
}

TEST_CASE("adam first step moves each entry by lr against the gradient sign") {
  Matrix a = (Matrix(1, 3) << 1.0, 2.0, 3.0).finished();
  Matrix b = Matrix::Zero(2, 2);
  std::vector<Matrix*> params{&a, &b};
  const std::vector<Matrix> grads{(Matrix(1, 3) << 0.5, -20.0, 1e-3).finished(), Matrix::Zero(2, 2)};
  const std::vector<std::string> names{"a", "b"};
  AdamState st;
  adam_step(params, grads, names, st, AdamConfig{0.01});
  CHECK(st.step == 1);
  CHECK(a(0, 0) == doctest::Approx(0.99).epsilon(1e-6));
  CHECK(a(0, 1) == doctest::Approx(2.01).epsilon(1e-6));
  CHECK(a(0, 2) == doctest::Approx(2.99).epsilon(1e-4));
  CHECK(b == Matrix::Zero(2, 2));

  // Bias correction on step two with a repeated gradient: still lr.
  const double before = a(0, 0);
  adam_step(params, grads, names, st, AdamConfig{0.01});
  CHECK(before - a(0, 0) == doctest::Approx(0.01).epsilon(1e-6));
}

TEST_CASE("adam rejects non-finite gradients without touching parameters") {
  Matrix a = Matrix::Ones(2, 2), b = Matrix::Ones(1, 1);
  std::vector<Matrix*> params{&a, &b};
  std::vector<Matrix> grads{Matrix::Ones(2, 2), Matrix::Constant(1, 1, std::nan(""))};
  const std::vector<std::string> names{"text.mlp1.weight", "image.temperature"};
  AdamState st;
  try {
    adam_step(params, grads, names, st, AdamConfig{});
    FAIL("expected DomainError");
  } catch (const DomainError& e) {
    CHECK(std::string(e.what()).find("image.temperature") != std::string::npos);
  }
  CHECK(a == Matrix::Ones(2, 2));
  CHECK(st.step == 0);

  grads[1] = Matrix::Ones(2, 1);
  CHECK_THROWS_AS(adam_step(params, grads, names, st, AdamConfig{}), ConfigError);
}

TEST_CASE("initial loss on random data is close to ln(batch)") {
  // Unit descriptors from independent random inputs have cross-modal
  // cosines of spread about 1/sqrt(D); at a loss temperature of 1 that
  // spread is negligible and the loss sits at the uniform limit.
  GenConfig g;
  g.correlation = 0.0;
  const Dataset d = generate(g);
  const auto params = ModelParams::init(model_config_for(g), 3);
  std::vector<const ViewData*> pairs;
  for (std::size_t i = 0; i < 64; ++i) pairs.push_back(&d.entries[i].views[i % 4]);
  TrainConfig tc;
  tc.contrastive_temperature = 1.0;
  const auto bg = batch_gradient(params, pairs, tc);
  CHECK(std::abs(bg.loss - std::log(64.0)) < 0.1 * std::log(64.0));
}

TEST_CASE("batch gradient matches finite differences") {
  const auto g = tiny_gen(1, 3);
  const Dataset d = generate(g);
  auto m = tiny_model(g);
  m.text.init_gain = 0.8;
  m.image.init_gain = 0.8;
  const auto params = ModelParams::init(m, 5);
  std::vector<const ViewData*> pairs{&d.entries[0].views[0], &d.entries[1].views[1], &d.entries[2].views[0]};
  TrainConfig tc;
  tc.contrastive_temperature = 0.5;
  const auto bg = batch_gradient(params, pairs, tc);

  // Probe a handful of entries in every tensor.
  const auto named = params.named_tensors();
  REQUIRE(bg.grads.size() == named.size());
  double worst = 0.0;
  for (std::size_t t = 0; t < named.size(); ++t) {
    const Matrix& base = *named[t].second;
    for (Eigen::Index i = 0; i < base.size(); i += std::max<Eigen::Index>(1, base.size() / 3)) {
      auto f = [&](const Vector& v) {
        ModelParams q = params;
        (*q.named_tensors()[t].second)(i) = v(0);
        return batch_gradient(q, pairs, tc).loss;
      };
      const auto r = grad_check(f, Vector::Constant(1, bg.grads[t](i)), Vector::Constant(1, base(i)));
      worst = std::max(worst, r.max_rel_error);
    }
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("two locations are separated quickly") {
  const auto g = tiny_gen(1, 2, 1);
  const Dataset d = generate(g);
  const auto m = tiny_model(g);
  ModelParams params = ModelParams::init(m, 9);
  std::vector<const ViewData*> pairs{&d.entries[0].views[0], &d.entries[1].views[0]};
  TrainConfig tc;
  auto named = params.named_tensors();
  std::vector<Matrix*> tensors;
  std::vector<std::string> names;
  for (auto& [n, t] : named) {
    names.push_back(n);
    tensors.push_back(t);
  }
  AdamState st;
  double loss = 1e9;
  int steps = 0;
  for (; steps < 200 && loss >= 0.05; ++steps) {
    const auto bg = batch_gradient(params, pairs, tc);
    loss = bg.loss;
    adam_step(tensors, bg.grads, names, st, AdamConfig{1e-2});
  }
  CAPTURE(steps);
  CHECK(loss < 0.05);
}

TEST_CASE("training is deterministic") {
  const auto g = tiny_gen(3, 4);
  const Dataset d = split(generate(g), {0.5, 0.25, 0.25}, 3);
  const auto train_set = d.entries_in(Split::kTrain), val_set = d.entries_in(Split::kVal);
  TrainConfig tc;
  tc.batch_size = 4;
  tc.epochs = 2;
  tc.learning_rate = 1e-3;
  for (auto strategy : {TrainStrategy::kSingle, TrainStrategy::kGroup}) {
    tc.strategy = strategy;
    const auto a = train(train_set, val_set, tiny_model(g), tc);
    const auto b = train(train_set, val_set, tiny_model(g), tc);
    CHECK(a.history.digest() == b.history.digest());
    const auto ta = a.final.named_tensors(), tb = b.final.named_tensors();
    for (std::size_t i = 0; i < ta.size(); ++i) CHECK(*ta[i].second == *tb[i].second);
    CHECK(a.history.epochs.size() == 2);
    CHECK(a.history.best_epoch >= 0);

    tc.seed = 2;
    const auto c = train(train_set, val_set, tiny_model(g), tc);
    CHECK(c.history.digest() != a.history.digest());
    tc.seed = 1;
  }
}

TEST_CASE("mismatched token dims fail before training") {
  const auto g = tiny_gen(2, 2);
  const Dataset d = generate(g);
  auto m = tiny_model(g);
  m.text.token_dim += 1;
  CHECK_THROWS_AS(train(d.entries, {}, m, TrainConfig{}), ConfigError);
}

TEST_CASE("checkpoint round trip") {
  const auto g = tiny_gen(2, 2);
  const auto m = tiny_model(g);
  const auto params = ModelParams::init(m, 4);
  AdamState st;
  for (const auto& [n, t] : params.named_tensors()) {
    st.m.push_back(Matrix::Constant(t->rows(), t->cols(), 0.25));
    st.v.push_back(Matrix::Constant(t->rows(), t->cols(), 1e-300));
  }
  st.step = 17;
  const auto path = scratch("round_trip.bin");
  save_checkpoint(path, params, "0123456789abcdef", &st);
  const Checkpoint ck = read_checkpoint(path);
  CHECK(ck.config_hash == "0123456789abcdef");
  REQUIRE(ck.optimizer.has_value());
  CHECK(ck.optimizer->step == 17);
  CHECK(ck.optimizer->v.front()(0, 0) == 1e-300);

  ModelConfig back;
  from_json(nlohmann::json::parse(ck.metadata).at("model"), back);
  CHECK(nlohmann::json(back) == nlohmann::json(m));

  ModelParams loaded = ModelParams::init(m, 99);
  load_into(ck, loaded);
  const auto a = params.named_tensors();
  const auto b = std::as_const(loaded).named_tensors();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].first == b[i].first);
    CHECK(*a[i].second == *b[i].second);
  }

  // Saving again produces the same bytes.
  const auto path2 = scratch("round_trip2.bin");
  save_checkpoint(path2, loaded, "0123456789abcdef", &st);
  auto slurp = [](const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(is), {});
  };
  CHECK(slurp(path) == slurp(path2));

  // Wrong shapes and damaged files are refused.
  auto other = m;
  other.image.clusters = 5;
  ModelParams wrong = ModelParams::init(model_config_for(g, other), 1);
  CHECK_THROWS_AS(load_into(ck, wrong), ConfigError);

  std::string bytes = slurp(path);
  {
    std::ofstream os(scratch("truncated.bin"), std::ios::binary);
    os << bytes.substr(0, bytes.size() / 2);
  }
  CHECK_THROWS_AS(read_checkpoint(scratch("truncated.bin")), ConfigError);
  bytes[0] = 'Y';
  {
    std::ofstream os(scratch("magic.bin"), std::ios::binary);
    os << bytes;
  }
  CHECK_THROWS_AS(read_checkpoint(scratch("magic.bin")), ConfigError);
}

TEST_CASE("config validation") {
  TrainConfig tc;
  tc.batch_size = 1;
  CHECK_THROWS_AS(tc.validate(), ConfigError);
  tc = TrainConfig{};
  tc.contrastive_temperature = 0.0;
  CHECK_THROWS_AS(tc.validate(), ConfigError);
  CHECK(train_strategy_from_string(to_string(TrainStrategy::kGroup)) == TrainStrategy::kGroup);
  CHECK_THROWS_AS(loss_direction_from_string("sideways"), ConfigError);
}

}  // TEST_SUITE

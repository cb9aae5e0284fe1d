#include "support.hpp"
#include "xplace/text_head.hpp"

#include <doctest.h>

#include <cmath>

using namespace xplace;

namespace {

TextHeadConfig small_config(TextHeadVariant variant = TextHeadVariant::kMlpThenTransformer) {
  TextHeadConfig c;
  c.token_dim = 4;
  c.hidden_dim = 8;
  c.output_dim = 8;
  c.heads = 2;
  c.ff_mult = 2;
  c.variant = variant;
  // Larger than the training defaults so the blocks visibly move the output.
  c.init_gain = 0.8;
  c.residual_gain = 1.0;
  c.positional_scale = 1.0;
  return c;
}

TextTokenSequence random_sequence(Rng& rng, std::vector<std::size_t> ends, Eigen::Index dim = 4) {
  TextTokenSequence s;
  s.tokens = test::random_matrix(static_cast<Eigen::Index>(ends.back()), dim, rng);
  s.sentence_ends = std::move(ends);
  return s;
}

// Independent straight-line forward pass, plain Eigen, no tape.
namespace ref {

Matrix lin(const Linear& l, const Matrix& x) { return (x * l.weight).rowwise() + l.bias.row(0); }

Matrix layer_norm(const Matrix& x, const Matrix& g, const Matrix& b) {
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double mu = x.row(i).mean();
    double var = 0.0;
    for (Eigen::Index j = 0; j < x.cols(); ++j) var += (x(i, j) - mu) * (x(i, j) - mu);
    var /= static_cast<double>(x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j) out(i, j) = (x(i, j) - mu) / std::sqrt(var + 1e-5) * g(0, j) + b(0, j);
  }
  return out;
}

Matrix block(const TransformerBlock& b, const Matrix& x, int heads) {
  const Matrix h = layer_norm(x, b.ln1_gamma, b.ln1_beta);
  const Matrix q = lin(b.query, h), k = lin(b.key, h), v = lin(b.value, h);
  const Eigen::Index hd = x.cols() / heads;
  Matrix att(x.rows(), x.cols());
  for (int m = 0; m < heads; ++m) {
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      std::vector<double> w(static_cast<std::size_t>(x.rows()));
      double mx = -1e300;
      for (Eigen::Index j = 0; j < x.rows(); ++j) {
        double dot = 0.0;
        for (Eigen::Index c = 0; c < hd; ++c) dot += q(i, m * hd + c) * k(j, m * hd + c);
        w[static_cast<std::size_t>(j)] = dot / std::sqrt(static_cast<double>(hd));
        mx = std::max(mx, w[static_cast<std::size_t>(j)]);
      }
      double z = 0.0;
      for (double& e : w) z += (e = std::exp(e - mx));
      for (Eigen::Index c = 0; c < hd; ++c) {
        double acc = 0.0;
        for (Eigen::Index j = 0; j < x.rows(); ++j) acc += w[static_cast<std::size_t>(j)] / z * v(j, m * hd + c);
        att(i, m * hd + c) = acc;
      }
    }
  }
  const Matrix x1 = x + lin(b.out, att);
  const Matrix f = lin(b.ff1, layer_norm(x1, b.ln2_gamma, b.ln2_beta)).cwiseMax(0.0);
  return x1 + lin(b.ff2, f);
}

Matrix positions(Eigen::Index n, Eigen::Index d) {
  Matrix pe(n, d);
  for (Eigen::Index p = 0; p < n; ++p)
    for (Eigen::Index i = 0; i < d; i += 2) {
      const double angle = static_cast<double>(p) / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d));
      pe(p, i) = std::sin(angle);
      if (i + 1 < d) pe(p, i + 1) = std::cos(angle);
    }
  return pe;
}

RowVector encode(const TextTokenSequence& s, const TextHeadParams& p) {
  const auto& w = p.weights;
  const auto& c = p.config;
  Matrix x(static_cast<Eigen::Index>(s.sentence_count()), s.tokens.cols());
  std::size_t begin = 0;
  for (std::size_t k = 0; k < s.sentence_count(); ++k) {
    for (Eigen::Index j = 0; j < s.tokens.cols(); ++j) {
      double m = -1e300;
      for (std::size_t t = begin; t < s.sentence_ends[k]; ++t) m = std::max(m, s.tokens(static_cast<Eigen::Index>(t), j));
      x(static_cast<Eigen::Index>(k), j) = m;
    }
    begin = s.sentence_ends[k];
  }
  const bool pre = c.variant == TextHeadVariant::kTransformerThenMlp || c.variant == TextHeadVariant::kBoth;
  const bool post = c.variant == TextHeadVariant::kMlpThenTransformer || c.variant == TextHeadVariant::kBoth;
  if (pre) x = block(w.pre, x + c.positional_scale * positions(x.rows(), x.cols()), c.heads);
  x = lin(w.mlp2, lin(w.mlp1, x).cwiseMax(0.0));
  if (post) x = block(w.post, x + c.positional_scale * positions(x.rows(), x.cols()), c.heads);
  RowVector mean = x.colwise().mean();
  return mean / mean.norm();
}

}  // namespace ref

}  // namespace

TEST_SUITE("text_head") {

TEST_CASE("sentence maxpool examples") {
  TextTokenSequence s;
  s.tokens = (Matrix(3, 2) << 1, 5, 3, 2, -1, -4).finished();
  s.sentence_ends = {2, 3};
  const Matrix pooled = sentence_maxpool(s);
  CHECK(pooled == (Matrix(2, 2) << 3, 5, -1, -4).finished());

  s.sentence_ends = {3};
  CHECK(sentence_maxpool(s) == (Matrix(1, 2) << 3, 5).finished());
}

TEST_CASE("malformed sequences are rejected") {
  TextTokenSequence s;
  s.tokens = Matrix::Zero(4, 2);
  s.sentence_ends = {2, 2, 4};
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s.sentence_ends = {2, 3};
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s.sentence_ends = {};
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s.sentence_ends = {4};
  CHECK_NOTHROW(s.validate());

  Rng rng(1);
  const auto p = TextHeadParams::init(small_config(), rng);
  TextTokenSequence wide;
  wide.tokens = Matrix::Ones(2, 5);
  wide.sentence_ends = {2};
  CHECK_THROWS_AS(encode_text(wide, p), ConfigError);
}

TEST_CASE("variant names round trip") {
  for (auto v : {TextHeadVariant::kMlp, TextHeadVariant::kMlpThenTransformer, TextHeadVariant::kTransformerThenMlp,
                 TextHeadVariant::kBoth})
    CHECK(text_head_variant_from_string(to_string(v)) == v);
  CHECK(to_string(TextHeadVariant::kBoth) == "T1+M+T2");
  CHECK_THROWS_AS(text_head_variant_from_string("T3"), ConfigError);
}

TEST_CASE("matches an independent reference forward pass") {
  for (auto variant : {TextHeadVariant::kMlp, TextHeadVariant::kMlpThenTransformer,
                       TextHeadVariant::kTransformerThenMlp, TextHeadVariant::kBoth}) {
    CAPTURE(to_string(variant));
    Rng rng(21);
    const auto p = TextHeadParams::init(small_config(variant), rng);
    const auto seq = random_sequence(rng, {3, 5, 9});
    const RowVector got = encode_text(seq, p);
    const RowVector want = ref::encode(seq, p);
    CHECK(got.size() == 8);
    CHECK(test::max_abs(got - want) < 1e-12);
  }
}

TEST_CASE("output has unit norm") {
  Rng rng(2);
  const auto p = TextHeadParams::init(small_config(), rng);
  for (int t = 0; t < 20; ++t) {
    const auto seq = random_sequence(rng, {2, 4, 7, 8});
    CHECK(encode_text(seq, p).norm() == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("token order within a sentence does not matter") {
  Rng rng(3);
  const auto p = TextHeadParams::init(small_config(), rng);
  const auto seq = random_sequence(rng, {4, 8});
  auto shuffled = seq;
  shuffled.tokens.row(0).swap(shuffled.tokens.row(3));
  shuffled.tokens.row(5).swap(shuffled.tokens.row(6));
  CHECK(test::max_abs(encode_text(seq, p) - encode_text(shuffled, p)) < 1e-14);
}

TEST_CASE("sentence order matters once positions are added") {
  Rng rng(4);
  const auto p = TextHeadParams::init(small_config(), rng);
  const auto seq = random_sequence(rng, {4, 8});
  auto swapped = seq;
  swapped.tokens.topRows(4).swap(swapped.tokens.bottomRows(4));
  CHECK(test::max_abs(encode_text(seq, p) - encode_text(swapped, p)) > 1e-6);

  // The MLP-only head has no positional signal and mean-pools sentences.
  Rng rng2(4);
  const auto m = TextHeadParams::init(small_config(TextHeadVariant::kMlp), rng2);
  CHECK(test::max_abs(encode_text(seq, m) - encode_text(swapped, m)) < 1e-14);
}

TEST_CASE("recorded pass has correct gradients") {
  for (auto variant : {TextHeadVariant::kMlpThenTransformer, TextHeadVariant::kBoth}) {
    CAPTURE(to_string(variant));
    Rng rng(5);
    const auto p = TextHeadParams::init(small_config(variant), rng);
    const auto seq = random_sequence(rng, {2, 5, 6});
    const Matrix probe = test::random_matrix(1, 8, rng);

    // Flatten every tensor into one parameter vector.
    std::vector<Eigen::Index> sizes;
    auto w = p.weights;
    w.visit("", [&](const std::string&, Matrix& m) { sizes.push_back(m.size()); });
    Eigen::Index total = 0;
    for (auto s : sizes) total += s;
    Vector flat(total);
    Eigen::Index at = 0;
    w.visit("", [&](const std::string&, Matrix& m) {
      flat.segment(at, m.size()) = m.reshaped();
      at += m.size();
    });
    auto unflatten = [&](const Vector& v) {
      auto out = p.weights;
      Eigen::Index i = 0;
      out.visit("", [&](const std::string&, Matrix& m) {
        m = v.segment(i, m.size()).reshaped(m.rows(), m.cols());
        i += m.size();
      });
      return out;
    };

    ad::Tape tape;
    auto bound = bind(tape, p.weights, true);
    const auto out = encode_text(tape, bound, p.config, seq);
    const auto loss = ad::sum_all(ad::hadamard(out, tape.constant(probe)));
    tape.backward(loss);
    Vector analytic(total);
    at = 0;
    for (const auto& g : gradients(tape, bound)) {
      analytic.segment(at, g.size()) = g.reshaped();
      at += g.size();
    }

    auto f = [&](const Vector& v) {
      TextHeadParams q = p;
      q.weights = unflatten(v);
      return encode_text(seq, q).dot(probe.row(0));
    };
    const auto r = grad_check(f, analytic, flat);
    CHECK(r.non_finite_index == -1);
    CHECK(r.max_rel_error < 1e-4);
  }
}

}  // TEST_SUITE

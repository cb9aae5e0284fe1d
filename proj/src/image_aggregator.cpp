#include "xplace/image_aggregator.hpp"

#include <cmath>

namespace xplace {

std::string_view to_string(Aggregation a) { return a == Aggregation::kSinkhorn ? "sinkhorn" : "maxpool"; }

Aggregation aggregation_from_string(std::string_view s) {
  if (s == "sinkhorn") return Aggregation::kSinkhorn;
  if (s == "maxpool") return Aggregation::kMaxPool;
  throw ConfigError("unknown aggregation: " + std::string(s));
}

void ImageTokenSet::validate() const {
  if (local.rows() < 1) throw ConfigError("image token set has no local tokens");
  if (!local.allFinite()) throw ConfigError("image tokens must be finite");
  if (global && (global->size() != local.cols() || !global->allFinite()))
    throw ConfigError("global token must be finite and match the local token dim");
}

double unit_temperature_raw() { return std::log(std::exp(1.0) - 1.0); }

AggregatorParams AggregatorParams::init(const AggregatorConfig& config, Rng& rng) {
  if (config.token_dim < 1 || config.hidden_dim < 1 || config.clusters < 1 || config.cluster_dim < 1)
    throw ConfigError("aggregator dimensions must be positive");
  if (!(config.reg > 0.0)) throw ConfigError("sinkhorn reg must be positive");
  AggregatorParams p;
  p.config = config;
  p.weights.score1 = init_linear(config.token_dim, config.hidden_dim, rng, config.init_gain);
  p.weights.score2 = init_linear(config.hidden_dim, config.clusters, rng, config.init_gain);
  p.weights.projection = init_linear(config.token_dim, config.cluster_dim, rng, config.init_gain);
  p.weights.temperature = Matrix::Constant(1, 1, unit_temperature_raw());
  return p;
}

double AggregatorParams::tau() const {
  if (!config.learnable_temperature) return 1.0;
  const double x = weights.temperature(0, 0);
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

namespace {

void check_token_dim(const ImageTokenSet& tokens, Eigen::Index expected) {
  tokens.validate();
  if (tokens.local.cols() != expected)
    throw ConfigError("image token dim " + std::to_string(tokens.local.cols()) + " does not match aggregator input " +
                      std::to_string(expected));
}

Vector uniform_col(Eigen::Index n) { return Vector::Constant(n, 1.0 / static_cast<double>(n)); }
RowVector uniform_row(Eigen::Index n) { return RowVector::Constant(n, 1.0 / static_cast<double>(n)); }

}  // namespace

Matrix score_tokens(const ImageTokenSet& tokens, const AggregatorParams& params) {
  check_token_dim(tokens, params.config.token_dim);
  const auto& w = params.weights;
  Matrix hidden = (tokens.local * w.score1.weight).rowwise() + w.score1.bias.row(0);
  hidden = hidden.cwiseMax(0.0);
  return (hidden * w.score2.weight).rowwise() + w.score2.bias.row(0);
}

SinkhornResult sinkhorn(const Matrix& scores, double reg, const Vector& a, const RowVector& b, int iters, double tol,
                        bool scores_are_affinity) {
  const Eigen::Index n = scores.rows(), c = scores.cols();
  if (!(reg > 0.0)) throw DomainError("sinkhorn: reg must be positive");
  if (a.size() != n || b.size() != c) throw ConfigError("sinkhorn: marginal sizes do not match the score matrix");
  if ((a.array() <= 0.0).any() || (b.array() <= 0.0).any())
    throw DomainError("sinkhorn: marginals must be strictly positive");
  if (!scores.allFinite()) throw DomainError("sinkhorn: non-finite scores");

  const Matrix s_reg = (scores_are_affinity ? 1.0 : -1.0) * scores / reg;
  const Vector log_a = a.array().log();
  const RowVector log_b = b.array().log();

  SinkhornResult r;
  r.u = Vector::Zero(n);
  r.v = RowVector::Zero(c);
  Matrix work(n, c);
  for (int it = 0; it < iters; ++it) {
    work = s_reg.rowwise() + r.v;
    for (Eigen::Index i = 0; i < n; ++i) r.u(i) = log_a(i) - logsumexp(Vector(work.row(i).transpose()));
    work = s_reg.colwise() + r.u;
    for (Eigen::Index j = 0; j < c; ++j) r.v(j) = log_b(j) - logsumexp(Vector(work.col(j)));
    r.iterations = it + 1;

    // Column marginals are exact after the v update; rows carry the error.
    work.rowwise() += r.v;
    const Vector row_sums = work.array().exp().rowwise().sum();
    r.max_violation = (row_sums - a).cwiseAbs().maxCoeff();
    if (r.max_violation < tol) {
      r.converged = true;
      break;
    }
  }
  r.log_plan = (s_reg.colwise() + r.u).rowwise() + r.v;
  return r;
}

TransportPlan temper_plan(const Matrix& log_plan, const Vector& a, const RowVector& b, double tau) {
  if (!(tau > 0.0)) throw DomainError("temper_plan: tau must be positive");
  if (a.size() != log_plan.rows()) throw ConfigError("temper_plan: row marginal size mismatch");
  TransportPlan out;
  out.a = a;
  out.b = b;
  out.plan.resize(log_plan.rows(), log_plan.cols());
  for (Eigen::Index i = 0; i < log_plan.rows(); ++i) {
    const RowVector z = log_plan.row(i) / tau;
    const double mx = z.maxCoeff();
    RowVector e = (z.array() - mx).exp();
    out.plan.row(i) = a(i) * e / e.sum();
  }
  return out;
}

Matrix aggregate_clusters(const TransportPlan& plan, const ImageTokenSet& tokens, const AggregatorParams& params) {
  check_token_dim(tokens, params.config.token_dim);
  if (plan.plan.rows() != tokens.local.rows() || plan.plan.cols() != params.config.clusters)
    throw ConfigError("aggregate_clusters: plan shape does not match tokens x clusters");
  const auto& proj = params.weights.projection;
  const Matrix features = (tokens.local * proj.weight).rowwise() + proj.bias.row(0);
  return plan.plan.transpose() * features;
}

RowVector encode_image(const ImageTokenSet& tokens, const AggregatorParams& params) {
  const auto& cfg = params.config;
  if (cfg.aggregation == Aggregation::kMaxPool) return maxpool_aggregate(tokens);
  const Matrix s = score_tokens(tokens, params);
  const Vector a = uniform_col(s.rows());
  const RowVector b = uniform_row(s.cols());
  const SinkhornResult sk = sinkhorn(s, cfg.reg, a, b, cfg.eval_iters, cfg.eval_tol, cfg.scores_are_affinity);
  const TransportPlan plan = temper_plan(sk.log_plan, a, b, params.tau());
  const Matrix f = aggregate_clusters(plan, tokens, params);
  RowVector flat(f.size());
  for (Eigen::Index j = 0; j < f.rows(); ++j) flat.segment(j * f.cols(), f.cols()) = f.row(j);
  return l2_normalized(flat);
}

RowVector maxpool_aggregate(const ImageTokenSet& tokens) {
  tokens.validate();
  return l2_normalized(tokens.local.colwise().maxCoeff());
}

ad::Var encode_image(ad::Tape& tape, const AggregatorWeights<ad::Var>& w, const AggregatorConfig& config,
                     const ImageTokenSet& tokens, int iters) {
  check_token_dim(tokens, config.token_dim);
  ad::Var x = tape.constant(tokens.local);
  if (config.aggregation == Aggregation::kMaxPool) {
    const std::size_t ends[] = {static_cast<std::size_t>(tokens.local.rows())};
    return ad::normalize(ad::segment_max_rows(x, ends));
  }
  const Eigen::Index n = tokens.local.rows(), c = config.clusters;

  ad::Var scores = linear(w.score2, ad::relu(linear(w.score1, x)));
  ad::Var s_reg = ad::scale(scores, (config.scores_are_affinity ? 1.0 : -1.0) / config.reg);

  const Vector a = uniform_col(n);
  ad::Var log_a = tape.constant(Matrix(a.array().log().matrix()));
  ad::Var log_b = tape.constant(Matrix(uniform_row(c).array().log().matrix()));
  ad::Var u = tape.constant(Matrix::Zero(n, 1));
  ad::Var v = tape.constant(Matrix::Zero(1, c));
  for (int it = 0; it < iters; ++it) {
    u = ad::sub(log_a, ad::lse_rows(ad::add_row(s_reg, v)));
    v = ad::sub(log_b, ad::lse_cols(ad::add_col(s_reg, u)));
  }
  ad::Var log_plan = ad::add_row(ad::add_col(s_reg, u), v);

  ad::Var tempered = config.learnable_temperature ? ad::div_scalar(log_plan, ad::softplus(w.temperature)) : log_plan;
  ad::Var plan = ad::mul_col(ad::softmax_rows(tempered), tape.constant(Matrix(a)));

  ad::Var features = linear(w.projection, x);
  ad::Var clusters = ad::matmul(ad::transpose(plan), features);
  return ad::normalize(ad::flatten(clusters));
}

}  // namespace xplace

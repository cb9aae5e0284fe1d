#pragma once

#include "xplace/layers.hpp"

#include <optional>
#include <string_view>

namespace xplace {

/// Local tokens of one image plus the backbone's optional global token.
/// The global token is carried through ingestion but not used by the
/// descriptor.
struct ImageTokenSet {
  Matrix local;  // n x token_dim
  std::optional<RowVector> global;

  void validate() const;
  friend bool operator==(const ImageTokenSet&, const ImageTokenSet&) = default;
};

enum class Aggregation { kSinkhorn, kMaxPool };
std::string_view to_string(Aggregation a);
Aggregation aggregation_from_string(std::string_view s);

struct AggregatorConfig {
  Eigen::Index token_dim = 64;
  Eigen::Index hidden_dim = 32;
  Eigen::Index clusters = 8;
  Eigen::Index cluster_dim = 8;
  double reg = 0.1;
  // Scores are affinities (higher = more mass). When false they are
  // treated as costs and negated before scaling.
  bool scores_are_affinity = true;
  // When false the temperature is pinned at 1 and receives no updates.
  bool learnable_temperature = true;
  int train_iters = 50;
  int eval_iters = 100;
  double eval_tol = 1e-6;
  Aggregation aggregation = Aggregation::kSinkhorn;
  double init_gain = 0.05;

  Eigen::Index descriptor_dim() const {
    return aggregation == Aggregation::kMaxPool ? token_dim : clusters * cluster_dim;
  }
};

template <class T>
struct AggregatorWeights {
  LinearT<T> score1, score2;
  LinearT<T> projection;
  // 1 x 1; tau = softplus(temperature).
  T temperature;

  template <class Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    score1.visit(prefix + "score1", fn);
    score2.visit(prefix + "score2", fn);
    projection.visit(prefix + "projection", fn);
    fn(prefix + "temperature", temperature);
  }
};

struct AggregatorParams {
  AggregatorConfig config;
  AggregatorWeights<Matrix> weights;

  static AggregatorParams init(const AggregatorConfig& config, Rng& rng);
  /// softplus(theta), or exactly 1 when the temperature is disabled.
  double tau() const;
};

/// softplus^{-1}(1) = log(e - 1): the raw value that starts tau at 1.
double unit_temperature_raw();

/// Token-to-cluster score matrix, n x C. Rows come from the two-layer
/// network applied to each local token.
Matrix score_tokens(const ImageTokenSet& tokens, const AggregatorParams& params);

struct SinkhornResult {
  Vector u;          // n
  RowVector v;       // C
  Matrix log_plan;   // S/reg + u (+) v
  int iterations = 0;
  bool converged = false;
  double max_violation = 0.0;
};

/// Log-domain Sinkhorn scaling on S/reg with marginals a (rows) and b
/// (columns). Stops after `iters` sweeps or once the largest marginal
/// violation of exp(log_plan) drops below `tol`.
SinkhornResult sinkhorn(const Matrix& scores, double reg, const Vector& a, const RowVector& b, int iters,
                        double tol, bool scores_are_affinity = true);

struct TransportPlan {
  Matrix plan;  // n x C, nonnegative
  Vector a;
  RowVector b;
};

/// P[i, :] = a_i * softmax(log_plan[i, :] / tau).
TransportPlan temper_plan(const Matrix& log_plan, const Vector& a, const RowVector& b, double tau);

/// Projects each local token, then F_j = sum_i P[i, j] f_i. Returns C x d_c.
Matrix aggregate_clusters(const TransportPlan& plan, const ImageTokenSet& tokens, const AggregatorParams& params);

/// Full evaluation-time descriptor (unit norm, C * d_c).
RowVector encode_image(const ImageTokenSet& tokens, const AggregatorParams& params);

/// Parameter-free baseline: elementwise max over local tokens, normalized.
RowVector maxpool_aggregate(const ImageTokenSet& tokens);

/// Recorded forward pass used in training: fixed `train_iters` unrolled
/// Sinkhorn sweeps, no early stop.
ad::Var encode_image(ad::Tape& tape, const AggregatorWeights<ad::Var>& w, const AggregatorConfig& config,
                     const ImageTokenSet& tokens, int iters);

}  // namespace xplace

#include "xplace/layers.hpp"

#include <cmath>
#include <vector>

namespace xplace {

Linear init_linear(Eigen::Index in, Eigen::Index out, Rng& rng, double gain) {
  Linear l;
  l.weight.resize(in, out);
  const double sd = gain / std::sqrt(static_cast<double>(in));
  for (Eigen::Index c = 0; c < out; ++c)
    for (Eigen::Index r = 0; r < in; ++r) l.weight(r, c) = sd * rng.normal();
  l.bias = Matrix::Zero(1, out);
  return l;
}

TransformerBlock init_transformer_block(Eigen::Index width, Eigen::Index ff_mult, Rng& rng, double gain,
                                        double residual_gain) {
  TransformerBlock b;
  b.ln1_gamma = Matrix::Ones(1, width);
  b.ln1_beta = Matrix::Zero(1, width);
  b.query = init_linear(width, width, rng, gain);
  b.key = init_linear(width, width, rng, gain);
  b.value = init_linear(width, width, rng, gain);
  b.out = init_linear(width, width, rng, gain * residual_gain);
  b.ln2_gamma = Matrix::Ones(1, width);
  b.ln2_beta = Matrix::Zero(1, width);
  b.ff1 = init_linear(width, width * ff_mult, rng, gain);
  b.ff2 = init_linear(width * ff_mult, width, rng, gain * residual_gain);
  return b;
}

ad::Var linear(const LinearT<ad::Var>& l, ad::Var x) {
  return ad::add_row(ad::matmul(x, l.weight), l.bias);
}

ad::Var transformer_block(const TransformerBlockT<ad::Var>& b, ad::Var x, int heads) {
  const Eigen::Index width = x.cols();
  if (heads <= 0 || width % heads != 0)
    throw ConfigError("transformer_block: width " + std::to_string(width) +
                      " not divisible by heads " + std::to_string(heads));
  const Eigen::Index head_dim = width / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));

  ad::Var h = ad::layer_norm_rows(x, b.ln1_gamma, b.ln1_beta);
  ad::Var q = linear(b.query, h);
  ad::Var k = linear(b.key, h);
  ad::Var v = linear(b.value, h);
  std::vector<ad::Var> per_head;
  per_head.reserve(static_cast<std::size_t>(heads));
  for (int i = 0; i < heads; ++i) {
    const Eigen::Index at = i * head_dim;
    ad::Var qh = ad::slice_cols(q, at, head_dim);
    ad::Var kh = ad::slice_cols(k, at, head_dim);
    ad::Var vh = ad::slice_cols(v, at, head_dim);
    ad::Var attn = ad::softmax_rows(ad::scale(ad::matmul_nt(qh, kh), inv_sqrt));
    per_head.push_back(ad::matmul(attn, vh));
  }
  ad::Var attended = heads == 1 ? per_head.front() : ad::concat_cols(per_head);
  ad::Var x1 = ad::add(x, linear(b.out, attended));

  ad::Var h2 = ad::layer_norm_rows(x1, b.ln2_gamma, b.ln2_beta);
  ad::Var ff = linear(b.ff2, ad::relu(linear(b.ff1, h2)));
  return ad::add(x1, ff);
}

Matrix sinusoidal_positions(Eigen::Index positions, Eigen::Index width) {
  Matrix pe(positions, width);
  for (Eigen::Index p = 0; p < positions; ++p) {
    for (Eigen::Index i = 0; i < width; ++i) {
      const double pair = static_cast<double>(i - (i % 2));
      const double angle =
          static_cast<double>(p) / std::pow(10000.0, pair / static_cast<double>(width));
      pe(p, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

}  // namespace xplace

#pragma once

#include "mate/ssd.hpp"
#include "mate/tensor.hpp"

#include <random>

namespace mate::testing {

inline TokenMatrix<double> random_tokens(Index rows, Index cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  TokenMatrix<double> m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = dist(rng);
  return m;
}

inline Eigen::MatrixXd random_matrix(Index rows, Index cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  Eigen::MatrixXd m(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = dist(rng);
  return m;
}

/// Decays in [0.5, 0.99) so finite-difference probes stay inside (0, 1]; projections ~ N(0, 1/d_s).
inline SsdParams<double> random_ssd_params(Index n, Index ds, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> decay(0.5, 0.99);
  SsdParams<double> p;
  p.decay.resize(n);
  for (Index i = 0; i < n; ++i) p.decay[i] = decay(rng);
  p.input_proj = random_tokens(n, ds, rng, 1.0 / std::sqrt(double(ds)));
  p.output_proj = random_tokens(n, ds, rng, 1.0 / std::sqrt(double(ds)));
  return p;
}

/// Random shape with T*H*W <= max_tokens.
inline Shape3 random_shape(std::mt19937_64& rng, Index max_tokens, Index max_dim = 16) {
  std::uniform_int_distribution<Index> dim(1, max_dim);
  while (true) {
    Shape3 s(dim(rng), dim(rng), dim(rng));
    if (s.size() <= max_tokens) return s;
  }
}

}  // namespace mate::testing

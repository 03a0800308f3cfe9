#pragma once

// Brute-force references used by the check tools and tests. Written with plain loops and
// no shared code with the windowed or scanned kernels they are compared against.

#include "mate/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace mate::reference {

/// Global multi-head softmax attention over all N tokens: softmax(Q K^T / sqrt(d_h)) V, then W_o.
template <typename Scalar>
TokenMatrix<Scalar> dense_attention(const TokenMatrix<Scalar>& x, const Eigen::Matrix<Scalar, -1, -1>& wq,
                                    const Eigen::Matrix<Scalar, -1, -1>& wk, const Eigen::Matrix<Scalar, -1, -1>& wv,
                                    const Eigen::Matrix<Scalar, -1, -1>& wo, Index heads) {
  const Index n = x.rows(), d = x.cols(), dh = d / heads;
  auto project = [&](const Eigen::Matrix<Scalar, -1, -1>& w) {
    TokenMatrix<Scalar> r = TokenMatrix<Scalar>::Zero(n, d);
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < d; ++j)
        for (Index c = 0; c < d; ++c) r(i, j) += x(i, c) * w(c, j);
    return r;
  };
  const TokenMatrix<Scalar> q = project(wq), k = project(wk), v = project(wv);
  TokenMatrix<Scalar> concat = TokenMatrix<Scalar>::Zero(n, d);
  std::vector<Scalar> logits(static_cast<std::size_t>(n));
  for (Index h = 0; h < heads; ++h)
    for (Index i = 0; i < n; ++i) {
      Scalar peak = -std::numeric_limits<Scalar>::infinity();
      for (Index j = 0; j < n; ++j) {
        Scalar s = 0;
        for (Index c = h * dh; c < (h + 1) * dh; ++c) s += q(i, c) * k(j, c);
        logits[j] = s / std::sqrt(Scalar(dh));
        peak = std::max(peak, logits[j]);
      }
      Scalar total = 0;
      for (Index j = 0; j < n; ++j) total += (logits[j] = std::exp(logits[j] - peak));
      for (Index j = 0; j < n; ++j)
        for (Index c = h * dh; c < (h + 1) * dh; ++c) concat(i, c) += logits[j] / total * v(j, c);
    }
  TokenMatrix<Scalar> out = TokenMatrix<Scalar>::Zero(n, d);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < d; ++j)
      for (Index c = 0; c < d; ++c) out(i, j) += concat(i, c) * wo(c, j);
  return out;
}

}  // namespace mate::reference

#pragma once

// Review tokens: an average-pooled overview of the token grid, scanned with the same
// schedule as the body and prepended to it so the scan state is warmed before the body.

#include "mate/scan.hpp"
#include "mate/tensor.hpp"

namespace mate {

struct ReviewConfig {
  bool enabled = true;
  Index pt = 8;
  Index py = 4;
  Index px = 4;
  /// Review tokens are only added when the body has at least this many tokens.
  Index min_length = 0;

  void validate() const {
    if (pt < 1 || py < 1 || px < 1) throw std::domain_error("ReviewConfig: pooling ranges must be >= 1");
    if (min_length < 0) throw std::domain_error("ReviewConfig: min_length must be >= 0");
  }

  bool applies_to(Index body_len) const { return enabled && body_len >= min_length; }
  Index window_volume() const { return pt * py * px; }
};

inline Index ceil_div(Index a, Index b) { return (a + b - 1) / b; }

inline Shape3 pooled_shape(const Shape3& shape, const ReviewConfig& cfg) {
  cfg.validate();
  return {ceil_div(shape.t_len, cfg.pt), ceil_div(shape.h_len, cfg.py), ceil_div(shape.w_len, cfg.px)};
}

inline Index review_length(const Shape3& shape, const ReviewConfig& cfg) { return pooled_shape(shape, cfg).size(); }

/// Non-overlapping window means. Edge windows average over their actual extent.
template <typename Scalar>
TokenTensor<Scalar> pool_overview(const TokenTensor<Scalar>& tensor, const ReviewConfig& cfg) {
  const Shape3& s = tensor.shape;
  const Shape3 ps = pooled_shape(s, cfg);
  TokenTensor<Scalar> pooled(ps, tensor.channels());
  Vector<Scalar> counts = Vector<Scalar>::Zero(ps.size());
  for (Index t = 0; t < s.t_len; ++t)
    for (Index y = 0; y < s.h_len; ++y)
      for (Index x = 0; x < s.w_len; ++x) {
        const Index cell = ps.linear(t / cfg.pt, y / cfg.py, x / cfg.px);
        pooled.data.row(cell) += tensor.data.row(s.linear(t, y, x));
        counts[cell] += Scalar(1);
      }
  for (Index c = 0; c < ps.size(); ++c) pooled.data.row(c) /= counts[c];
  return pooled;
}

/// Adjoint of pool_overview: scatters each pooled gradient evenly over its window.
template <typename Scalar>
TokenMatrix<Scalar> pool_overview_backward(const TokenMatrix<Scalar>& pooled_grad, const Shape3& shape,
                                           const ReviewConfig& cfg) {
  const Shape3 ps = pooled_shape(shape, cfg);
  if (pooled_grad.rows() != ps.size()) throw std::domain_error("pool_overview_backward: pooled size mismatch");
  Vector<Scalar> counts = Vector<Scalar>::Zero(ps.size());
  for (Index t = 0; t < shape.t_len; ++t)
    for (Index y = 0; y < shape.h_len; ++y)
      for (Index x = 0; x < shape.w_len; ++x) counts[ps.linear(t / cfg.pt, y / cfg.py, x / cfg.px)] += Scalar(1);
  TokenMatrix<Scalar> grad(shape.size(), pooled_grad.cols());
  for (Index t = 0; t < shape.t_len; ++t)
    for (Index y = 0; y < shape.h_len; ++y)
      for (Index x = 0; x < shape.w_len; ++x) {
        const Index cell = ps.linear(t / cfg.pt, y / cfg.py, x / cfg.px);
        grad.row(shape.linear(t, y, x)) = pooled_grad.row(cell) / counts[cell];
      }
  return grad;
}

template <typename Scalar>
struct AugmentedSequence {
  Index review_len = 0;
  Index body_len = 0;
  TokenMatrix<Scalar> tokens;  // (review_len + body_len) x d

  void validate() const {
    if (review_len < 0 || body_len < 0 || tokens.rows() != review_len + body_len)
      throw std::domain_error("AugmentedSequence: review_len + body_len does not match token count");
  }
};

/// Body only; used when review tokens are off.
template <typename Scalar>
AugmentedSequence<Scalar> augment_sequence(const TokenMatrix<Scalar>& body) {
  return {0, body.rows(), body};
}

/// Prepends the pooled grid, scanned with `schedule` (same layer and direction) over the
/// pooled shape, to an already scanned body.
template <typename Scalar>
AugmentedSequence<Scalar> augment_sequence(const TokenMatrix<Scalar>& body, const TokenTensor<Scalar>& pooled,
                                           const ScanSchedule& schedule) {
  if (pooled.channels() != body.cols())
    throw std::domain_error("augment_sequence: pooled token dim differs from body token dim");
  const Permutation perm = build_permutation(pooled.shape, schedule);
  AugmentedSequence<Scalar> seq;
  seq.review_len = pooled.tokens();
  seq.body_len = body.rows();
  seq.tokens.resize(seq.review_len + seq.body_len, body.cols());
  seq.tokens.topRows(seq.review_len) = apply_permutation<Scalar>(pooled.data, perm);
  seq.tokens.bottomRows(seq.body_len) = body;
  return seq;
}

/// The last body_len rows.
template <typename Scalar>
TokenMatrix<Scalar> strip_review(const AugmentedSequence<Scalar>& seq) {
  seq.validate();
  return seq.tokens.bottomRows(seq.body_len);
}

}  // namespace mate

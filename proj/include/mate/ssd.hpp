#pragma once

// Scalar-decay selective state-space scan (the Mamba2 / SSD form).
//
//   h_t = a_t * h_{t-1} + B_t x_t^T        h_t : d_s x d_h
//   y_t = C_t^T h_t
//
// The recurrence is linear-time. ssd_dense_oracle materializes the equivalent
// lower-triangular matrix M_ij = C_i^T B_j prod_{k=j+1..i} a_k and is only meant
// for verification.

#include "mate/tensor.hpp"

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace mate {

inline constexpr Index kDefaultStateDim = 128;
inline constexpr Index kDefaultHeadDim = 64;
inline constexpr Index kDefaultOracleCap = 512;

template <typename Scalar>
struct SsdParams {
  Vector<Scalar> decay;              // a_t in (0, 1], length N
  TokenMatrix<Scalar> input_proj;    // B_t rows, N x d_s
  TokenMatrix<Scalar> output_proj;   // C_t rows, N x d_s

  Index length() const { return decay.size(); }
  Index state_dim() const { return input_proj.cols(); }

  void validate() const {
    if (input_proj.rows() != decay.size() || output_proj.rows() != decay.size())
      throw std::domain_error("SsdParams: per-position arrays differ in length");
    if (input_proj.cols() != output_proj.cols())
      throw std::domain_error("SsdParams: B and C state dims differ");
    require_finite(decay, "SsdParams.decay");
    require_finite(input_proj, "SsdParams.input_proj");
    require_finite(output_proj, "SsdParams.output_proj");
    for (Index t = 0; t < decay.size(); ++t)
      if (!(decay[t] > Scalar(0) && decay[t] <= Scalar(1)))
        throw std::domain_error("SsdParams: decay must lie in (0, 1], got " + std::to_string(double(decay[t])) +
                                " at position " + std::to_string(t));
  }

  /// Positions in reverse order.
  SsdParams reversed() const {
    return {decay.reverse(), input_proj.colwise().reverse(), output_proj.colwise().reverse()};
  }
};

/// Hidden state h, d_s x d_h.
template <typename Scalar>
using SsdState = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
struct SsdOutput {
  TokenMatrix<Scalar> y;   // N x d_h
  SsdState<Scalar> final;  // h_N
};

namespace detail {

template <typename Scalar>
void check_scan_inputs(const TokenMatrix<Scalar>& x, const SsdParams<Scalar>& params, const SsdState<Scalar>& init) {
  params.validate();
  if (x.rows() != params.length()) throw std::domain_error("ssd: x length does not match params");
  if (init.rows() != params.state_dim() || init.cols() != x.cols())
    throw std::domain_error("ssd: initial state must be d_s x d_h");
  require_finite(x, "ssd input x");
  require_finite(init, "ssd initial state");
}

template <typename Scalar>
SsdOutput<Scalar> scan_impl(const TokenMatrix<Scalar>& x, const SsdParams<Scalar>& params,
                            const SsdState<Scalar>& init, std::vector<SsdState<Scalar>>* states) {
  detail::check_scan_inputs(x, params, init);
  const Index n = x.rows();
  SsdOutput<Scalar> out{TokenMatrix<Scalar>(n, x.cols()), init};
  SsdState<Scalar>& h = out.final;
  if (states) states->assign(1, init);
  for (Index t = 0; t < n; ++t) {
    h *= params.decay[t];
    h.noalias() += params.input_proj.row(t).transpose() * x.row(t);
    out.y.row(t).noalias() = params.output_proj.row(t) * h;
    if (!out.y.row(t).allFinite()) throw NumericFailure("ssd scan: non-finite output at position " + std::to_string(t));
    if (states) states->push_back(h);
  }
  return out;
}

}  // namespace detail

template <typename Scalar>
SsdState<Scalar> zero_state(Index state_dim, Index head_dim) {
  return SsdState<Scalar>::Zero(state_dim, head_dim);
}

/// Causal left-to-right scan, O(N d_s d_h).
template <typename Scalar>
SsdOutput<Scalar> ssd_scan_forward(const TokenMatrix<Scalar>& x, const SsdParams<Scalar>& params,
                                   const SsdState<Scalar>& init) {
  return detail::scan_impl<Scalar>(x, params, init, nullptr);
}

template <typename Scalar>
SsdOutput<Scalar> ssd_scan_forward(const TokenMatrix<Scalar>& x, const SsdParams<Scalar>& params) {
  return ssd_scan_forward<Scalar>(x, params, zero_state<Scalar>(params.state_dim(), x.cols()));
}

/// Quadratic masked-attention form of the scan (zero initial state).
template <typename Scalar>
TokenMatrix<Scalar> ssd_dense_matrix(const SsdParams<Scalar>& params, Index cap = kDefaultOracleCap) {
  params.validate();
  const Index n = params.length();
  if (n > cap) throw std::domain_error("ssd_dense_oracle: N = " + std::to_string(n) + " exceeds oracle cap " +
                                       std::to_string(cap));
  TokenMatrix<Scalar> m = TokenMatrix<Scalar>::Zero(n, n);
  for (Index i = 0; i < n; ++i) {
    Scalar carry(1);
    for (Index j = i; j >= 0; --j) {
      m(i, j) = params.output_proj.row(i).dot(params.input_proj.row(j)) * carry;
      carry *= params.decay[j];
    }
  }
  return m;
}

template <typename Scalar>
TokenMatrix<Scalar> ssd_dense_oracle(const TokenMatrix<Scalar>& x, const SsdParams<Scalar>& params,
                                     Index cap = kDefaultOracleCap) {
  if (x.rows() != params.length()) throw std::domain_error("ssd_dense_oracle: x length does not match params");
  return ssd_dense_matrix<Scalar>(params, cap) * x;
}

enum class Combine { Sum, ConcatProject };

/// Forward scan of x plus the reversed forward scan of reversed x. params_bwd is indexed
/// by original position. ConcatProject maps [y_fwd, y_bwd] (N x 2d_h) through `projection`.
template <typename Scalar>
TokenMatrix<Scalar> bidirectional_ssd(const TokenMatrix<Scalar>& x, const SsdParams<Scalar>& params_fwd,
                                      const SsdParams<Scalar>& params_bwd, Combine combine = Combine::Sum,
                                      const TokenMatrix<Scalar>* projection = nullptr) {
  if (params_fwd.length() != x.rows() || params_bwd.length() != x.rows())
    throw std::domain_error("bidirectional_ssd: parameter lengths must equal N");
  TokenMatrix<Scalar> y_fwd = ssd_scan_forward<Scalar>(x, params_fwd).y;
  TokenMatrix<Scalar> x_rev = x.colwise().reverse();
  TokenMatrix<Scalar> y_bwd = ssd_scan_forward<Scalar>(x_rev, params_bwd.reversed()).y.colwise().reverse();
  if (combine == Combine::Sum) return y_fwd + y_bwd;
  if (!projection || projection->rows() != 2 * x.cols())
    throw std::domain_error("bidirectional_ssd: ConcatProject needs a 2*d_h x d_out projection");
  TokenMatrix<Scalar> both(x.rows(), 2 * x.cols());
  both << y_fwd, y_bwd;
  return both * (*projection);
}

template <typename Scalar>
struct SsdGrads {
  TokenMatrix<Scalar> x;            // N x d_h
  Vector<Scalar> decay;             // N
  TokenMatrix<Scalar> input_proj;   // N x d_s
  TokenMatrix<Scalar> output_proj;  // N x d_s
  SsdState<Scalar> init;            // d_s x d_h
};

/// Reverse-mode gradients of sum(upstream .* y) through the recurrence. Recomputes and
/// stores the forward states (N+1 matrices of d_s x d_h).
template <typename Scalar>
SsdGrads<Scalar> ssd_backward(const TokenMatrix<Scalar>& x, const SsdParams<Scalar>& params,
                              const SsdState<Scalar>& init, const TokenMatrix<Scalar>& upstream) {
  if (upstream.rows() != x.rows() || upstream.cols() != x.cols())
    throw std::domain_error("ssd_backward: upstream gradient must be N x d_h");
  require_finite(upstream, "ssd_backward upstream gradient");
  std::vector<SsdState<Scalar>> states;
  detail::scan_impl<Scalar>(x, params, init, &states);

  const Index n = x.rows();
  const Index ds = params.state_dim();
  SsdGrads<Scalar> g{TokenMatrix<Scalar>(n, x.cols()), Vector<Scalar>(n), TokenMatrix<Scalar>(n, ds),
                     TokenMatrix<Scalar>(n, ds), SsdState<Scalar>::Zero(ds, x.cols())};
  SsdState<Scalar> carry = SsdState<Scalar>::Zero(ds, x.cols());  // dL/dh_t
  for (Index t = n - 1; t >= 0; --t) {
    carry.noalias() += params.output_proj.row(t).transpose() * upstream.row(t);
    const SsdState<Scalar>& h_t = states[t + 1];
    const SsdState<Scalar>& h_prev = states[t];
    g.x.row(t).noalias() = params.input_proj.row(t) * carry;
    g.input_proj.row(t).noalias() = (carry * x.row(t).transpose()).transpose();
    g.output_proj.row(t).noalias() = (h_t * upstream.row(t).transpose()).transpose();
    g.decay[t] = (carry.array() * h_prev.array()).sum();
    carry *= params.decay[t];
  }
  g.init = carry;
  return g;
}

template <typename Scalar>
SsdGrads<Scalar> ssd_backward(const TokenMatrix<Scalar>& x, const SsdParams<Scalar>& params,
                              const TokenMatrix<Scalar>& upstream) {
  return ssd_backward<Scalar>(x, params, zero_state<Scalar>(params.state_dim(), x.cols()), upstream);
}

}  // namespace mate

#pragma once

// Temporal window attention: the (T, H, W) grid is tiled into T_w x S_w x S_w boxes and
// multi-head softmax attention runs inside each box. Odd layers shift the tiling by half
// a window along every axis; boxes cut by the grid edge are clipped, not wrapped.

#include "mate/parallel.hpp"
#include "mate/tensor.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace mate {

enum class ShiftParity { Unshifted, Shifted };

struct TesaConfig {
  Index t_window = 8;
  Index s_window = 4;
  Index heads = 1;
  ShiftParity parity = ShiftParity::Unshifted;

  Index window_volume() const { return t_window * s_window * s_window; }

  void validate(Index channels) const {
    if (t_window < 1 || s_window < 1) throw std::domain_error("TesaConfig: window sizes must be >= 1");
    if (heads < 1 || channels % heads != 0) throw std::domain_error("TesaConfig: heads must divide token dim");
  }

  TesaConfig with_parity(Index layer_index) const {
    TesaConfig c = *this;
    c.parity = (layer_index % 2 == 0) ? ShiftParity::Unshifted : ShiftParity::Shifted;
    return c;
  }
};

struct WindowPartition {
  /// Native linear indices of the tokens in each window, in window-local t, y, x order.
  std::vector<std::vector<Index>> windows;
  /// Per window, validity of each of the N_w slots of the full box (false = clipped).
  std::vector<std::vector<bool>> padding_mask;
  std::array<Index, 3> grid{};  // window count along t, y, x
};

namespace detail {
// Leading partial window width along one axis (0 when unshifted).
inline Index lead_pad(Index window, ShiftParity parity) {
  const Index offset = parity == ShiftParity::Shifted ? window / 2 : 0;
  return offset == 0 ? 0 : window - offset;
}
}  // namespace detail

inline WindowPartition partition_windows(const Shape3& shape, const TesaConfig& cfg) {
  shape.validate();
  if (cfg.t_window < 1 || cfg.s_window < 1) throw std::domain_error("TesaConfig: window sizes must be >= 1");
  const Index qt = detail::lead_pad(cfg.t_window, cfg.parity);
  const Index qs = detail::lead_pad(cfg.s_window, cfg.parity);
  WindowPartition part;
  part.grid = {(shape.t_len - 1 + qt) / cfg.t_window + 1, (shape.h_len - 1 + qs) / cfg.s_window + 1,
               (shape.w_len - 1 + qs) / cfg.s_window + 1};
  const Index count = part.grid[0] * part.grid[1] * part.grid[2];
  const Index volume = cfg.window_volume();
  part.windows.assign(static_cast<std::size_t>(count), {});
  part.padding_mask.assign(static_cast<std::size_t>(count), std::vector<bool>(static_cast<std::size_t>(volume), false));
  for (Index t = 0; t < shape.t_len; ++t)
    for (Index y = 0; y < shape.h_len; ++y)
      for (Index x = 0; x < shape.w_len; ++x) {
        const Index wt = (t + qt) / cfg.t_window, wy = (y + qs) / cfg.s_window, wx = (x + qs) / cfg.s_window;
        const Index lt = (t + qt) % cfg.t_window, ly = (y + qs) % cfg.s_window, lx = (x + qs) % cfg.s_window;
        const Index w = (wt * part.grid[1] + wy) * part.grid[2] + wx;
        part.windows[w].push_back(shape.linear(t, y, x));
        part.padding_mask[w][(lt * cfg.s_window + ly) * cfg.s_window + lx] = true;
      }
  return part;
}

template <typename Scalar>
struct TesaWeights {
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  Mat query, key, value, output;  // each d x d; head h uses columns [h*d/heads, (h+1)*d/heads)

  static TesaWeights zeros(Index d) { return {Mat::Zero(d, d), Mat::Zero(d, d), Mat::Zero(d, d), Mat::Zero(d, d)}; }
  static TesaWeights identity(Index d) {
    return {Mat::Identity(d, d), Mat::Identity(d, d), Mat::Identity(d, d), Mat::Identity(d, d)};
  }

  void validate(Index d) const {
    for (const Mat* m : {&query, &key, &value, &output}) {
      if (m->rows() != d || m->cols() != d) throw std::domain_error("TesaWeights: projections must be d x d");
      require_finite(*m, "TESA weights");
    }
  }
};

namespace detail {

template <typename Scalar>
TokenMatrix<Scalar> gather_rows(const TokenMatrix<Scalar>& src, const std::vector<Index>& rows) {
  TokenMatrix<Scalar> out(static_cast<Index>(rows.size()), src.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = src.row(rows[i]);
  return out;
}

template <typename Scalar>
TokenMatrix<Scalar> softmax_rows(const TokenMatrix<Scalar>& logits) {
  TokenMatrix<Scalar> p = (logits.colwise() - logits.rowwise().maxCoeff()).array().exp().matrix();
  p.array().colwise() /= p.rowwise().sum().array();
  return p;
}

template <typename Scalar>
struct WindowPass {
  TokenMatrix<Scalar> x, q, k, v, o;
  std::vector<TokenMatrix<Scalar>> probs;  // per head, n_w x n_w
};

template <typename Scalar>
WindowPass<Scalar> window_forward(const TokenMatrix<Scalar>& x, const TesaWeights<Scalar>& w, Index heads) {
  WindowPass<Scalar> pass;
  pass.x = x;
  pass.q = x * w.query;
  pass.k = x * w.key;
  pass.v = x * w.value;
  const Index d = x.cols(), dh = d / heads, n = x.rows();
  const Scalar scale = Scalar(1) / std::sqrt(Scalar(dh));
  pass.o.resize(n, d);
  for (Index h = 0; h < heads; ++h) {
    TokenMatrix<Scalar> logits = pass.q.middleCols(h * dh, dh) * pass.k.middleCols(h * dh, dh).transpose() * scale;
    pass.probs.push_back(softmax_rows<Scalar>(logits));
    pass.o.middleCols(h * dh, dh).noalias() = pass.probs.back() * pass.v.middleCols(h * dh, dh);
  }
  return pass;
}

}  // namespace detail

/// Attention probabilities, per window then per head. Rows follow WindowPartition order.
template <typename Scalar>
std::vector<std::vector<TokenMatrix<Scalar>>> tesa_attention_weights(const TokenTensor<Scalar>& tensor,
                                                                     const TesaConfig& cfg,
                                                                     const TesaWeights<Scalar>& weights) {
  cfg.validate(tensor.channels());
  weights.validate(tensor.channels());
  const WindowPartition part = partition_windows(tensor.shape, cfg);
  std::vector<std::vector<TokenMatrix<Scalar>>> all;
  for (const auto& win : part.windows)
    all.push_back(detail::window_forward<Scalar>(detail::gather_rows<Scalar>(tensor.data, win), weights, cfg.heads).probs);
  return all;
}

template <typename Scalar>
TokenTensor<Scalar> tesa_forward(const TokenTensor<Scalar>& tensor, const TesaConfig& cfg,
                                 const TesaWeights<Scalar>& weights) {
  cfg.validate(tensor.channels());
  weights.validate(tensor.channels());
  require_finite(tensor.data, "TESA input");
  const WindowPartition part = partition_windows(tensor.shape, cfg);
  TokenTensor<Scalar> out(tensor.shape, tensor.channels());
  parallel_for(static_cast<Index>(part.windows.size()), [&](Index w0, Index w1) {
    for (Index w = w0; w < w1; ++w) {
      const auto& win = part.windows[w];
      const auto pass = detail::window_forward<Scalar>(detail::gather_rows<Scalar>(tensor.data, win), weights, cfg.heads);
      const TokenMatrix<Scalar> y = pass.o * weights.output;
      for (std::size_t i = 0; i < win.size(); ++i) out.data.row(win[i]) = y.row(static_cast<Index>(i));
    }
  });
  require_finite(out.data, "TESA output");
  return out;
}

template <typename Scalar>
struct TesaGrads {
  TokenMatrix<Scalar> input;
  TesaWeights<Scalar> weights;
};

/// Gradients of sum(upstream .* tesa_forward(tensor)). Weight gradients accumulate in
/// window order.
template <typename Scalar>
TesaGrads<Scalar> tesa_backward(const TokenTensor<Scalar>& tensor, const TesaConfig& cfg,
                                const TesaWeights<Scalar>& weights, const TokenMatrix<Scalar>& upstream) {
  cfg.validate(tensor.channels());
  weights.validate(tensor.channels());
  if (upstream.rows() != tensor.tokens() || upstream.cols() != tensor.channels())
    throw std::domain_error("tesa_backward: upstream gradient shape mismatch");
  require_finite(upstream, "TESA upstream gradient");
  const Index d = tensor.channels(), dh = d / cfg.heads;
  const Scalar scale = Scalar(1) / std::sqrt(Scalar(dh));
  const WindowPartition part = partition_windows(tensor.shape, cfg);
  TesaGrads<Scalar> g{TokenMatrix<Scalar>::Zero(tensor.tokens(), d), TesaWeights<Scalar>::zeros(d)};
  for (const auto& win : part.windows) {
    const auto pass = detail::window_forward<Scalar>(detail::gather_rows<Scalar>(tensor.data, win), weights, cfg.heads);
    const TokenMatrix<Scalar> dy = detail::gather_rows<Scalar>(upstream, win);
    g.weights.output.noalias() += pass.o.transpose() * dy;
    const TokenMatrix<Scalar> d_o = dy * weights.output.transpose();
    TokenMatrix<Scalar> dq(pass.q.rows(), d), dk(pass.k.rows(), d), dv(pass.v.rows(), d);
    for (Index h = 0; h < cfg.heads; ++h) {
      const TokenMatrix<Scalar>& p = pass.probs[h];
      const TokenMatrix<Scalar> d_oh = d_o.middleCols(h * dh, dh);
      const TokenMatrix<Scalar> dp = d_oh * pass.v.middleCols(h * dh, dh).transpose();
      const Vector<Scalar> row_dot = (dp.array() * p.array()).rowwise().sum();
      const TokenMatrix<Scalar> ds = (p.array() * (dp.colwise() - row_dot).array()).matrix() * scale;
      dv.middleCols(h * dh, dh).noalias() = p.transpose() * d_oh;
      dq.middleCols(h * dh, dh).noalias() = ds * pass.k.middleCols(h * dh, dh);
      dk.middleCols(h * dh, dh).noalias() = ds.transpose() * pass.q.middleCols(h * dh, dh);
    }
    g.weights.query.noalias() += pass.x.transpose() * dq;
    g.weights.key.noalias() += pass.x.transpose() * dk;
    g.weights.value.noalias() += pass.x.transpose() * dv;
    const TokenMatrix<Scalar> dx =
        dq * weights.query.transpose() + dk * weights.key.transpose() + dv * weights.value.transpose();
    for (std::size_t i = 0; i < win.size(); ++i) g.input.row(win[i]) += dx.row(static_cast<Index>(i));
  }
  return g;
}

}  // namespace mate

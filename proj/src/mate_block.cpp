#include "mate/mate.hpp"

#include "mate/review.hpp"
#include "mate/ssd.hpp"
#include "mate/tesa.hpp"

#include <cmath>
#include <optional>

namespace mate {

namespace {

double softplus(double v) { return v > 0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); }
double sigmoid(double v) { return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); }

Mat gaussian(Index rows, Index cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Mat m(rows, cols);
  for (Index j = 0; j < m.cols(); ++j)
    for (Index i = 0; i < m.rows(); ++i) m(i, j) = dist(rng);
  return m;
}

// Visits every trainable array in a fixed order. `f` receives Eigen objects or doubles.
template <typename W, typename F>
void visit_params(W& w, F&& f) {
  f(w.time_proj);
  f(w.time_bias);
  for (auto& b : w.blocks) {
    f(b.ma.norm_scale);
    f(b.ma.in_proj);
    f(b.ma.gate_proj);
    for (auto* p : {&b.ma.fwd, &b.ma.bwd}) {
      f(p->input_proj);
      f(p->output_proj);
      f(p->decay);
      f(p->decay_bias);
    }
    f(b.ma.combine_proj);
    f(b.ma.out_proj);
    f(b.te.norm_scale);
    f(b.te.attn.query);
    f(b.te.attn.key);
    f(b.te.attn.value);
    f(b.te.attn.output);
    f(b.gate_ma);
    f(b.gate_te);
  }
  f(w.head);
  f(w.head_bias);
}

template <typename T>
Index param_size(const T& p) {
  if constexpr (std::is_arithmetic_v<T>) {
    return 1;
  } else {
    return p.size();
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Weights

DenoiserWeights DenoiserWeights::zeros_like() const {
  DenoiserWeights z = *this;
  visit_params(z, [](auto& p) {
    if constexpr (std::is_arithmetic_v<std::decay_t<decltype(p)>>) {
      p = 0.0;
    } else {
      p.setZero();
    }
  });
  return z;
}

Index DenoiserWeights::parameter_count() const {
  Index n = 0;
  visit_params(*this, [&](const auto& p) { n += param_size(p); });
  return n;
}

Vec DenoiserWeights::pack() const {
  Vec flat(parameter_count());
  Index at = 0;
  visit_params(*this, [&](const auto& p) {
    if constexpr (std::is_arithmetic_v<std::decay_t<decltype(p)>>) {
      flat[at++] = p;
    } else {
      for (Index i = 0; i < p.size(); ++i) flat[at++] = p.data()[i];
    }
  });
  return flat;
}

void DenoiserWeights::unpack(const Vec& flat) {
  if (flat.size() != parameter_count()) throw std::domain_error("DenoiserWeights::unpack: size mismatch");
  Index at = 0;
  visit_params(*this, [&](auto& p) {
    if constexpr (std::is_arithmetic_v<std::decay_t<decltype(p)>>) {
      p = flat[at++];
    } else {
      for (Index i = 0; i < p.size(); ++i) p.data()[i] = flat[at++];
    }
  });
}

MateBlockWeights init_block(const MateConfig& cfg, std::mt19937_64& rng, double scale) {
  cfg.validate();
  const Index d = cfg.d, inner = cfg.inner_dim(), ds = cfg.state_dim, heads = cfg.ssd_heads();
  const double in_std = scale / std::sqrt(double(d));
  MateBlockWeights w;
  w.ma.norm_scale = Vec::Ones(d);
  w.ma.in_proj = gaussian(d, inner, in_std, rng);
  w.ma.gate_proj = gaussian(d, inner, in_std, rng);
  for (auto* p : {&w.ma.fwd, &w.ma.bwd}) {
    p->input_proj = gaussian(d, ds, in_std, rng);
    p->output_proj = gaussian(d, ds, in_std, rng);
    p->decay = gaussian(d, heads, in_std, rng);
    p->decay_bias = Vec::Constant(heads, -2.0);  // a ~ 0.88 at init
  }
  w.ma.combine_proj = cfg.combine == Combine::ConcatProject
                          ? gaussian(2 * inner, inner, scale / std::sqrt(double(2 * inner)), rng)
                          : Mat::Zero(2 * inner, inner);
  w.ma.out_proj = gaussian(inner, d, scale / std::sqrt(double(inner)), rng);
  w.te.norm_scale = Vec::Ones(d);
  w.te.attn = {gaussian(d, d, in_std, rng), gaussian(d, d, in_std, rng), gaussian(d, d, in_std, rng),
               gaussian(d, d, in_std, rng)};
  return w;
}

DenoiserWeights init_denoiser(const MateConfig& cfg, std::mt19937_64& rng, double scale) {
  cfg.validate();
  DenoiserWeights w;
  w.time_proj = gaussian(cfg.time_features, cfg.d, scale / std::sqrt(double(cfg.time_features)), rng);
  w.time_bias = Vec::Zero(cfg.d);
  for (Index l = 0; l < cfg.layers; ++l) w.blocks.push_back(init_block(cfg, rng, scale));
  w.head = gaussian(cfg.d, cfg.d, scale / std::sqrt(double(cfg.d)), rng);
  w.head_bias = Vec::Zero(cfg.d);
  return w;
}

// ---------------------------------------------------------------------------
// RMS normalization

Tokens rms_norm(const Tokens& x, const Vec& scale) {
  Tokens out(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    const double r = std::sqrt(x.row(i).squaredNorm() / double(x.cols()) + kRmsEps);
    out.row(i) = x.row(i).cwiseProduct(scale.transpose()) / r;
  }
  return out;
}

RmsNormGrads rms_norm_backward(const Tokens& x, const Vec& scale, const Tokens& upstream) {
  RmsNormGrads g{Tokens(x.rows(), x.cols()), Vec::Zero(scale.size())};
  const double n = double(x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    const double r = std::sqrt(x.row(i).squaredNorm() / n + kRmsEps);
    const Eigen::RowVectorXd xhat = x.row(i) / r;
    g.scale += upstream.row(i).cwiseProduct(xhat).transpose();
    const Eigen::RowVectorXd dxhat = upstream.row(i).cwiseProduct(scale.transpose());
    g.input.row(i) = (dxhat - xhat * (dxhat.dot(xhat) / n)) / r;
  }
  return g;
}

// ---------------------------------------------------------------------------
// MA branch

namespace {

struct DirectionPass {
  ScanSchedule schedule;
  Permutation perm;
  std::optional<Permutation> pooled_perm;
  Index review_len = 0;
  Tokens z, xs, b, c, raw, decay, y;
};

struct MaCache {
  Shape3 shape;
  Tokens u;
  std::optional<Shape3> pooled_shape;
  DirectionPass dirs[2];
  Tokens y_fwd, y_bwd, y, gate_pre, gated, out;
};

SsdParams<double> head_params(const DirectionPass& p, Index h) { return {p.decay.col(h), p.b, p.c}; }

DirectionPass run_direction(const Tensor& normed, const ScanParamWeights& pw, const MaBranchWeights& w,
                            Direction dir, Index layer_index, const MateConfig& cfg) {
  DirectionPass p;
  p.schedule = {layer_index, ScanFamily::Rms, dir};
  p.perm = build_permutation(normed.shape, p.schedule);
  const Tokens body = apply_permutation<double>(normed.data, p.perm);
  AugmentedSequence<double> aug = augment_sequence<double>(body);
  if (cfg.review.applies_to(normed.tokens())) {
    const Tensor pooled = pool_overview<double>(normed, cfg.review);
    aug = augment_sequence<double>(body, pooled, p.schedule);
    p.pooled_perm = build_permutation(pooled.shape, p.schedule);
  }
  p.review_len = aug.review_len;
  p.z = std::move(aug.tokens);
  p.xs = p.z * w.in_proj;
  p.b = p.z * pw.input_proj;
  p.c = p.z * pw.output_proj;
  p.raw = (p.z * pw.decay).rowwise() + pw.decay_bias.transpose();
  p.decay = p.raw.unaryExpr([](double v) { return std::exp(-softplus(v)); });
  if (!(p.decay.array() > 0.0).all() || !p.decay.allFinite())
    throw NumericFailure("MA branch: decay logits overflowed (decay left (0, 1])");
  const Index dh = cfg.head_dim;
  p.y.resize(p.z.rows(), cfg.inner_dim());
  for (Index h = 0; h < cfg.ssd_heads(); ++h) {
    const Tokens xh = p.xs.middleCols(h * dh, dh);
    p.y.middleCols(h * dh, dh) = ssd_scan_forward<double>(xh, head_params(p, h)).y;
  }
  return p;
}


Eigen::ArrayXXd silu(const Tokens& g) { return g.array() * g.array().unaryExpr([](double v) { return sigmoid(v); }); }

Eigen::ArrayXXd silu_grad(const Tokens& g) {
  const Eigen::ArrayXXd s = g.array().unaryExpr([](double v) { return sigmoid(v); });
  return s * (1.0 + g.array() * (1.0 - s));
}

MaCache ma_pass(const Tensor& input, const MaBranchWeights& w, Index layer_index, const MateConfig& cfg) {
  MaCache c;
  c.shape = input.shape;
  c.u = rms_norm(input.data, w.norm_scale);
  const Tensor normed(input.shape, c.u);
  if (cfg.review.applies_to(input.tokens())) c.pooled_shape = pooled_shape(input.shape, cfg.review);
  c.dirs[0] = run_direction(normed, w.fwd, w, Direction::Forward, layer_index, cfg);
  c.dirs[1] = run_direction(normed, w.bwd, w, Direction::Flipped, layer_index, cfg);
  c.y_fwd = apply_inverse<double>(c.dirs[0].y.bottomRows(input.tokens()), c.dirs[0].perm);
  c.y_bwd = apply_inverse<double>(c.dirs[1].y.bottomRows(input.tokens()), c.dirs[1].perm);
  if (cfg.combine == Combine::Sum) {
    c.y = c.y_fwd + c.y_bwd;
  } else {
    Tokens both(input.tokens(), 2 * cfg.inner_dim());
    both << c.y_fwd, c.y_bwd;
    c.y = both * w.combine_proj;
  }
  c.gate_pre = c.u * w.gate_proj;
  c.gated = (c.y.array() * silu(c.gate_pre)).matrix();
  c.out = c.gated * w.out_proj;
  return c;
}

// Backpropagates one direction; accumulates weight grads into `gw` / `gp` and the
// normalized-token gradient into `du`.
void direction_backward(const DirectionPass& p, const Tokens& dy_native, const MaBranchWeights& w,
                        const ScanParamWeights& pw, const MateConfig& cfg, MaBranchWeights& gw,
                        ScanParamWeights& gp, Tokens& du, const Shape3& shape) {
  const Index total = p.z.rows();
  Tokens dy = Tokens::Zero(total, cfg.inner_dim());
  dy.bottomRows(total - p.review_len) = apply_permutation<double>(dy_native, p.perm);

  const Index dh = cfg.head_dim;
  Tokens dxs(total, cfg.inner_dim());
  Tokens db = Tokens::Zero(total, cfg.state_dim), dc = Tokens::Zero(total, cfg.state_dim);
  Tokens draw(total, cfg.ssd_heads());
  for (Index h = 0; h < cfg.ssd_heads(); ++h) {
    const Tokens xh = p.xs.middleCols(h * dh, dh);
    const Tokens dyh = dy.middleCols(h * dh, dh);
    const SsdGrads<double> g = ssd_backward<double>(xh, head_params(p, h), dyh);
    dxs.middleCols(h * dh, dh) = g.x;
    db += g.input_proj;
    dc += g.output_proj;
    for (Index t = 0; t < total; ++t) draw(t, h) = -g.decay[t] * p.decay(t, h) * sigmoid(p.raw(t, h));
  }
  gw.in_proj.noalias() += p.z.transpose() * dxs;
  gp.input_proj.noalias() += p.z.transpose() * db;
  gp.output_proj.noalias() += p.z.transpose() * dc;
  gp.decay.noalias() += p.z.transpose() * draw;
  gp.decay_bias += draw.colwise().sum().transpose();

  const Tokens dz = dxs * w.in_proj.transpose() + db * pw.input_proj.transpose() +
                    dc * pw.output_proj.transpose() + draw * pw.decay.transpose();
  du += apply_inverse<double>(dz.bottomRows(total - p.review_len), p.perm);
  if (p.review_len > 0) {
    const Tokens pooled_grad = apply_inverse<double>(dz.topRows(p.review_len), *p.pooled_perm);
    du += pool_overview_backward<double>(pooled_grad, shape, cfg.review);
  }
}

struct MaGrads {
  Tokens input;
  MaBranchWeights weights;
};

MaBranchWeights zero_ma_like(const MaBranchWeights& w) {
  MaBranchWeights z = w;
  z.norm_scale.setZero();
  z.in_proj.setZero();
  z.gate_proj.setZero();
  for (auto* p : {&z.fwd, &z.bwd}) {
    p->input_proj.setZero();
    p->output_proj.setZero();
    p->decay.setZero();
    p->decay_bias.setZero();
  }
  z.combine_proj.setZero();
  z.out_proj.setZero();
  return z;
}

MaGrads ma_backward(const Tensor& input, const MaBranchWeights& w, Index layer_index, const MateConfig& cfg,
                    const Tokens& upstream) {
  const MaCache c = ma_pass(input, w, layer_index, cfg);
  MaGrads g{Tokens(), zero_ma_like(w)};
  g.weights.out_proj = c.gated.transpose() * upstream;
  const Tokens dgated = upstream * w.out_proj.transpose();
  const Tokens dy = (dgated.array() * silu(c.gate_pre)).matrix();
  const Tokens dgate_pre = (dgated.array() * c.y.array() * silu_grad(c.gate_pre)).matrix();
  g.weights.gate_proj = c.u.transpose() * dgate_pre;
  Tokens du = dgate_pre * w.gate_proj.transpose();

  Tokens dy_fwd, dy_bwd;
  if (cfg.combine == Combine::Sum) {
    dy_fwd = dy;
    dy_bwd = dy;
  } else {
    Tokens both(input.tokens(), 2 * cfg.inner_dim());
    both << c.y_fwd, c.y_bwd;
    g.weights.combine_proj = both.transpose() * dy;
    const Tokens dboth = dy * w.combine_proj.transpose();
    dy_fwd = dboth.leftCols(cfg.inner_dim());
    dy_bwd = dboth.rightCols(cfg.inner_dim());
  }
  direction_backward(c.dirs[0], dy_fwd, w, w.fwd, cfg, g.weights, g.weights.fwd, du, input.shape);
  direction_backward(c.dirs[1], dy_bwd, w, w.bwd, cfg, g.weights, g.weights.bwd, du, input.shape);

  RmsNormGrads ng = rms_norm_backward(input.data, w.norm_scale, du);
  g.weights.norm_scale = ng.scale;
  g.input = std::move(ng.input);
  return g;
}

Tokens te_forward(const Tensor& input, const TeBranchWeights& w, Index layer_index, const MateConfig& cfg) {
  const Tensor normed(input.shape, rms_norm(input.data, w.norm_scale));
  return tesa_forward<double>(normed, cfg.tesa.with_parity(layer_index), w.attn).data;
}

}  // namespace

Tokens ma_branch_forward(const Tensor& input, const MaBranchWeights& w, Index layer_index, const MateConfig& cfg) {
  return ma_pass(input, w, layer_index, cfg).out;
}

// ---------------------------------------------------------------------------
// Block

Tensor mate_block_forward(const Tensor& input, const MateBlockWeights& w, Index layer_index, const MateConfig& cfg) {
  cfg.validate();
  if (input.channels() != cfg.d) throw std::domain_error("mate_block_forward: token dim does not match config");
  const Tokens ma = ma_branch_forward(input, w.ma, layer_index, cfg);
  const Tokens te = te_forward(input, w.te, layer_index, cfg);
  Tensor out = input;
  out.data += w.gate_ma * ma;
  out.data += w.gate_te * te;
  require_finite(out.data, "MATE block output");
  return out;
}

BlockGrads mate_block_backward(const Tensor& input, const MateBlockWeights& w, Index layer_index,
                               const MateConfig& cfg, const Tokens& upstream) {
  cfg.validate();
  require_finite(upstream, "MATE block upstream gradient");
  BlockGrads g;
  g.input = upstream;

  const Tokens ma = ma_branch_forward(input, w.ma, layer_index, cfg);
  g.weights.gate_ma = (upstream.array() * ma.array()).sum();
  MaGrads mg = ma_backward(input, w.ma, layer_index, cfg, w.gate_ma * upstream);
  g.weights.ma = std::move(mg.weights);
  g.input += mg.input;

  const TesaConfig tcfg = cfg.tesa.with_parity(layer_index);
  const Tensor normed(input.shape, rms_norm(input.data, w.te.norm_scale));
  const Tokens te = tesa_forward<double>(normed, tcfg, w.te.attn).data;
  g.weights.gate_te = (upstream.array() * te.array()).sum();
  const TesaGrads<double> tg = tesa_backward<double>(normed, tcfg, w.te.attn, w.gate_te * upstream);
  g.weights.te.attn = tg.weights;
  RmsNormGrads ng = rms_norm_backward(input.data, w.te.norm_scale, tg.input);
  g.weights.te.norm_scale = ng.scale;
  g.input += ng.input;
  return g;
}

// ---------------------------------------------------------------------------
// Denoiser

Vec time_features(double t, Index count) {
  if (count < 2 || count % 2 != 0) throw std::domain_error("time_features: count must be even and >= 2");
  Vec f(count);
  for (Index i = 0; i < count / 2; ++i) {
    const double angle = 2.0 * M_PI * std::ldexp(1.0, static_cast<int>(i)) * t;
    f[2 * i] = std::sin(angle);
    f[2 * i + 1] = std::cos(angle);
  }
  return f;
}

namespace {

void check_time(double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw std::domain_error("denoiser: t must lie in [0, 1]");
}

Tensor embed(const Tensor& x_t, double t, const DenoiserWeights& w, const MateConfig& cfg) {
  const Eigen::RowVectorXd e = time_features(t, cfg.time_features).transpose() * w.time_proj + w.time_bias.transpose();
  Tensor h = x_t;
  h.data.rowwise() += e;
  return h;
}

}  // namespace

Tensor denoiser_forward(const Tensor& x_t, double t, const DenoiserWeights& w, const MateConfig& cfg) {
  check_time(t);
  cfg.validate();
  if (x_t.channels() != cfg.d) throw std::domain_error("denoiser_forward: token dim does not match config");
  Tensor h = embed(x_t, t, w, cfg);
  for (std::size_t l = 0; l < w.blocks.size(); ++l) h = mate_block_forward(h, w.blocks[l], static_cast<Index>(l), cfg);
  Tensor v(x_t.shape, Tokens((h.data * w.head).rowwise() + w.head_bias.transpose()));
  require_finite(v.data, "denoiser output");
  return v;
}

DenoiserGrads denoiser_backward(const Tensor& x_t, double t, const DenoiserWeights& w, const MateConfig& cfg,
                                const Tokens& upstream) {
  check_time(t);
  std::vector<Tensor> hidden{embed(x_t, t, w, cfg)};
  for (std::size_t l = 0; l < w.blocks.size(); ++l)
    hidden.push_back(mate_block_forward(hidden.back(), w.blocks[l], static_cast<Index>(l), cfg));

  DenoiserGrads g{Tokens(), w.zeros_like()};
  g.weights.head = hidden.back().data.transpose() * upstream;
  g.weights.head_bias = upstream.colwise().sum().transpose();
  Tokens dh = upstream * w.head.transpose();
  for (std::size_t l = w.blocks.size(); l-- > 0;) {
    BlockGrads bg = mate_block_backward(hidden[l], w.blocks[l], static_cast<Index>(l), cfg, dh);
    g.weights.blocks[l] = std::move(bg.weights);
    dh = std::move(bg.input);
  }
  const Vec de = dh.colwise().sum().transpose();
  g.weights.time_bias = de;
  g.weights.time_proj = time_features(t, cfg.time_features) * de.transpose();
  g.input = std::move(dh);
  return g;
}

}  // namespace mate

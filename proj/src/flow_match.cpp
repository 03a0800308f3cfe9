#include "mate/mate.hpp"

#include <cmath>
#include <cstdio>
#include <string>

namespace mate {

Tensor FlowMatchSample::interpolate() const {
  if (!(x0.shape == x1.shape) || x0.channels() != x1.channels())
    throw std::domain_error("FlowMatchSample: x0 and x1 differ in shape");
  return Tensor(x0.shape, Tokens((1.0 - t) * x0.data + t * x1.data));
}

Tokens FlowMatchSample::velocity() const { return x1.data - x0.data; }

double flow_match_loss(const std::vector<FlowMatchSample>& batch, const VelocityModel& model) {
  if (batch.empty()) throw std::domain_error("flow_match_loss: empty batch");
  double total = 0.0;
  double count = 0.0;
  for (const auto& s : batch) {
    const Tensor pred = model(s.interpolate(), s.t);
    total += (pred.data - s.velocity()).squaredNorm();
    count += double(pred.data.size());
  }
  return total / count;
}

LossAndGrads flow_match_loss(const std::vector<FlowMatchSample>& batch, const DenoiserWeights& w,
                             const MateConfig& cfg) {
  if (batch.empty()) throw std::domain_error("flow_match_loss: empty batch");
  double count = 0.0;
  for (const auto& s : batch) count += double(s.x0.data.size());
  LossAndGrads out{0.0, w.zeros_like()};
  Vec flat = Vec::Zero(w.parameter_count());
  for (const auto& s : batch) {
    const Tensor x_t = s.interpolate();
    const Tokens residual = denoiser_forward(x_t, s.t, w, cfg).data - s.velocity();
    out.loss += residual.squaredNorm() / count;
    const DenoiserGrads g = denoiser_backward(x_t, s.t, w, cfg, Tokens(2.0 / count * residual));
    flat += g.weights.pack();
  }
  out.grads.unpack(flat);
  if (!std::isfinite(out.loss)) throw NumericFailure("flow_match_loss: non-finite loss");
  return out;
}

Vec channel_code(Index channels) {
  Vec c(channels);
  for (Index k = 0; k < channels; ++k) c[k] = 1.0 + 0.5 * std::sin(1.7 * double(k));
  return c;
}

namespace {

// Position on [0, span] after `p` steps of a walk that reflects at both ends.
Index bounce(Index p, Index span) {
  if (span == 0) return 0;
  const Index period = 2 * span;
  const Index m = ((p % period) + period) % period;
  return m <= span ? m : period - m;
}

}  // namespace

Tensor moving_square(const Shape3& shape, Index channels, Index square, std::mt19937_64& rng) {
  if (square < 1 || square > shape.h_len || square > shape.w_len)
    throw std::domain_error("moving_square: square must fit inside a frame");
  const Index span_y = shape.h_len - square, span_x = shape.w_len - square;
  std::uniform_int_distribution<Index> pick_y(0, span_y), pick_x(0, span_x), pick_v(-1, 1);
  const Index y0 = pick_y(rng), x0 = pick_x(rng);
  Index vy = pick_v(rng), vx = pick_v(rng);
  if (vy == 0 && vx == 0) (span_x > 0 ? vx : vy) = 1;
  const Vec code = channel_code(channels);
  Tensor video(shape, channels);
  for (Index t = 0; t < shape.t_len; ++t) {
    const Index top = bounce(y0 + vy * t, span_y), left = bounce(x0 + vx * t, span_x);
    for (Index y = top; y < top + square; ++y)
      for (Index x = left; x < left + square; ++x) video.token(t, y, x) = code.transpose();
  }
  return video;
}

double mean_energy(const Tokens& x) { return x.squaredNorm() / double(x.size()); }

TrainingDiverged::TrainingDiverged(Index at, double loss)
    : NumericFailure("training diverged at step " + std::to_string(at) + " (loss " + std::to_string(loss) + ")"),
      step(at) {}

std::vector<double> TrainLog::smoothed(Index window) const {
  if (window < 1) throw std::domain_error("TrainLog::smoothed: window must be >= 1");
  std::vector<double> out(loss.size());
  double running = 0.0;
  for (std::size_t i = 0; i < loss.size(); ++i) {
    running += loss[i];
    if (i >= static_cast<std::size_t>(window)) running -= loss[i - window];
    out[i] = running / double(std::min<std::size_t>(i + 1, window));
  }
  return out;
}

std::string TrainLog::to_csv(Index window) const {
  const std::vector<double> smooth = smoothed(window);
  std::string out = "# mate-train v1\nstep,loss,smoothed_loss\n";
  char buf[96];
  for (std::size_t i = 0; i < loss.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g\n", i, loss[i], smooth[i]);
    out += buf;
  }
  return out;
}

namespace {

Tokens gaussian_tokens(Index rows, Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Tokens m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = dist(rng);
  return m;
}

}  // namespace

TrainLog train_toy(const MateConfig& model, const TrainConfig& train, Index steps, std::uint64_t seed) {
  if (steps < 1) throw std::domain_error("train_toy: steps must be >= 1");
  if (train.batch < 1) throw std::domain_error("train_toy: batch must be >= 1");
  model.validate();
  std::mt19937_64 rng(seed);
  TrainLog log;
  log.weights = init_denoiser(model, rng, train.init_scale);

  Vec params = log.weights.pack();
  Vec first = Vec::Zero(params.size()), second = Vec::Zero(params.size());
  std::uniform_real_distribution<double> pick_t(0.0, 1.0);
  for (Index step = 0; step < steps; ++step) {
    std::vector<FlowMatchSample> batch;
    for (Index b = 0; b < train.batch; ++b) {
      FlowMatchSample s;
      s.x1 = moving_square(train.shape, model.d, train.square, rng);
      s.x0 = Tensor(train.shape, gaussian_tokens(train.shape.size(), model.d, rng));
      s.t = pick_t(rng);
      batch.push_back(std::move(s));
    }
    LossAndGrads lg;
    try {
      lg = flow_match_loss(batch, log.weights, model);
    } catch (const NumericFailure&) {
      throw TrainingDiverged(step, std::nan(""));
    }
    log.loss.push_back(lg.loss);
    const Vec grad = lg.grads.pack();
    if (!grad.allFinite()) throw TrainingDiverged(step, lg.loss);

    if (train.optimizer == OptimizerKind::Adam) {
      const double b1 = train.momentum, b2 = train.beta2;
      first = b1 * first + (1.0 - b1) * grad;
      second = b2 * second + (1.0 - b2) * grad.cwiseAbs2();
      const double c1 = 1.0 - std::pow(b1, double(step + 1)), c2 = 1.0 - std::pow(b2, double(step + 1));
      params.array() -= train.learning_rate * (first.array() / c1) / ((second.array() / c2).sqrt() + 1e-8);
    } else {
      first = train.momentum * first + grad;
      params -= train.learning_rate * first;
    }
    log.weights.unpack(params);
  }
  return log;
}

Tensor euler_sample(const VelocityModel& model, Index steps, const Shape3& shape, Index channels, std::uint64_t seed) {
  if (steps < 1) throw std::domain_error("euler_sample: steps must be >= 1");
  std::mt19937_64 rng(seed);
  Tensor x(shape, gaussian_tokens(shape.size(), channels, rng));
  const double dt = 1.0 / double(steps);
  for (Index s = 0; s < steps; ++s) x.data += dt * model(x, double(s) * dt).data;
  return x;
}

Tensor euler_sample(const DenoiserWeights& w, const MateConfig& cfg, Index steps, const Shape3& shape,
                    std::uint64_t seed) {
  return euler_sample([&](const Tensor& x, double t) { return denoiser_forward(x, t, w, cfg); }, steps, shape, cfg.d,
                      seed);
}

}  // namespace mate

#include "doctest.h"
#include "mate/gradcheck.hpp"
#include "mate/mate.hpp"
#include "test_util.hpp"

#include <cmath>

using namespace mate;

namespace {

MateConfig tiny_config() {
  MateConfig c;
  c.d = 8;
  c.expansion = 2;
  c.state_dim = 4;
  c.head_dim = 8;
  c.layers = 2;
  c.time_features = 4;
  c.tesa = TesaConfig{2, 4, 2};
  c.review = ReviewConfig{true, 2, 2, 2, 0};
  return c;
}

DenoiserWeights gated_weights(const MateConfig& cfg, std::mt19937_64& rng) {
  DenoiserWeights w = init_denoiser(cfg, rng, 0.8);
  std::uniform_real_distribution<double> gate(-1.0, 1.0);
  for (auto& b : w.blocks) {
    b.gate_ma = gate(rng);
    b.gate_te = gate(rng);
    b.ma.norm_scale.array() += testing::random_matrix(cfg.d, 1, rng, 0.1).array();
  }
  return w;
}

double denoiser_fd_error(const MateConfig& cfg, const Shape3& shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const DenoiserWeights w = gated_weights(cfg, rng);
  const Tensor x(shape, testing::random_tokens(shape.size(), cfg.d, rng));
  const Tokens up = testing::random_tokens(shape.size(), cfg.d, rng);
  const double t = 0.37;

  const auto g = denoiser_backward(x, t, w, cfg, up);
  const Index nx = x.data.size();
  Vec analytic(nx + w.parameter_count());
  analytic << Eigen::Map<const Vec>(g.input.data(), nx), g.weights.pack();

  Vec probe(analytic.size());
  probe << Eigen::Map<const Vec>(x.data.data(), nx), w.pack();
  auto loss = [&](const Vec& v) {
    Tensor xs = x;
    Eigen::Map<Vec>(xs.data.data(), nx) = v.head(nx);
    DenoiserWeights ws = w;
    ws.unpack(v.tail(v.size() - nx));
    return (denoiser_forward(xs, t, ws, cfg).data.array() * up.array()).sum();
  };
  return max_relative_error(analytic, numeric_gradient(loss, probe));
}

}  // namespace

TEST_SUITE("mate") {
  TEST_CASE("blocks are the identity at init") {
    std::mt19937_64 rng(1);
    const MateConfig cfg = tiny_config();
    const MateBlockWeights w = init_block(cfg, rng, 1.0);
    CHECK(w.gate_ma == 0.0);
    CHECK(w.gate_te == 0.0);
    const Tensor x(Shape3(3, 5, 6), testing::random_tokens(90, 8, rng));
    for (Index l = 0; l < 3; ++l) CHECK(mate_block_forward(x, w, l, cfg).data == x.data);
  }

  TEST_CASE("denoiser at init is the head applied to the time-shifted input") {
    std::mt19937_64 rng(2);
    const MateConfig cfg = tiny_config();
    const DenoiserWeights w = init_denoiser(cfg, rng, 1.0);
    const Tensor x(Shape3(2, 4, 4), testing::random_tokens(32, 8, rng));
    const Eigen::RowVectorXd e = time_features(0.25, cfg.time_features).transpose() * w.time_proj + w.time_bias.transpose();
    Tokens h = x.data;
    h.rowwise() += e;
    const Tokens expect = (h * w.head).rowwise() + w.head_bias.transpose();
    CHECK(denoiser_forward(x, 0.25, w, cfg).data == expect);
  }

  TEST_CASE("gated blocks change the output and keep the shape") {
    std::mt19937_64 rng(3);
    const MateConfig cfg = tiny_config();
    MateBlockWeights w = init_block(cfg, rng, 1.0);
    w.gate_ma = 0.5;
    w.gate_te = 0.5;
    const Tensor x(Shape3(2, 4, 4), testing::random_tokens(32, 8, rng));
    const Tensor y = mate_block_forward(x, w, 1, cfg);
    CHECK(y.shape == x.shape);
    CHECK(y.channels() == 8);
    CHECK((y.data - x.data).cwiseAbs().maxCoeff() > 1e-3);
  }

  TEST_CASE("forward is deterministic") {
    const MateConfig cfg = tiny_config();
    auto run = [&] {
      std::mt19937_64 rng(4);
      const DenoiserWeights w = gated_weights(cfg, rng);
      const Tensor x(Shape3(2, 4, 4), testing::random_tokens(32, 8, rng));
      return denoiser_forward(x, 0.5, w, cfg).data;
    };
    CHECK(run() == run());
  }

  TEST_CASE("zero head gives zero velocity") {
    std::mt19937_64 rng(5);
    const MateConfig cfg = tiny_config();
    DenoiserWeights w = gated_weights(cfg, rng);
    w.head.setZero();
    w.head_bias.setZero();
    const Tensor x(Shape3(2, 4, 4), testing::random_tokens(32, 8, rng));
    CHECK(denoiser_forward(x, 0.9, w, cfg).data.isZero(0.0));
  }

  TEST_CASE("time outside the unit interval is rejected") {
    std::mt19937_64 rng(6);
    const MateConfig cfg = tiny_config();
    const DenoiserWeights w = init_denoiser(cfg, rng, 1.0);
    const Tensor x(Shape3(1, 2, 2), testing::random_tokens(4, 8, rng));
    CHECK_THROWS_AS(denoiser_forward(x, -0.1, w, cfg), std::domain_error);
    CHECK_THROWS_AS(denoiser_forward(x, 1.5, w, cfg), std::domain_error);
    CHECK_NOTHROW(denoiser_forward(x, 1.0, w, cfg));
  }

  TEST_CASE("rms norm backward") {
    std::mt19937_64 rng(7);
    const Tokens x = testing::random_tokens(5, 6, rng);
    const Vec scale = testing::random_matrix(6, 1, rng);
    const Tokens up = testing::random_tokens(5, 6, rng);
    const auto g = rms_norm_backward(x, scale, up);
    Vec analytic(36);
    analytic << Eigen::Map<const Vec>(g.input.data(), 30), g.scale;
    Vec probe(36);
    probe << Eigen::Map<const Vec>(x.data(), 30), scale;
    auto loss = [&](const Vec& v) {
      Tokens xs = x;
      Eigen::Map<Vec>(xs.data(), 30) = v.head(30);
      return (rms_norm(xs, v.tail(6)).array() * up.array()).sum();
    };
    CHECK(max_relative_error(analytic, numeric_gradient(loss, probe)) <= kGradientTolerance);
  }

  TEST_CASE("denoiser backward matches finite differences") {
    const MateConfig cfg = tiny_config();
    for (std::uint64_t seed = 0; seed < 3; ++seed) CHECK(denoiser_fd_error(cfg, Shape3(2, 4, 4), seed) <= kGradientTolerance);
  }

  TEST_CASE("denoiser backward with concat projection and no review tokens") {
    MateConfig cfg = tiny_config();
    cfg.combine = Combine::ConcatProject;
    CHECK(denoiser_fd_error(cfg, Shape3(2, 3, 4), 10) <= kGradientTolerance);
    cfg.review.enabled = false;
    CHECK(denoiser_fd_error(cfg, Shape3(3, 2, 2), 11) <= kGradientTolerance);
  }

  TEST_CASE("flow matching loss") {
    const Shape3 s(1, 2, 2);
    FlowMatchSample sample{Tensor(s, Tokens::Zero(4, 3)), Tensor(s, Tokens::Ones(4, 3)), 0.3};
    const VelocityModel zero = [](const Tensor& x, double) { return Tensor(x.shape, Tokens::Zero(x.tokens(), x.channels())); };
    CHECK(flow_match_loss({sample}, zero) == 1.0);

    std::mt19937_64 rng(8);
    FlowMatchSample r{Tensor(s, testing::random_tokens(4, 3, rng)), Tensor(s, testing::random_tokens(4, 3, rng)), 0.6};
    const VelocityModel perfect = [&](const Tensor& x, double) { return Tensor(x.shape, r.velocity()); };
    CHECK(flow_match_loss({r}, perfect) == 0.0);
    CHECK((r.interpolate().data - (0.4 * r.x0.data + 0.6 * r.x1.data)).cwiseAbs().maxCoeff() < 1e-15);
  }

  TEST_CASE("flow matching gradients agree with the denoiser loss") {
    std::mt19937_64 rng(9);
    const MateConfig cfg = tiny_config();
    const DenoiserWeights w = gated_weights(cfg, rng);
    const Shape3 s(2, 2, 2);
    std::vector<FlowMatchSample> batch;
    for (int b = 0; b < 2; ++b)
      batch.push_back({Tensor(s, testing::random_tokens(8, 8, rng)), Tensor(s, testing::random_tokens(8, 8, rng)),
                       0.2 + 0.5 * b});
    const auto lg = flow_match_loss(batch, w, cfg);
    const VelocityModel model = [&](const Tensor& x, double t) { return denoiser_forward(x, t, w, cfg); };
    CHECK(lg.loss == doctest::Approx(flow_match_loss(batch, model)).epsilon(1e-14));

    auto loss = [&](const Vec& v) {
      DenoiserWeights ws = w;
      ws.unpack(v);
      return flow_match_loss(batch, ws, cfg).loss;
    };
    const Vec packed = w.pack();
    const Vec analytic = lg.grads.pack();
    // spot-check a spread of coordinates
    for (Index i = 0; i < packed.size(); i += 97) {
      Vec up = packed, dn = packed;
      up[i] += kFiniteDifferenceStep;
      dn[i] -= kFiniteDifferenceStep;
      const double num = (loss(up) - loss(dn)) / (2 * kFiniteDifferenceStep);
      CHECK(std::abs(num - analytic[i]) <= kGradientTolerance * std::max({std::abs(num), std::abs(analytic[i]), kGradientFloor}));
    }
  }

  TEST_CASE("synthetic data") {
    std::mt19937_64 rng(10);
    const Tensor v = moving_square(Shape3(4, 8, 8), 16, 3, rng);
    CHECK(v.shape == Shape3(4, 8, 8));
    CHECK(v.channels() == 16);
    CHECK(mean_energy(v.data) > 0.0);
    const Vec code = channel_code(4);
    for (Index k = 0; k < 4; ++k) CHECK(code[k] == doctest::Approx(1.0 + 0.5 * std::sin(1.7 * double(k))));
  }

  TEST_CASE("training") {
    CHECK_THROWS_AS(train_toy(tiny_config(), TrainConfig{}, 0, 1), std::domain_error);

    MateConfig cfg = tiny_config();
    TrainConfig tc;
    tc.shape = Shape3(2, 4, 4);
    tc.batch = 2;
    const TrainLog a = train_toy(cfg, tc, 30, 3);
    const TrainLog b = train_toy(cfg, tc, 30, 3);
    CHECK(a.loss == b.loss);
    CHECK(a.loss.size() == 30);
    const auto sm = a.smoothed(10);
    CHECK(sm.size() == 30);
    CHECK(sm.back() < sm[9]);
  }

  TEST_CASE("smoothing is a trailing mean") {
    TrainLog log;
    log.loss = {4, 2, 0, 6};
    const auto s = log.smoothed(2);
    CHECK(s[0] == 4.0);
    CHECK(s[1] == 3.0);
    CHECK(s[2] == 1.0);
    CHECK(s[3] == 3.0);
  }

  TEST_CASE("euler sampling") {
    const Shape3 s(1, 2, 3);
    const VelocityModel zero = [](const Tensor& x, double) { return Tensor(x.shape, Tokens::Zero(x.tokens(), x.channels())); };
    const Tensor noise = euler_sample(zero, 5, s, 2, 42);
    const Tensor again = euler_sample(zero, 1, s, 2, 42);
    CHECK(noise.data == again.data);

    double seen_t = -1.0;
    const VelocityModel ones = [&](const Tensor& x, double t) {
      seen_t = t;
      return Tensor(x.shape, Tokens::Ones(x.tokens(), x.channels()));
    };
    const Tensor one = euler_sample(ones, 1, s, 2, 42);
    CHECK(seen_t == 0.0);
    CHECK(one.data == (noise.data.array() + 1.0).matrix());
    CHECK_THROWS_AS(euler_sample(zero, 0, s, 2, 42), std::domain_error);
  }

  TEST_CASE("weights pack round trip") {
    std::mt19937_64 rng(11);
    const MateConfig cfg = tiny_config();
    const DenoiserWeights w = gated_weights(cfg, rng);
    DenoiserWeights z = w.zeros_like();
    CHECK(z.pack().isZero(0.0));
    z.unpack(w.pack());
    CHECK(z.pack() == w.pack());
    CHECK(w.parameter_count() == w.pack().size());
    CHECK_THROWS(z.unpack(Vec::Zero(3)));
  }
}

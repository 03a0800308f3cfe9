#pragma once

// MATE denoiser: residual blocks that add a gated scan branch (MA) and a gated window
// attention branch (TE) to their input, a sinusoidal time embedding in front and a linear
// velocity head behind. Everything runs in double precision with explicit backward passes.

#include "mate/config.hpp"
#include "mate/scan.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <random>
#include <vector>

namespace mate {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using Tokens = TokenMatrix<double>;
using Tensor = TokenTensor<double>;

/// Projections that generate one direction's scan parameters from normalized tokens.
struct ScanParamWeights {
  Mat input_proj;   // d x d_s  -> B_t
  Mat output_proj;  // d x d_s  -> C_t
  Mat decay;        // d x heads, raw decay logits
  Vec decay_bias;   // heads; a_t = exp(-softplus(raw))
};

struct MaBranchWeights {
  Vec norm_scale;      // d
  Mat in_proj;         // d x E d
  Mat gate_proj;       // d x E d
  ScanParamWeights fwd;
  ScanParamWeights bwd;
  Mat combine_proj;    // 2 E d x E d, ConcatProject only
  Mat out_proj;        // E d x d
};

struct TeBranchWeights {
  Vec norm_scale;  // d
  TesaWeights<double> attn;
};

struct MateBlockWeights {
  MaBranchWeights ma;
  TeBranchWeights te;
  double gate_ma = 0.0;
  double gate_te = 0.0;
};

struct DenoiserWeights {
  Mat time_proj;  // time_features x d
  Vec time_bias;  // d
  std::vector<MateBlockWeights> blocks;
  Mat head;       // d x d
  Vec head_bias;  // d

  /// Same layout with every entry zero.
  DenoiserWeights zeros_like() const;

  Index parameter_count() const;
  Vec pack() const;
  void unpack(const Vec& flat);
};

/// Random init: N(0, scale^2 / fan_in) projections, unit norm scales, zero branch gates.
MateBlockWeights init_block(const MateConfig& cfg, std::mt19937_64& rng, double scale);
DenoiserWeights init_denoiser(const MateConfig& cfg, std::mt19937_64& rng, double scale);

// ---------------------------------------------------------------------------
// Blocks

struct BlockCache;  // forward intermediates

Tensor mate_block_forward(const Tensor& input, const MateBlockWeights& w, Index layer_index, const MateConfig& cfg);

struct BlockGrads {
  Tokens input;
  MateBlockWeights weights;
};

BlockGrads mate_block_backward(const Tensor& input, const MateBlockWeights& w, Index layer_index,
                               const MateConfig& cfg, const Tokens& upstream);

/// MA-branch alone (without the gate): normalize, scan-rearrange, optional review tokens,
/// bidirectional scan, gate, project, restore native order.
Tokens ma_branch_forward(const Tensor& input, const MaBranchWeights& w, Index layer_index, const MateConfig& cfg);

// ---------------------------------------------------------------------------
// Denoiser

/// Sinusoidal features of t in [0, 1]: sin and cos at frequencies 2 pi 2^i.
Vec time_features(double t, Index count);

Tensor denoiser_forward(const Tensor& x_t, double t, const DenoiserWeights& w, const MateConfig& cfg);

struct DenoiserGrads {
  Tokens input;
  DenoiserWeights weights;
};

DenoiserGrads denoiser_backward(const Tensor& x_t, double t, const DenoiserWeights& w, const MateConfig& cfg,
                                const Tokens& upstream);

// ---------------------------------------------------------------------------
// Flow matching

struct FlowMatchSample {
  Tensor x0;  // noise
  Tensor x1;  // data
  double t = 0.0;

  Tensor interpolate() const;  // (1 - t) x0 + t x1
  Tokens velocity() const;     // x1 - x0
};

using VelocityModel = std::function<Tensor(const Tensor&, double)>;

/// Mean squared error between predicted and target velocity over every element.
double flow_match_loss(const std::vector<FlowMatchSample>& batch, const VelocityModel& model);

struct LossAndGrads {
  double loss = 0.0;
  DenoiserWeights grads;
};

LossAndGrads flow_match_loss(const std::vector<FlowMatchSample>& batch, const DenoiserWeights& w,
                             const MateConfig& cfg);

/// Bright square translating with constant velocity on a dark background, bouncing off
/// the borders. Token value = intensity * channel code.
Tensor moving_square(const Shape3& shape, Index channels, Index square, std::mt19937_64& rng);
Vec channel_code(Index channels);

/// Mean of x^2 over every element.
double mean_energy(const Tokens& x);

class TrainingDiverged : public NumericFailure {
 public:
  TrainingDiverged(Index step, double loss);
  Index step;
};

struct TrainLog {
  std::vector<double> loss;
  DenoiserWeights weights;

  /// Trailing moving average over `window` steps.
  std::vector<double> smoothed(Index window) const;

  /// "# mate-train v1" header, then step,loss,smoothed_loss rows with round-trip precision.
  std::string to_csv(Index window) const;
};

TrainLog train_toy(const MateConfig& model, const TrainConfig& train, Index steps, std::uint64_t seed);

/// Euler integration of dx/dt = v(x, t) from t = 0 (Gaussian noise) to t = 1.
Tensor euler_sample(const VelocityModel& model, Index steps, const Shape3& shape, Index channels, std::uint64_t seed);
Tensor euler_sample(const DenoiserWeights& w, const MateConfig& cfg, Index steps, const Shape3& shape,
                    std::uint64_t seed);

// ---------------------------------------------------------------------------
// Small helpers shared with tests

Tokens rms_norm(const Tokens& x, const Vec& scale);
struct RmsNormGrads {
  Tokens input;
  Vec scale;
};
RmsNormGrads rms_norm_backward(const Tokens& x, const Vec& scale, const Tokens& upstream);

inline constexpr double kRmsEps = 1e-6;

}  // namespace mate

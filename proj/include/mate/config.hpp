#pragma once

#include "mate/review.hpp"
#include "mate/ssd.hpp"
#include "mate/tesa.hpp"

#include <cstdint>
#include <map>
#include <string>

namespace mate {

/// Hyperparameters of a MATE denoiser stack.
struct MateConfig {
  Index d = 16;           // token embedding dim
  Index expansion = 2;    // E
  Index state_dim = 8;    // d_s
  Index head_dim = 8;     // d_h
  Index conv_kernel = 4;  // K, cost model only
  Index layers = 2;
  Index time_features = 8;
  TesaConfig tesa{8, 4, 2, ShiftParity::Unshifted};
  ReviewConfig review{true, 8, 4, 4, 0};
  Combine combine = Combine::Sum;

  Index inner_dim() const { return expansion * d; }
  Index ssd_heads() const { return inner_dim() / head_dim; }

  void validate() const;
};

/// Large-model defaults: d = 2560, 32 layers, E = 2, d_s = 128, d_h = 64, 4x4 spatial windows.
MateConfig large_model_config();

enum class OptimizerKind { Adam, Momentum };

struct TrainConfig {
  Shape3 shape{4, 8, 8};
  Index batch = 4;
  Index square = 3;
  double learning_rate = 1e-2;
  double momentum = 0.9;
  double beta2 = 0.999;
  OptimizerKind optimizer = OptimizerKind::Adam;
  double init_scale = 0.5;
  Index smoothing = 20;
  std::uint64_t seed = 0;
};

/// Geometry that maps clip length to latent token counts.
struct CostSettings {
  bool bidirectional = true;
  Index fps = 16;
  Index height_px = 512;
  Index width_px = 512;
  Index temporal_compression = 8;
  Index spatial_compression = 8;
  Index patch_t = 1;
  Index patch_h = 2;
  Index patch_w = 2;
  Index model_dim = 2560;

  Shape3 latent_shape(Index seconds) const;
};

struct RunConfig {
  MateConfig model;
  TrainConfig train;
  CostSettings cost;

  /// Sectioned "key = value" text. Unknown sections or keys are rejected.
  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::string& path);
  std::string serialize() const;
};

}  // namespace mate

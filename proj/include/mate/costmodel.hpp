#pragma once

// Analytic FLOP counts for one MATE layer and for a global-attention DiT layer.
//
// Two entry points exist for every component:
//  - shape-based: window and pooled-token counts use ceilings over the actual grid,
//  - token-count-based: assumes an ideal tiling (N / N_w windows, N / (p_t p_y p_x) review
//    tokens), which keeps every count affine in N. Scaling audits use this form.

#include "mate/config.hpp"
#include "mate/flops.hpp"

#include <optional>
#include <string>
#include <vector>

namespace mate {

struct BimambaCost {
  Flops leading;   // (6 + 2/d_h) E N d^2 + 4 N d_s d
  Flops conv;      // 2 E K (N + K - 1) d
  Flops ssm;       // 4 E N d_s d + 2 E N d
  Flops unidirectional() const { return leading + conv + ssm; }
  /// Doubled when bidirectional.
  Flops total(bool bidirectional) const { return bidirectional ? unidirectional() * Flops(2) : unidirectional(); }
};

/// Token count may be fractional (pooled review sequences under ideal tiling).
BimambaCost cost_bimamba(const Flops& tokens, const MateConfig& cfg);
inline BimambaCost cost_bimamba(Index tokens, const MateConfig& cfg) { return cost_bimamba(Flops(tokens), cfg); }

/// Part of the bidirectional cost that scales with N: C(N) - C(0).
Flops bimamba_linear_part(const Flops& tokens, const MateConfig& cfg, bool bidirectional);

/// C_bimamba evaluated on the pooled review sequence. Zero when review tokens are off.
Flops cost_review(const Shape3& shape, const MateConfig& cfg, bool bidirectional);
Flops cost_review(Index tokens, const MateConfig& cfg, bool bidirectional);

/// (8 N_w d^2 + 4 N_w^2 d) * ceil(T/T_w) ceil(H/S_w) ceil(W/S_w).
Flops cost_tesa(const Shape3& shape, const MateConfig& cfg);
/// Same formula with N / N_w windows.
Flops cost_tesa(Index tokens, const MateConfig& cfg);

/// One global self-attention layer: 8 N d^2 + 4 N^2 d.
Flops cost_dit_baseline(Index tokens, Index d);

struct CostReport {
  std::optional<Shape3> shape;
  Index n_tokens = 0;
  bool bidirectional = true;
  Flops c_bimamba;                 // includes doubling when bidirectional
  Flops c_bimamba_unidirectional;
  Flops c_conv;                    // as included in c_bimamba
  Flops c_ssm;                     // as included in c_bimamba
  Flops c_review;
  Flops c_tesa;
  Flops mate_total;                // c_bimamba + c_review + c_tesa
  Flops dit_baseline;
  double speedup = 0.0;            // dit_baseline / mate_total
};

CostReport cost_report(Index tokens, const MateConfig& cfg, bool bidirectional = true);
CostReport cost_report(const Shape3& shape, const MateConfig& cfg, bool bidirectional = true);

/// Per-N rows plus the exact affinity check on the MATE totals.
struct ScalingAudit {
  std::vector<CostReport> rows;
  bool affine = false;                 // MATE total has zero second difference at unit spacing
  bool speedup_increasing = false;
};

ScalingAudit scaling_audit(const MateConfig& cfg, const std::vector<Index>& n_list, bool bidirectional = true);

/// Smallest N where the DiT baseline exceeds the MATE total.
Index crossover_tokens(const MateConfig& cfg, bool bidirectional = true);

/// Published FLOPs speedups of the 4B model at 512p for 17s, 34s and 68s clips.
struct PublishedSpeedup {
  Index seconds;
  double speedup;
};
inline constexpr PublishedSpeedup kPublishedSpeedups[] = {{17, 5.0}, {34, 8.0}, {68, 15.0}};

std::string cost_csv_header();
std::string cost_csv_row(const CostReport& r);

}  // namespace mate

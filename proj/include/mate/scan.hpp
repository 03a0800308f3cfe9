#pragma once

#include "mate/tensor.hpp"

#include <array>
#include <string>
#include <vector>

namespace mate {

/// The four major orders cycled by the rotary-major scan.
///  SpatialRow:     t, y, x  (x fastest)
///  SpatialColumn:  t, x, y  (y fastest)
///  TemporalRow:    y, x, t  (t fastest)
///  TemporalColumn: x, y, t  (t fastest)
enum class MajorOrder { SpatialRow = 0, SpatialColumn = 1, TemporalRow = 2, TemporalColumn = 3 };

enum class ScanFamily { RowMajor, Rms, Zigzag };

enum class Direction { Forward, Flipped };

struct ScanSchedule {
  Index layer_index = 0;
  ScanFamily family = ScanFamily::Rms;
  Direction direction = Direction::Forward;

  /// Major order used at this layer: fixed for RowMajor, `layer mod 4` otherwise.
  MajorOrder order() const;
};

ScanFamily parse_family(const std::string& name);
std::string family_name(ScanFamily family);

/// Sequence position of token (t, y, x) under the rotary-major scan at `layer`.
Index rms_index(const Shape3& shape, Index layer, const Coord& c);

/// Boustrophedon scan in the given major order: each line and each plane reverses
/// direction on alternate passes so consecutive positions are always grid neighbours.
Index zigzag_index(const Shape3& shape, MajorOrder order, const Coord& c);

/// Forward-direction position for any schedule family.
Index scan_index(const Shape3& shape, const ScanSchedule& schedule, const Coord& c);

/// Explicit bijection between native linear indices and sequence positions.
struct Permutation {
  std::vector<Index> forward;  // native linear index -> sequence position
  std::vector<Index> inverse;  // sequence position -> native linear index

  Index size() const { return static_cast<Index>(forward.size()); }
  bool is_bijection() const;
};

Permutation build_permutation(const Shape3& shape, const ScanSchedule& schedule);

/// Output row p holds the native token whose forward image is p.
template <typename Scalar>
TokenMatrix<Scalar> apply_permutation(const TokenMatrix<Scalar>& native, const Permutation& perm) {
  if (native.rows() != perm.size())
    throw std::domain_error("apply_permutation: token count does not match permutation");
  TokenMatrix<Scalar> out(native.rows(), native.cols());
  for (Index p = 0; p < perm.size(); ++p) out.row(p) = native.row(perm.inverse[p]);
  return out;
}

/// Inverse of apply_permutation: sequence order back to native layout.
template <typename Scalar>
TokenMatrix<Scalar> apply_inverse(const TokenMatrix<Scalar>& sequence, const Permutation& perm) {
  if (sequence.rows() != perm.size())
    throw std::domain_error("apply_inverse: token count does not match permutation");
  TokenMatrix<Scalar> out(sequence.rows(), sequence.cols());
  for (Index i = 0; i < perm.size(); ++i) out.row(i) = sequence.row(perm.forward[i]);
  return out;
}

template <typename Scalar>
TokenMatrix<Scalar> apply_permutation(const TokenTensor<Scalar>& tensor, const Permutation& perm) {
  return apply_permutation<Scalar>(tensor.data, perm);
}

enum class Axis { X = 0, Y = 1, T = 2 };

struct AdjacencyReport {
  Shape3 shape;
  ScanFamily family = ScanFamily::Rms;
  Index k = 1;
  /// Mean of the minimum sequence distance, per axis (x, y, t). NaN when the axis has no pairs.
  std::array<double, 3> per_axis_min_mean{};
  std::array<Index, 3> per_axis_pairs{};
  double d_k = 0.0;
};

/// Mean over axis-adjacent pairs inside aligned 2x2x2 cubes of the minimum sequence
/// distance reached over layers 0..k-1.
AdjacencyReport adjacency_d_k(const Shape3& shape, ScanFamily family, Index k);

}  // namespace mate

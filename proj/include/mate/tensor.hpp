#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>

namespace mate {

/// Raised when a computation produces or receives a non-finite value.
class NumericFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Index = std::int64_t;

/// Latent token grid extent: T frames of H rows by W columns.
struct Shape3 {
  Index t_len = 1;
  Index h_len = 1;
  Index w_len = 1;

  Shape3() = default;
  Shape3(Index t, Index h, Index w) : t_len(t), h_len(h), w_len(w) { validate(); }

  void validate() const {
    if (t_len < 1 || h_len < 1 || w_len < 1)
      throw std::domain_error("Shape3: every dimension must be >= 1");
    constexpr Index kMax = std::numeric_limits<std::int32_t>::max();
    if (t_len > kMax / h_len || t_len * h_len > kMax / w_len)
      throw std::domain_error("Shape3: token count overflows index type");
  }

  Index size() const { return t_len * h_len * w_len; }

  /// Native storage order is t-major, then y, then x.
  Index linear(Index t, Index y, Index x) const { return (t * h_len + y) * w_len + x; }

  bool operator==(const Shape3&) const = default;

  std::string to_string() const {
    return std::to_string(t_len) + "x" + std::to_string(h_len) + "x" + std::to_string(w_len);
  }
};

/// Parses "TxHxW".
Shape3 parse_shape(const std::string& text);

struct Coord {
  Index t = 0;
  Index y = 0;
  Index x = 0;
};

/// One row per token; rows follow a sequence order (native layout or a scan).
template <typename Scalar>
using TokenMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Dense (T, H, W, d) token grid. Row i of `data` is the token at native linear index i.
template <typename Scalar>
struct TokenTensor {
  Shape3 shape;
  TokenMatrix<Scalar> data;

  TokenTensor() = default;
  TokenTensor(Shape3 s, Index channels) : shape(s), data(TokenMatrix<Scalar>::Zero(s.size(), channels)) {}
  TokenTensor(Shape3 s, TokenMatrix<Scalar> values) : shape(s), data(std::move(values)) {
    if (data.rows() != shape.size())
      throw std::domain_error("TokenTensor: row count does not match shape");
  }

  Index channels() const { return data.cols(); }
  Index tokens() const { return data.rows(); }

  auto token(Index t, Index y, Index x) { return data.row(shape.linear(t, y, x)); }
  auto token(Index t, Index y, Index x) const { return data.row(shape.linear(t, y, x)); }
};

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
  return m.allFinite();
}

template <typename Derived>
void require_finite(const Eigen::DenseBase<Derived>& m, const char* what) {
  if (!m.allFinite()) throw NumericFailure(std::string("non-finite values in ") + what);
}

}  // namespace mate

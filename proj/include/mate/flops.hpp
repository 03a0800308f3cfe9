#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace mate {

/// Exact rational FLOP count. Integral for every formula except pooled
/// review cost on non-divisible token counts.
class Flops {
 public:
  using Wide = __int128;

  Flops() = default;
  Flops(std::int64_t whole) : num_(whole), den_(1) {}  // NOLINT(google-explicit-constructor)
  Flops(Wide num, Wide den);

  Wide numerator() const { return num_; }
  Wide denominator() const { return den_; }
  bool is_integer() const { return den_ == 1; }
  double to_double() const { return static_cast<double>(static_cast<long double>(num_) / static_cast<long double>(den_)); }

  /// Exact decimal when the denominator has only factors 2 and 5, else 9 fractional digits.
  std::string to_string() const;

  friend Flops operator+(const Flops& a, const Flops& b);
  friend Flops operator-(const Flops& a, const Flops& b);
  friend Flops operator*(const Flops& a, const Flops& b);
  friend Flops operator/(const Flops& a, const Flops& b);
  Flops& operator+=(const Flops& o) { return *this = *this + o; }
  friend bool operator==(const Flops& a, const Flops& b) { return a.num_ == b.num_ && a.den_ == b.den_; }
  friend bool operator<(const Flops& a, const Flops& b);
  friend bool operator>(const Flops& a, const Flops& b) { return b < a; }
  friend bool operator<=(const Flops& a, const Flops& b) { return !(b < a); }

 private:
  void normalize();
  Wide num_ = 0;
  Wide den_ = 1;
};

}  // namespace mate

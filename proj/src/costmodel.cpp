#include "mate/costmodel.hpp"

#include <algorithm>
#include <sstream>

namespace mate {

namespace {

using Wide = Flops::Wide;

Wide gcd(Wide a, Wide b) {
  if (a < 0) a = -a;
  if (b < 0) b = -b;
  while (b != 0) {
    const Wide r = a % b;
    a = b;
    b = r;
  }
  return a;
}

Wide checked_mul(Wide a, Wide b) {
  Wide r;
  if (__builtin_mul_overflow(a, b, &r)) throw std::overflow_error("Flops: multiplication overflow");
  return r;
}

Wide checked_add(Wide a, Wide b) {
  Wide r;
  if (__builtin_add_overflow(a, b, &r)) throw std::overflow_error("Flops: addition overflow");
  return r;
}

std::string wide_to_string(Wide v) {
  if (v == 0) return "0";
  const bool neg = v < 0;
  std::string s;
  while (v != 0) {
    int digit = static_cast<int>(v % 10);
    s.push_back(static_cast<char>('0' + (digit < 0 ? -digit : digit)));
    v /= 10;
  }
  if (neg) s.push_back('-');
  std::reverse(s.begin(), s.end());
  return s;
}

}  // namespace

Flops::Flops(Wide num, Wide den) : num_(num), den_(den) {
  if (den == 0) throw std::domain_error("Flops: zero denominator");
  normalize();
}

void Flops::normalize() {
  if (den_ < 0) {
    num_ = -num_;
    den_ = -den_;
  }
  const Wide g = gcd(num_, den_);
  if (g > 1) {
    num_ /= g;
    den_ /= g;
  }
}

Flops operator+(const Flops& a, const Flops& b) {
  const Wide g = gcd(a.den_, b.den_);
  const Wide den = checked_mul(a.den_ / g, b.den_);
  return Flops(checked_add(checked_mul(a.num_, b.den_ / g), checked_mul(b.num_, a.den_ / g)), den);
}

Flops operator-(const Flops& a, const Flops& b) { return a + Flops(-b.num_, b.den_); }

Flops operator*(const Flops& a, const Flops& b) {
  const Wide g1 = gcd(a.num_, b.den_), g2 = gcd(b.num_, a.den_);
  const Wide n1 = g1 ? a.num_ / g1 : a.num_, d2 = g1 ? b.den_ / g1 : b.den_;
  const Wide n2 = g2 ? b.num_ / g2 : b.num_, d1 = g2 ? a.den_ / g2 : a.den_;
  return Flops(checked_mul(n1, n2), checked_mul(d1, d2));
}

Flops operator/(const Flops& a, const Flops& b) {
  if (b.num_ == 0) throw std::domain_error("Flops: division by zero");
  return a * Flops(b.den_, b.num_);
}

bool operator<(const Flops& a, const Flops& b) { return checked_mul(a.num_, b.den_) < checked_mul(b.num_, a.den_); }

std::string Flops::to_string() const {
  if (den_ == 1) return wide_to_string(num_);
  Wide d = den_;
  int twos = 0, fives = 0;
  while (d % 2 == 0) d /= 2, ++twos;
  while (d % 5 == 0) d /= 5, ++fives;
  const int digits = d == 1 ? std::max(twos, fives) : 9;
  const bool neg = num_ < 0;
  const Wide mag = neg ? -num_ : num_;
  Wide scale = 1;
  for (int i = 0; i < digits; ++i) scale *= 10;
  const Wide scaled = checked_mul(mag, scale) / den_;  // truncated when non-terminating
  std::string frac = wide_to_string(scaled % scale);
  frac.insert(frac.begin(), static_cast<std::size_t>(digits) - frac.size(), '0');
  return (neg ? "-" : "") + wide_to_string(scaled / scale) + "." + frac;
}

BimambaCost cost_bimamba(const Flops& tokens, const MateConfig& cfg) {
  cfg.validate();
  if (tokens < Flops(0)) throw std::domain_error("cost_bimamba: negative token count");
  const Flops e(cfg.expansion), d(cfg.d), ds(cfg.state_dim), k(cfg.conv_kernel);
  const Flops d2 = d * d;
  BimambaCost c;
  c.leading = (Flops(6) * d2 + Flops(2) * d2 / Flops(cfg.head_dim)) * e * tokens + Flops(4) * tokens * ds * d;
  c.conv = Flops(2) * e * k * (tokens + k - Flops(1)) * d;
  c.ssm = Flops(4) * e * tokens * ds * d + Flops(2) * e * tokens * d;
  return c;
}

Flops bimamba_linear_part(const Flops& tokens, const MateConfig& cfg, bool bidirectional) {
  return cost_bimamba(tokens, cfg).total(bidirectional) - cost_bimamba(Flops(0), cfg).total(bidirectional);
}

Flops cost_review(const Shape3& shape, const MateConfig& cfg, bool bidirectional) {
  if (!cfg.review.applies_to(shape.size())) return Flops(0);
  return cost_bimamba(review_length(shape, cfg.review), cfg).total(bidirectional);
}

Flops cost_review(Index tokens, const MateConfig& cfg, bool bidirectional) {
  if (!cfg.review.applies_to(tokens)) return Flops(0);
  return cost_bimamba(Flops(tokens) / Flops(cfg.review.window_volume()), cfg).total(bidirectional);
}

Flops cost_tesa(const Shape3& shape, const MateConfig& cfg) {
  const TesaConfig& w = cfg.tesa;
  if (w.t_window < 1 || w.s_window < 1) throw std::domain_error("cost_tesa: window sizes must be >= 1");
  const Flops nw(w.window_volume()), d(cfg.d);
  const Flops per_window = Flops(8) * nw * d * d + Flops(4) * nw * nw * d;
  const Index windows =
      ceil_div(shape.t_len, w.t_window) * ceil_div(shape.h_len, w.s_window) * ceil_div(shape.w_len, w.s_window);
  return per_window * Flops(windows);
}

Flops cost_tesa(Index tokens, const MateConfig& cfg) {
  const Flops nw(cfg.tesa.window_volume()), d(cfg.d);
  return (Flops(8) * nw * d * d + Flops(4) * nw * nw * d) * Flops(tokens) / nw;
}

Flops cost_dit_baseline(Index tokens, Index d) {
  if (tokens < 0 || d < 1) throw std::domain_error("cost_dit_baseline: invalid arguments");
  const Flops n(tokens), dd(d);
  return Flops(8) * n * dd * dd + Flops(4) * n * n * dd;
}

namespace {

CostReport assemble(Index tokens, const MateConfig& cfg, bool bidirectional, Flops review, Flops tesa) {
  CostReport r;
  r.n_tokens = tokens;
  r.bidirectional = bidirectional;
  const BimambaCost b = cost_bimamba(tokens, cfg);
  const Flops factor(bidirectional ? 2 : 1);
  r.c_bimamba = b.total(bidirectional);
  r.c_bimamba_unidirectional = b.unidirectional();
  r.c_conv = b.conv * factor;
  r.c_ssm = b.ssm * factor;
  r.c_review = review;
  r.c_tesa = tesa;
  r.mate_total = r.c_bimamba + r.c_review + r.c_tesa;
  r.dit_baseline = cost_dit_baseline(tokens, cfg.d);
  r.speedup = r.dit_baseline.to_double() / r.mate_total.to_double();
  return r;
}

}  // namespace

CostReport cost_report(Index tokens, const MateConfig& cfg, bool bidirectional) {
  return assemble(tokens, cfg, bidirectional, cost_review(tokens, cfg, bidirectional), cost_tesa(tokens, cfg));
}

CostReport cost_report(const Shape3& shape, const MateConfig& cfg, bool bidirectional) {
  CostReport r =
      assemble(shape.size(), cfg, bidirectional, cost_review(shape, cfg, bidirectional), cost_tesa(shape, cfg));
  r.shape = shape;
  return r;
}

ScalingAudit scaling_audit(const MateConfig& cfg, const std::vector<Index>& n_list, bool bidirectional) {
  if (!std::is_sorted(n_list.begin(), n_list.end())) throw std::domain_error("scaling_audit: n_list must be ascending");
  ScalingAudit audit;
  audit.affine = true;
  audit.speedup_increasing = true;
  for (Index n : n_list) {
    audit.rows.push_back(cost_report(n, cfg, bidirectional));
    if (n >= 2) {
      const Flops second = cost_report(n, cfg, bidirectional).mate_total -
                           Flops(2) * cost_report(n - 1, cfg, bidirectional).mate_total +
                           cost_report(n - 2, cfg, bidirectional).mate_total;
      if (!(second == Flops(0))) audit.affine = false;
    }
  }
  for (std::size_t i = 1; i < audit.rows.size(); ++i) {
    const auto& a = audit.rows[i - 1];
    const auto& b = audit.rows[i];
    // speedup_b > speedup_a, compared exactly by cross-multiplication
    if (!(a.dit_baseline * b.mate_total < b.dit_baseline * a.mate_total)) audit.speedup_increasing = false;
  }
  return audit;
}

Index crossover_tokens(const MateConfig& cfg, bool bidirectional) {
  auto baseline_wins = [&](Index n) {
    const CostReport r = cost_report(n, cfg, bidirectional);
    return r.mate_total < r.dit_baseline;
  };
  // baseline - mate is a convex quadratic in N that is <= 0 at N = 0, so the sign changes once.
  Index hi = 1;
  while (!baseline_wins(hi)) {
    if (hi > (Index{1} << 40)) throw std::overflow_error("crossover_tokens: no crossover below 2^40 tokens");
    hi *= 2;
  }
  Index lo = hi / 2;
  while (lo + 1 < hi) {
    const Index mid = lo + (hi - lo) / 2;
    (baseline_wins(mid) ? hi : lo) = mid;
  }
  return hi;
}

std::string cost_csv_header() { return "N,c_bimamba,c_conv,c_ssm,c_review,c_tesa,mate_total,dit_baseline,speedup"; }

std::string cost_csv_row(const CostReport& r) {
  std::ostringstream os;
  os.precision(10);
  os << r.n_tokens << ',' << r.c_bimamba.to_string() << ',' << r.c_conv.to_string() << ',' << r.c_ssm.to_string() << ','
     << r.c_review.to_string() << ',' << r.c_tesa.to_string() << ',' << r.mate_total.to_string() << ','
     << r.dit_baseline.to_string() << ',' << r.speedup;
  return os.str();
}

}  // namespace mate

#include "mate/scan.hpp"

#include "mate/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <numeric>

namespace mate {

namespace {

void check_coord(const Shape3& shape, const Coord& c) {
  if (c.t < 0 || c.t >= shape.t_len || c.y < 0 || c.y >= shape.h_len || c.x < 0 || c.x >= shape.w_len)
    throw std::domain_error("coordinate outside shape " + shape.to_string());
}

// (outer, middle, inner) coordinates and extents for a major order.
struct Axes {
  Index a, b, c;
  Index na, nb, nc;
};

Axes arrange(const Shape3& s, MajorOrder order, const Coord& p) {
  switch (order) {
    case MajorOrder::SpatialRow: return {p.t, p.y, p.x, s.t_len, s.h_len, s.w_len};
    case MajorOrder::SpatialColumn: return {p.t, p.x, p.y, s.t_len, s.w_len, s.h_len};
    case MajorOrder::TemporalRow: return {p.y, p.x, p.t, s.h_len, s.w_len, s.t_len};
    case MajorOrder::TemporalColumn: return {p.x, p.y, p.t, s.w_len, s.h_len, s.t_len};
  }
  throw std::logic_error("unreachable MajorOrder");
}

Index major_index(const Shape3& shape, MajorOrder order, const Coord& c) {
  const Axes ax = arrange(shape, order, c);
  return (ax.a * ax.nb + ax.b) * ax.nc + ax.c;
}

}  // namespace

MajorOrder ScanSchedule::order() const {
  if (family == ScanFamily::RowMajor) return MajorOrder::SpatialRow;
  return static_cast<MajorOrder>(((layer_index % 4) + 4) % 4);
}

ScanFamily parse_family(const std::string& name) {
  if (name == "rms") return ScanFamily::Rms;
  if (name == "rowmajor") return ScanFamily::RowMajor;
  if (name == "zigzag") return ScanFamily::Zigzag;
  throw std::invalid_argument("unknown scan family '" + name + "' (expected rms|rowmajor|zigzag)");
}

std::string family_name(ScanFamily family) {
  switch (family) {
    case ScanFamily::Rms: return "rms";
    case ScanFamily::RowMajor: return "rowmajor";
    case ScanFamily::Zigzag: return "zigzag";
  }
  return "?";
}

Index rms_index(const Shape3& shape, Index layer, const Coord& c) {
  if (layer < 0) throw std::domain_error("rms_index: negative layer");
  check_coord(shape, c);
  return major_index(shape, static_cast<MajorOrder>(layer % 4), c);
}

Index zigzag_index(const Shape3& shape, MajorOrder order, const Coord& c) {
  check_coord(shape, c);
  const Axes ax = arrange(shape, order, c);
  const Index b = (ax.a % 2 == 0) ? ax.b : ax.nb - 1 - ax.b;
  const Index line = ax.a * ax.nb + b;
  const Index inner = (line % 2 == 0) ? ax.c : ax.nc - 1 - ax.c;
  return line * ax.nc + inner;
}

Index scan_index(const Shape3& shape, const ScanSchedule& schedule, const Coord& c) {
  switch (schedule.family) {
    case ScanFamily::RowMajor: return rms_index(shape, 0, c);
    case ScanFamily::Rms: return rms_index(shape, schedule.layer_index, c);
    case ScanFamily::Zigzag: return zigzag_index(shape, schedule.order(), c);
  }
  throw std::logic_error("unreachable ScanFamily");
}

bool Permutation::is_bijection() const {
  const Index n = size();
  if (static_cast<Index>(inverse.size()) != n) return false;
  std::vector<char> seen(static_cast<std::size_t>(n), 0);
  for (Index i = 0; i < n; ++i) {
    const Index p = forward[i];
    if (p < 0 || p >= n || seen[p]) return false;
    seen[p] = 1;
    if (inverse[p] != i) return false;
  }
  return true;
}

Permutation build_permutation(const Shape3& shape, const ScanSchedule& schedule) {
  shape.validate();
  if (schedule.layer_index < 0) throw std::domain_error("build_permutation: negative layer");
  const Index n = shape.size();
  Permutation perm;
  perm.forward.resize(static_cast<std::size_t>(n));
  perm.inverse.resize(static_cast<std::size_t>(n));
  const bool flipped = schedule.direction == Direction::Flipped;
  for (Index t = 0; t < shape.t_len; ++t)
    for (Index y = 0; y < shape.h_len; ++y)
      for (Index x = 0; x < shape.w_len; ++x) {
        const Index pos = scan_index(shape, schedule, {t, y, x});
        perm.forward[shape.linear(t, y, x)] = flipped ? n - 1 - pos : pos;
      }
  for (Index i = 0; i < n; ++i) perm.inverse[perm.forward[i]] = i;
  return perm;
}

AdjacencyReport adjacency_d_k(const Shape3& shape, ScanFamily family, Index k) {
  shape.validate();
  if (k < 1) throw std::domain_error("adjacency_d_k: k must be >= 1");
  if (shape.size() == 1) throw std::domain_error("adjacency_d_k: shape has no adjacent pairs");

  // Only four distinct forward orders exist in every family; flips leave |dpos| unchanged.
  const Index distinct = std::min<Index>(k, family == ScanFamily::RowMajor ? 1 : 4);
  std::vector<Permutation> perms;
  for (Index l = 0; l < distinct; ++l) perms.push_back(build_permutation(shape, {l, family, Direction::Forward}));

  const Index ct = (shape.t_len + 1) / 2, cy = (shape.h_len + 1) / 2, cx = (shape.w_len + 1) / 2;
  const Index cubes = ct * cy * cx;

  auto min_distance = [&](Index a, Index b) {
    Index best = std::numeric_limits<Index>::max();
    for (const auto& p : perms) best = std::min(best, std::abs(p.forward[a] - p.forward[b]));
    return best;
  };

  struct Partial {
    std::array<Index, 3> sum{};
    std::array<Index, 3> pairs{};
  };
  const Index chunks = std::max<Index>(1, std::min<Index>(cubes, thread_count()));
  std::vector<Partial> partials(static_cast<std::size_t>(chunks));
  const Index per_chunk = (cubes + chunks - 1) / chunks;

  parallel_for(chunks, [&](Index c0, Index c1) {
    for (Index chunk = c0; chunk < c1; ++chunk) {
      Partial& acc = partials[chunk];
      const Index end = std::min(cubes, (chunk + 1) * per_chunk);
      for (Index cube = chunk * per_chunk; cube < end; ++cube) {
        const Index t0 = 2 * (cube / (cy * cx));
        const Index y0 = 2 * ((cube / cx) % cy);
        const Index x0 = 2 * (cube % cx);
        const Index t1 = std::min(t0 + 2, shape.t_len);
        const Index y1 = std::min(y0 + 2, shape.h_len);
        const Index x1 = std::min(x0 + 2, shape.w_len);
        for (Index t = t0; t < t1; ++t)
          for (Index y = y0; y < y1; ++y)
            for (Index x = x0; x < x1; ++x) {
              const Index here = shape.linear(t, y, x);
              if (x + 1 < x1) {
                acc.sum[0] += min_distance(here, shape.linear(t, y, x + 1));
                ++acc.pairs[0];
              }
              if (y + 1 < y1) {
                acc.sum[1] += min_distance(here, shape.linear(t, y + 1, x));
                ++acc.pairs[1];
              }
              if (t + 1 < t1) {
                acc.sum[2] += min_distance(here, shape.linear(t + 1, y, x));
                ++acc.pairs[2];
              }
            }
      }
    }
  });

  AdjacencyReport report;
  report.shape = shape;
  report.family = family;
  report.k = k;
  Index total = 0, pairs = 0;
  std::array<Index, 3> sums{};
  for (const auto& p : partials)
    for (int a = 0; a < 3; ++a) {
      sums[a] += p.sum[a];
      report.per_axis_pairs[a] += p.pairs[a];
    }
  for (int a = 0; a < 3; ++a) {
    report.per_axis_min_mean[a] = report.per_axis_pairs[a] > 0
                                      ? static_cast<double>(sums[a]) / static_cast<double>(report.per_axis_pairs[a])
                                      : std::numeric_limits<double>::quiet_NaN();
    total += sums[a];
    pairs += report.per_axis_pairs[a];
  }
  if (pairs == 0) throw std::domain_error("adjacency_d_k: no adjacent pairs inside aligned cubes");
  report.d_k = static_cast<double>(total) / static_cast<double>(pairs);
  return report;
}

}  // namespace mate

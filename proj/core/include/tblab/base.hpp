#pragma once
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>

namespace tblab {

using cplx = std::complex<double>;

/// Ambient dimensions handled by the toolkit.  Everything is dimension-generic
/// up to kMaxDim; fixed-size arrays keep the geometry kernels allocation-free.
inline constexpr int kMaxDim = 3;

using Vec = std::array<double, kMaxDim>;   // coordinates beyond dim are 0
using IVec = std::array<std::int64_t, kMaxDim>;

inline Vec make_vec(double x, double y = 0.0, double z = 0.0) { return {x, y, z}; }

inline double dist2(const Vec& a, const Vec& b, int dim) {
  double s = 0;
  for (int i = 0; i < dim; ++i) { double d = a[i] - b[i]; s += d * d; }
  return s;
}
inline double dist(const Vec& a, const Vec& b, int dim) { return std::sqrt(dist2(a, b, dim)); }

/// Axis-aligned half-open box [lo, hi).  Used for integration regions,
/// rectangles in weak boundedness tests, and realized dyadic cubes.
struct Box {
  Vec lo{}, hi{};
  int dim = 1;

  bool contains(const Vec& x) const {
    for (int i = 0; i < dim; ++i)
      if (!(x[i] >= lo[i] && x[i] < hi[i])) return false;
    return true;
  }
  double side(int i) const { return hi[i] - lo[i]; }
  Vec center() const {
    Vec c{};
    for (int i = 0; i < dim; ++i) c[i] = 0.5 * (lo[i] + hi[i]);
    return c;
  }
  double volume() const {
    double v = 1;
    for (int i = 0; i < dim; ++i) v *= side(i);
    return v;
  }
  /// The box with the same center scaled by t in every axis.
  Box dilate(double t) const {
    Box b = *this;
    for (int i = 0; i < dim; ++i) {
      double c = 0.5 * (lo[i] + hi[i]), h = 0.5 * side(i) * t;
      b.lo[i] = c - h; b.hi[i] = c + h;
    }
    return b;
  }
};

/// Euclidean distance between the closures of two boxes (0 if they touch).
inline double box_dist(const Box& a, const Box& b) {
  double s = 0;
  for (int i = 0; i < a.dim; ++i) {
    double g = std::max({0.0, a.lo[i] - b.hi[i], b.lo[i] - a.hi[i]});
    s += g * g;
  }
  return std::sqrt(s);
}

/// sup-metric variant, reported alongside the Euclidean one where corner
/// effects could matter.
inline double box_dist_inf(const Box& a, const Box& b) {
  double s = 0;
  for (int i = 0; i < a.dim; ++i)
    s = std::max({s, a.lo[i] - b.hi[i], b.lo[i] - a.hi[i]});
  return std::max(s, 0.0);
}

inline double box_dist_point(const Box& a, const Vec& x) {
  double s = 0;
  for (int i = 0; i < a.dim; ++i) {
    double g = std::max({0.0, a.lo[i] - x[i], x[i] - a.hi[i]});
    s += g * g;
  }
  return std::sqrt(s);
}

inline bool box_subset(const Box& inner, const Box& outer) {
  for (int i = 0; i < inner.dim; ++i)
    if (inner.lo[i] < outer.lo[i] || inner.hi[i] > outer.hi[i]) return false;
  return true;
}

/// Distance from box Q to the boundary of box R.  Three cases: Q inside R
/// (min face margin), disjoint closures (plain box distance; the nearest point
/// of R lies on its boundary), otherwise the closures overlap across the
/// boundary and the distance is 0.
inline double box_dist_to_boundary(const Box& q, const Box& r) {
  double margin = INFINITY;
  bool inside = true;
  for (int i = 0; i < q.dim; ++i) {
    double m = std::min(q.lo[i] - r.lo[i], r.hi[i] - q.hi[i]);
    if (m < 0) inside = false;
    margin = std::min(margin, m);
  }
  if (inside) return std::max(margin, 0.0);
  double d = box_dist(q, r);
  return d > 0 ? d : 0.0;
}

} // namespace tblab

#pragma once
#include <vector>
#include <span>
#include <limits>

#include "tblab/base.hpp"
#include "tblab/rng.hpp"

namespace tblab {

/// Finite-dimensional coefficient space X = l_q^m (q = inf allowed).
/// m = 1, q = 2 is the scalar case.  These spaces are UMD with constants
/// depending on q only, which is what the randomized estimates probe.
struct SpaceSpec {
  double q = 2.0;
  int m = 1;

  SpaceSpec dual() const {
    if (q == 1.0) return {std::numeric_limits<double>::infinity(), m};
    if (std::isinf(q)) return {1.0, m};
    return {q / (q - 1.0), m};
  }
};

/// Norm of a single X-valued sample (v points at m interleaved components).
inline double x_norm(const SpaceSpec& sp, const cplx* v) {
  if (sp.m == 1) return std::abs(v[0]);
  if (std::isinf(sp.q)) {
    double mx = 0;
    for (int i = 0; i < sp.m; ++i) mx = std::max(mx, std::abs(v[i]));
    return mx;
  }
  double s = 0;
  for (int i = 0; i < sp.m; ++i) s += std::pow(std::abs(v[i]), sp.q);
  return std::pow(s, 1.0 / sp.q);
}

/// X-valued function on the atoms of a measure, stored atom-major.
/// `p` records the Lebesgue exponent the field is normally measured in.
struct VectorField {
  SpaceSpec space;
  double p = 2.0;
  std::vector<cplx> data;

  VectorField() = default;
  VectorField(int natoms, SpaceSpec sp, double p_exp = 2.0)
      : space(sp), p(p_exp), data(static_cast<size_t>(natoms) * sp.m, cplx(0)) {}

  int atoms() const { return space.m ? static_cast<int>(data.size()) / space.m : 0; }
  cplx* at(int i) { return data.data() + static_cast<size_t>(i) * space.m; }
  const cplx* at(int i) const { return data.data() + static_cast<size_t>(i) * space.m; }

  VectorField& operator+=(const VectorField& o) {
    for (size_t i = 0; i < data.size(); ++i) data[i] += o.data[i];
    return *this;
  }
  VectorField& operator-=(const VectorField& o) {
    for (size_t i = 0; i < data.size(); ++i) data[i] -= o.data[i];
    return *this;
  }
  VectorField& operator*=(cplx c) {
    for (auto& v : data) v *= c;
    return *this;
  }
};

/// L^p(mu; X) norm with explicit atom weights; p = inf gives the sup norm.
inline double lp_norm(const VectorField& f, std::span<const double> w, double p) {
  const int n = f.atoms();
  if (std::isinf(p)) {
    double mx = 0;
    for (int i = 0; i < n; ++i) mx = std::max(mx, x_norm(f.space, f.at(i)));
    return mx;
  }
  double s = 0;
  for (int i = 0; i < n; ++i) s += w[i] * std::pow(x_norm(f.space, f.at(i)), p);
  return std::pow(s, 1.0 / p);
}

inline double lp_norm(const VectorField& f, std::span<const double> w) {
  return lp_norm(f, w, f.p);
}

/// Bilinear duality sum_i sum_c g_c(x_i) f_c(x_i) w_i between a field over X*
/// and a field over X.  No conjugation: this is the pairing under which the
/// adapted Haar expansions reproduce the sesquilinear-free identities exactly.
inline cplx dual_pair(const VectorField& g, const VectorField& f, std::span<const double> w) {
  cplx s = 0;
  const int n = f.atoms(), m = f.space.m;
  for (int i = 0; i < n; ++i) {
    cplx t = 0;
    for (int c = 0; c < m; ++c) t += g.at(i)[c] * f.at(i)[c];
    s += t * w[i];
  }
  return s;
}

/// Standard L^2(mu)-type inner product (conjugate-linear in g).
inline cplx inner(const VectorField& g, const VectorField& f, std::span<const double> w) {
  cplx s = 0;
  const int n = f.atoms(), m = f.space.m;
  for (int i = 0; i < n; ++i) {
    cplx t = 0;
    for (int c = 0; c < m; ++c) t += std::conj(g.at(i)[c]) * f.at(i)[c];
    s += t * w[i];
  }
  return s;
}

/// Complex-Gaussian random field (each component standard normal in re/im).
VectorField random_field(int natoms, SpaceSpec sp, Rng& rng, double p_exp = 2.0);

} // namespace tblab

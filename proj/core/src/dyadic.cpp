#include "tblab/dyadic.hpp"
#include "tblab/errors.hpp"

#include <algorithm>
#include <cmath>

namespace tblab {

namespace {
constexpr int kMaxWindow = 50; // offsets stay exact doubles below this height
}

ShiftSequence ShiftSequence::zero(int dim, int k_lo, int k_hi) {
  ShiftSequence s;
  s.dim = dim;
  s.k_lo = k_lo;
  s.k_hi = k_hi;
  s.bits.assign(static_cast<size_t>(std::max(0, k_hi - k_lo)) * dim, 0);
  return s;
}

ShiftSequence ShiftSequence::random(int dim, int k_lo, int k_hi, Rng& rng) {
  ShiftSequence s = zero(dim, k_lo, k_hi);
  for (auto& b : s.bits) b = static_cast<std::uint8_t>(rng.next_u64() & 1);
  return s;
}

DyadicSystem::DyadicSystem(int dim, ShiftSequence shift)
    : dim_(dim), shift_(std::move(shift)) {
  if (dim < 1 || dim > kMaxDim) throw ConfigError("DyadicSystem: dim in [1,3] required");
  if (shift_.dim != dim) throw ConfigError("DyadicSystem: shift dimension mismatch");
  if (shift_.k_hi - shift_.k_lo > kMaxWindow)
    throw ConfigError("DyadicSystem: shift window exceeds 50 levels");
}

double DyadicSystem::offset(int level, int axis) const {
  // sum of in-window bits below `level`; geometric, so always < 2^level
  double o = 0;
  const int top = std::min(level, shift_.k_hi);
  for (int j = shift_.k_lo; j < top; ++j)
    if (shift_.bit(j, axis)) o += std::ldexp(1.0, j);
  return o;
}

Cube DyadicSystem::cube_of_point(const Vec& x, int level) const {
  Cube q;
  q.level = level;
  const double inv = std::ldexp(1.0, -level);
  for (int i = 0; i < dim_; ++i)
    q.coords[i] = static_cast<std::int64_t>(std::floor((x[i] - offset(level, i)) * inv));
  return q;
}

Box DyadicSystem::realize(const Cube& q) const {
  Box b;
  b.dim = dim_;
  const double s = q.side();
  for (int i = 0; i < dim_; ++i) {
    b.lo[i] = offset(q.level, i) + static_cast<double>(q.coords[i]) * s;
    b.hi[i] = b.lo[i] + s;
  }
  return b;
}

Cube DyadicSystem::ancestor(const Cube& q, int up) const {
  if (up <= 0) return q;
  // the child's center is never on an ancestor hyperplane, so flooring it is
  // exact
  Box b = realize(q);
  return cube_of_point(b.center(), q.level + up);
}

bool DyadicSystem::cube_contains(const Cube& q, const Vec& x) const {
  return realize(q).contains(x);
}

double DyadicSystem::boundary_distance(const Box& b, int level) const {
  const double s = std::ldexp(1.0, level), inv = 1.0 / s;
  double best = INFINITY;
  for (int i = 0; i < dim_; ++i) {
    const double o = offset(level, i);
    const double u = (b.lo[i] - o) * inv, v = (b.hi[i] - o) * inv;
    const double fu = std::floor(u);
    if (v >= fu + 1.0) return 0.0; // a plane meets the closed box
    best = std::min(best, std::min(u - fu, fu + 1.0 - v) * s);
  }
  return best;
}

double DyadicSystem::boundary_distance(const Vec& x, int level) const {
  Box b;
  b.dim = dim_;
  for (int i = 0; i < dim_; ++i) { b.lo[i] = x[i]; b.hi[i] = x[i]; }
  return boundary_distance(b, level);
}

GoodnessParams GoodnessParams::standard(double alpha, double d, int r,
                                        double lambda, double eta) {
  GoodnessParams p;
  p.alpha = alpha;
  p.d = d;
  p.gamma = alpha / (2.0 * (alpha + d));
  p.r = r;
  p.lambda = lambda;
  p.eta = eta;
  p.validate();
  return p;
}

void GoodnessParams::validate() const {
  if (!(alpha > 0) || !(d > 0)) throw ConfigError("goodness: alpha, d must be positive");
  if (!(gamma > 0 && gamma <= 0.5)) throw ConfigError("goodness: gamma in (0, 1/2] required");
  if (!(lambda >= 1.0)) throw ConfigError("goodness: lambda >= 1 required");
  if (!(eta > 0 && eta < 0.25)) throw ConfigError("goodness: eta in (0, 1/4) required");
  if (r < 1) throw ConfigError("goodness: r >= 1 required");
  if (std::exp2(r * (1.0 - gamma)) < 4.0 * lambda)
    throw ConfigError("goodness: scale separation 2^(r(1-gamma)) >= 4*lambda violated; "
                      "increase r or decrease lambda");
}

int GoodnessParams::theta(int j) const {
  double v = (j * gamma + r) / (1.0 - gamma);
  return static_cast<int>(std::ceil(v - 1e-12));
}

double analytic_bad_probability_bound(int dim, const GoodnessParams& p) {
  return 2.0 * dim * std::exp2(-p.r * p.gamma) / (1.0 - std::exp2(-p.gamma));
}

double truncation_tail_bound(int dim, const GoodnessParams& p, int excess_cap) {
  return 2.0 * dim * std::exp2(-(excess_cap + 1) * p.gamma) / (1.0 - std::exp2(-p.gamma));
}

namespace {

double box_dist_to_boundary_inf(const Box& q, const Box& r) {
  double margin = INFINITY;
  bool inside = true;
  for (int i = 0; i < q.dim; ++i) {
    double m = std::min(q.lo[i] - r.lo[i], r.hi[i] - q.hi[i]);
    if (m < 0) inside = false;
    margin = std::min(margin, m);
  }
  if (inside) return std::max(margin, 0.0);
  double d = box_dist_inf(q, r);
  return d > 0 ? d : 0.0;
}

} // namespace

SingularityVerdict is_singular_pair(const Box& q, const Box& r, const GoodnessParams& p) {
  SingularityVerdict v;
  const double lq = q.side(0), lr = r.side(0);
  v.threshold = std::pow(lq, p.gamma) * std::pow(lr, 1.0 - p.gamma);
  v.min_boundary_dist = box_dist_to_boundary(q, r);
  v.min_boundary_dist_inf = box_dist_to_boundary_inf(q, r);
  // half-side children of R
  const int nch = 1 << r.dim;
  for (int c = 0; c < nch; ++c) {
    Box s = r;
    for (int i = 0; i < r.dim; ++i) {
      double mid = 0.5 * (r.lo[i] + r.hi[i]);
      if ((c >> i) & 1) s.lo[i] = mid; else s.hi[i] = mid;
    }
    v.min_boundary_dist = std::min(v.min_boundary_dist, box_dist_to_boundary(q, s));
    v.min_boundary_dist_inf = std::min(v.min_boundary_dist_inf, box_dist_to_boundary_inf(q, s));
  }
  v.singular = v.min_boundary_dist <= v.threshold;
  v.essentially_singular = v.singular && lq <= std::ldexp(lr, -p.r);
  return v;
}

GoodnessClassifier::GoodnessClassifier(const DyadicSystem* own, ShiftSequence opp,
                                       ShiftSequence opp_fine, GoodnessParams params,
                                       int excess_cap)
    : own_(own), opp_(std::move(opp)), opp_fine_(std::move(opp_fine)),
      params_(params), excess_cap_(excess_cap) {
  params_.validate();
  if (excess_cap_ < params_.r) throw ConfigError("GoodnessClassifier: excess_cap < r");
  if (opp_.dim != own_->dim() || opp_fine_.dim != own_->dim())
    throw ConfigError("GoodnessClassifier: shift dimension mismatch");
}

double GoodnessClassifier::hybrid_offset(int q_level, int level, int axis) const {
  double o = 0;
  const int lo = std::min(opp_fine_.k_lo, opp_.k_lo);
  for (int j = lo; j < level; ++j) {
    int b = (j < q_level) ? opp_fine_.bit(j, axis) : opp_.bit(j, axis);
    if (b) o += std::ldexp(1.0, j);
  }
  return o;
}

double GoodnessClassifier::hybrid_boundary_distance(const Box& b, int q_level,
                                                    int level) const {
  const double s = std::ldexp(1.0, level), inv = 1.0 / s;
  double best = INFINITY;
  for (int i = 0; i < own_->dim(); ++i) {
    const double o = hybrid_offset(q_level, level, i);
    const double u = (b.lo[i] - o) * inv, v = (b.hi[i] - o) * inv;
    const double fu = std::floor(u);
    if (v >= fu + 1.0) return 0.0;
    best = std::min(best, std::min(u - fu, fu + 1.0 - v) * s);
  }
  return best;
}

bool GoodnessClassifier::is_good(const Cube& q) const {
  const Box b = own_->realize(q);
  const double lq = q.side();
  for (int e = params_.r; e <= excess_cap_; ++e) {
    const double threshold = lq * std::exp2(e * (1.0 - params_.gamma));
    if (hybrid_boundary_distance(b, q.level, q.level + e) <= threshold) return false;
  }
  return true;
}

BadProbabilityReport bad_probability_mc(int dim, const GoodnessParams& p, int trials,
                                        std::uint64_t seed, int excess_cap, int k_fine) {
  p.validate();
  BadProbabilityReport rep;
  rep.trials = trials;
  rep.excess_cap = excess_cap;
  rep.analytic_bound = analytic_bad_probability_bound(dim, p);
  rep.truncation_tail = truncation_tail_bound(dim, p, excess_cap);

  DyadicSystem own(dim, ShiftSequence::zero(dim, 0, 1));
  Cube unit;
  unit.level = 0;

  int bad = 0;
  for (int t = 0; t < trials; ++t) {
    Rng rng = Rng::substream(seed, static_cast<std::uint64_t>(t));
    ShiftSequence opp = ShiftSequence::random(dim, 0, excess_cap + 1, rng);
    ShiftSequence fine = ShiftSequence::random(dim, k_fine, 0, rng);
    GoodnessClassifier cls(&own, std::move(opp), std::move(fine), p, excess_cap);
    if (!cls.is_good(unit)) ++bad;
  }
  rep.frequency = static_cast<double>(bad) / trials;
  rep.std_error = std::sqrt(std::max(rep.frequency * (1.0 - rep.frequency), 1e-12) / trials);
  return rep;
}

SeparationReport good_separation_check(const GoodnessClassifier& cls,
                                       const DyadicSystem& opposing, const Cube& q) {
  SeparationReport rep;
  const Box b = cls.own().realize(q);
  const double lq = q.side();
  const GoodnessParams& p = cls.params();
  for (int e = p.r; e <= cls.excess_cap(); ++e) {
    const double threshold = lq * std::exp2(e * (1.0 - p.gamma));
    const double d = opposing.boundary_distance(b, q.level + e);
    const double margin = d - 0.5 * threshold;
    if (margin < rep.worst_margin) { rep.worst_margin = margin; rep.worst_level = q.level + e; }
    if (d < 0.5 * threshold * (1.0 - 1e-12)) rep.pass = false;
  }
  return rep;
}

bool containment_level_check(const DyadicSystem& q_sys, const Cube& q,
                             const DyadicSystem& r_sys, const Cube& r,
                             int n, int j, const GoodnessParams& p) {
  Cube anc = q_sys.ancestor(q, n + j + p.theta(j));
  return box_subset(r_sys.realize(r), q_sys.realize(anc));
}

bool in_delta_cube(const Vec& x, const Box& q, double eta) {
  return q.dilate(1.0 + 2.0 * eta).contains(x) && !q.dilate(1.0 - 2.0 * eta).contains(x);
}

bool in_delta_band(const DyadicSystem& s, const Vec& x, int k, const GoodnessParams& p) {
  for (int j = k - p.r; j <= k + p.r; ++j)
    if (s.boundary_distance(x, j) <= p.eta * std::ldexp(1.0, j)) return true;
  return false;
}

ResolvedSystem::ResolvedSystem(const AtomicMeasure* m, DyadicSystem sys, int k_lo, int k_hi)
    : m_(m), sys_(std::move(sys)), k_lo_(k_lo), k_hi_(k_hi) {
  if (k_hi_ < k_lo_) throw ConfigError("ResolvedSystem: empty window");
  if (k_hi_ - k_lo_ > kMaxWindow) throw ConfigError("ResolvedSystem: window exceeds 50 levels");
  const int L = levels(), n = m_->atoms();
  cells_.resize(L);
  atom_order_.resize(L);
  atom_cell_.resize(L);
  child_index_.resize(L);
  lookup_.resize(L);

  for (int k = k_lo_; k <= k_hi_; ++k) {
    const int li = idx(k);
    std::vector<std::pair<IVec, int>> keyed(n);
    for (int a = 0; a < n; ++a)
      keyed[a] = {sys_.cube_of_point(m_->points[a], k).coords, a};
    std::sort(keyed.begin(), keyed.end());

    atom_order_[li].resize(n);
    atom_cell_[li].assign(n, -1);
    for (int a = 0; a < n; ++a) atom_order_[li][a] = keyed[a].second;

    for (int a = 0; a < n;) {
      int b = a;
      while (b < n && keyed[b].first == keyed[a].first) ++b;
      Cell c;
      c.cube.level = k;
      c.cube.coords = keyed[a].first;
      c.atom_begin = a;
      c.atom_end = b;
      for (int t = a; t < b; ++t) {
        c.mass += m_->weights[keyed[t].second];
        atom_cell_[li][keyed[t].second] = static_cast<int>(cells_[li].size());
      }
      lookup_[li][c.cube.coords] = static_cast<int>(cells_[li].size());
      cells_[li].push_back(c);
      a = b;
    }
  }

  // parent links and child ranges
  for (int k = k_lo_; k < k_hi_; ++k) {
    const int li = idx(k), lp = idx(k + 1);
    for (auto& c : cells_[li]) {
      Cube up = sys_.ancestor(c.cube, 1);
      auto it = lookup_[lp].find(up.coords);
      c.parent = (it == lookup_[lp].end()) ? -1 : it->second;
    }
    // bucket children under each parent, preserving coordinate order
    std::vector<int> count(cells_[lp].size(), 0);
    for (const auto& c : cells_[li])
      if (c.parent >= 0) ++count[c.parent];
    child_index_[lp].resize(cells_[li].size());
    int acc = 0;
    for (size_t pi = 0; pi < cells_[lp].size(); ++pi) {
      cells_[lp][pi].child_begin = acc;
      acc += count[pi];
      cells_[lp][pi].child_end = cells_[lp][pi].child_begin;
    }
    for (int ci = 0; ci < static_cast<int>(cells_[li].size()); ++ci) {
      int pi = cells_[li][ci].parent;
      if (pi >= 0) child_index_[lp][cells_[lp][pi].child_end++] = ci;
    }
  }
}

int ResolvedSystem::find_cell(const Cube& q) const {
  if (q.level < k_lo_ || q.level > k_hi_) return -1;
  const auto& mp = lookup_[idx(q.level)];
  auto it = mp.find(q.coords);
  return it == mp.end() ? -1 : it->second;
}

bool ResolvedSystem::resolves_atoms() const {
  for (const auto& c : cells_[0])
    if (c.atom_end - c.atom_begin > 1) return false;
  return true;
}

std::vector<Box> ResolvedSystem::all_cell_boxes() const {
  std::vector<Box> out;
  for (int k = k_lo_; k <= k_hi_; ++k)
    for (int i = 0; i < cell_count(k); ++i) out.push_back(realize(cell(k, i).cube));
  return out;
}

std::pair<int, int> suggest_window(const AtomicMeasure& m) {
  double sep = m.min_separation();
  double diam = std::max(m.diameter(), 1e-9);
  int k_lo;
  if (sep > 0) {
    // below this scale some axis always separates the closest pair
    k_lo = static_cast<int>(std::floor(std::log2(sep / std::sqrt(double(m.dim))))) - 1;
  } else {
    k_lo = 0;
  }
  int k_hi = static_cast<int>(std::ceil(std::log2(diam))) + 2;
  if (k_hi <= k_lo) k_hi = k_lo + 1;
  return {k_lo, k_hi};
}

} // namespace tblab

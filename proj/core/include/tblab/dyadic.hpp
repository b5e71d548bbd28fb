#pragma once
#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "tblab/base.hpp"
#include "tblab/measure.hpp"
#include "tblab/rng.hpp"

namespace tblab {

/// Random dyadic shift: one bit vector beta_j in {0,1}^dim per scale 2^j,
/// defined for j in [k_lo, k_hi).  The lattice at level k is the standard
/// lattice of side 2^k translated by sum_{j<k} beta_j 2^j (bits outside the
/// window count as 0).
struct ShiftSequence {
  int dim = 1;
  int k_lo = 0, k_hi = 0;
  std::vector<std::uint8_t> bits; // ((j - k_lo) * dim + axis)

  static ShiftSequence zero(int dim, int k_lo, int k_hi);
  static ShiftSequence random(int dim, int k_lo, int k_hi, Rng& rng);

  int bit(int j, int axis) const {
    if (j < k_lo || j >= k_hi) return 0;
    return bits[static_cast<size_t>(j - k_lo) * dim + axis];
  }
};

/// Lattice cube: side 2^level, corner at offset(level) + coords * 2^level.
/// Larger level means larger cube.
struct Cube {
  int level = 0;
  IVec coords{};
  double side() const { return std::ldexp(1.0, level); }
  friend bool operator==(const Cube& a, const Cube& b) {
    return a.level == b.level && a.coords == b.coords;
  }
};

/// A shifted dyadic lattice on R^dim.  The window height k_hi - k_lo is capped
/// at 50 levels so offsets and cube corners are exact dyadic doubles.
class DyadicSystem {
public:
  DyadicSystem(int dim, ShiftSequence shift);

  int dim() const { return dim_; }
  int k_lo() const { return shift_.k_lo; }
  int k_hi() const { return shift_.k_hi; }
  const ShiftSequence& shift() const { return shift_; }

  /// Lattice offset at a level, reduced to [0, 2^level).
  double offset(int level, int axis) const;

  Cube cube_of_point(const Vec& x, int level) const;
  Box realize(const Cube& q) const;
  Cube ancestor(const Cube& q, int up) const;
  bool cube_contains(const Cube& q, const Vec& x) const;

  /// Euclidean distance from the closure of a box to the union of lattice
  /// hyperplanes at `level` (the boundaries of all level-`level` cubes).
  /// Each hyperplane is axis-orthogonal, so the distance is the min over
  /// axes of the 1-D distance, identical in the l^2 and sup metrics.
  double boundary_distance(const Box& b, int level) const;
  double boundary_distance(const Vec& x, int level) const;

private:
  int dim_;
  ShiftSequence shift_;
};

/// l(Q) + dist(Q, R) + l(R); comparable to dist for far-apart cubes and to
/// the larger side length when they are near.
inline double long_distance(const Box& q, const Box& r) {
  return q.side(0) + box_dist(q, r) + r.side(0);
}

/// Parameters controlling the good/bad cube dichotomy and the related decay
/// estimates.  gamma defaults to alpha / (2 (alpha + d)), the exponent that
/// balances kernel smoothness against the growth dimension.
struct GoodnessParams {
  double alpha = 1.0;
  double d = 1.0;
  double gamma = 0.25;
  int r = 8;
  double lambda = 1.0; ///< dilation factor in BMO-type norms, >= 1
  double eta = 0.05;   ///< relative width of cube boundary collars, in (0, 1/4)

  static GoodnessParams standard(double alpha, double d, int r,
                                 double lambda = 1.0, double eta = 0.05);

  /// Throws ConfigError unless 0 < gamma <= 1/2, eta in (0,1/4), lambda >= 1
  /// and the scale-separation inequality 2^{r(1-gamma)} >= 4*lambda holds.
  void validate() const;

  /// Smallest integer theta with (ancestor shift) theta*(1-gamma) >= j*gamma + r;
  /// used to bound how far above a cube a nearby larger cube can stick out.
  int theta(int j) const;
};

/// Upper bound for the probability that a cube is bad under random shifts:
/// 2 * dim * 2^{-r gamma} / (1 - 2^{-gamma}).
double analytic_bad_probability_bound(int dim, const GoodnessParams& p);

/// Bound for the part of the badness search beyond the excess cap:
/// 2 * dim * 2^{-(cap+1) gamma} / (1 - 2^{-gamma}).
double truncation_tail_bound(int dim, const GoodnessParams& p, int excess_cap);

struct SingularityVerdict {
  bool singular = false;
  bool essentially_singular = false;
  double min_boundary_dist = 0.0; ///< min over S of dist(Q, boundary of S), l^2
  double min_boundary_dist_inf = 0.0;
  double threshold = 0.0;         ///< l(Q)^gamma l(R)^{1-gamma}
};

/// Pairwise nearness test for realized cubes with l(Q) <= l(R): the pair is
/// singular when Q comes within l(Q)^gamma l(R)^{1-gamma} of the boundary of
/// R or of any of its 2^dim half-side children; essentially singular requires
/// in addition l(Q) <= 2^{-r} l(R).  Both metrics are computed; the l^2 one
/// decides.
SingularityVerdict is_singular_pair(const Box& q, const Box& r, const GoodnessParams& p);

/// Decides goodness of cubes of an "own" lattice against an opposing random
/// lattice pair (coarse bits `opp`, fine bits `opp_fine`): scales below l(Q)
/// take bits from opp_fine, scales >= l(Q) from opp.
///
/// Q is bad when some opposing cube R with l(R) >= 2^r l(Q) has Q within
/// l(Q)^gamma l(R)^{1-gamma} of a lattice boundary at the scale of R.  The
/// scan over excesses e = r..excess_cap uses the lattice hyperplane grid, so
/// one distance query per level covers every R at that level; the classical
/// probability bound (see analytic_bad_probability_bound) is stated for
/// exactly this boundary-of-R form.
class GoodnessClassifier {
public:
  GoodnessClassifier(const DyadicSystem* own, ShiftSequence opp, ShiftSequence opp_fine,
                     GoodnessParams params, int excess_cap = 40);

  bool is_good(const Cube& q) const;
  const GoodnessParams& params() const { return params_; }
  int excess_cap() const { return excess_cap_; }
  const DyadicSystem& own() const { return *own_; }

  /// Offset of the hybrid lattice (as seen by a cube at q_level) at `level`.
  double hybrid_offset(int q_level, int level, int axis) const;
  /// Distance from a box to the hybrid lattice planes at `level`.
  double hybrid_boundary_distance(const Box& b, int q_level, int level) const;

private:
  const DyadicSystem* own_;
  ShiftSequence opp_, opp_fine_;
  GoodnessParams params_;
  int excess_cap_;
};

struct BadProbabilityReport {
  double frequency = 0.0;
  double std_error = 0.0;
  double analytic_bound = 0.0;
  double truncation_tail = 0.0;
  int trials = 0;
  int excess_cap = 0;
};

/// Monte Carlo badness frequency for the unit cube of a fixed lattice against
/// freshly drawn opposing shifts.  Deterministic for fixed (seed, trials).
BadProbabilityReport bad_probability_mc(int dim, const GoodnessParams& p, int trials,
                                        std::uint64_t seed, int excess_cap = 40,
                                        int k_fine = -12);

struct SeparationReport {
  bool pass = true;
  int worst_level = 0;
  double worst_margin = INFINITY; ///< min over levels of dist - threshold/2
};

/// For a cube judged good, re-checks against the *actual* opposing lattice
/// `opposing` (not the hybrid): every level with excess in [r, excess_cap]
/// must keep dist(Q, lattice boundary) >= (1/2) l(Q)^gamma l(R)^{1-gamma}.
/// Equality counts as a pass.
SeparationReport good_separation_check(const GoodnessClassifier& cls,
                                       const DyadicSystem& opposing, const Cube& q);

/// Containment level bound: R from the opposing system with l(R) = 2^n l(Q)
/// and D(Q,R) <= 2^{j+1} l(R) must satisfy R inside ancestor(Q, n+j+theta(j)),
/// provided R is good against Q's system.  Returns true when the containment
/// holds (exact half-open box inclusion; dyadic doubles make this safe).
bool containment_level_check(const DyadicSystem& q_sys, const Cube& q,
                             const DyadicSystem& r_sys, const Cube& r,
                             int n, int j, const GoodnessParams& p);

/// Boundary collar membership: x in (1+2 eta)Q \ (1-2 eta)Q.
bool in_delta_cube(const Vec& x, const Box& q, double eta);

/// Membership in the level-k collar band: some level j in [k-r, k+r] has x
/// within eta 2^j of a lattice plane of `s` at level j.  This is exactly the
/// union over comparable-scale cubes R of `s` of their collars delta_R.
bool in_delta_band(const DyadicSystem& s, const Vec& x, int k, const GoodnessParams& p);

// ---- atom partitions ----

/// A measure resolved through the levels of one dyadic system: per level, the
/// cubes carrying atoms, their masses, and parent/child links.  Levels run
/// from k_lo (finest, expected to separate atoms) to k_hi (coarsest).
class ResolvedSystem {
public:
  struct Cell {
    Cube cube;
    int atom_begin = 0, atom_end = 0; ///< range into atom_order(level)
    double mass = 0.0;
    int parent = -1;                  ///< cell index at level+1
    int child_begin = 0, child_end = 0; ///< range into child_index(level)
  };

  ResolvedSystem(const AtomicMeasure* m, DyadicSystem sys, int k_lo, int k_hi);

  const AtomicMeasure& measure() const { return *m_; }
  const DyadicSystem& system() const { return sys_; }
  int k_lo() const { return k_lo_; }
  int k_hi() const { return k_hi_; }
  int levels() const { return k_hi_ - k_lo_ + 1; }

  int cell_count(int level) const { return static_cast<int>(cells_[idx(level)].size()); }
  const Cell& cell(int level, int i) const { return cells_[idx(level)][i]; }
  std::span<const int> atoms_of(int level, const Cell& c) const {
    return {atom_order_[idx(level)].data() + c.atom_begin,
            static_cast<size_t>(c.atom_end - c.atom_begin)};
  }
  /// Children cell indices (at level-1) of a cell, via its child range.
  std::span<const int> children_of(int level, const Cell& c) const {
    return {child_index_[idx(level)].data() + c.child_begin,
            static_cast<size_t>(c.child_end - c.child_begin)};
  }
  int cell_of_atom(int level, int atom) const { return atom_cell_[idx(level)][atom]; }
  int find_cell(const Cube& q) const;
  Box realize(const Cube& q) const { return sys_.realize(q); }

  /// True when every cell at the finest level holds a single atom, i.e. the
  /// window fully resolves the measure.
  bool resolves_atoms() const;

  /// Realized boxes of every cell in the window (accretivity check family).
  std::vector<Box> all_cell_boxes() const;

private:
  int idx(int level) const { return level - k_lo_; }
  const AtomicMeasure* m_;
  DyadicSystem sys_;
  int k_lo_, k_hi_;
  std::vector<std::vector<Cell>> cells_;
  std::vector<std::vector<int>> atom_order_;
  std::vector<std::vector<int>> atom_cell_;
  std::vector<std::vector<int>> child_index_;
  std::vector<std::map<IVec, int>> lookup_;
};

/// Window that resolves all atoms and covers the support: k_lo separates the
/// closest atom pair, k_hi covers the diameter.
std::pair<int, int> suggest_window(const AtomicMeasure& m);

} // namespace tblab

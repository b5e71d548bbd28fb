#pragma once

#include "tblab/base.hpp"
#include "tblab/haar.hpp"
#include "tblab/measure.hpp"
#include "tblab/rng.hpp"
#include "tblab/space.hpp"

#include <json.hpp>

#include <functional>
#include <string>
#include <vector>

namespace tblab {

/// A singular kernel together with its decay exponents: |K(x,y)| should be
/// comparable to |x-y|^{-d}, and differences in either argument should decay
/// like |x-x'|^alpha / |x-y|^{d+alpha} once |x-y| > 2|x-x'|.
struct KernelSpec {
  double d = 1.0;
  double alpha = 1.0; // in (0, 1]
  int dim = 1;
  std::string name;
  std::function<cplx(const Vec&, const Vec&)> eval; ///< defined for x != y
};

KernelSpec cauchy_kernel(int dim = 1);                 ///< 1/(x-y), on R or on R^2 = C
KernelSpec fractional_kernel(int dim, double d);       ///< |x-y|^{-d}
KernelSpec riesz_kernel(int dim, int component = 0);   ///< (x_c-y_c)/|x-y|^{dim+1}
KernelSpec constant_kernel(double c, int dim = 1);     ///< K = c, d = 0 (calibration)
KernelSpec zero_kernel(int dim = 1);

/// Dispatch on cfg["kind"]: cauchy | fractional | riesz | constant | zero.
KernelSpec build_kernel(const nlohmann::json& cfg);

struct CzkReport {
  double worst_size_ratio = 0;   ///< sup |K(x,y)| |x-y|^d
  double worst_holder_ratio = 0; ///< sup of either one-sided difference quotient
  int samples = 0;
};

/// Random sampling of the size and smoothness conditions.  Points are drawn
/// from the unit box with log-uniform separations; the difference quotient is
/// the larger of the two one-argument increments, measured against
/// |x-x'|^alpha / |x-y|^{d+alpha} under the constraint |x-y| > 2|x-x'|.
CzkReport czk_check(const KernelSpec& k, int n_samples, Rng& rng);

/// The truncated action of a kernel on functions supported by an atomic
/// measure: pairs of atoms closer than truncation_eps do not interact, which
/// in particular removes the diagonal.  With the truncation below the minimal
/// atom separation the sums are maximal for the measure and every adjoint /
/// splitting identity is an exact finite-sum statement.
struct DiscreteOperator {
  KernelSpec kernel;
  const AtomicMeasure* measure = nullptr;
  double truncation_eps = 0;
};

/// eps < 0 selects the default: half the minimal atom separation.
DiscreteOperator make_operator(const KernelSpec& k, const AtomicMeasure* m, double eps = -1.0);

/// (Tf)(x_i) = sum_{j : |x_i-x_j| >= eps} w_j K(x_i,x_j) f(x_j), componentwise.
VectorField apply(const DiscreteOperator& t, const VectorField& f);
/// Same sum with the conjugate-transposed kernel K*(x,y) = conj(K(y,x)).
VectorField apply_adjoint(const DiscreteOperator& t, const VectorField& g);
/// Transpose under the bilinear pairing: (T^t h)(x_i) = sum_j w_j K(x_j, x_i) h(x_j),
/// no conjugation, so that dual_pair(h, T f) = dual_pair(T^t h, f) exactly.
VectorField apply_transpose(const DiscreteOperator& t, const VectorField& h);

/// <psi_R b2, T(b1 phi_Q)> as an exact double sum over atom pairs; the left
/// factor enters conjugated, so the coefficient is linear in phi_Q and
/// conjugate-linear in psi_R.
cplx matrix_coeff(const DiscreteOperator& t, const HaarFunction& psi_r,
                  const HaarFunction& phi_q, const AccretiveFn& b1,
                  const AccretiveFn& b2);

/// One pair of Haar functions from possibly different lattices; phi_q is the
/// one on the smaller cube.  q_good marks pairs whose small cube passed the
/// goodness classifier; the long-distance bound is recorded for those only.
struct HaarPair {
  HaarFunction psi_r;
  HaarFunction phi_q;
  bool q_good = true;
};

struct DecayCellStat {
  int n = 0;          ///< log2 of the side ratio l(R)/l(Q)
  int j = 0;          ///< D(Q,R)/l(R) in (2^j, 2^{j+1}]
  double max_mag = 0; ///< max |T_RQ| 2^{(k+j)d} / (||psi||_1 ||phi||_1)
  int count = 0;
};

struct SeparatedPairRow {
  int n = 0, j = 0, k_level = 0;
  double dist = 0, long_dist = 0;
  double magnitude = 0;
  double rhs_centered = 0, rhs_longdist = 0;
  double ratio_centered = 0, ratio_longdist = 0;
  bool q_good = true;
};

struct SeparatedDecayReport {
  /// sup |T_RQ| / (l(Q)^a / dist^{d+a} ||psi||_1 ||phi||_1)
  double sup_ratio_centered = 0;
  /// sup |T_RQ| / (l(Q)^{a/2} l(R)^{a/2} / D^{d+a} ||psi||_1 ||phi||_1), good Q only
  double sup_ratio_longdist = 0;
  int checked = 0, skipped = 0, zero_pairs = 0;
  std::vector<SeparatedPairRow> rows;
  std::vector<DecayCellStat> cells;

  /// Least-squares slope of ln(cell max) against n restricted to one j-band,
  /// or against n+j over every cell when fixed_j < 0.  NaN with fewer than
  /// two distinct abscissae.
  double slope(int fixed_j = -1) const;
};

/// Per-pair decay ratios for separated pairs l(Q) <= l(R) and dist >= l(Q);
/// pairs violating the hypothesis are skipped and counted.
SeparatedDecayReport decay_separated(const DiscreteOperator& t,
                                     const std::vector<HaarPair>& pairs,
                                     const AccretiveFn& b1, const AccretiveFn& b2);

struct ContainedPairRow {
  int n = 0;                   ///< log2(l(R)/l(Q))
  double magnitude = 0;        ///< |T_RQ|
  double corrected = 0;        ///< |T~_RQ| after removing the correction term
  double identity_rel_err = 0; ///< two independent summation orders for T~
  double ratio_coeff = 0;
  double ratio_pointwise = 0;
};

struct ContainedDecayReport {
  double sup_ratio_coeff = 0;
  double sup_ratio_pointwise = 0;
  double max_identity_err = 0;
  int checked = 0, skipped = 0, zero_pairs = 0;
  std::vector<ContainedPairRow> rows;
};

/// Corrected coefficients for pairs Q strictly inside R with
/// l(Q) < 2^{-r_param} l(R):
///   T~_RQ = T_RQ - <b2, T(b1 phi_Q)> conj(<psi_R>_Q),
/// the global pairing running over the full measure.  (The plain average of
/// psi_R over Q enters conjugated so that it matches the conjugated slot of
/// the pairing; magnitude bounds are unaffected.)  Each pair is recomputed
/// through the half-child split of R as an independent cross-check, and the
/// coefficient and pointwise bounds are reported as ratios.
ContainedDecayReport decay_contained(const DiscreteOperator& t,
                                     const std::vector<HaarPair>& pairs,
                                     const AccretiveFn& b1, const AccretiveFn& b2,
                                     int r_param);

std::string separated_report_csv(const SeparatedDecayReport& rep);
std::string contained_report_csv(const ContainedDecayReport& rep);

/// <1_R b2, T(b1 1_Q)> split over the overlap Delta = Q cap R, the separated
/// remainders, and the collar regions (1+2 eta)C \ (1-2 eta)C of the opposite
/// cube.  The five terms add up to the one-pass coefficient exactly.
struct CloseSplit {
  cplx r_sep = 0;  ///< x in R minus Delta minus the Q-collar, y in Q
  cplx r_bdry = 0; ///< x in (R minus Delta) cap Q-collar, y in Q
  cplx middle = 0; ///< x and y both in Delta
  cplx q_bdry = 0; ///< x in Delta, y in (Q minus Delta) cap R-collar
  cplx q_sep = 0;  ///< x in Delta, y in Q minus Delta minus the R-collar
  cplx direct = 0; ///< full coefficient summed in a single pass
  double mu_delta = 0;
  cplx t_delta = 0;       ///< middle / mu(Delta); 0 for empty overlap
  double sep_ratio_r = 0; ///< |r_sep| dist^d / (mu(R_sep) mu(Q))
  double sep_ratio_q = 0; ///< |q_sep| dist^d / (mu(Delta) mu(Q_sep))
  cplx total() const { return r_sep + r_bdry + middle + q_bdry + q_sep; }
};

CloseSplit close_split(const DiscreteOperator& t, const Box& q, const Box& r,
                       const AccretiveFn& b1, const AccretiveFn& b2, double eta);

/// sup over the rectangles of |<1_R b2, T(b1 1_R)>| / mu(R); zero-mass
/// rectangles are skipped.
double weak_boundedness_check(const DiscreteOperator& t, const AccretiveFn& b1,
                              const AccretiveFn& b2, const std::vector<Box>& rectangles);

} // namespace tblab

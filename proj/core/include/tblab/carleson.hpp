#pragma once
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tblab/dyadic.hpp"
#include "tblab/haar.hpp"
#include "tblab/kernel.hpp"
#include "tblab/measure.hpp"
#include "tblab/rng.hpp"
#include "tblab/space.hpp"

namespace tblab {

/// Finitely supported, level-indexed family of X1-valued functions on the
/// atoms.  `adapted` declares that each theta_j equals its own level-j
/// conditional expectation, i.e. is constant on every level-j cell of the
/// filtration it is used with; operations that need this hypothesis verify it.
struct CarlesonSequence {
  std::map<int, VectorField> theta; ///< level j -> one X1 value per atom
  bool adapted = false;
};

/// Largest deviation of any theta_j from its level-j cell averages, relative
/// to the largest component magnitude in the sequence (0 for adapted data).
double adaptedness_defect(const CarlesonSequence& seq, const ResolvedSystem& rs);

/// Replaces every theta_j by its level-j cell averages; the result carries the
/// adapted flag and has defect 0 by construction.
CarlesonSequence adapt_sequence(const CarlesonSequence& seq, const ResolvedSystem& rs);

/// One independent complex-Gaussian field per level in [lo, hi], projected
/// onto the level's cells, so the sequence is adapted by construction.
CarlesonSequence random_adapted_sequence(const ResolvedSystem& rs, int lo, int hi,
                                         SpaceSpec sp, Rng& rng);

/// sup over the supplied cubes Q of (mu(lambda Q)^{-1} int_Q |h - <h>_Q|^p)^{1/p},
/// the mean-oscillation norm with mass measured on the concentric dilate.
/// Cubes whose dilate carries no mass impose no constraint and are skipped.
double bmo_norm(const VectorField& h, double p, double lambda,
                const std::vector<Box>& cubes, const AtomicMeasure& m);

struct CarlesonReport {
  double norm = 0;          ///< sup over levels k and single level-k cells A
  double norm_unions = 0;   ///< sup additionally over sampled unions of 2-3 cells
  double union_excess = 0;  ///< norm_unions / norm - 1; the mediant inequality
                            ///< (a+b)/(c+d) <= max(a/c, b/d) pins this at <= 0
  int levels = 0;           ///< active levels entering the sup
  int sets = 0;             ///< single cells evaluated
  int unions = 0;           ///< sampled unions evaluated
  bool exact_signs = false; ///< sign average enumerated rather than sampled
};

/// Carleson norm of the sequence over the level filtration of `rs`:
///   sup over k and mass-carrying level-k sets A of
///   mu(A)^{-1/p} || 1_A sum_{j<=k} eps_j theta_j ||_{L^p(signs x mu; X1)},
/// with one independent uniform sign per level.  sign_trials > 0 samples that
/// many sign patterns; sign_trials == 0 averages over every pattern, which is
/// allowed for at most 12 active levels and serves as the exact oracle.
/// A ranges over the single cells of each level; union_samples > 0 draws that
/// many random unions of 2 or 3 distinct same-level cells per level as well,
/// probing the rest of the generated algebra (see union_excess above).
CarlesonReport carleson_norm_report(const CarlesonSequence& seq, double p,
                                    const ResolvedSystem& rs, int sign_trials,
                                    int union_samples, Rng& rng);
double carleson_norm(const CarlesonSequence& seq, double p, const ResolvedSystem& rs,
                     int sign_trials, Rng& rng);

struct JnRow {
  int instance = 0;
  double p = 0;
  double norm = 0;
  double ratio = 0; ///< norm relative to the instance's first-exponent norm
};

struct JnReport {
  std::vector<JnRow> rows;
  double max_ratio = 1.0; ///< worst pairwise ratio between exponents, over instances
  std::vector<double> p_list;
};

/// Ratio table of Carleson norms across exponents.  Requires every instance to
/// be adapted (flag set and defect below 1e-8): the equivalence of the
/// exponents is a John-Nirenberg statement about adapted sequences and fails
/// without that hypothesis, so non-adapted input is rejected with ConfigError.
/// Instances with at most 12 active levels are evaluated by exact sign
/// enumeration, larger ones with sign_trials samples.
JnReport jn_equivalence_test(const std::vector<CarlesonSequence>& instances,
                             const std::vector<double>& p_list,
                             const ResolvedSystem& rs, int sign_trials, Rng& rng);

/// One line per (instance, exponent): instance,p,norm,ratio.
std::string jn_report_csv(const JnReport& rep);

struct ParaproductEstimate {
  double norm = 0;   ///< || sum_j eps_j theta_j E_j f ||_{L^p(signs x mu)}
  double car1 = 0;   ///< Carleson norm of the sequence at exponent 1
  double f_norm = 0; ///< || f ||_{L^p(mu)}
  double ratio = 0;  ///< norm / (car1 * f_norm); 0 when the numerator vanishes too
};

/// Randomized paraproduct P f = sum_j eps_j theta_j E_j f with plain level
/// averages E_j, estimated in L^p(signs x mu).  Either the sequence or f must
/// be scalar-valued; the scalar side multiplies the other pointwise.
/// sign_trials == 0 enumerates the patterns exactly (<= 12 active levels).
ParaproductEstimate abstract_paraproduct(const CarlesonSequence& seq, const VectorField& f,
                                         double p, const ResolvedSystem& rs,
                                         int sign_trials, Rng& rng);

/// Two shifted lattices over the same measure: the inner one carries the
/// adapted decomposition (small cubes Q and their functions phi_Q), the outer
/// one the containing cubes R.  Goodness of each family is judged against the
/// opposing lattice; params.r is the side-length gap l(R) = 2^r l(Q) of the
/// cube pairs and params.lambda the dilation entering the oscillation norms.
struct TwoLatticeContext {
  const ResolvedSystem* q_rs = nullptr;
  const ResolvedSystem* r_rs = nullptr;
  const GoodnessClassifier* q_good = nullptr; ///< classifies cubes of q_rs
  const GoodnessClassifier* r_good = nullptr; ///< classifies cubes of r_rs
  GoodnessParams params;
  bool goodness_filter = true; ///< false keeps every cube (ladder-identity regime)
};

/// Two-cube paraproduct: sum over good outer cubes R and good inner cubes Q
/// inside R with l(Q) = 2^{-r} l(R) of
///   (<g>_R / <b2>_R) * <b2, T(b1 phi_Q)> * phi_Q,
/// all pairings bilinear, summed over the cancellative functions of Q.  Throws
/// AccretivityViolation when some |<b2>_R| falls below the floor (default
/// 1e-6 times the declared accretivity bound of b2).
VectorField paraproduct_pi2(const VectorField& g, const DiscreteOperator& t,
                            const AccretiveFn& b1, const AccretiveFn& b2,
                            const TwoLatticeContext& ctx, double delta_floor = -1.0);

struct TelescopeReport {
  double max_abs_err = 0;
  double max_rel_err = 0; ///< worst |ladder - collapsed| over the collapsed scale
  double scale = 0;       ///< largest collapsed magnitude seen
  int checked = 0;
  int skipped = 0;        ///< inner cells straddling an outer cell at the gap level
};

/// The ladder identity behind the paraproduct: for an inner cell Q lying in a
/// single outer cell R0 with l(R0) = 2^r l(Q), summing the Q-averages of the
/// adapted-difference expansions of g over all outer ancestors R of Q with
/// l(R) > 2^r l(Q), plus the top-level adapted average, telescopes to
/// <g>_{R0} / <b2>_{R0}.  The ladder side is evaluated through the adapted
/// decomposition of g (coefficients against the b2-functions of the outer
/// lattice), the collapsed side directly from cell averages, making the two
/// evaluations independent.  No goodness filtering: the identity needs every
/// cube, and restoring the filter is what turns the ladder into the
/// paraproduct above.
TelescopeReport pi2_telescoping_check(const VectorField& g, const AccretiveFn& b2,
                                      const TwoLatticeContext& ctx,
                                      double delta_floor = -1.0);

struct BmoSumReport {
  double lhs = 0;   ///< sign-averaged L^p norm of the coefficient sum
  double mu_r = 0;  ///< mass of the outer cube
  double bmo = 0;   ///< oscillation norm of h over the inner lattice cells
  double ratio = 0; ///< lhs / (mu_r^{1/p} * bmo); 0 when both sides vanish
  int terms = 0;    ///< inner cubes entering the sum
};

/// Sign-randomized Haar sum against h: one independent sign per inner cube Q
/// inside the outer cube with l(Q) <= 2^{-r} l(R), coefficients <h, b1 phi_Q>
/// (bilinear, per component), measured in L^p(signs x mu) and compared with
/// mu(R)^{1/p} times the oscillation norm of h over the inner lattice cells
/// at dilation params.lambda.  Signs are always sampled here (the sign space
/// is indexed by cubes, not levels).
BmoSumReport bmo_haar_sum_test(const VectorField& h, const AccretiveFn& b1,
                               const Cube& r_cube, double p,
                               const TwoLatticeContext& ctx, int sign_trials,
                               Rng& rng);

} // namespace tblab

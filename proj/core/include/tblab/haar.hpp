#pragma once
#include <vector>

#include "tblab/dyadic.hpp"
#include "tblab/measure.hpp"
#include "tblab/space.hpp"

namespace tblab {

/// Twisted conditional expectation at one level: on every mass-carrying cube
/// Q of the window, (E_k^b f)(x) = b(x) * int_Q f dmu / int_Q b dmu; points
/// outside every cell (there are none for a resolved measure) would get 0.
/// Levels below the finest window level act as the identity on resolved
/// fields.  Throws AccretivityViolation when some cube average of b falls
/// below delta_floor (default 1e-6 times the declared accretivity bound).
VectorField cond_expectation(const VectorField& f, const AccretiveFn& b, int k,
                             const ResolvedSystem& rs, double delta_floor = -1.0);

/// D_k^b f = E_{k-1}^b f - E_k^b f.
VectorField martingale_difference(const VectorField& f, const AccretiveFn& b, int k,
                                  const ResolvedSystem& rs, double delta_floor = -1.0);

/// Greedy child ordering of one cell: returns the massive children (indices
/// into level-1 cells) ordered so that every tail union U_{v>=u} Q_v keeps
/// |int b| >= [1 - (k-1) 2^{-N}] delta mu(Q), where k is the child's position
/// among all 2^N slots (zero-mass slots lead, so position = 2^N - m + u).
/// Among admissible children the one leaving the largest remaining |int b| is
/// taken, ties by coordinate order.  Throws NoValidChild when no admissible
/// child exists, which means `delta` overstates the accretivity of this cube.
std::vector<int> order_subcubes(const ResolvedSystem& rs, int level, int cell,
                                const AccretiveFn& b, double delta);

/// Piecewise-constant function adapted to b, stored dense over the atoms.
/// u >= 1: cancellative, supported on the tail union from the greedy order,
///   int b phi dmu = 0 and int b phi^2 dmu = 1.
/// u == 0: non-cancellative top function (int_Q b)^{-1/2} 1_Q.
struct HaarFunction {
  Cube cube;
  Box box; ///< realized extent of `cube`, kept here so geometry checks need no lattice
  int u = 0;
  bool cancellative = false;
  std::vector<cplx> values; ///< one value per atom of the measure
};

/// Builds phi_{Q,u} for the cell at (level, cell).  `order` must come from
/// order_subcubes on the same cell; u ranges over 1..order.size()-1 for
/// cancellative functions, 0 for the top function.  The square root uses the
/// principal branch; its sign is immaterial for every identity involving phi.
HaarFunction build_haar(const ResolvedSystem& rs, const AccretiveFn& b, int level,
                        int cell, int u, const std::vector<int>& order);
HaarFunction build_haar(const ResolvedSystem& rs, const AccretiveFn& b, int level,
                        int cell, int u);

struct HaarNormReport {
  cplx b_integral;          ///< int b phi dmu (0 for cancellative)
  cplx b_square;            ///< int b phi^2 dmu (1 for nonzero cancellative)
  double norm1 = 0, norm2 = 0, norm_inf = 0;
  double product_1_inf = 0; ///< ||phi||_1 ||phi||_inf, comparable to 1
  /// ||phi||_p / mu(Q_u)^{1/p - 1/2} for p = 1, 2, inf: the normalization
  /// comparison; constants depend only on the accretivity bound
  double ratio1 = 0, ratio2 = 0, ratio_inf = 0;
};

HaarNormReport verify_haar_norms(const ResolvedSystem& rs, const AccretiveFn& b,
                                 const HaarFunction& phi);

/// One pairing <phi_{Q,u}, f> = int phi f dmu per component of X.
struct HaarCoefficient {
  int level = 0;
  int cell = 0;
  int u = 0;
  std::vector<cplx> value; ///< m components
};

/// Expansion of f through the twisted martingale differences: cancellative
/// coefficients for every multi-child cell with level <= top_level, plus the
/// u = 0 coefficients of the top-level cells.  Coefficient count equals the
/// atom count (it is a change of basis on the resolved field).
struct Decomposition {
  int top_level = 0;
  SpaceSpec space;
  double p = 2.0;
  std::vector<HaarCoefficient> coeffs;
};

Decomposition decompose(const VectorField& f, const AccretiveFn& b,
                        const ResolvedSystem& rs, int top_level);

/// Sum of b phi <phi, f> over all stored coefficients; exact inverse of
/// decompose on resolved fields.
VectorField reconstruct(const Decomposition& dec, const AccretiveFn& b,
                        const ResolvedSystem& rs);

/// Max over sign trials of || sum_k eps_k D_k^b f ||_p / ||f||_p, with one
/// uniform sign per level.  An estimate of the unconditionality constant of
/// the twisted differences on L^p(mu; X).
double unconditionality_estimate(const VectorField& f, const AccretiveFn& b,
                                 const ResolvedSystem& rs, int top_level, double p,
                                 int trials, std::uint64_t seed);

} // namespace tblab

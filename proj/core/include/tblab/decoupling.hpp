#pragma once

#include <vector>

#include "tblab/dyadic.hpp"
#include "tblab/measure.hpp"
#include "tblab/rng.hpp"
#include "tblab/space.hpp"

namespace tblab {

/// One set of a partition: atom indices (ascending) plus cached mass.
struct PartitionSet {
  std::vector<int> atoms;
  double mass = 0;
};

struct PartitionLevel {
  std::vector<PartitionSet> sets;
};

/// A refining ladder of partitions of the atom set, finest first: each set at
/// level k+1 is a union of sets at level k.  Every set carries one attached
/// function, stored as a full-length field supported on the set.  From level 1
/// upward the attached function must be constant on the sets of the previous
/// (finer) level; level-0 functions are unconstrained, since the partition
/// into single atoms refines everything.
struct PartitionSystem {
  const AtomicMeasure* measure = nullptr;
  std::vector<PartitionLevel> levels;
  std::vector<std::vector<VectorField>> f; ///< [level][set]
};

/// Structural validation: every level partitions the atom set, nesting holds,
/// masses are positive and match the weights, functions are supported on
/// their sets and share one coefficient space.  Throws ConfigError.
void verify_partition_system(const PartitionSystem& sys);

/// Worst deviation of an attached function from constancy on the previous
/// level's sets, relative to the largest magnitude present in the system
/// (0 when the constraint holds; level 0 never contributes).
double measurability_defect(const PartitionSystem& sys);

/// Massive cells of the resolved window between two levels (inclusive,
/// finest first) as a partition ladder, with zero functions attached.
PartitionSystem partition_from_cells(const ResolvedSystem& rs, int k_lo, int k_hi);

/// Attaches random functions compatible with the constraint by construction:
/// independent per-atom values at level 0, per-fine-set constants above.
/// `constant_sets` instead makes every function constant on its own set.
void attach_random_functions(PartitionSystem& sys, SpaceSpec sp, Rng& rng,
                             bool constant_sets = false);

struct TangentReport {
  double lhs = 0;          ///< randomized-sum norm with the original arguments
  double rhs = 0;          ///< same with per-set resampled arguments
  double ratio = 0;        ///< lhs / rhs
  double std_error = 0;    ///< sampling scale of the ratio (0 when fully exact)
  bool exact_signs = false;
  bool exact_resample = false;
};

/// Compares the randomized sum sum_k eps_k sum_A f_A(x) with its decoupled
/// counterpart sum_k eps_k sum_A 1_A(x) f_A(y_A), where each y_A is drawn
/// from the normalized restriction of the measure to A.  trials <= 0 requests
/// exact evaluation: signs enumerated (needs <= 12 levels) and the resampling
/// integral expanded per atom over the chain of sets containing it (the
/// integrand at x depends on no other coordinates, so the product space never
/// materializes).  With trials > 0 the resampling is Monte Carlo, one draw
/// per set per trial; signs stay exact for <= 12 levels and are sampled
/// alongside otherwise.  Rejects systems violating the constancy constraint.
TangentReport tangent_equivalence(const PartitionSystem& sys, double p, int trials,
                                  Rng& rng);

/// Per-set averaging kernels: one dense |A| x |A| table per set (row = output
/// atom, column = input atom, both in set order), entries bounded by 1.
struct AveragingKernels {
  std::vector<std::vector<std::vector<cplx>>> tables; ///< [level][set][i*n+j]
};

AveragingKernels constant_kernels(const PartitionSystem& sys, cplx value);
/// Independent random +-1 entries.
AveragingKernels sign_kernels(const PartitionSystem& sys, Rng& rng);

/// Ratio of the averaged-kernel randomized sum to the plain one: the numerator
/// replaces each f_A by x -> 1_A(x) mass(A)^{-1} sum_{z in A} k_A(x,z) f_A(z) w_z.
/// Both sides are deterministic integrals in x; signs are enumerated for
/// <= 12 levels and sampled with `trials` patterns otherwise.  Rejects kernel
/// entries above 1 in magnitude and constraint-violating systems.
double averaged_kernel_bound(const PartitionSystem& sys, const AveragingKernels& ks,
                             double p, int trials, Rng& rng);

/// Dense linear map on the coefficient space of a SpaceSpec.
struct LinearMap {
  int m = 0;
  std::vector<cplx> a; ///< row-major m x m
};

LinearMap identity_map(int m);
LinearMap scalar_map(int m, cplx lambda);
LinearMap diagonal_map(const std::vector<cplx>& d);

/// Lower-bound estimate of the randomized-sum bound of a finite family: the
/// largest observed ratio || sum_k eps_k T_k xi_k ||_{L^2(signs; X)} over
/// || sum_k eps_k xi_k ||_{L^2(signs; X)}.  Candidates: every (map, basis
/// vector) singleton, and `trials` random tuples of n_vectors Gaussian
/// vectors, each evaluated under one random assignment plus every constant
/// assignment.  Signs are enumerated exactly for n_vectors <= 12 and sampled
/// otherwise.  Tuples with vanishing denominator are skipped.  A certified
/// lower bound only; no upper-bound search is attempted.
double rbound_estimate(const std::vector<LinearMap>& family, SpaceSpec sp,
                       int n_vectors, int trials, Rng& rng);

} // namespace tblab

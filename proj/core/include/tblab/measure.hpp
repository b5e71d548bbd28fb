#pragma once
#include <string>
#include <vector>
#include <optional>

#include <nlohmann/json.hpp>

#include "tblab/base.hpp"
#include "tblab/space.hpp"

namespace tblab {

/// Finite atomic measure mu = sum_i w_i delta_{x_i} on R^dim, carrying the
/// declared growth exponent d in (0, dim]: mu(B(x,r)) <= r^d, where B(x,r) is
/// the open ball of *diameter* r.  The diameter convention makes the uniform
/// grid at native resolution score ratio exactly 1 (a radius convention only
/// shifts the constant by 2^d, which integration absorbs).
struct AtomicMeasure {
  int dim = 1;
  double growth_d = 1.0;
  double r_min = 0.0;          ///< native scale below which growth is not probed
  std::string kind = "custom";
  std::vector<Vec> points;
  std::vector<double> weights;

  int atoms() const { return static_cast<int>(points.size()); }
  double total_mass() const;
  Box bounding_box() const;
  double diameter() const;
  double min_separation() const;
};

/// sum_i v_i w_i, optionally restricted to a half-open box.
cplx integrate_scalar(const AtomicMeasure& m, std::span<const cplx> values);
cplx integrate_scalar(const AtomicMeasure& m, std::span<const cplx> values, const Box& region);

/// Componentwise integral of an X-valued field (one value per component of X).
std::vector<cplx> integrate(const AtomicMeasure& m, const VectorField& f);
std::vector<cplx> integrate(const AtomicMeasure& m, const VectorField& f, const Box& region);

struct GrowthReport {
  double worst_ratio = 0.0;    ///< sup of mu(B(x,r)) / r^d over probed balls
  int worst_center = -1;
  double worst_radius = 0.0;
  bool exhaustive = false;
  int centers_checked = 0;
  bool pass(double tol) const { return worst_ratio <= 1.0 + tol; }
};

/// Scans balls centered at atoms with every mass-jump radius in [r_min, diam].
/// For each center the scan is exact: between consecutive pairwise distances
/// the ratio is maximized at the left endpoint, so only those radii are
/// evaluated.  max_centers < atoms() subsamples centers deterministically.
GrowthReport growth_check(const AtomicMeasure& m, double d, double r_min,
                          int max_centers = -1);

/// Test function b with |b| <= 1 after normalization and a declared lower
/// bound delta <= |avg_Q b| on cube averages.  The normalization factor that
/// was divided out is recorded so callers can undo it.
struct AccretiveFn {
  std::vector<cplx> values;
  double delta = 1.0;
  double normalization = 1.0;
};

struct AccretivityReport {
  double min_ratio = 0.0;      ///< empirical delta: min |int_Q b| / mu(Q)
  double sup_norm = 0.0;
  int worst_cube = -1;
  int cubes_checked = 0;
};

/// Checks |int_Q b dmu| / mu(Q) over the supplied cube family (cubes with
/// mu(Q) = 0 are skipped; they impose no constraint).
AccretivityReport accretivity_check(const AtomicMeasure& m, const AccretiveFn& b,
                                    const std::vector<Box>& cubes);

// ---- builders ----

/// (2^k)^dim midpoint grid on [0,1)^dim, each atom weight 2^(-k*dim), d = dim.
AtomicMeasure lebesgue_grid(int dim, int k);

/// Standard 1-D Cantor construction with contraction ratio in (0, 1/2]:
/// 2^depth atoms at piece midpoints, weight 2^(-depth), d = log 2 / log(1/ratio).
AtomicMeasure cantor_measure(double ratio, int depth);

/// Arclength measure on the graph of y = |x| over [-1,1] (2^k segments);
/// total mass 2*sqrt(2), d = 1, ambient dimension 2.
AtomicMeasure graph_arclength(int k);

AtomicMeasure custom_measure(std::vector<Vec> points, std::vector<double> weights,
                             int dim, double growth_d);

/// Dispatch on {"kind": "lebesgue_grid"|"cantor"|"graph_arclength"|"custom", ...}.
AtomicMeasure build_measure(const nlohmann::json& spec);

/// b builders: {"kind":"one"}, {"kind":"exp","omega":w,"axis":a},
/// {"kind":"perturbed","amp":a,"seed":s}.  All produce |b| <= 1 with a
/// computable accretivity lower bound, recorded in .delta.
AccretiveFn build_accretive(const nlohmann::json& spec, const AtomicMeasure& m);

std::string measure_to_csv(const AtomicMeasure& m);
AtomicMeasure measure_from_csv(const std::string& csv, double growth_d);

} // namespace tblab

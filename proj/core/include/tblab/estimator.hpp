#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tblab/base.hpp"
#include "tblab/carleson.hpp"
#include "tblab/dyadic.hpp"
#include "tblab/haar.hpp"
#include "tblab/kernel.hpp"
#include "tblab/measure.hpp"
#include "tblab/rng.hpp"
#include "tblab/space.hpp"

namespace tblab {

/// Relative position of a cube pair.  The first three tags cover pairs with
/// l(Q) <= l(R) (Q from the f-side lattice, R from the g-side); the
/// transposed tags mirror them for l(Q) > l(R); `close` is its own mirror.
/// `paraproduct_corrected` never comes out of the geometric classifier: the
/// accounting uses it for the coefficient parts extracted from deeply
/// contained pairs.
enum class PairTag {
  separated,
  contained,
  close,
  transposed_separated,
  transposed_contained,
  paraproduct_corrected,
};

const char* pair_tag_name(PairTag t);

struct PairClass {
  PairTag tag = PairTag::close;
  int n = 0; ///< level gap log2(l(big) / l(small))
  int j = 0; ///< distance dyad: (l(Q) + dist + l(R)) / l(big) in [2^j, 2^{j+1})
};

/// Classifies realized cubes by size and position; params.r sets the depth
/// beyond which containment counts as deep.  With l(Q) <= l(R): deep strict
/// box containment wins, then l(Q) <= dist(Q, R) makes the pair separated,
/// and everything remaining (touching, overlapping, or shallowly nested) is
/// close.  Larger Q classifies the swapped pair and transposes the tag.  The
/// three rules are exclusive and exhaustive, so the classification partitions
/// every pair.
PairClass classify_pair(const Box& q, const Box& r, const GoodnessParams& params);

/// One term of the expanded pairing <g, T f>: the f-side coefficient vector
/// contracted against the g-side one through the scalar matrix coefficient
///   M = <b2 psi_{R,v}, T(b1 phi_{Q,u})>   (bilinear, no conjugation).
struct PairTerm {
  int q_level = 0, q_cell = 0, u = 0; ///< f-side Haar index
  int r_level = 0, r_cell = 0, v = 0; ///< g-side Haar index
  PairClass cls;
  bool q_good = true, r_good = true;
  cplx coeff;       ///< M
  cplx corrected;   ///< M with the paraproduct part removed (== M when none)
  cplx correction;  ///< coeff - corrected
  cplx contraction; ///< sum_c d_{R,v,c} c_{Q,u,c}
  cplx term;        ///< coeff * contraction, the full contribution to <g, T f>
  double mag_norm = 0; ///< |corrected| 2^{k d} / (||psi||_1 ||phi||_1), k = bigger level
};

struct PairTable {
  cplx total_direct; ///< dual_pair(g, apply(t, f)), the one-pass oracle
  cplx total_table;  ///< sum of term over the table
  double rel_err = 0;
  double p = 2.0;
  SpaceSpec space;
  int top_level = 0;
  std::vector<PairTerm> terms;
};

/// Expands dual_pair(g, T f) over the twisted Haar systems of the two
/// lattices in `ctx` (f decomposed on q_rs with b1, g on r_rs with b2, both
/// up to `top_level`).  The expansion is an exact finite change of basis, so
/// total_table reproduces total_direct to rounding.  For every deeply
/// contained pair with both cubes good, the coefficient is split as
///   M = M~ + <global b2-pairing of T(b1 phi)> * <bigger Haar>_{smaller cube},
/// the extracted part being what the paraproduct resums; `corrected` records
/// M~ and `correction` the extracted part.  Throws ConfigError when the
/// lattices do not resolve the atoms or the windows disagree, and propagates
/// AccretivityViolation from the decompositions.
PairTable expand_pairing(const VectorField& g, const VectorField& f,
                         const DiscreteOperator& t, const TwoLatticeContext& ctx,
                         const AccretiveFn& b1, const AccretiveFn& b2, int top_level);

struct CellKey {
  PairTag tag = PairTag::close;
  int n = 0, j = 0;
  bool good = true; ///< both cubes good
  friend bool operator<(const CellKey& a, const CellKey& b) {
    if (a.tag != b.tag) return a.tag < b.tag;
    if (a.good != b.good) return a.good > b.good;
    if (a.n != b.n) return a.n < b.n;
    return a.j < b.j;
  }
};

struct CellStat {
  long long count = 0;
  cplx sum;            ///< sum of the (corrected) terms in the cell
  double abs_sum = 0;  ///< sum of |term|
  double max_abs = 0;  ///< max |M| over the cell (corrected M for contained)
  double max_norm = 0; ///< max |M| 2^{k d} / (||psi||_1 ||phi||_1), k = bigger level
  double rand_norm = 0; ///< sign-randomized size of the cell's term list
};

/// Per-class and per-(n, j) accounting of a pair table.
struct PartReport {
  cplx total;                   ///< oracle total carried over from the table
  cplx cells_total;             ///< sum over cells plus the extracted corrections
  double rel_err_expand = 0;    ///< table vs oracle
  double rel_err_cells = 0;     ///< cell accounting vs oracle
  cplx paraproduct_correction;  ///< sum of all extracted parts
  std::map<CellKey, CellStat> cells;
  std::map<std::string, double> class_abs; ///< per-tag |sum of terms|

  double bad_fraction_f = 0, bad_fraction_g = 0; ///< filled by the harness
  double op_norm = 0;                            ///< filled by the harness

  /// Least-squares slope of ln(max_norm) against n + j over good separated
  /// cells with n + j <= cap; NaN with fewer than two abscissae.
  double separated_slope(int cap = 8) const;
};

/// Aggregates a pair table into cells keyed by (tag, goodness, n, j).
/// Corrected coefficients are used for deeply contained good pairs and the
/// extracted parts are accumulated separately, so cells_total still
/// reconciles with the oracle exactly.  rand_norm is the L^2 sign average
/// sqrt(sum |term|^2) when p == 2 (closed form); other p sample `sign_trials`
/// independent sign patterns per cell.
PartReport regime_norms(const PairTable& table, double p, SpaceSpec space,
                        int sign_trials, std::uint64_t seed);

/// f split along the goodness of the cubes carrying its twisted expansion:
/// `good` collects b phi <phi, f> over good cubes (top-level averaging terms
/// included), `bad` the rest; good + bad rebuilds f to rounding.
struct GoodBadSplit {
  VectorField good, bad;
  double bad_fraction = 0; ///< ||bad||_p / ||f||_p
  int good_terms = 0, bad_terms = 0;
};

GoodBadSplit good_bad_split(const VectorField& f, const AccretiveFn& b,
                            const ResolvedSystem& rs, const GoodnessClassifier& cls,
                            int top_level);

/// Mean bad fraction over `draws` fresh opposing-shift draws, one entry per
/// r value.  The opposing shifts extend `excess` levels above the window so
/// the scanned coarse scales genuinely move, and the classifier cap matches.
struct BadFractionSweep {
  std::vector<int> r_values;
  std::vector<double> mean_fraction;
  std::vector<double> analytic_bound;
};

BadFractionSweep bad_fraction_sweep(const VectorField& f, const AccretiveFn& b,
                                    const ResolvedSystem& rs,
                                    const GoodnessParams& base,
                                    const std::vector<int>& r_values, int draws,
                                    std::uint64_t seed);

/// Certified lower estimate of ||T||_{L^p(mu;X) -> L^p(mu;X)}: the max ratio
/// over random probe fields, their b1-multiples, power-iteration refinements
/// of both (adjoint iterations sharpen the direction; ratios are always
/// measured in the requested norm), and the same probes pushed through the
/// transpose and measured in the dual norm (a valid lower bound by duality).
double operator_norm_estimate(const DiscreteOperator& t, const AccretiveFn& b1,
                              const AccretiveFn& b2, double p, SpaceSpec space,
                              int probes, Rng& rng);

/// Experiment harness configuration; `parse_experiment_config` validates and
/// reports offending fields by path.
struct ExperimentConfig {
  nlohmann::json measure;
  nlohmann::json kernel;
  nlohmann::json b1, b2;
  GoodnessParams goodness;
  int levels = 8;        ///< pairing window height above the resolved floor
  double p = 2.0;
  SpaceSpec space{2.0, 1};
  int sign_trials = 0;   ///< randomized cell norms (0 = closed form, p = 2 only)
  int probes = 12;       ///< operator-norm probe count
  int bad_draws = 0;     ///< bad-fraction sweep draws (0 skips the sweep)
  std::uint64_t seed = 1;
  std::string out_dir;   ///< empty keeps everything in memory
  bool svg = false;
};

ExperimentConfig parse_experiment_config(const nlohmann::json& j);

/// The bundled reference configuration (4096-atom Cantor measure, Cauchy
/// kernel, 12 levels).
nlohmann::json cantor_cauchy_preset();

struct ExperimentResult {
  PartReport report;
  nlohmann::json summary;
  std::string cells_csv;
  std::string decay_csv;
  bool pass = true; ///< all internal reconciliation checks within tolerance
};

/// Runs the full pipeline: build measure/kernel/b's, resolve two seeded
/// lattices, draw f and g, expand, aggregate, split good/bad, estimate the
/// operator norm, and assemble summary.json / cells.csv / decay.csv (written
/// under cfg.out_dir when set, with decay.svg when cfg.svg).  Identical
/// configurations produce byte-identical outputs; no clocks are consulted.
/// At the reference scale the pair stream is aggregated on the fly and the
/// term table is not materialized.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

} // namespace tblab

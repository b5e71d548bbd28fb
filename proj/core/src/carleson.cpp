#include "tblab/carleson.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>
#include <utility>

#include "tblab/errors.hpp"

namespace tblab {
namespace {

constexpr int kMaxExactLevels = 12;

std::span<const double> weights_of(const ResolvedSystem& rs) {
  return rs.measure().weights;
}

/// Levels that actually carry a nonzero value; map order keeps them sorted.
std::vector<int> active_levels(const CarlesonSequence& seq) {
  std::vector<int> out;
  for (const auto& [j, f] : seq.theta) {
    bool nz = false;
    for (const auto& v : f.data)
      if (v != cplx(0)) { nz = true; break; }
    if (nz) out.push_back(j);
  }
  return out;
}

void validate_sequence(const CarlesonSequence& seq, const ResolvedSystem& rs) {
  const int n = rs.measure().atoms();
  int m = -1;
  for (const auto& [j, f] : seq.theta) {
    if (f.atoms() != n)
      throw ConfigError("sequence level " + std::to_string(j) + " has " +
                        std::to_string(f.atoms()) + " atoms, measure has " +
                        std::to_string(n));
    if (m < 0) m = f.space.m;
    if (f.space.m != m)
      throw ConfigError("sequence levels disagree on the coefficient dimension");
    if (j < rs.k_lo() || j > rs.k_hi())
      throw ConfigError("sequence level " + std::to_string(j) +
                        " lies outside the resolved window [" +
                        std::to_string(rs.k_lo()) + ", " + std::to_string(rs.k_hi()) + "]");
  }
}

void require_finite_exponent(double p, const char* who) {
  if (!(p >= 1.0) || std::isinf(p))
    throw ConfigError(std::string(who) + " needs an exponent in [1, inf)");
}

void require_adapted(const CarlesonSequence& seq, const ResolvedSystem& rs,
                     const char* who) {
  if (!seq.adapted)
    throw ConfigError(std::string(who) + " needs an adapted sequence (flag not set)");
  if (adaptedness_defect(seq, rs) > 1e-8)
    throw ConfigError(std::string(who) +
                      ": sequence is declared adapted but deviates from its level averages");
}

/// Plain conditional expectation at one level: per-cell weighted averages.
VectorField level_average(const VectorField& f, int level, const ResolvedSystem& rs) {
  const auto w = weights_of(rs);
  const int m = f.space.m;
  VectorField out(f.atoms(), f.space, f.p);
  std::vector<cplx> mean(m);
  for (int c = 0; c < rs.cell_count(level); ++c) {
    const auto& cell = rs.cell(level, c);
    std::fill(mean.begin(), mean.end(), cplx(0));
    for (int ai : rs.atoms_of(level, cell)) {
      const cplx* fi = f.at(ai);
      for (int k = 0; k < m; ++k) mean[k] += w[ai] * fi[k];
    }
    for (int k = 0; k < m; ++k) mean[k] /= cell.mass;
    for (int ai : rs.atoms_of(level, cell)) {
      cplx* oi = out.at(ai);
      for (int k = 0; k < m; ++k) oi[k] = mean[k];
    }
  }
  return out;
}

std::vector<int> support_of(const HaarFunction& phi) {
  std::vector<int> s;
  for (int i = 0; i < (int)phi.values.size(); ++i)
    if (phi.values[i] != cplx(0)) s.push_back(i);
  return s;
}

double safe_ratio(double num, double den) {
  if (den > 0) return num / den;
  return num > 0 ? std::numeric_limits<double>::infinity() : 0.0;
}

} // namespace

double adaptedness_defect(const CarlesonSequence& seq, const ResolvedSystem& rs) {
  validate_sequence(seq, rs);
  const auto w = weights_of(rs);
  double scale = 0, worst = 0;
  for (const auto& [j, f] : seq.theta)
    for (const auto& v : f.data) scale = std::max(scale, std::abs(v));
  std::vector<cplx> mean;
  for (const auto& [j, f] : seq.theta) {
    const int m = f.space.m;
    mean.assign(m, cplx(0));
    for (int c = 0; c < rs.cell_count(j); ++c) {
      const auto& cell = rs.cell(j, c);
      std::fill(mean.begin(), mean.end(), cplx(0));
      for (int ai : rs.atoms_of(j, cell)) {
        const cplx* fi = f.at(ai);
        for (int k = 0; k < m; ++k) mean[k] += w[ai] * fi[k];
      }
      for (int k = 0; k < m; ++k) mean[k] /= cell.mass;
      for (int ai : rs.atoms_of(j, cell)) {
        const cplx* fi = f.at(ai);
        for (int k = 0; k < m; ++k) worst = std::max(worst, std::abs(fi[k] - mean[k]));
      }
    }
  }
  return scale > 0 ? worst / scale : 0.0;
}

CarlesonSequence adapt_sequence(const CarlesonSequence& seq, const ResolvedSystem& rs) {
  validate_sequence(seq, rs);
  CarlesonSequence out;
  out.adapted = true;
  for (const auto& [j, f] : seq.theta) out.theta.emplace(j, level_average(f, j, rs));
  return out;
}

CarlesonSequence random_adapted_sequence(const ResolvedSystem& rs, int lo, int hi,
                                         SpaceSpec sp, Rng& rng) {
  if (lo > hi || lo < rs.k_lo() || hi > rs.k_hi())
    throw ConfigError("requested levels lie outside the resolved window");
  CarlesonSequence out;
  out.adapted = true;
  for (int j = lo; j <= hi; ++j) {
    VectorField f = random_field(rs.measure().atoms(), sp, rng);
    out.theta.emplace(j, level_average(f, j, rs));
  }
  return out;
}

double bmo_norm(const VectorField& h, double p, double lambda,
                const std::vector<Box>& cubes, const AtomicMeasure& m) {
  require_finite_exponent(p, "the oscillation norm");
  if (!(lambda >= 1.0)) throw ConfigError("the oscillation dilation factor must be >= 1");
  if (h.atoms() != m.atoms())
    throw ConfigError("field and measure disagree on the atom count");
  const int xm = h.space.m;
  double best = 0;
  std::vector<cplx> mean(xm);
  std::vector<cplx> diff(xm);
  for (const Box& q : cubes) {
    const Box dil = q.dilate(lambda);
    double mass_dil = 0, mass_q = 0;
    std::fill(mean.begin(), mean.end(), cplx(0));
    for (int i = 0; i < m.atoms(); ++i) {
      if (!dil.contains(m.points[i])) continue;
      mass_dil += m.weights[i];
      if (!q.contains(m.points[i])) continue;
      mass_q += m.weights[i];
      const cplx* hi = h.at(i);
      for (int c = 0; c < xm; ++c) mean[c] += m.weights[i] * hi[c];
    }
    if (mass_dil <= 0) continue;
    double integ = 0;
    if (mass_q > 0) {
      for (int c = 0; c < xm; ++c) mean[c] /= mass_q;
      for (int i = 0; i < m.atoms(); ++i) {
        if (!q.contains(m.points[i])) continue;
        const cplx* hi = h.at(i);
        for (int c = 0; c < xm; ++c) diff[c] = hi[c] - mean[c];
        integ += m.weights[i] * std::pow(x_norm(h.space, diff.data()), p);
      }
    }
    best = std::max(best, std::pow(integ / mass_dil, 1.0 / p));
  }
  return best;
}

CarlesonReport carleson_norm_report(const CarlesonSequence& seq, double p,
                                    const ResolvedSystem& rs, int sign_trials,
                                    int union_samples, Rng& rng) {
  require_finite_exponent(p, "the Carleson norm");
  validate_sequence(seq, rs);
  CarlesonReport rep;
  const std::vector<int> act = active_levels(seq);
  if (act.empty()) { rep.exact_signs = true; return rep; }
  const int nlev = (int)act.size();
  rep.exact_signs = sign_trials <= 0;
  if (rep.exact_signs && nlev > kMaxExactLevels)
    throw ConfigError("exact sign enumeration is limited to 12 active levels; got " +
                      std::to_string(nlev));
  rep.levels = nlev;

  const auto w = weights_of(rs);
  const int natoms = rs.measure().atoms();
  const SpaceSpec sp = seq.theta.begin()->second.space;
  const int xm = sp.m;
  const std::uint64_t base = rng.next_u64();

  std::vector<cplx> s((size_t)natoms * xm);
  std::vector<double> atom_pow(natoms);
  for (int ki = 0; ki < nlev; ++ki) {
    const int k = act[ki];
    const int ncells = rs.cell_count(k);
    std::vector<double> acc(ncells, 0.0);
    const int npat = rep.exact_signs ? (1 << (ki + 1)) : sign_trials;
    for (int t = 0; t < npat; ++t) {
      std::fill(s.begin(), s.end(), cplx(0));
      Rng tr = Rng::substream(base, (std::uint64_t)t);
      for (int a = 0; a <= ki; ++a) {
        const double sg = rep.exact_signs ? (((t >> a) & 1) ? 1.0 : -1.0)
                                          : (double)tr.sign();
        const VectorField& th = seq.theta.at(act[a]);
        for (size_t i = 0; i < s.size(); ++i) s[i] += sg * th.data[i];
      }
      for (int i = 0; i < natoms; ++i)
        atom_pow[i] = w[i] * std::pow(x_norm(sp, s.data() + (size_t)i * xm), p);
      for (int c = 0; c < ncells; ++c) {
        double v = 0;
        for (int ai : rs.atoms_of(k, rs.cell(k, c))) v += atom_pow[ai];
        acc[c] += v;
      }
    }
    for (auto& a : acc) a /= npat;

    double level_best = 0;
    for (int c = 0; c < ncells; ++c) {
      const double mass = rs.cell(k, c).mass;
      if (mass <= 0) continue;
      level_best = std::max(level_best, std::pow(acc[c] / mass, 1.0 / p));
      ++rep.sets;
    }
    rep.norm = std::max(rep.norm, level_best);

    double union_best = level_best;
    if (union_samples > 0 && ncells >= 2) {
      Rng ur = Rng::substream(base ^ 0x75bcd15ULL, (std::uint64_t)(k - rs.k_lo()));
      for (int su = 0; su < union_samples; ++su) {
        const int cnt = (ncells >= 3 && ur.bernoulli(0.5)) ? 3 : 2;
        int idx[3] = {0, 0, 0};
        idx[0] = (int)ur.below(ncells);
        do { idx[1] = (int)ur.below(ncells); } while (idx[1] == idx[0]);
        if (cnt == 3)
          do { idx[2] = (int)ur.below(ncells); } while (idx[2] == idx[0] || idx[2] == idx[1]);
        double a = 0, mass = 0;
        for (int q = 0; q < cnt; ++q) {
          a += acc[idx[q]];
          mass += rs.cell(k, idx[q]).mass;
        }
        if (mass <= 0) continue;
        union_best = std::max(union_best, std::pow(a / mass, 1.0 / p));
        ++rep.unions;
      }
    }
    rep.norm_unions = std::max(rep.norm_unions, union_best);
  }
  rep.union_excess = rep.norm > 0 ? rep.norm_unions / rep.norm - 1.0 : 0.0;
  return rep;
}

double carleson_norm(const CarlesonSequence& seq, double p, const ResolvedSystem& rs,
                     int sign_trials, Rng& rng) {
  return carleson_norm_report(seq, p, rs, sign_trials, 0, rng).norm;
}

JnReport jn_equivalence_test(const std::vector<CarlesonSequence>& instances,
                             const std::vector<double>& p_list,
                             const ResolvedSystem& rs, int sign_trials, Rng& rng) {
  if (p_list.empty()) throw ConfigError("the exponent list must not be empty");
  JnReport rep;
  rep.p_list = p_list;
  const std::uint64_t base = rng.next_u64();
  int id = 0;
  for (const auto& seq : instances) {
    require_adapted(seq, rs, "the exponent-equivalence test");
    const int nlev = (int)active_levels(seq).size();
    const int trials = nlev <= kMaxExactLevels ? 0 : sign_trials;
    std::vector<double> norms;
    norms.reserve(p_list.size());
    for (size_t pi = 0; pi < p_list.size(); ++pi) {
      Rng sub = Rng::substream(base, (std::uint64_t)id * 131 + pi);
      norms.push_back(carleson_norm(seq, p_list[pi], rs, trials, sub));
    }
    double lo = std::numeric_limits<double>::infinity(), hi = 0;
    for (double v : norms) { lo = std::min(lo, v); hi = std::max(hi, v); }
    const double pair_ratio = hi == 0 ? 1.0 : safe_ratio(hi, lo);
    rep.max_ratio = std::max(rep.max_ratio, pair_ratio);
    for (size_t pi = 0; pi < p_list.size(); ++pi) {
      const double ratio = norms[0] == 0 ? (norms[pi] == 0 ? 1.0
                                                           : std::numeric_limits<double>::infinity())
                                         : norms[pi] / norms[0];
      rep.rows.push_back({id, p_list[pi], norms[pi], ratio});
    }
    ++id;
  }
  return rep;
}

std::string jn_report_csv(const JnReport& rep) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "instance,p,norm,ratio\n";
  for (const auto& r : rep.rows)
    os << r.instance << ',' << r.p << ',' << r.norm << ',' << r.ratio << '\n';
  return os.str();
}

ParaproductEstimate abstract_paraproduct(const CarlesonSequence& seq, const VectorField& f,
                                         double p, const ResolvedSystem& rs,
                                         int sign_trials, Rng& rng) {
  require_finite_exponent(p, "the paraproduct estimate");
  validate_sequence(seq, rs);
  require_adapted(seq, rs, "the paraproduct estimate");
  if (f.atoms() != rs.measure().atoms())
    throw ConfigError("field and measure disagree on the atom count");

  ParaproductEstimate est;
  const std::vector<int> act = active_levels(seq);
  const auto w = weights_of(rs);
  est.f_norm = lp_norm(f, w, p);
  if (act.empty()) return est;

  const int nlev = (int)act.size();
  const bool exact = sign_trials <= 0;
  if (exact && nlev > kMaxExactLevels)
    throw ConfigError("exact sign enumeration is limited to 12 active levels; got " +
                      std::to_string(nlev));

  const SpaceSpec sp_t = seq.theta.begin()->second.space;
  if (sp_t.m != 1 && f.space.m != 1)
    throw ConfigError("either the sequence or f must be scalar-valued");
  const SpaceSpec sp_out = sp_t.m >= f.space.m ? sp_t : f.space;
  const int xm = sp_out.m;
  const int natoms = rs.measure().atoms();

  // theta_j (.) E_j f per level, with the scalar side multiplying the other
  std::vector<std::vector<cplx>> terms(nlev, std::vector<cplx>((size_t)natoms * xm));
  for (int a = 0; a < nlev; ++a) {
    const VectorField ef = level_average(f, act[a], rs);
    const VectorField& th = seq.theta.at(act[a]);
    for (int i = 0; i < natoms; ++i) {
      const cplx* ti = th.at(i);
      const cplx* ei = ef.at(i);
      cplx* out = terms[a].data() + (size_t)i * xm;
      if (sp_t.m == 1)
        for (int c = 0; c < xm; ++c) out[c] = ti[0] * ei[c];
      else
        for (int c = 0; c < xm; ++c) out[c] = ti[c] * ei[0];
    }
  }

  const std::uint64_t base = rng.next_u64();
  const int npat = exact ? (1 << nlev) : sign_trials;
  std::vector<cplx> s((size_t)natoms * xm);
  double acc = 0;
  for (int t = 0; t < npat; ++t) {
    std::fill(s.begin(), s.end(), cplx(0));
    Rng tr = Rng::substream(base, (std::uint64_t)t);
    for (int a = 0; a < nlev; ++a) {
      const double sg = exact ? (((t >> a) & 1) ? 1.0 : -1.0) : (double)tr.sign();
      for (size_t i = 0; i < s.size(); ++i) s[i] += sg * terms[a][i];
    }
    double integ = 0;
    for (int i = 0; i < natoms; ++i)
      integ += w[i] * std::pow(x_norm(sp_out, s.data() + (size_t)i * xm), p);
    acc += integ;
  }
  est.norm = std::pow(acc / npat, 1.0 / p);

  Rng car_rng = Rng::substream(base, 0xCA71E50ULL);
  est.car1 = carleson_norm(seq, 1.0, rs, exact ? 0 : sign_trials, car_rng);
  est.ratio = safe_ratio(est.norm, est.car1 * est.f_norm);
  return est;
}

namespace {

void validate_context(const TwoLatticeContext& ctx) {
  if (!ctx.q_rs || !ctx.r_rs) throw ConfigError("both lattices must be supplied");
  if (&ctx.q_rs->measure() != &ctx.r_rs->measure())
    throw ConfigError("the two lattices must resolve the same measure");
  if (ctx.goodness_filter && (!ctx.q_good || !ctx.r_good))
    throw ConfigError("goodness filtering requested without classifiers");
  if (ctx.params.r < 1) throw ConfigError("the side-length gap must be at least 1");
}

} // namespace

VectorField paraproduct_pi2(const VectorField& g, const DiscreteOperator& t,
                            const AccretiveFn& b1, const AccretiveFn& b2,
                            const TwoLatticeContext& ctx, double delta_floor) {
  validate_context(ctx);
  const ResolvedSystem& qs = *ctx.q_rs;
  const ResolvedSystem& rrs = *ctx.r_rs;
  const AtomicMeasure& m = qs.measure();
  if (t.measure != &m) throw ConfigError("operator and lattices disagree on the measure");
  if (g.atoms() != m.atoms())
    throw ConfigError("field and measure disagree on the atom count");
  const double floor = delta_floor < 0 ? 1e-6 * b2.delta : delta_floor;
  const auto w = weights_of(qs);
  const int xm = g.space.m;
  const int gap = ctx.params.r;
  VectorField out(m.atoms(), g.space, g.p);
  std::vector<cplx> coef(xm);

  // cancellative functions exist for cells one level above the finest
  for (int kr = std::max(rrs.k_lo() + gap, qs.k_lo() + 1 + gap); kr <= rrs.k_hi(); ++kr) {
    const int kq = kr - gap;
    if (kq > qs.k_hi()) break;
    for (int ir = 0; ir < rrs.cell_count(kr); ++ir) {
      const auto& rc = rrs.cell(kr, ir);
      if (ctx.goodness_filter && !ctx.r_good->is_good(rc.cube)) continue;
      cplx b2avg = 0;
      std::vector<cplx> gavg(xm, cplx(0));
      for (int ai : rrs.atoms_of(kr, rc)) {
        b2avg += w[ai] * b2.values[ai];
        const cplx* gi = g.at(ai);
        for (int c = 0; c < xm; ++c) gavg[c] += w[ai] * gi[c];
      }
      b2avg /= rc.mass;
      if (std::abs(b2avg) < floor)
        throw AccretivityViolation("cube average of b2 at level " + std::to_string(kr) +
                                   " is " + std::to_string(std::abs(b2avg)) +
                                   ", below the floor " + std::to_string(floor));
      for (int c = 0; c < xm; ++c) coef[c] = gavg[c] / (rc.mass * b2avg);
      const Box rbox = rrs.realize(rc.cube);

      for (int iq = 0; iq < qs.cell_count(kq); ++iq) {
        const auto& qc = qs.cell(kq, iq);
        if (!box_subset(qs.realize(qc.cube), rbox)) continue;
        if (ctx.goodness_filter && !ctx.q_good->is_good(qc.cube)) continue;
        const std::vector<int> order = order_subcubes(qs, kq, iq, b1, b1.delta);
        for (int u = 1; u < (int)order.size(); ++u) {
          const HaarFunction phi = build_haar(qs, b1, kq, iq, u, order);
          const std::vector<int> sup = support_of(phi);
          if (sup.empty()) continue;
          // <b2, T(b1 phi)> as a bilinear double sum over atom pairs
          cplx c = 0;
          for (int i = 0; i < m.atoms(); ++i) {
            cplx ti = 0;
            for (int j : sup) {
              if (dist(m.points[i], m.points[j], m.dim) < t.truncation_eps) continue;
              ti += t.kernel.eval(m.points[i], m.points[j]) * b1.values[j] *
                    phi.values[j] * w[j];
            }
            c += w[i] * b2.values[i] * ti;
          }
          for (int j : sup) {
            cplx* oj = out.at(j);
            const cplx cf = c * phi.values[j];
            for (int cc = 0; cc < xm; ++cc) oj[cc] += coef[cc] * cf;
          }
        }
      }
    }
  }
  return out;
}

TelescopeReport pi2_telescoping_check(const VectorField& g, const AccretiveFn& b2,
                                      const TwoLatticeContext& ctx, double delta_floor) {
  validate_context(ctx);
  const ResolvedSystem& qs = *ctx.q_rs;
  const ResolvedSystem& rrs = *ctx.r_rs;
  const AtomicMeasure& m = qs.measure();
  if (g.atoms() != m.atoms())
    throw ConfigError("field and measure disagree on the atom count");
  const double floor = delta_floor < 0 ? 1e-6 * b2.delta : delta_floor;
  const auto w = weights_of(qs);
  const int xm = g.space.m;
  const int gap = ctx.params.r;

  const Decomposition dec = decompose(g, b2, rrs, rrs.k_hi());
  // coefficients grouped by (level, cell); u-index preserved per entry
  std::map<std::pair<int, int>, std::vector<const HaarCoefficient*>> coeffs;
  for (const auto& hc : dec.coeffs) coeffs[{hc.level, hc.cell}].push_back(&hc);
  std::map<std::pair<int, int>, std::vector<HaarFunction>> haar_memo;
  auto haars_of = [&](int level, int cell) -> const std::vector<HaarFunction>& {
    auto it = haar_memo.find({level, cell});
    if (it != haar_memo.end()) return it->second;
    const std::vector<int> order = order_subcubes(rrs, level, cell, b2, b2.delta);
    std::vector<HaarFunction> fs;
    const int nu = std::max<int>(1, (int)order.size());
    for (int u = 0; u < nu; ++u) fs.push_back(build_haar(rrs, b2, level, cell, u, order));
    return haar_memo.emplace(std::make_pair(level, cell), std::move(fs)).first->second;
  };

  TelescopeReport rep;
  std::vector<cplx> ladder(xm), collapsed(xm), diff(xm);
  for (int kq = qs.k_lo(); kq <= qs.k_hi() - gap; ++kq) {
    const int k0 = kq + gap;
    if (k0 > rrs.k_hi()) break;
    for (int iq = 0; iq < qs.cell_count(kq); ++iq) {
      const auto& qc = qs.cell(kq, iq);
      const auto atoms = qs.atoms_of(kq, qc);
      const int c0 = rrs.cell_of_atom(k0, atoms[0]);
      bool straddles = false;
      for (int ai : atoms)
        if (rrs.cell_of_atom(k0, ai) != c0) { straddles = true; break; }
      if (straddles) { ++rep.skipped; continue; }

      // collapsed side: plain averages over the gap-level outer cell
      const auto& r0 = rrs.cell(k0, c0);
      cplx b2avg = 0;
      std::fill(collapsed.begin(), collapsed.end(), cplx(0));
      for (int ai : rrs.atoms_of(k0, r0)) {
        b2avg += w[ai] * b2.values[ai];
        const cplx* gi = g.at(ai);
        for (int c = 0; c < xm; ++c) collapsed[c] += w[ai] * gi[c];
      }
      b2avg /= r0.mass;
      if (std::abs(b2avg) < floor)
        throw AccretivityViolation("cube average of b2 at level " + std::to_string(k0) +
                                   " falls below the floor");
      for (int c = 0; c < xm; ++c) collapsed[c] /= r0.mass * b2avg;

      // ladder side: Q-averages of the adapted expansion of g
      std::fill(ladder.begin(), ladder.end(), cplx(0));
      auto add_terms = [&](int level, int cell, bool top_only) {
        const auto it = coeffs.find({level, cell});
        if (it == coeffs.end()) return;
        const auto& fs = haars_of(level, cell);
        for (const HaarCoefficient* hc : it->second) {
          if (top_only != (hc->u == 0)) continue;
          const HaarFunction& psi = fs[hc->u];
          cplx avg = 0;
          for (int ai : atoms) avg += w[ai] * psi.values[ai];
          avg /= qc.mass;
          for (int c = 0; c < xm; ++c) ladder[c] += hc->value[c] * avg;
        }
      };
      int cell = c0;
      for (int k = k0; k < rrs.k_hi(); ++k) {
        const int parent = rrs.cell(k, cell).parent;
        add_terms(k + 1, parent, /*top_only=*/false);
        cell = parent;
      }
      add_terms(rrs.k_hi(), cell, /*top_only=*/true);

      double cn = x_norm(g.space, collapsed.data());
      for (int c = 0; c < xm; ++c) diff[c] = ladder[c] - collapsed[c];
      rep.max_abs_err = std::max(rep.max_abs_err, x_norm(g.space, diff.data()));
      rep.scale = std::max(rep.scale, cn);
      ++rep.checked;
    }
  }
  rep.max_rel_err = rep.scale > 0
                        ? rep.max_abs_err / rep.scale
                        : (rep.max_abs_err > 0 ? std::numeric_limits<double>::infinity() : 0.0);
  return rep;
}

BmoSumReport bmo_haar_sum_test(const VectorField& h, const AccretiveFn& b1,
                               const Cube& r_cube, double p,
                               const TwoLatticeContext& ctx, int sign_trials, Rng& rng) {
  validate_context(ctx);
  require_finite_exponent(p, "the randomized Haar sum");
  if (sign_trials <= 0)
    throw ConfigError("the sign space is indexed by cubes; a positive sample count is needed");
  const ResolvedSystem& qs = *ctx.q_rs;
  const AtomicMeasure& m = qs.measure();
  if (h.atoms() != m.atoms())
    throw ConfigError("field and measure disagree on the atom count");
  const auto w = weights_of(qs);
  const int xm = h.space.m;
  const Box rbox = ctx.r_rs->system().realize(r_cube);

  BmoSumReport rep;
  for (int i = 0; i < m.atoms(); ++i)
    if (rbox.contains(m.points[i])) rep.mu_r += m.weights[i];

  struct CubeTerm {
    std::vector<HaarFunction> phis;
    std::vector<std::vector<cplx>> coefs; // per phi, one value per component
  };
  std::vector<CubeTerm> terms;
  const int k_top = std::min(qs.k_hi(), r_cube.level - ctx.params.r);
  for (int kq = qs.k_lo() + 1; kq <= k_top; ++kq) {
    for (int iq = 0; iq < qs.cell_count(kq); ++iq) {
      const auto& qc = qs.cell(kq, iq);
      if (!box_subset(qs.realize(qc.cube), rbox)) continue;
      if (ctx.goodness_filter && !ctx.q_good->is_good(qc.cube)) continue;
      const std::vector<int> order = order_subcubes(qs, kq, iq, b1, b1.delta);
      if ((int)order.size() < 2) continue;
      CubeTerm term;
      for (int u = 1; u < (int)order.size(); ++u) {
        HaarFunction phi = build_haar(qs, b1, kq, iq, u, order);
        std::vector<cplx> coef(xm, cplx(0));
        for (int i : support_of(phi)) {
          const cplx* hi = h.at(i);
          const cplx bp = w[i] * b1.values[i] * phi.values[i];
          for (int c = 0; c < xm; ++c) coef[c] += hi[c] * bp;
        }
        term.coefs.push_back(std::move(coef));
        term.phis.push_back(std::move(phi));
      }
      terms.push_back(std::move(term));
    }
  }
  rep.terms = (int)terms.size();

  const std::uint64_t base = rng.next_u64();
  const int natoms = m.atoms();
  std::vector<cplx> s((size_t)natoms * xm);
  double acc = 0;
  for (int t = 0; t < sign_trials; ++t) {
    std::fill(s.begin(), s.end(), cplx(0));
    Rng tr = Rng::substream(base, (std::uint64_t)t);
    for (const auto& term : terms) {
      const double sg = (double)tr.sign();
      for (size_t ui = 0; ui < term.phis.size(); ++ui) {
        const HaarFunction& phi = term.phis[ui];
        const auto& coef = term.coefs[ui];
        for (int i = 0; i < natoms; ++i) {
          if (phi.values[i] == cplx(0)) continue;
          const cplx pv = sg * phi.values[i];
          cplx* si = s.data() + (size_t)i * xm;
          for (int c = 0; c < xm; ++c) si[c] += coef[c] * pv;
        }
      }
    }
    double integ = 0;
    for (int i = 0; i < natoms; ++i)
      integ += w[i] * std::pow(x_norm(h.space, s.data() + (size_t)i * xm), p);
    acc += integ;
  }
  rep.lhs = std::pow(acc / sign_trials, 1.0 / p);
  rep.bmo = bmo_norm(h, p, ctx.params.lambda, qs.all_cell_boxes(), m);
  rep.ratio = safe_ratio(rep.lhs, std::pow(rep.mu_r, 1.0 / p) * rep.bmo);
  return rep;
}

} // namespace tblab

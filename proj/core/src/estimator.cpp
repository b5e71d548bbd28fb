#include "tblab/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <utility>

#include "tblab/errors.hpp"

namespace tblab {
namespace {

using nlohmann::json;

/// Materialized tables are a desk-scale tool; past this the streaming
/// aggregation in run_experiment is the only sane representation.
constexpr long long kMaxTableTerms = 4'000'000;

/// Opposing shifts extend this many levels above the pairing window so the
/// goodness scan sees genuinely moving coarse-scale planes (a window-limited
/// shift freezes them and marks every cube bad).
constexpr int kShiftExcess = 30;

/// Levels of sub-window randomness for the fine tie-break shifts.
constexpr int kFineDepth = 8;

constexpr double kReconcileTol = 1e-8;

double dual_exponent(double p) {
  return p > 1.0 ? p / (p - 1.0) : std::numeric_limits<double>::infinity();
}

/// Relative error of `got` against `want`, measured against the larger of
/// |want| and the natural magnitude of the computation (so identities whose
/// exact value is 0 still report rounding-level errors, not 0/0 blowups).
double rel_to(cplx got, cplx want, double scale) {
  const double denom = std::max({std::abs(want), scale, 1e-300});
  return std::abs(got - want) / denom;
}

// ---------------------------------------------------------------------------
// support-compressed twisted Haar atlas

struct AtlasEntry {
  int level = 0, cell = 0, u = 0;
  Cube cube;
  Box box;
  bool good = true;
  double mass = 0;
  double norm1 = 0;          ///< ||phi||_{L^1(mu)}
  std::vector<int> atoms;    ///< support atoms, ascending
  std::vector<cplx> phi;     ///< phi on `atoms`
  std::vector<cplx> bw;      ///< phi * b * weight on `atoms`
  std::vector<cplx> coeff;   ///< the m pairing components <phi, f>
};

/// Decomposes a field and stores each twisted Haar function restricted to its
/// cell.  Dense per-atom storage would make the whole system quadratic in the
/// atom count; compressed, one level of entries costs one pass over the atoms.
std::vector<AtlasEntry> build_atlas(const VectorField& f, const AccretiveFn& b,
                                    const ResolvedSystem& rs, int top_level,
                                    const GoodnessClassifier* good) {
  Decomposition dec = decompose(f, b, rs, top_level);
  const auto& w = rs.measure().weights;
  std::vector<AtlasEntry> out;
  out.reserve(dec.coeffs.size());
  for (const auto& hc : dec.coeffs) {
    HaarFunction h = build_haar(rs, b, hc.level, hc.cell, hc.u);
    AtlasEntry e;
    e.level = hc.level;
    e.cell = hc.cell;
    e.u = hc.u;
    e.cube = h.cube;
    e.box = h.box;
    const ResolvedSystem::Cell& c = rs.cell(hc.level, hc.cell);
    e.mass = c.mass;
    if (good) e.good = good->is_good(h.cube);
    std::span<const int> sup = rs.atoms_of(hc.level, c);
    e.atoms.assign(sup.begin(), sup.end());
    std::sort(e.atoms.begin(), e.atoms.end());
    e.phi.reserve(e.atoms.size());
    e.bw.reserve(e.atoms.size());
    for (int a : e.atoms) {
      const cplx v = h.values[static_cast<size_t>(a)];
      e.phi.push_back(v);
      e.bw.push_back(v * b.values[static_cast<size_t>(a)] * w[static_cast<size_t>(a)]);
      e.norm1 += std::abs(v) * w[static_cast<size_t>(a)];
    }
    e.coeff = hc.value;
    out.push_back(std::move(e));
  }
  return out;
}

cplx value_at(const AtlasEntry& e, int atom) {
  auto it = std::lower_bound(e.atoms.begin(), e.atoms.end(), atom);
  if (it == e.atoms.end() || *it != atom) return cplx(0);
  return e.phi[static_cast<size_t>(it - e.atoms.begin())];
}

/// mu-average of the bigger cube's function over the smaller cube.
cplx average_over(const AtlasEntry& big, const AtlasEntry& small,
                  std::span<const double> w) {
  cplx s(0);
  for (size_t k = 0; k < small.atoms.size(); ++k)
    s += w[static_cast<size_t>(small.atoms[k])] * value_at(big, small.atoms[k]);
  return small.mass > 0 ? s / small.mass : cplx(0);
}

/// K(x_i, x_j) with the same truncation predicate the operator application
/// uses, so table totals and the direct pairing agree to rounding.
std::vector<cplx> dense_kernel(const DiscreteOperator& t) {
  const AtomicMeasure& m = *t.measure;
  const int n = m.atoms();
  std::vector<cplx> k(static_cast<size_t>(n) * static_cast<size_t>(n), cplx(0));
  for (int i = 0; i < n; ++i) {
    cplx* row = k.data() + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      if (dist(m.points[i], m.points[j], m.dim) < t.truncation_eps) continue;
      row[j] = t.kernel.eval(m.points[i], m.points[j]);
    }
  }
  return k;
}

// ---------------------------------------------------------------------------
// pair stream

struct StreamInput {
  const std::vector<AtlasEntry>* fx = nullptr; ///< f side (Q, built with b1)
  const std::vector<AtlasEntry>* gx = nullptr; ///< g side (R, built with b2)
  const std::vector<cplx>* kmat = nullptr;
  const AtomicMeasure* m = nullptr;
  const AccretiveFn* b1 = nullptr;
  const AccretiveFn* b2 = nullptr;
  GoodnessParams params;
  double kernel_d = 1.0;
};

/// Walks every (Q, R) pair once.  Per Q the matrix column block is contracted
/// into v = T(b1 phi_Q) on all atoms; every R then needs only its own support.
/// Deeply contained pairs with both cubes good get the averaging part peeled
/// off: the remainder is the coefficient the decay estimates actually control,
/// and the peeled parts are what a paraproduct resums.
template <class Sink>
void stream_pairs(const StreamInput& in, Sink&& sink) {
  const AtomicMeasure& m = *in.m;
  const int n = m.atoms();
  std::span<const double> w(m.weights);
  const auto& fx = *in.fx;
  const auto& gx = *in.gx;
  const cplx* K = in.kmat->data();

  // T(b1 * 1): the transposed-containment corrections all pair against it.
  std::vector<cplx> tb1(static_cast<size_t>(n), cplx(0));
  for (int i = 0; i < n; ++i) {
    const cplx* row = K + static_cast<size_t>(i) * n;
    cplx s(0);
    for (int j = 0; j < n; ++j) s += row[j] * in.b1->values[static_cast<size_t>(j)] * w[static_cast<size_t>(j)];
    tb1[static_cast<size_t>(i)] = s;
  }
  // <b2 psi_R, T(b1 * 1)> per g-side entry (bw already carries b2 * weight).
  std::vector<cplx> r_global(gx.size(), cplx(0));
  for (size_t ri = 0; ri < gx.size(); ++ri) {
    const AtlasEntry& r = gx[ri];
    cplx s(0);
    for (size_t k = 0; k < r.atoms.size(); ++k)
      s += r.bw[k] * tb1[static_cast<size_t>(r.atoms[k])];
    r_global[ri] = s;
  }

  std::vector<cplx> v(static_cast<size_t>(n));
  for (size_t qi = 0; qi < fx.size(); ++qi) {
    const AtlasEntry& q = fx[qi];
    for (int i = 0; i < n; ++i) {
      const cplx* row = K + static_cast<size_t>(i) * n;
      cplx s(0);
      for (size_t k = 0; k < q.atoms.size(); ++k)
        s += row[q.atoms[k]] * q.bw[k];
      v[static_cast<size_t>(i)] = s;
    }
    // <b2, T(b1 phi_Q)>: the contained-pair correction functional.
    cplx q_global(0);
    for (int i = 0; i < n; ++i)
      q_global += in.b2->values[static_cast<size_t>(i)] * w[static_cast<size_t>(i)] * v[static_cast<size_t>(i)];

    for (size_t ri = 0; ri < gx.size(); ++ri) {
      const AtlasEntry& r = gx[ri];
      cplx mcoef(0);
      for (size_t k = 0; k < r.atoms.size(); ++k)
        mcoef += r.bw[k] * v[static_cast<size_t>(r.atoms[k])];

      PairTerm t;
      t.q_level = q.level;
      t.q_cell = q.cell;
      t.u = q.u;
      t.r_level = r.level;
      t.r_cell = r.cell;
      t.v = r.u;
      t.cls = classify_pair(q.box, r.box, in.params);
      t.q_good = q.good;
      t.r_good = r.good;
      t.coeff = mcoef;
      t.corrected = mcoef;
      t.correction = cplx(0);
      if (t.q_good && t.r_good) {
        if (t.cls.tag == PairTag::contained) {
          t.correction = q_global * average_over(r, q, w);
          t.corrected = mcoef - t.correction;
        } else if (t.cls.tag == PairTag::transposed_contained) {
          t.correction = r_global[ri] * average_over(q, r, w);
          t.corrected = mcoef - t.correction;
        }
      }
      cplx dc(0);
      const size_t mc = std::min(q.coeff.size(), r.coeff.size());
      for (size_t c = 0; c < mc; ++c) dc += r.coeff[c] * q.coeff[c];
      t.contraction = dc;
      t.term = mcoef * dc;
      const double denom = r.norm1 * q.norm1;
      const int big = std::max(q.level, r.level);
      t.mag_norm = denom > 0
                       ? std::abs(t.corrected) * std::pow(2.0, big * in.kernel_d) / denom
                       : 0.0;
      sink(t);
    }
  }
}

void check_context(const TwoLatticeContext& ctx, int top_level) {
  if (!ctx.q_rs || !ctx.r_rs)
    throw ConfigError("pair expansion: both resolved systems are required");
  if (&ctx.q_rs->measure() != &ctx.r_rs->measure())
    throw ConfigError("pair expansion: the two lattices must resolve the same measure");
  for (const ResolvedSystem* rs : {ctx.q_rs, ctx.r_rs}) {
    if (!rs->resolves_atoms())
      throw ConfigError("pair expansion: the finest lattice level does not separate the atoms");
    if (top_level < rs->k_lo() || top_level > rs->k_hi())
      throw ConfigError("pair expansion: top_level outside the resolved window");
  }
}

// ---------------------------------------------------------------------------
// cell accounting

struct CellAccum {
  double p = 2.0;
  bool keep_lists = false;
  std::map<CellKey, CellStat> cells;
  std::map<CellKey, double> sumsq;
  std::map<CellKey, std::vector<cplx>> lists;
  cplx table_total, cells_total, corr_total;
  double abs_scale = 0;

  void add(const PairTerm& t) {
    table_total += t.term;
    const bool good = t.q_good && t.r_good;
    const cplx eff = t.corrected * t.contraction;
    bump({t.cls.tag, t.cls.n, t.cls.j, good}, eff, std::abs(t.corrected), t.mag_norm);
    if (t.correction != cplx(0)) {
      const cplx extra = t.correction * t.contraction;
      bump({PairTag::paraproduct_corrected, t.cls.n, t.cls.j, good}, extra,
           std::abs(t.correction), 0.0);
      corr_total += extra;
    }
  }

private:
  void bump(CellKey key, cplx val, double coeff_abs, double mag) {
    CellStat& cs = cells[key];
    cs.count += 1;
    cs.sum += val;
    cs.abs_sum += std::abs(val);
    cs.max_abs = std::max(cs.max_abs, coeff_abs);
    cs.max_norm = std::max(cs.max_norm, mag);
    sumsq[key] += std::norm(val);
    if (keep_lists) lists[key].push_back(val);
    cells_total += val;
    abs_scale += std::abs(val);
  }
};

double sampled_sign_norm(const std::vector<cplx>& zs, double p, int trials, Rng& rng) {
  if (zs.empty() || trials <= 0) return 0.0;
  double acc = 0;
  for (int t = 0; t < trials; ++t) {
    cplx s(0);
    for (cplx z : zs) s += static_cast<double>(rng.sign()) * z;
    acc += std::pow(std::abs(s), p);
  }
  return std::pow(acc / trials, 1.0 / p);
}

PartReport assemble(CellAccum& acc, cplx oracle, int sign_trials, std::uint64_t seed) {
  PartReport rep;
  rep.total = oracle;
  rep.cells_total = acc.cells_total;
  rep.paraproduct_correction = acc.corr_total;
  rep.rel_err_expand = rel_to(acc.table_total, oracle, acc.abs_scale);
  rep.rel_err_cells = rel_to(acc.cells_total, oracle, acc.abs_scale);
  std::uint64_t cell_idx = 0;
  for (auto& [key, cs] : acc.cells) {
    if (acc.p == 2.0) {
      // E_eps |sum eps_k z_k|^2 = sum |z_k|^2 exactly
      cs.rand_norm = std::sqrt(acc.sumsq[key]);
    } else if (sign_trials > 0 && acc.keep_lists) {
      Rng rng = Rng::substream(seed, cell_idx);
      cs.rand_norm = sampled_sign_norm(acc.lists[key], acc.p, sign_trials, rng);
    }
    ++cell_idx;
  }
  std::map<std::string, cplx> per_tag;
  for (const auto& [key, cs] : acc.cells) per_tag[pair_tag_name(key.tag)] += cs.sum;
  for (const auto& [name, z] : per_tag) rep.class_abs[name] = std::abs(z);
  rep.cells = std::move(acc.cells);
  return rep;
}

// ---------------------------------------------------------------------------
// report rendering

std::string render_cells_csv(const PartReport& rep) {
  std::string out = "tag,good,n,j,count,sum_re,sum_im,abs_sum,max_abs,max_norm,rand_norm\n";
  char buf[320];
  for (const auto& [k, c] : rep.cells) {
    std::snprintf(buf, sizeof buf, "%s,%d,%d,%d,%lld,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g\n",
                  pair_tag_name(k.tag), k.good ? 1 : 0, k.n, k.j, c.count,
                  c.sum.real(), c.sum.imag(), c.abs_sum, c.max_abs, c.max_norm,
                  c.rand_norm);
    out += buf;
  }
  return out;
}

bool decay_cell(const CellKey& k, const CellStat& c) {
  return (k.tag == PairTag::separated || k.tag == PairTag::transposed_separated) &&
         k.good && c.count > 0 && c.max_norm > 0;
}

std::string render_decay_csv(const PartReport& rep) {
  std::string out = "tag,n,j,npj,count,max_abs,max_norm,ln_max_norm\n";
  char buf[256];
  for (const auto& [k, c] : rep.cells) {
    if (!decay_cell(k, c)) continue;
    std::snprintf(buf, sizeof buf, "%s,%d,%d,%d,%lld,%.12g,%.12g,%.12g\n",
                  pair_tag_name(k.tag), k.n, k.j, k.n + k.j, c.count, c.max_abs,
                  c.max_norm, std::log(c.max_norm));
    out += buf;
  }
  return out;
}

std::string render_decay_svg(const PartReport& rep) {
  std::vector<std::pair<double, double>> pts;
  for (const auto& [k, c] : rep.cells)
    if (decay_cell(k, c)) pts.push_back({double(k.n + k.j), std::log(c.max_norm)});
  const int W = 640, H = 420, ML = 60, MR = 20, MT = 20, MB = 40;
  std::string out;
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%d\" height=\"%d\" "
                "viewBox=\"0 0 %d %d\">\n<rect width=\"%d\" height=\"%d\" fill=\"white\"/>\n",
                W, H, W, H, W, H);
  out += buf;
  if (pts.empty()) {
    out += "<text x=\"320\" y=\"210\" text-anchor=\"middle\" font-family=\"monospace\" "
           "font-size=\"14\">no separated cells</text>\n</svg>\n";
    return out;
  }
  double xmin = pts[0].first, xmax = xmin, ymin = pts[0].second, ymax = ymin;
  for (auto& [x, y] : pts) {
    xmin = std::min(xmin, x);
    xmax = std::max(xmax, x);
    ymin = std::min(ymin, y);
    ymax = std::max(ymax, y);
  }
  if (xmax - xmin < 1) xmax = xmin + 1;
  if (ymax - ymin < 1) ymax = ymin + 1;
  auto px = [&](double x) { return ML + (x - xmin) / (xmax - xmin) * (W - ML - MR); };
  auto py = [&](double y) { return H - MB - (y - ymin) / (ymax - ymin) * (H - MT - MB); };
  std::snprintf(buf, sizeof buf,
                "<line x1=\"%d\" y1=\"%d\" x2=\"%d\" y2=\"%d\" stroke=\"black\"/>\n"
                "<line x1=\"%d\" y1=\"%d\" x2=\"%d\" y2=\"%d\" stroke=\"black\"/>\n",
                ML, H - MB, W - MR, H - MB, ML, MT, ML, H - MB);
  out += buf;
  for (auto& [x, y] : pts) {
    std::snprintf(buf, sizeof buf, "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"3\" fill=\"#1f77b4\"/>\n",
                  px(x), py(y));
    out += buf;
  }
  const double slope = rep.separated_slope(8);
  if (std::isfinite(slope)) {
    // anchor the fitted line at the mean point of the cells it used
    double sx = 0, sy = 0;
    int cnt = 0;
    for (auto& [x, y] : pts)
      if (x <= 8) { sx += x; sy += y; ++cnt; }
    if (cnt > 0) {
      const double mx = sx / cnt, my = sy / cnt;
      const double y0 = my + slope * (xmin - mx), y1 = my + slope * (xmax - mx);
      std::snprintf(buf, sizeof buf,
                    "<line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\" "
                    "stroke=\"#d62728\" stroke-dasharray=\"4 3\"/>\n",
                    px(xmin), py(y0), px(xmax), py(y1));
      out += buf;
      std::snprintf(buf, sizeof buf,
                    "<text x=\"%d\" y=\"%d\" font-family=\"monospace\" font-size=\"13\">"
                    "slope %.4f</text>\n",
                    ML + 10, MT + 16, slope);
      out += buf;
    }
  }
  std::snprintf(buf, sizeof buf,
                "<text x=\"%d\" y=\"%d\" text-anchor=\"middle\" font-family=\"monospace\" "
                "font-size=\"13\">n + j</text>\n"
                "<text x=\"18\" y=\"%d\" font-family=\"monospace\" font-size=\"13\" "
                "transform=\"rotate(-90 18 %d)\">ln max_norm</text>\n</svg>\n",
                (ML + W - MR) / 2, H - 10, (MT + H - MB) / 2, (MT + H - MB) / 2);
  out += buf;
  return out;
}

json complex_json(cplx z) { return json::array({z.real(), z.imag()}); }

} // namespace

// ---------------------------------------------------------------------------

const char* pair_tag_name(PairTag t) {
  switch (t) {
    case PairTag::separated: return "separated";
    case PairTag::contained: return "contained";
    case PairTag::close: return "close";
    case PairTag::transposed_separated: return "transposed_separated";
    case PairTag::transposed_contained: return "transposed_contained";
    case PairTag::paraproduct_corrected: return "paraproduct_corrected";
  }
  return "unknown";
}

PairClass classify_pair(const Box& q, const Box& r, const GoodnessParams& params) {
  const double lq = q.side(0), lr = r.side(0);
  if (!(lq > 0) || !(lr > 0)) throw ConfigError("classify_pair: degenerate box");
  if (lq > lr) {
    PairClass c = classify_pair(r, q, params);
    if (c.tag == PairTag::separated) c.tag = PairTag::transposed_separated;
    else if (c.tag == PairTag::contained) c.tag = PairTag::transposed_contained;
    return c;
  }
  PairClass c;
  c.n = static_cast<int>(std::lround(std::log2(lr / lq)));
  const double gap = box_dist(q, r);
  const double jr = std::log2(long_distance(q, r) / lr);
  c.j = jr > 0 ? static_cast<int>(std::floor(jr)) : 0;
  bool inside = true;
  for (int a = 0; a < q.dim; ++a)
    if (!(r.lo[a] <= q.lo[a] && q.hi[a] <= r.hi[a])) { inside = false; break; }
  if (inside && c.n > params.r) c.tag = PairTag::contained;
  else if (lq <= gap) c.tag = PairTag::separated;
  else c.tag = PairTag::close;
  return c;
}

PairTable expand_pairing(const VectorField& g, const VectorField& f,
                         const DiscreteOperator& t, const TwoLatticeContext& ctx,
                         const AccretiveFn& b1, const AccretiveFn& b2, int top_level) {
  check_context(ctx, top_level);
  const AtomicMeasure& m = ctx.q_rs->measure();
  if (!t.measure || t.measure != &m)
    throw ConfigError("pair expansion: operator and lattices disagree on the measure");
  if (f.atoms() != m.atoms() || g.atoms() != m.atoms())
    throw ConfigError("pair expansion: field size does not match the atom count");
  if (f.space.m != g.space.m)
    throw ConfigError("pair expansion: f and g need the same component count");

  const GoodnessClassifier* qg = ctx.goodness_filter ? ctx.q_good : nullptr;
  const GoodnessClassifier* rg = ctx.goodness_filter ? ctx.r_good : nullptr;
  std::vector<AtlasEntry> fx = build_atlas(f, b1, *ctx.q_rs, top_level, qg);
  std::vector<AtlasEntry> gx = build_atlas(g, b2, *ctx.r_rs, top_level, rg);
  const long long nterms = static_cast<long long>(fx.size()) * static_cast<long long>(gx.size());
  if (nterms > kMaxTableTerms)
    throw ConfigError("pair expansion: " + std::to_string(nterms) +
                      " terms will not fit a materialized table; use the streaming harness");

  std::vector<cplx> kmat = dense_kernel(t);
  PairTable table;
  table.p = f.p;
  table.space = f.space;
  table.top_level = top_level;
  table.terms.reserve(static_cast<size_t>(nterms));
  cplx total(0);
  double scale = 0;
  StreamInput in{&fx, &gx, &kmat, &m, &b1, &b2, ctx.params, t.kernel.d};
  stream_pairs(in, [&](const PairTerm& pt) {
    total += pt.term;
    scale += std::abs(pt.term);
    table.terms.push_back(pt);
  });
  table.total_table = total;
  table.total_direct = dual_pair(g, apply(t, f), std::span<const double>(m.weights));
  table.rel_err = rel_to(total, table.total_direct, scale);
  return table;
}

double PartReport::separated_slope(int cap) const {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int cnt = 0, first_x = 0;
  bool vary = false;
  for (const auto& [k, c] : cells) {
    if (!decay_cell(k, c)) continue;
    const int x = k.n + k.j;
    if (x > cap) continue;
    const double y = std::log(c.max_norm);
    if (cnt == 0) first_x = x;
    else if (x != first_x) vary = true;
    sx += x;
    sy += y;
    sxx += static_cast<double>(x) * x;
    sxy += static_cast<double>(x) * y;
    ++cnt;
  }
  if (cnt < 2 || !vary) return std::numeric_limits<double>::quiet_NaN();
  return (cnt * sxy - sx * sy) / (cnt * sxx - sx * sx);
}

PartReport regime_norms(const PairTable& table, double p, SpaceSpec space,
                        int sign_trials, std::uint64_t seed) {
  if (!(p >= 1.0) || std::isinf(p))
    throw ConfigError("regime norms: exponent in [1, inf) required");
  if (space.m < 1) throw ConfigError("regime norms: at least one component required");
  if (sign_trials < 0) throw ConfigError("regime norms: sign_trials must be nonnegative");
  CellAccum acc;
  acc.p = p;
  acc.keep_lists = (p != 2.0 && sign_trials > 0);
  for (const PairTerm& t : table.terms) acc.add(t);
  return assemble(acc, table.total_direct, sign_trials, seed);
}

GoodBadSplit good_bad_split(const VectorField& f, const AccretiveFn& b,
                            const ResolvedSystem& rs, const GoodnessClassifier& cls,
                            int top_level) {
  Decomposition dec = decompose(f, b, rs, top_level);
  Decomposition dg{dec.top_level, dec.space, dec.p, {}};
  Decomposition db{dec.top_level, dec.space, dec.p, {}};
  for (const auto& hc : dec.coeffs) {
    const Cube& qc = rs.cell(hc.level, hc.cell).cube;
    (cls.is_good(qc) ? dg : db).coeffs.push_back(hc);
  }
  GoodBadSplit out;
  out.good_terms = static_cast<int>(dg.coeffs.size());
  out.bad_terms = static_cast<int>(db.coeffs.size());
  out.good = reconstruct(dg, b, rs);
  out.bad = reconstruct(db, b, rs);
  std::span<const double> w(rs.measure().weights);
  const double fn = lp_norm(f, w, f.p);
  out.bad_fraction = fn > 0 ? lp_norm(out.bad, w, f.p) / fn : 0.0;
  return out;
}

BadFractionSweep bad_fraction_sweep(const VectorField& f, const AccretiveFn& b,
                                    const ResolvedSystem& rs,
                                    const GoodnessParams& base,
                                    const std::vector<int>& r_values, int draws,
                                    std::uint64_t seed) {
  if (r_values.empty()) throw ConfigError("bad fraction sweep: no r values");
  if (draws < 1) throw ConfigError("bad fraction sweep: draws must be positive");
  const AtomicMeasure& m = rs.measure();
  std::span<const double> w(m.weights);
  Decomposition dec = decompose(f, b, rs, rs.k_hi());
  const double fn = lp_norm(f, w, f.p);
  BadFractionSweep out;
  out.r_values = r_values;
  for (size_t ri = 0; ri < r_values.size(); ++ri) {
    GoodnessParams pr = base;
    pr.r = r_values[ri];
    pr.validate();
    const int cap = std::max(pr.r, kShiftExcess);
    double acc = 0;
    for (int d = 0; d < draws; ++d) {
      Rng rng = Rng::substream(seed, (static_cast<std::uint64_t>(ri) << 32) | static_cast<std::uint64_t>(d));
      ShiftSequence opp = ShiftSequence::random(m.dim, rs.k_lo(), rs.k_hi() + cap, rng);
      ShiftSequence fine = ShiftSequence::random(m.dim, rs.k_lo() - kFineDepth, rs.k_lo(), rng);
      GoodnessClassifier cls(&rs.system(), opp, fine, pr, cap);
      Decomposition bad{dec.top_level, dec.space, dec.p, {}};
      for (const auto& hc : dec.coeffs)
        if (!cls.is_good(rs.cell(hc.level, hc.cell).cube)) bad.coeffs.push_back(hc);
      double frac = 0;
      if (!bad.coeffs.empty() && fn > 0)
        frac = lp_norm(reconstruct(bad, b, rs), w, f.p) / fn;
      acc += frac;
    }
    out.mean_fraction.push_back(acc / draws);
    out.analytic_bound.push_back(analytic_bad_probability_bound(m.dim, pr));
  }
  return out;
}

double operator_norm_estimate(const DiscreteOperator& t, const AccretiveFn& b1,
                              const AccretiveFn& b2, double p, SpaceSpec space,
                              int probes, Rng& rng) {
  if (!t.measure) throw ConfigError("operator norm: operator has no measure");
  if (probes < 1) throw ConfigError("operator norm: probes must be positive");
  if (!(p >= 1.0) || std::isinf(p))
    throw ConfigError("operator norm: exponent in [1, inf) required");
  const AtomicMeasure& m = *t.measure;
  const int n = m.atoms();
  std::span<const double> w(m.weights);
  const double pd = dual_exponent(p);
  const SpaceSpec dual_sp = space.dual();
  double best = 0;

  auto forward = [&](const VectorField& h) {
    const double hn = lp_norm(h, w, p);
    if (!(hn > 0) || !std::isfinite(hn)) return;
    best = std::max(best, lp_norm(apply(t, h), w, p) / hn);
  };
  // ||T^t||_{p', X*} = ||T||_{p, X}, so transpose ratios are lower bounds too.
  auto backward = [&](const VectorField& h) {
    const double hn = lp_norm(h, w, pd);
    if (!(hn > 0) || !std::isfinite(hn)) return;
    best = std::max(best, lp_norm(apply_transpose(t, h), w, pd) / hn);
  };
  auto one_multiplied = [](const VectorField& h, const AccretiveFn& b) {
    VectorField hb = h;
    for (int i = 0; i < hb.atoms(); ++i) {
      cplx* x = hb.at(i);
      for (int c = 0; c < hb.space.m; ++c) x[c] *= b.values[static_cast<size_t>(i)];
    }
    return hb;
  };

  for (int pr = 0; pr < probes; ++pr) {
    VectorField h = random_field(n, space, rng, p);
    forward(h);
    forward(one_multiplied(h, b1));
    // adjoint power iterations steer the probe toward the top singular
    // direction; each iterate is still just a probe, so every ratio taken
    // along the way stays a certified lower bound
    VectorField y = h;
    for (int it = 0; it < 8; ++it) {
      y = apply_adjoint(t, apply(t, y));
      const double yn = lp_norm(y, w, 2.0);
      if (!(yn > 0) || !std::isfinite(yn)) break;
      y *= cplx(1.0 / yn);
      forward(y);
    }
    VectorField g = random_field(n, dual_sp, rng, pd);
    backward(g);
    backward(one_multiplied(g, b2));
  }
  return best;
}

ExperimentConfig parse_experiment_config(const json& j) {
  if (!j.is_object()) throw ConfigError("cfg: object expected");
  ExperimentConfig c;
  auto take_obj = [&](const char* key, json& dst, bool required) {
    if (!j.contains(key)) {
      if (required) throw ConfigError(std::string("cfg.") + key + ": required");
      return;
    }
    if (!j.at(key).is_object())
      throw ConfigError(std::string("cfg.") + key + ": object expected");
    dst = j.at(key);
  };
  take_obj("measure", c.measure, true);
  take_obj("kernel", c.kernel, true);
  take_obj("b1", c.b1, false);
  take_obj("b2", c.b2, false);
  if (j.contains("goodness")) {
    const json& gj = j.at("goodness");
    if (!gj.is_object()) throw ConfigError("cfg.goodness: object expected");
    try {
      GoodnessParams gp;
      gp.alpha = gj.value("alpha", 1.0);
      gp.d = gj.value("d", 1.0);
      gp.gamma = gj.value("gamma", gp.alpha / (2.0 * (gp.alpha + gp.d)));
      gp.r = gj.value("r", 8);
      gp.lambda = gj.value("lambda", 1.0);
      gp.eta = gj.value("eta", 0.05);
      c.goodness = gp;
    } catch (const json::exception& e) {
      throw ConfigError(std::string("cfg.goodness: ") + e.what());
    }
  }
  try {
    c.goodness.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("cfg.goodness: ") + e.what());
  }
  auto take_int = [&](const char* key, int dflt) {
    if (!j.contains(key)) return dflt;
    if (!j.at(key).is_number_integer())
      throw ConfigError(std::string("cfg.") + key + ": integer expected");
    return j.at(key).get<int>();
  };
  c.levels = take_int("levels", c.levels);
  if (c.levels < 1) throw ConfigError("cfg.levels: positive level count required");
  if (j.contains("p")) {
    if (!j.at("p").is_number()) throw ConfigError("cfg.p: number expected");
    c.p = j.at("p").get<double>();
  }
  if (!(c.p >= 1.0) || std::isinf(c.p))
    throw ConfigError("cfg.p: exponent in [1, inf) required");
  if (j.contains("space")) {
    const json& sj = j.at("space");
    if (!sj.is_object()) throw ConfigError("cfg.space: object expected");
    try {
      c.space.q = sj.value("q", 2.0);
      c.space.m = sj.value("m", 1);
    } catch (const json::exception& e) {
      throw ConfigError(std::string("cfg.space: ") + e.what());
    }
    if (!(c.space.q >= 1.0)) throw ConfigError("cfg.space.q: exponent >= 1 required");
    if (c.space.m < 1) throw ConfigError("cfg.space.m: at least one component required");
  }
  c.sign_trials = take_int("sign_trials", c.sign_trials);
  if (c.sign_trials < 0) throw ConfigError("cfg.sign_trials: nonnegative count required");
  c.probes = take_int("probes", c.probes);
  if (c.probes < 1) throw ConfigError("cfg.probes: positive count required");
  c.bad_draws = take_int("bad_draws", c.bad_draws);
  if (c.bad_draws < 0) throw ConfigError("cfg.bad_draws: nonnegative count required");
  if (j.contains("seed")) {
    if (!j.at("seed").is_number_integer())
      throw ConfigError("cfg.seed: integer expected");
    c.seed = j.at("seed").get<std::uint64_t>();
  }
  if (j.contains("out_dir")) {
    if (!j.at("out_dir").is_string()) throw ConfigError("cfg.out_dir: string expected");
    c.out_dir = j.at("out_dir").get<std::string>();
  }
  if (j.contains("svg")) {
    if (!j.at("svg").is_boolean()) throw ConfigError("cfg.svg: boolean expected");
    c.svg = j.at("svg").get<bool>();
  }
  return c;
}

json cantor_cauchy_preset() {
  return json{{"measure", {{"kind", "cantor"}, {"ratio", 0.25}, {"depth", 12}}},
              {"kernel", {{"kind", "cauchy"}}},
              {"b1", {{"kind", "perturbed"}, {"amp", 0.3}, {"seed", 11}}},
              {"b2", {{"kind", "exp"}, {"omega", 0.4}, {"axis", 0}}},
              {"goodness", {{"alpha", 1.0}, {"d", 0.5}, {"r", 8}}},
              {"levels", 12},
              {"p", 2.0},
              {"space", {{"q", 2.0}, {"m", 1}}},
              {"sign_trials", 0},
              {"probes", 6},
              {"bad_draws", 0},
              {"seed", 727},
              {"svg", true}};
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  AtomicMeasure m;
  try {
    m = build_measure(cfg.measure);
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("cfg.measure: ") + e.what());
  }
  KernelSpec kern;
  try {
    kern = build_kernel(cfg.kernel);
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("cfg.kernel: ") + e.what());
  }
  if (kern.dim != m.dim)
    throw ConfigError("cfg.kernel: dimension does not match the measure");
  AccretiveFn b1, b2;
  try {
    b1 = build_accretive(cfg.b1, m);
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("cfg.b1: ") + e.what());
  }
  try {
    b2 = build_accretive(cfg.b2, m);
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("cfg.b2: ") + e.what());
  }
  try {
    cfg.goodness.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("cfg.goodness: ") + e.what());
  }
  if (cfg.goodness.r > kShiftExcess)
    throw ConfigError("cfg.goodness.r: at most " + std::to_string(kShiftExcess) +
                      " (the opposing-shift headroom)");
  if (cfg.levels + kShiftExcess > 50)
    throw ConfigError("cfg.levels: at most " + std::to_string(50 - kShiftExcess) +
                      " (the shifted window caps at 50 levels)");

  const auto [lo, hi] = suggest_window(m);
  const int top = lo + cfg.levels;
  if (top > hi)
    throw ConfigError("cfg.levels: window tops out at " + std::to_string(hi - lo) +
                      " levels for this measure");
  const int n = m.atoms();
  std::span<const double> w(m.weights);

  Rng rs1_rng = Rng::substream(cfg.seed, 1);
  Rng rs2_rng = Rng::substream(cfg.seed, 2);
  Rng fine1_rng = Rng::substream(cfg.seed, 3);
  Rng fine2_rng = Rng::substream(cfg.seed, 4);
  DyadicSystem d1(m.dim, ShiftSequence::random(m.dim, lo, top + kShiftExcess, rs1_rng));
  DyadicSystem d2(m.dim, ShiftSequence::random(m.dim, lo, top + kShiftExcess, rs2_rng));
  ResolvedSystem rs1(&m, d1, lo, top);
  ResolvedSystem rs2(&m, d2, lo, top);
  if (!rs1.resolves_atoms() || !rs2.resolves_atoms())
    throw ConfigError("cfg.measure: the finest window level does not separate the atoms");
  ShiftSequence fine1 = ShiftSequence::random(m.dim, lo - kFineDepth, lo, fine1_rng);
  ShiftSequence fine2 = ShiftSequence::random(m.dim, lo - kFineDepth, lo, fine2_rng);
  GoodnessClassifier cls1(&rs1.system(), d2.shift(), fine1, cfg.goodness, kShiftExcess);
  GoodnessClassifier cls2(&rs2.system(), d1.shift(), fine2, cfg.goodness, kShiftExcess);

  Rng f_rng = Rng::substream(cfg.seed, 5);
  Rng g_rng = Rng::substream(cfg.seed, 6);
  const double pd = dual_exponent(cfg.p);
  VectorField f = random_field(n, cfg.space, f_rng, cfg.p);
  VectorField g = random_field(n, cfg.space.dual(), g_rng, pd);
  if (const double fn = lp_norm(f, w, cfg.p); fn > 0) f *= cplx(1.0 / fn);
  if (const double gn = lp_norm(g, w, pd); gn > 0) g *= cplx(1.0 / gn);

  DiscreteOperator t = make_operator(kern, &m);
  std::vector<AtlasEntry> fx = build_atlas(f, b1, rs1, top, &cls1);
  std::vector<AtlasEntry> gx = build_atlas(g, b2, rs2, top, &cls2);
  CellAccum acc;
  acc.p = cfg.p;
  acc.keep_lists = (cfg.p != 2.0 && cfg.sign_trials > 0);
  if (acc.keep_lists &&
      static_cast<long long>(fx.size()) * static_cast<long long>(gx.size()) > kMaxTableTerms)
    throw ConfigError("cfg.sign_trials: sampled cell norms keep every term in memory; "
                      "lower cfg.levels or set sign_trials to 0");
  std::vector<cplx> kmat = dense_kernel(t);
  StreamInput in{&fx, &gx, &kmat, &m, &b1, &b2, cfg.goodness, t.kernel.d};
  stream_pairs(in, [&](const PairTerm& pt) { acc.add(pt); });
  kmat.clear();
  kmat.shrink_to_fit();

  const cplx oracle = dual_pair(g, apply(t, f), w);
  PartReport rep = assemble(acc, oracle, cfg.sign_trials,
                            Rng::substream(cfg.seed, 9).next_u64());

  GoodBadSplit split_f = good_bad_split(f, b1, rs1, cls1, top);
  GoodBadSplit split_g = good_bad_split(g, b2, rs2, cls2, top);
  rep.bad_fraction_f = split_f.bad_fraction;
  rep.bad_fraction_g = split_g.bad_fraction;
  Rng op_rng = Rng::substream(cfg.seed, 7);
  rep.op_norm = operator_norm_estimate(t, b1, b2, cfg.p, cfg.space, cfg.probes, op_rng);
  BadFractionSweep sweep;
  if (cfg.bad_draws > 0)
    sweep = bad_fraction_sweep(f, b1, rs1, cfg.goodness, {8, 16, 32}, cfg.bad_draws,
                               Rng::substream(cfg.seed, 8).next_u64());

  ExperimentResult res;
  res.pass = std::isfinite(rep.rel_err_expand) && rep.rel_err_expand <= kReconcileTol &&
             std::isfinite(rep.rel_err_cells) && rep.rel_err_cells <= kReconcileTol;
  json summary;
  summary["config"] = {{"measure", cfg.measure},
                       {"kernel", cfg.kernel},
                       {"b1", cfg.b1},
                       {"b2", cfg.b2},
                       {"goodness",
                        {{"alpha", cfg.goodness.alpha},
                         {"d", cfg.goodness.d},
                         {"gamma", cfg.goodness.gamma},
                         {"r", cfg.goodness.r},
                         {"lambda", cfg.goodness.lambda},
                         {"eta", cfg.goodness.eta}}},
                       {"levels", cfg.levels},
                       {"p", cfg.p},
                       {"space", {{"q", cfg.space.q}, {"m", cfg.space.m}}},
                       {"sign_trials", cfg.sign_trials},
                       {"probes", cfg.probes},
                       {"bad_draws", cfg.bad_draws},
                       {"seed", cfg.seed}};
  summary["window"] = {{"k_lo", lo}, {"k_hi_available", hi}, {"top", top}, {"atoms", n}};
  summary["totals"] = {{"direct", complex_json(rep.total)},
                       {"cells", complex_json(rep.cells_total)},
                       {"paraproduct_correction", complex_json(rep.paraproduct_correction)},
                       {"rel_err_expand", rep.rel_err_expand},
                       {"rel_err_cells", rep.rel_err_cells}};
  summary["class_abs"] = rep.class_abs;
  summary["cells"] = {{"count", static_cast<int>(rep.cells.size())}};
  summary["slope"] = {{"cap", 8}, {"separated", rep.separated_slope(8)}};
  json bad = {{"fraction_f", rep.bad_fraction_f}, {"fraction_g", rep.bad_fraction_g}};
  if (cfg.bad_draws > 0) {
    bad["sweep"] = {{"draws", cfg.bad_draws},
                    {"r", sweep.r_values},
                    {"mean_fraction", sweep.mean_fraction},
                    {"analytic_bound", sweep.analytic_bound}};
  }
  summary["bad"] = bad;
  summary["op_norm"] = rep.op_norm;
  summary["pass"] = res.pass;

  res.summary = std::move(summary);
  res.cells_csv = render_cells_csv(rep);
  res.decay_csv = render_decay_csv(rep);
  res.report = std::move(rep);

  if (!cfg.out_dir.empty()) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(cfg.out_dir, ec);
    if (ec) throw ConfigError("cfg.out_dir: cannot create '" + cfg.out_dir + "'");
    auto put = [&](const char* name, const std::string& body) {
      std::ofstream os(fs::path(cfg.out_dir) / name, std::ios::binary);
      if (!os) throw ConfigError(std::string("cfg.out_dir: cannot write ") + name);
      os << body;
    };
    put("summary.json", res.summary.dump(2) + "\n");
    put("cells.csv", res.cells_csv);
    put("decay.csv", res.decay_csv);
    if (cfg.svg) put("decay.svg", render_decay_svg(res.report));
  }
  return res;
}

} // namespace tblab

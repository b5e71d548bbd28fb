#include "tblab/kernel.hpp"

#include "tblab/dyadic.hpp"
#include "tblab/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace tblab {

namespace {

double euclid(const Vec& x, const Vec& y, int dim) { return dist(x, y, dim); }

std::vector<int> support_of(const HaarFunction& h) {
  std::vector<int> idx;
  for (size_t a = 0; a < h.values.size(); ++a)
    if (h.values[a] != cplx(0)) idx.push_back(static_cast<int>(a));
  return idx;
}

double l1_norm(const HaarFunction& h, const AtomicMeasure& m) {
  double s = 0;
  for (size_t a = 0; a < h.values.size(); ++a) s += std::abs(h.values[a]) * m.weights[a];
  return s;
}

double sup_norm(const HaarFunction& h) {
  double s = 0;
  for (const cplx& v : h.values) s = std::max(s, std::abs(v));
  return s;
}

} // namespace

KernelSpec cauchy_kernel(int dim) {
  if (dim != 1 && dim != 2)
    throw ConfigError("cauchy_kernel: dim must be 1 or 2, got " + std::to_string(dim));
  KernelSpec k;
  k.d = 1.0;
  k.alpha = 1.0;
  k.dim = dim;
  k.name = "cauchy";
  if (dim == 1) {
    k.eval = [](const Vec& x, const Vec& y) { return cplx(1.0 / (x[0] - y[0]), 0.0); };
  } else {
    k.eval = [](const Vec& x, const Vec& y) {
      cplx z(x[0] - y[0], x[1] - y[1]);
      return cplx(1.0) / z;
    };
  }
  return k;
}

KernelSpec fractional_kernel(int dim, double d) {
  if (d <= 0) throw ConfigError("fractional_kernel: d must be positive");
  KernelSpec k;
  k.d = d;
  k.alpha = 1.0;
  k.dim = dim;
  k.name = "fractional";
  k.eval = [dim, d](const Vec& x, const Vec& y) {
    return cplx(std::pow(euclid(x, y, dim), -d), 0.0);
  };
  return k;
}

KernelSpec riesz_kernel(int dim, int component) {
  if (component < 0 || component >= dim)
    throw ConfigError("riesz_kernel: component out of range");
  KernelSpec k;
  k.d = static_cast<double>(dim);
  k.alpha = 1.0;
  k.dim = dim;
  k.name = "riesz";
  k.eval = [dim, component](const Vec& x, const Vec& y) {
    double r = euclid(x, y, dim);
    return cplx((x[component] - y[component]) / std::pow(r, dim + 1), 0.0);
  };
  return k;
}

KernelSpec constant_kernel(double c, int dim) {
  KernelSpec k;
  k.d = 0.0;
  k.alpha = 1.0;
  k.dim = dim;
  k.name = "constant";
  k.eval = [c](const Vec&, const Vec&) { return cplx(c, 0.0); };
  return k;
}

KernelSpec zero_kernel(int dim) {
  KernelSpec k;
  k.d = 1.0;
  k.alpha = 1.0;
  k.dim = dim;
  k.name = "zero";
  k.eval = [](const Vec&, const Vec&) { return cplx(0.0, 0.0); };
  return k;
}

KernelSpec build_kernel(const nlohmann::json& cfg) {
  if (!cfg.contains("kind")) throw ConfigError("kernel.kind: missing");
  std::string kind = cfg.at("kind").get<std::string>();
  int dim = cfg.value("dim", 1);
  if (kind == "cauchy") return cauchy_kernel(dim);
  if (kind == "fractional") return fractional_kernel(dim, cfg.value("d", 1.0));
  if (kind == "riesz") return riesz_kernel(dim, cfg.value("component", 0));
  if (kind == "constant") return constant_kernel(cfg.value("c", 1.0), dim);
  if (kind == "zero") return zero_kernel(dim);
  throw ConfigError("kernel.kind: unknown kind '" + kind + "'");
}

CzkReport czk_check(const KernelSpec& k, int n_samples, Rng& rng) {
  CzkReport rep;
  rep.samples = n_samples;
  const int dim = k.dim;
  auto unit_dir = [&](Vec& dir) {
    double n2 = 0;
    do {
      for (int a = 0; a < dim; ++a) {
        dir[a] = rng.normal();
        n2 += dir[a] * dir[a];
      }
    } while (n2 == 0);
    double inv = 1.0 / std::sqrt(n2);
    for (int a = 0; a < dim; ++a) dir[a] *= inv;
  };
  for (int s = 0; s < n_samples; ++s) {
    Vec x{}, y{}, xp{}, dir{}, dir2{};
    for (int a = 0; a < dim; ++a) x[a] = rng.u01();
    unit_dir(dir);
    double r = std::exp(std::log(1e-4) + rng.u01() * std::log(0.5 / 1e-4));
    for (int a = 0; a < dim; ++a) y[a] = x[a] + r * dir[a];

    rep.worst_size_ratio =
        std::max(rep.worst_size_ratio, std::abs(k.eval(x, y)) * std::pow(r, k.d));

    unit_dir(dir2);
    double smax = 0.499 * r;
    double ds = std::exp(std::log(1e-6) + rng.u01() * std::log(smax / 1e-6));
    for (int a = 0; a < dim; ++a) xp[a] = x[a] + ds * dir2[a];
    double inc = std::max(std::abs(k.eval(x, y) - k.eval(xp, y)),
                          std::abs(k.eval(y, x) - k.eval(y, xp)));
    double scale = std::pow(ds, k.alpha) / std::pow(r, k.d + k.alpha);
    rep.worst_holder_ratio = std::max(rep.worst_holder_ratio, inc / scale);
  }
  return rep;
}

DiscreteOperator make_operator(const KernelSpec& k, const AtomicMeasure* m, double eps) {
  DiscreteOperator t;
  t.kernel = k;
  t.measure = m;
  if (eps < 0) {
    double sep = m->min_separation();
    t.truncation_eps = sep > 0 ? 0.5 * sep : 1e-300;
  } else {
    t.truncation_eps = eps;
  }
  if (t.truncation_eps <= 0)
    throw ConfigError("DiscreteOperator: truncation_eps must be positive");
  return t;
}

VectorField apply(const DiscreteOperator& t, const VectorField& f) {
  const AtomicMeasure& m = *t.measure;
  const int comps = f.space.m;
  VectorField out(m.atoms(), f.space, f.p);
  for (int i = 0; i < m.atoms(); ++i) {
    auto oi = out.at(i);
    for (int j = 0; j < m.atoms(); ++j) {
      if (euclid(m.points[i], m.points[j], m.dim) < t.truncation_eps) continue;
      cplx kv = t.kernel.eval(m.points[i], m.points[j]) * m.weights[j];
      auto fj = f.at(j);
      for (int c = 0; c < comps; ++c) oi[c] += kv * fj[c];
    }
  }
  return out;
}

VectorField apply_adjoint(const DiscreteOperator& t, const VectorField& g) {
  const AtomicMeasure& m = *t.measure;
  const int comps = g.space.m;
  VectorField out(m.atoms(), g.space, g.p);
  for (int i = 0; i < m.atoms(); ++i) {
    auto oi = out.at(i);
    for (int j = 0; j < m.atoms(); ++j) {
      if (euclid(m.points[i], m.points[j], m.dim) < t.truncation_eps) continue;
      cplx kv = std::conj(t.kernel.eval(m.points[j], m.points[i])) * m.weights[j];
      auto gj = g.at(j);
      for (int c = 0; c < comps; ++c) oi[c] += kv * gj[c];
    }
  }
  return out;
}

VectorField apply_transpose(const DiscreteOperator& t, const VectorField& h) {
  const AtomicMeasure& m = *t.measure;
  const int comps = h.space.m;
  VectorField out(m.atoms(), h.space, h.p);
  for (int i = 0; i < m.atoms(); ++i) {
    auto oi = out.at(i);
    for (int j = 0; j < m.atoms(); ++j) {
      if (euclid(m.points[i], m.points[j], m.dim) < t.truncation_eps) continue;
      cplx kv = t.kernel.eval(m.points[j], m.points[i]) * m.weights[j];
      auto hj = h.at(j);
      for (int c = 0; c < comps; ++c) oi[c] += kv * hj[c];
    }
  }
  return out;
}

cplx matrix_coeff(const DiscreteOperator& t, const HaarFunction& psi_r,
                  const HaarFunction& phi_q, const AccretiveFn& b1,
                  const AccretiveFn& b2) {
  const AtomicMeasure& m = *t.measure;
  std::vector<int> sx = support_of(psi_r), sy = support_of(phi_q);
  cplx acc = 0;
  for (int i : sx) {
    cplx left = std::conj(psi_r.values[i] * b2.values[i]) * m.weights[i];
    cplx inner_sum = 0;
    for (int j : sy) {
      if (euclid(m.points[i], m.points[j], m.dim) < t.truncation_eps) continue;
      inner_sum += t.kernel.eval(m.points[i], m.points[j]) * b1.values[j] *
                   phi_q.values[j] * m.weights[j];
    }
    acc += left * inner_sum;
  }
  return acc;
}

double SeparatedDecayReport::slope(int fixed_j) const {
  std::vector<double> xs, ys;
  for (const DecayCellStat& c : cells) {
    if (fixed_j >= 0 && c.j != fixed_j) continue;
    if (c.max_mag <= 0) continue;
    xs.push_back(fixed_j >= 0 ? c.n : c.n + c.j);
    ys.push_back(std::log(c.max_mag));
  }
  if (xs.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  double mx = 0, my = 0;
  for (size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= xs.size();
  my /= ys.size();
  double sxx = 0, sxy = 0;
  for (size_t i = 0; i < xs.size(); ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
  }
  if (sxx == 0) return std::numeric_limits<double>::quiet_NaN();
  return sxy / sxx;
}

SeparatedDecayReport decay_separated(const DiscreteOperator& t,
                                     const std::vector<HaarPair>& pairs,
                                     const AccretiveFn& b1, const AccretiveFn& b2) {
  SeparatedDecayReport rep;
  const AtomicMeasure& m = *t.measure;
  const double d = t.kernel.d, alpha = t.kernel.alpha;
  std::vector<std::vector<DecayCellStat>> grid; // indexed [n][j]

  for (const HaarPair& pr : pairs) {
    const double lq = pr.phi_q.cube.side(), lr = pr.psi_r.cube.side();
    const double dd = box_dist(pr.phi_q.box, pr.psi_r.box);
    if (lq > lr || lq > dd) {
      ++rep.skipped;
      continue;
    }
    const double n1_psi = l1_norm(pr.psi_r, m), n1_phi = l1_norm(pr.phi_q, m);
    cplx trq = matrix_coeff(t, pr.psi_r, pr.phi_q, b1, b2);
    double mag = std::abs(trq);
    if (n1_psi == 0 || n1_phi == 0) {
      ++rep.zero_pairs;
      SeparatedPairRow row;
      row.magnitude = mag;
      rep.rows.push_back(row);
      continue;
    }
    const double ld = long_distance(pr.phi_q.box, pr.psi_r.box);
    SeparatedPairRow row;
    row.n = pr.psi_r.cube.level - pr.phi_q.cube.level;
    row.k_level = pr.psi_r.cube.level;
    row.j = std::max(0, static_cast<int>(std::ceil(std::log2(ld / lr) - 1e-12)) - 1);
    row.dist = dd;
    row.long_dist = ld;
    row.magnitude = mag;
    row.q_good = pr.q_good;
    row.rhs_centered = std::pow(lq, alpha) / std::pow(dd, d + alpha) * n1_psi * n1_phi;
    row.ratio_centered = mag / row.rhs_centered;
    rep.sup_ratio_centered = std::max(rep.sup_ratio_centered, row.ratio_centered);
    row.rhs_longdist =
        std::pow(lq, alpha / 2) * std::pow(lr, alpha / 2) / std::pow(ld, d + alpha) * n1_psi * n1_phi;
    row.ratio_longdist = mag / row.rhs_longdist;
    if (pr.q_good)
      rep.sup_ratio_longdist = std::max(rep.sup_ratio_longdist, row.ratio_longdist);
    rep.rows.push_back(row);
    ++rep.checked;

    double cell_mag =
        mag * std::pow(std::ldexp(1.0, row.k_level + row.j), d) / (n1_psi * n1_phi);
    if (static_cast<size_t>(row.n) >= grid.size()) grid.resize(row.n + 1);
    if (static_cast<size_t>(row.j) >= grid[row.n].size()) grid[row.n].resize(row.j + 1);
    DecayCellStat& cs = grid[row.n][row.j];
    cs.n = row.n;
    cs.j = row.j;
    cs.max_mag = std::max(cs.max_mag, cell_mag);
    ++cs.count;
  }
  for (auto& gr : grid)
    for (DecayCellStat& cs : gr)
      if (cs.count > 0) rep.cells.push_back(cs);
  return rep;
}

ContainedDecayReport decay_contained(const DiscreteOperator& t,
                                     const std::vector<HaarPair>& pairs,
                                     const AccretiveFn& b1, const AccretiveFn& b2,
                                     int r_param) {
  ContainedDecayReport rep;
  const AtomicMeasure& m = *t.measure;
  const double alpha = t.kernel.alpha;

  for (const HaarPair& pr : pairs) {
    const Box& qb = pr.phi_q.box;
    const Box& rb = pr.psi_r.box;
    const double lq = pr.phi_q.cube.side(), lr = pr.psi_r.cube.side();
    if (!box_subset(qb, rb) || !(lq < std::ldexp(lr, -r_param))) {
      ++rep.skipped;
      continue;
    }
    const double n1_phi = l1_norm(pr.phi_q, m), n1_psi = l1_norm(pr.psi_r, m);
    if (n1_phi == 0 || n1_psi == 0) {
      ++rep.zero_pairs;
      continue;
    }

    // u = T(b1 phi_Q) over every atom; the global pairing below needs all of it
    std::vector<int> sq = support_of(pr.phi_q);
    std::vector<cplx> u(m.atoms(), cplx(0));
    for (int i = 0; i < m.atoms(); ++i) {
      cplx acc = 0;
      for (int j : sq) {
        if (euclid(m.points[i], m.points[j], m.dim) < t.truncation_eps) continue;
        acc += t.kernel.eval(m.points[i], m.points[j]) * b1.values[j] *
               pr.phi_q.values[j] * m.weights[j];
      }
      u[i] = acc;
    }

    cplx trq = 0, global = 0;
    for (int i = 0; i < m.atoms(); ++i) {
      global += std::conj(b2.values[i]) * u[i] * m.weights[i];
      trq += std::conj(pr.psi_r.values[i] * b2.values[i]) * u[i] * m.weights[i];
    }

    // S: the half-side child of R containing Q (selected by Q's center)
    Vec qc = qb.center();
    Box s{};
    s.dim = rb.dim;
    for (int a = 0; a < rb.dim; ++a) {
      double mid = 0.5 * (rb.lo[a] + rb.hi[a]);
      s.lo[a] = qc[a] < mid ? rb.lo[a] : mid;
      s.hi[a] = s.lo[a] + 0.5 * (rb.hi[a] - rb.lo[a]);
    }

    double mu_s = 0, mu_r = 0, mu_q = 0;
    cplx sum_psi_s = 0, sum_psi_q = 0, in_s = 0;
    for (int i = 0; i < m.atoms(); ++i) {
      const Vec& x = m.points[i];
      if (rb.contains(x)) mu_r += m.weights[i];
      if (s.contains(x)) {
        mu_s += m.weights[i];
        sum_psi_s += pr.psi_r.values[i] * m.weights[i];
        in_s += std::conj(b2.values[i]) * u[i] * m.weights[i];
      }
      if (qb.contains(x)) {
        mu_q += m.weights[i];
        sum_psi_q += pr.psi_r.values[i] * m.weights[i];
      }
    }
    if (mu_s <= 0 || mu_q <= 0) { // Q straddles R's children: hypothesis violated
      ++rep.skipped;
      continue;
    }
    cplx avg_s = sum_psi_s / mu_s;
    cplx avg_q = sum_psi_q / mu_q;

    cplx corrected = trq - global * std::conj(avg_q);

    // independent route through the half-children of R
    cplx ident = -std::conj(avg_s) * (global - in_s);
    for (int i = 0; i < m.atoms(); ++i) {
      const Vec& x = m.points[i];
      if (!rb.contains(x) || s.contains(x)) continue;
      ident += std::conj(pr.psi_r.values[i] * b2.values[i]) * u[i] * m.weights[i];
    }
    double cmag = std::abs(corrected);
    double ident_err = std::abs(corrected - ident) / std::max(cmag, 1e-300);

    ContainedPairRow row;
    row.n = pr.psi_r.cube.level - pr.phi_q.cube.level;
    row.magnitude = std::abs(trq);
    row.corrected = cmag;
    row.identity_rel_err = ident_err;
    double shape = std::pow(lq / lr, alpha / 2);
    row.ratio_coeff = cmag / (shape * (std::abs(avg_s) + n1_psi / mu_r) * n1_phi);

    double max_phi = sup_norm(pr.phi_q);
    double pw = 0;
    for (int i = 0; i < m.atoms(); ++i) {
      if (pr.psi_r.values[i] == cplx(0)) continue;
      const Vec& x = m.points[i];
      double denom_mass = s.contains(x) ? mu_s : mu_r;
      pw = std::max(pw, std::abs(pr.psi_r.values[i]) * denom_mass);
    }
    row.ratio_pointwise = cmag * max_phi * pw / shape;

    rep.rows.push_back(row);
    rep.sup_ratio_coeff = std::max(rep.sup_ratio_coeff, row.ratio_coeff);
    rep.sup_ratio_pointwise = std::max(rep.sup_ratio_pointwise, row.ratio_pointwise);
    rep.max_identity_err = std::max(rep.max_identity_err, ident_err);
    ++rep.checked;
  }
  return rep;
}

std::string separated_report_csv(const SeparatedDecayReport& rep) {
  std::ostringstream os;
  os << "n,j,k_level,dist,long_dist,magnitude,rhs_centered,ratio_centered,"
        "rhs_longdist,ratio_longdist,q_good\n";
  os.precision(17);
  for (const SeparatedPairRow& r : rep.rows)
    os << r.n << ',' << r.j << ',' << r.k_level << ',' << r.dist << ',' << r.long_dist
       << ',' << r.magnitude << ',' << r.rhs_centered << ',' << r.ratio_centered << ','
       << r.rhs_longdist << ',' << r.ratio_longdist << ',' << (r.q_good ? 1 : 0) << '\n';
  return os.str();
}

std::string contained_report_csv(const ContainedDecayReport& rep) {
  std::ostringstream os;
  os << "n,magnitude,corrected,identity_rel_err,ratio_coeff,ratio_pointwise\n";
  os.precision(17);
  for (const ContainedPairRow& r : rep.rows)
    os << r.n << ',' << r.magnitude << ',' << r.corrected << ',' << r.identity_rel_err
       << ',' << r.ratio_coeff << ',' << r.ratio_pointwise << '\n';
  return os.str();
}

CloseSplit close_split(const DiscreteOperator& t, const Box& q, const Box& r,
                       const AccretiveFn& b1, const AccretiveFn& b2, double eta) {
  const AtomicMeasure& m = *t.measure;
  CloseSplit out;
  Box q_out = q.dilate(1 + 2 * eta), q_in = q.dilate(1 - 2 * eta);
  Box r_out = r.dilate(1 + 2 * eta), r_in = r.dilate(1 - 2 * eta);

  enum XClass { kNone, kDelta, kBdry, kSep };
  std::vector<XClass> xs(m.atoms(), kNone), ys(m.atoms(), kNone);
  double mu_delta = 0, mu_rsep = 0, mu_q = 0, mu_qsep = 0;
  for (int i = 0; i < m.atoms(); ++i) {
    const Vec& p = m.points[i];
    bool in_q = q.contains(p), in_r = r.contains(p);
    if (in_q) mu_q += m.weights[i];
    if (in_r) {
      if (in_q) {
        xs[i] = kDelta;
        mu_delta += m.weights[i];
      } else if (q_out.contains(p) && !q_in.contains(p)) {
        xs[i] = kBdry;
      } else {
        xs[i] = kSep;
        mu_rsep += m.weights[i];
      }
    }
    if (in_q) {
      if (in_r) {
        ys[i] = kDelta;
      } else if (r_out.contains(p) && !r_in.contains(p)) {
        ys[i] = kBdry;
      } else {
        ys[i] = kSep;
        mu_qsep += m.weights[i];
      }
    }
  }
  out.mu_delta = mu_delta;

  double dist_rsep_q = std::numeric_limits<double>::infinity();
  double dist_delta_qsep = std::numeric_limits<double>::infinity();
  for (int i = 0; i < m.atoms(); ++i) {
    if (xs[i] == kSep) dist_rsep_q = std::min(dist_rsep_q, box_dist_point(q, m.points[i]));
    if (xs[i] != kDelta) continue;
    for (int j = 0; j < m.atoms(); ++j)
      if (ys[j] == kSep)
        dist_delta_qsep = std::min(dist_delta_qsep, euclid(m.points[i], m.points[j], m.dim));
  }

  for (int i = 0; i < m.atoms(); ++i) {
    if (xs[i] == kNone) continue;
    cplx left = std::conj(b2.values[i]) * m.weights[i];
    cplx full = 0, on_delta = 0, on_qb = 0, on_qs = 0;
    for (int j = 0; j < m.atoms(); ++j) {
      if (ys[j] == kNone) continue;
      if (euclid(m.points[i], m.points[j], m.dim) < t.truncation_eps) continue;
      cplx term = t.kernel.eval(m.points[i], m.points[j]) * b1.values[j] * m.weights[j];
      full += term;
      if (ys[j] == kDelta)
        on_delta += term;
      else if (ys[j] == kBdry)
        on_qb += term;
      else
        on_qs += term;
    }
    out.direct += left * full;
    if (xs[i] == kSep)
      out.r_sep += left * full;
    else if (xs[i] == kBdry)
      out.r_bdry += left * full;
    else {
      out.middle += left * on_delta;
      out.q_bdry += left * on_qb;
      out.q_sep += left * on_qs;
    }
  }

  if (mu_delta > 0) out.t_delta = out.middle / mu_delta;
  if (mu_rsep > 0 && mu_q > 0 && std::isfinite(dist_rsep_q) && dist_rsep_q > 0)
    out.sep_ratio_r =
        std::abs(out.r_sep) * std::pow(dist_rsep_q, t.kernel.d) / (mu_rsep * mu_q);
  if (mu_delta > 0 && mu_qsep > 0 && std::isfinite(dist_delta_qsep) && dist_delta_qsep > 0)
    out.sep_ratio_q =
        std::abs(out.q_sep) * std::pow(dist_delta_qsep, t.kernel.d) / (mu_delta * mu_qsep);
  return out;
}

double weak_boundedness_check(const DiscreteOperator& t, const AccretiveFn& b1,
                              const AccretiveFn& b2, const std::vector<Box>& rectangles) {
  const AtomicMeasure& m = *t.measure;
  double sup = 0;
  for (const Box& r : rectangles) {
    std::vector<int> idx;
    double mass = 0;
    for (int i = 0; i < m.atoms(); ++i)
      if (r.contains(m.points[i])) {
        idx.push_back(i);
        mass += m.weights[i];
      }
    if (mass <= 0) continue;
    cplx acc = 0;
    for (int i : idx) {
      cplx left = std::conj(b2.values[i]) * m.weights[i];
      cplx inner_sum = 0;
      for (int j : idx) {
        if (euclid(m.points[i], m.points[j], m.dim) < t.truncation_eps) continue;
        inner_sum += t.kernel.eval(m.points[i], m.points[j]) * b1.values[j] * m.weights[j];
      }
      acc += left * inner_sum;
    }
    sup = std::max(sup, std::abs(acc) / mass);
  }
  return sup;
}

} // namespace tblab

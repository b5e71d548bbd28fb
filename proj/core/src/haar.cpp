#include "tblab/haar.hpp"
#include "tblab/errors.hpp"
#include "tblab/rng.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace tblab {

namespace {

double floor_of(const AccretiveFn& b, double delta_floor) {
  return delta_floor >= 0 ? delta_floor : 1e-6 * b.delta;
}

cplx cell_b_integral(const ResolvedSystem& rs, const AccretiveFn& b, int level,
                     const ResolvedSystem::Cell& c) {
  cplx s = 0;
  const auto& m = rs.measure();
  for (int a : rs.atoms_of(level, c)) s += b.values[a] * m.weights[a];
  return s;
}

} // namespace

VectorField cond_expectation(const VectorField& f, const AccretiveFn& b, int k,
                             const ResolvedSystem& rs, double delta_floor) {
  const double dfloor = floor_of(b, delta_floor);
  const auto& m = rs.measure();
  VectorField out(f.atoms(), f.space, f.p);
  const int level = std::clamp(k, rs.k_lo(), rs.k_hi());
  const int mdim = f.space.m;
  std::vector<cplx> mean(mdim);
  for (int ci = 0; ci < rs.cell_count(level); ++ci) {
    const auto& c = rs.cell(level, ci);
    cplx ib = cell_b_integral(rs, b, level, c);
    if (std::abs(ib) < dfloor * c.mass) {
      std::ostringstream os;
      os << "cond_expectation: |avg_Q b| = " << std::abs(ib) / c.mass
         << " below the working floor " << dfloor << " at level " << level;
      throw AccretivityViolation(os.str());
    }
    std::fill(mean.begin(), mean.end(), cplx(0));
    for (int a : rs.atoms_of(level, c))
      for (int comp = 0; comp < mdim; ++comp)
        mean[comp] += f.at(a)[comp] * m.weights[a];
    for (int comp = 0; comp < mdim; ++comp) mean[comp] /= ib;
    for (int a : rs.atoms_of(level, c))
      for (int comp = 0; comp < mdim; ++comp)
        out.at(a)[comp] = b.values[a] * mean[comp];
  }
  return out;
}

VectorField martingale_difference(const VectorField& f, const AccretiveFn& b, int k,
                                  const ResolvedSystem& rs, double delta_floor) {
  VectorField fine = cond_expectation(f, b, k - 1, rs, delta_floor);
  VectorField coarse = cond_expectation(f, b, k, rs, delta_floor);
  fine -= coarse;
  return fine;
}

std::vector<int> order_subcubes(const ResolvedSystem& rs, int level, int cell,
                                const AccretiveFn& b, double delta) {
  const auto& c = rs.cell(level, cell);
  const int nslots = 1 << rs.system().dim();
  std::vector<int> remaining(rs.children_of(level, c).begin(),
                             rs.children_of(level, c).end());
  const int m = static_cast<int>(remaining.size());
  std::vector<cplx> child_b(m);
  for (int i = 0; i < m; ++i)
    child_b[i] = cell_b_integral(rs, b, level - 1, rs.cell(level - 1, remaining[i]));
  cplx tail = 0;
  for (cplx v : child_b) tail += v;

  std::vector<int> order;
  order.reserve(m);
  const double base = delta * c.mass;
  // greedy: slot positions 2^N - m + 1 .. 2^N among all child slots
  // (zero-mass slots conceptually removed first, which changes nothing)
  for (int step = 0; step < m - 1; ++step) {
    const int slot = nslots - m + step + 1; // position of the child removed now
    const double need = (1.0 - double(slot) * std::ldexp(1.0, -rs.system().dim())) * base;
    int pick = -1;
    double best_tail = -1;
    for (size_t i = 0; i < remaining.size(); ++i) {
      double after = std::abs(tail - child_b[i]);
      if (after >= need && after > best_tail) {
        best_tail = after;
        pick = static_cast<int>(i);
      }
    }
    if (pick < 0) {
      std::ostringstream os;
      os << "order_subcubes: no child of the level-" << level
         << " cube keeps the tail above " << need
         << "; the declared accretivity bound " << delta << " does not hold here";
      throw NoValidChild(os.str());
    }
    order.push_back(remaining[pick]);
    tail -= child_b[pick];
    remaining.erase(remaining.begin() + pick);
    child_b.erase(child_b.begin() + pick);
  }
  if (!remaining.empty()) order.push_back(remaining[0]);
  return order;
}

namespace {

HaarFunction build_haar_impl(const ResolvedSystem& rs, const AccretiveFn& b, int level,
                             int cell, int u, const std::vector<int>& order) {
  const auto& m = rs.measure();
  const auto& c = rs.cell(level, cell);
  HaarFunction phi;
  phi.cube = c.cube;
  phi.box = rs.realize(c.cube);
  phi.u = u;
  phi.cancellative = u >= 1;
  phi.values.assign(m.atoms(), cplx(0));

  if (u == 0) {
    cplx ib = cell_b_integral(rs, b, level, c);
    cplx scale = cplx(1) / std::sqrt(ib);
    for (int a : rs.atoms_of(level, c)) phi.values[a] = scale;
    return phi;
  }

  const int nchild = static_cast<int>(order.size());
  if (u >= nchild) return phi; // no such splitting direction: phi = 0

  // suffix sums S_v = b(Q_v) + ... + b(Q_{last}) make the algebraic
  // identities int b phi = 0 and int b phi^2 = 1 hold to rounding error
  std::vector<cplx> child_b(nchild), suffix(nchild + 1, cplx(0));
  for (int v = 0; v < nchild; ++v)
    child_b[v] = cell_b_integral(rs, b, level - 1, rs.cell(level - 1, order[v]));
  for (int v = nchild - 1; v >= 0; --v) suffix[v] = child_b[v] + suffix[v + 1];

  const cplx bu = child_b[u - 1];      // b(Q_u)
  const cplx bt = suffix[u];           // b(tail union from u+1 on), 1-based u
  const cplx bh = suffix[u - 1];       // b(Q_u union tail)
  cplx amp = std::sqrt(bu * bt / bh);
  cplx on_child = amp / bu, on_tail = -amp / bt;
  for (int a : rs.atoms_of(level - 1, rs.cell(level - 1, order[u - 1])))
    phi.values[a] = on_child;
  for (int v = u; v < nchild; ++v)
    for (int a : rs.atoms_of(level - 1, rs.cell(level - 1, order[v])))
      phi.values[a] = on_tail;
  return phi;
}

} // namespace

HaarFunction build_haar(const ResolvedSystem& rs, const AccretiveFn& b, int level,
                        int cell, int u, const std::vector<int>& order) {
  return build_haar_impl(rs, b, level, cell, u, order);
}

HaarFunction build_haar(const ResolvedSystem& rs, const AccretiveFn& b, int level,
                        int cell, int u) {
  std::vector<int> order;
  if (u >= 1) order = order_subcubes(rs, level, cell, b, b.delta);
  return build_haar_impl(rs, b, level, cell, u, order);
}

HaarNormReport verify_haar_norms(const ResolvedSystem& rs, const AccretiveFn& b,
                                 const HaarFunction& phi) {
  HaarNormReport rep;
  const auto& m = rs.measure();
  double mass_child = 0; // mu of the set where |phi| is largest
  double peak = 0;
  for (int a = 0; a < m.atoms(); ++a) {
    cplx v = phi.values[a];
    if (v == cplx(0)) continue;
    double av = std::abs(v);
    rep.b_integral += b.values[a] * v * m.weights[a];
    rep.b_square += b.values[a] * v * v * m.weights[a];
    rep.norm1 += av * m.weights[a];
    rep.norm2 += av * av * m.weights[a];
    rep.norm_inf = std::max(rep.norm_inf, av);
    if (av > peak) peak = av;
  }
  rep.norm2 = std::sqrt(rep.norm2);
  rep.product_1_inf = rep.norm1 * rep.norm_inf;
  for (int a = 0; a < m.atoms(); ++a)
    if (std::abs(phi.values[a]) == peak && phi.values[a] != cplx(0))
      mass_child += m.weights[a];
  if (mass_child > 0) {
    rep.ratio1 = rep.norm1 / std::sqrt(mass_child);
    rep.ratio2 = rep.norm2; // mu(Q_u)^{1/2 - 1/2} = 1
    rep.ratio_inf = rep.norm_inf * std::sqrt(mass_child);
  }
  return rep;
}

Decomposition decompose(const VectorField& f, const AccretiveFn& b,
                        const ResolvedSystem& rs, int top_level) {
  if (top_level < rs.k_lo() || top_level > rs.k_hi())
    throw ConfigError("decompose: top level outside the resolved window");
  Decomposition dec;
  dec.top_level = top_level;
  dec.space = f.space;
  dec.p = f.p;
  const auto& m = rs.measure();
  const int mdim = f.space.m;

  auto pair_with = [&](const HaarFunction& phi, int level, int cell) {
    HaarCoefficient hc;
    hc.level = level;
    hc.cell = cell;
    hc.u = phi.u;
    hc.value.assign(mdim, cplx(0));
    const auto& c = rs.cell(level, cell);
    for (int a : rs.atoms_of(level, c)) {
      cplx pv = phi.values[a];
      if (pv == cplx(0)) continue;
      for (int comp = 0; comp < mdim; ++comp)
        hc.value[comp] += pv * f.at(a)[comp] * m.weights[a];
    }
    dec.coeffs.push_back(std::move(hc));
  };

  for (int level = rs.k_lo() + 1; level <= top_level; ++level) {
    for (int cell = 0; cell < rs.cell_count(level); ++cell) {
      const auto& c = rs.cell(level, cell);
      int nchild = c.child_end - c.child_begin;
      if (nchild <= 1) continue;
      std::vector<int> order = order_subcubes(rs, level, cell, b, b.delta);
      for (int u = 1; u < nchild; ++u)
        pair_with(build_haar(rs, b, level, cell, u, order), level, cell);
    }
  }
  for (int cell = 0; cell < rs.cell_count(top_level); ++cell)
    pair_with(build_haar(rs, b, top_level, cell, 0, {}), top_level, cell);
  return dec;
}

VectorField reconstruct(const Decomposition& dec, const AccretiveFn& b,
                        const ResolvedSystem& rs) {
  const auto& m = rs.measure();
  VectorField out(m.atoms(), dec.space, dec.p);
  const int mdim = dec.space.m;
  // rebuild each phi deterministically; cache child orders per cell
  std::map<std::pair<int, int>, std::vector<int>> orders;
  for (const auto& hc : dec.coeffs) {
    std::vector<int> const* order = nullptr;
    if (hc.u >= 1) {
      auto key = std::make_pair(hc.level, hc.cell);
      auto it = orders.find(key);
      if (it == orders.end())
        it = orders.emplace(key, order_subcubes(rs, hc.level, hc.cell, b, b.delta)).first;
      order = &it->second;
    }
    static const std::vector<int> empty;
    HaarFunction phi = build_haar(rs, b, hc.level, hc.cell, hc.u, order ? *order : empty);
    const auto& c = rs.cell(hc.level, hc.cell);
    for (int a : rs.atoms_of(hc.level, c)) {
      cplx pv = phi.values[a];
      if (pv == cplx(0)) continue;
      cplx bp = b.values[a] * pv;
      for (int comp = 0; comp < mdim; ++comp)
        out.at(a)[comp] += bp * hc.value[comp];
    }
  }
  return out;
}

double unconditionality_estimate(const VectorField& f, const AccretiveFn& b,
                                 const ResolvedSystem& rs, int top_level, double p,
                                 int trials, std::uint64_t seed) {
  std::vector<VectorField> diffs;
  VectorField prev = cond_expectation(f, b, rs.k_lo(), rs); // identity on resolved f
  for (int k = rs.k_lo() + 1; k <= top_level; ++k) {
    VectorField cur = cond_expectation(f, b, k, rs);
    VectorField d = prev;
    d -= cur;
    diffs.push_back(std::move(d));
    prev = std::move(cur);
  }
  const auto& m = rs.measure();
  double fnorm = lp_norm(f, m.weights, p);
  if (fnorm == 0) return 0;
  double worst = 0;
  for (int t = 0; t < trials; ++t) {
    Rng rng = Rng::substream(seed, t);
    VectorField sum(f.atoms(), f.space, p);
    for (const auto& d : diffs) {
      double sgn = rng.sign();
      for (size_t i = 0; i < sum.data.size(); ++i) sum.data[i] += sgn * d.data[i];
    }
    worst = std::max(worst, lp_norm(sum, m.weights, p) / fnorm);
  }
  return worst;
}

} // namespace tblab

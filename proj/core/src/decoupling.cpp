#include "tblab/decoupling.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "tblab/errors.hpp"

namespace tblab {
namespace {

constexpr int kMaxExactLevels = 12;
constexpr double kDefectTolerance = 1e-8;
constexpr long long kMaxExactResample = 50'000'000; // sign-pattern x chain-config budget
constexpr int kSampledSignPatterns = 4096;          // L^2 sign sampling above 12 vectors

double safe_ratio(double num, double den) {
  if (den > 0) return num / den;
  return num > 0 ? std::numeric_limits<double>::infinity() : 0.0;
}

void require_finite_exponent(double p) {
  if (!(p >= 1.0) || std::isinf(p))
    throw ConfigError("the randomized norms need an exponent in [1, inf)");
}

int coeff_dim(const PartitionSystem& sys) { return sys.f.at(0).at(0).space.m; }

/// atom -> set index maps, one per level.
std::vector<std::vector<int>> owner_maps(const PartitionSystem& sys) {
  const int n = sys.measure->atoms();
  std::vector<std::vector<int>> owner(sys.levels.size(), std::vector<int>(n, -1));
  for (size_t k = 0; k < sys.levels.size(); ++k)
    for (size_t a = 0; a < sys.levels[k].sets.size(); ++a)
      for (int i : sys.levels[k].sets[a].atoms) owner[k][i] = static_cast<int>(a);
  return owner;
}

/// Overlaid per-level sums sum_A f_A (disjoint supports), flattened n x m.
std::vector<std::vector<cplx>> level_sums(const PartitionSystem& sys) {
  const int n = sys.measure->atoms();
  const int m = coeff_dim(sys);
  std::vector<std::vector<cplx>> out(sys.levels.size(),
                                     std::vector<cplx>((size_t)n * m));
  for (size_t k = 0; k < sys.levels.size(); ++k)
    for (size_t a = 0; a < sys.levels[k].sets.size(); ++a)
      for (int i : sys.levels[k].sets[a].atoms) {
        const cplx* fi = sys.f[k][a].at(i);
        for (int c = 0; c < m; ++c) out[k][(size_t)i * m + c] += fi[c];
      }
  return out;
}

/// Mean over all sign patterns of integral ||sum_k eps_k terms_k||^p dmu.
double exact_sign_mean(const std::vector<std::vector<cplx>>& terms, SpaceSpec sp,
                       double p, std::span<const double> w) {
  const int nlev = (int)terms.size();
  const int m = sp.m;
  const size_t n = terms.empty() ? 0 : terms[0].size() / m;
  const int npat = 1 << nlev;
  std::vector<cplx> s(m);
  double acc = 0;
  for (int t = 0; t < npat; ++t) {
    double integ = 0;
    for (size_t i = 0; i < n; ++i) {
      std::fill(s.begin(), s.end(), cplx(0));
      for (int k = 0; k < nlev; ++k) {
        const double sg = ((t >> k) & 1) ? 1.0 : -1.0;
        const cplx* ti = terms[k].data() + i * m;
        for (int c = 0; c < m; ++c) s[c] += sg * ti[c];
      }
      integ += w[i] * std::pow(x_norm(sp, s.data()), p);
    }
    acc += integ;
  }
  return acc / npat;
}

/// Integral for one fixed sign pattern.
double one_pattern_integral(const std::vector<std::vector<cplx>>& terms,
                            const std::vector<double>& signs, SpaceSpec sp, double p,
                            std::span<const double> w) {
  const int nlev = (int)terms.size();
  const int m = sp.m;
  const size_t n = terms.empty() ? 0 : terms[0].size() / m;
  std::vector<cplx> s(m);
  double integ = 0;
  for (size_t i = 0; i < n; ++i) {
    std::fill(s.begin(), s.end(), cplx(0));
    for (int k = 0; k < nlev; ++k) {
      const cplx* ti = terms[k].data() + i * m;
      for (int c = 0; c < m; ++c) s[c] += signs[k] * ti[c];
    }
    integ += w[i] * std::pow(x_norm(sp, s.data()), p);
  }
  return integ;
}

/// Weighted in-set atom draw from the normalized restriction.
struct SetSampler {
  std::vector<double> cum; // cumulative weights over the set's atoms
  double mass = 0;
  int draw(const PartitionSet& ps, Rng& rng) const {
    const double u = rng.u01() * mass;
    const auto it = std::upper_bound(cum.begin(), cum.end(), u);
    const size_t idx = std::min((size_t)(it - cum.begin()), ps.atoms.size() - 1);
    return ps.atoms[idx];
  }
};

std::vector<std::vector<SetSampler>> make_samplers(const PartitionSystem& sys) {
  std::vector<std::vector<SetSampler>> out(sys.levels.size());
  for (size_t k = 0; k < sys.levels.size(); ++k)
    for (const auto& ps : sys.levels[k].sets) {
      SetSampler sm;
      double run = 0;
      for (int i : ps.atoms) {
        run += sys.measure->weights[i];
        sm.cum.push_back(run);
      }
      sm.mass = run;
      out[k].push_back(std::move(sm));
    }
  return out;
}

void require_constraint(const PartitionSystem& sys, const char* who) {
  verify_partition_system(sys);
  if (measurability_defect(sys) > kDefectTolerance)
    throw ConfigError(std::string(who) +
                      ": an attached function varies across a finer set, violating "
                      "the constancy constraint");
}

} // namespace

void verify_partition_system(const PartitionSystem& sys) {
  if (!sys.measure) throw ConfigError("partition system has no measure");
  if (sys.levels.empty()) throw ConfigError("partition system has no levels");
  if (sys.f.size() != sys.levels.size())
    throw ConfigError("partition system: function table does not match the levels");
  const int n = sys.measure->atoms();
  int m = -1;
  std::vector<int> seen(n);
  for (size_t k = 0; k < sys.levels.size(); ++k) {
    const auto& lev = sys.levels[k];
    if (lev.sets.empty())
      throw ConfigError("partition level " + std::to_string(k) + " is empty");
    if (sys.f[k].size() != lev.sets.size())
      throw ConfigError("partition level " + std::to_string(k) +
                        ": one function per set required");
    std::fill(seen.begin(), seen.end(), 0);
    for (size_t a = 0; a < lev.sets.size(); ++a) {
      const auto& ps = lev.sets[a];
      if (ps.atoms.empty())
        throw ConfigError("partition set without atoms at level " + std::to_string(k));
      if (!std::is_sorted(ps.atoms.begin(), ps.atoms.end()))
        throw ConfigError("partition set atoms must be ascending");
      double mass = 0;
      for (int i : ps.atoms) {
        if (i < 0 || i >= n) throw ConfigError("partition set atom index out of range");
        if (seen[i]++) throw ConfigError("atom covered twice at level " + std::to_string(k));
        mass += sys.measure->weights[i];
      }
      if (!(mass > 0)) throw ConfigError("partition set with zero mass");
      if (std::abs(mass - ps.mass) > 1e-9 * std::max(1.0, mass))
        throw ConfigError("partition set mass out of sync with the weights");
      const VectorField& fa = sys.f[k][a];
      if (fa.atoms() != n)
        throw ConfigError("attached function has the wrong atom count");
      if (m < 0) m = fa.space.m;
      if (fa.space.m != m)
        throw ConfigError("attached functions disagree on the coefficient dimension");
      std::vector<char> inside(n, 0);
      for (int i : ps.atoms) inside[i] = 1;
      for (int i = 0; i < n; ++i) {
        if (inside[i]) continue;
        const cplx* fi = fa.at(i);
        for (int c = 0; c < m; ++c)
          if (fi[c] != cplx(0))
            throw ConfigError("attached function leaks outside its set at level " +
                              std::to_string(k));
      }
    }
    for (int i = 0; i < n; ++i)
      if (!seen[i])
        throw ConfigError("atom " + std::to_string(i) + " missing from level " +
                          std::to_string(k));
  }
  // nesting: each set lies inside one set of the next (coarser) level
  const auto owner = owner_maps(sys);
  for (size_t k = 0; k + 1 < sys.levels.size(); ++k)
    for (const auto& ps : sys.levels[k].sets) {
      const int o = owner[k + 1][ps.atoms[0]];
      for (int i : ps.atoms)
        if (owner[k + 1][i] != o)
          throw ConfigError("nesting violated between levels " + std::to_string(k) +
                            " and " + std::to_string(k + 1));
    }
}

double measurability_defect(const PartitionSystem& sys) {
  const int m = coeff_dim(sys);
  double scale = 0, worst = 0;
  for (const auto& lev : sys.f)
    for (const auto& fa : lev)
      for (const auto& v : fa.data) scale = std::max(scale, std::abs(v));
  for (size_t k = 1; k < sys.levels.size(); ++k)
    for (const auto& fa : sys.f[k])
      for (const auto& fine : sys.levels[k - 1].sets) {
        const cplx* ref = fa.at(fine.atoms[0]);
        for (int i : fine.atoms) {
          const cplx* fi = fa.at(i);
          for (int c = 0; c < m; ++c)
            worst = std::max(worst, std::abs(fi[c] - ref[c]));
        }
      }
  return scale > 0 ? worst / scale : 0.0;
}

PartitionSystem partition_from_cells(const ResolvedSystem& rs, int k_lo, int k_hi) {
  if (k_lo > k_hi || k_lo < rs.k_lo() || k_hi > rs.k_hi())
    throw ConfigError("requested partition levels lie outside the resolved window");
  PartitionSystem sys;
  sys.measure = &rs.measure();
  const int n = rs.measure().atoms();
  for (int k = k_lo; k <= k_hi; ++k) {
    PartitionLevel lev;
    std::vector<VectorField> fs;
    for (int c = 0; c < rs.cell_count(k); ++c) {
      const auto& cell = rs.cell(k, c);
      PartitionSet ps;
      const auto atoms = rs.atoms_of(k, cell);
      ps.atoms.assign(atoms.begin(), atoms.end());
      std::sort(ps.atoms.begin(), ps.atoms.end());
      ps.mass = cell.mass;
      lev.sets.push_back(std::move(ps));
      fs.emplace_back(n, SpaceSpec{2.0, 1});
    }
    sys.levels.push_back(std::move(lev));
    sys.f.push_back(std::move(fs));
  }
  return sys;
}

void attach_random_functions(PartitionSystem& sys, SpaceSpec sp, Rng& rng,
                             bool constant_sets) {
  if (!sys.measure || sys.levels.empty())
    throw ConfigError("cannot attach functions to an empty system");
  const int n = sys.measure->atoms();
  sys.f.assign(sys.levels.size(), {});
  auto gauss = [&rng] { return cplx(rng.normal(), rng.normal()); };
  for (size_t k = 0; k < sys.levels.size(); ++k) {
    for (const auto& ps : sys.levels[k].sets) {
      VectorField fa(n, sp);
      if (constant_sets) {
        std::vector<cplx> v(sp.m);
        for (auto& x : v) x = gauss();
        for (int i : ps.atoms)
          for (int c = 0; c < sp.m; ++c) fa.at(i)[c] = v[c];
      } else if (k == 0) {
        for (int i : ps.atoms)
          for (int c = 0; c < sp.m; ++c) fa.at(i)[c] = gauss();
      } else {
        // one value per finer set inside this one
        for (const auto& fine : sys.levels[k - 1].sets) {
          if (!std::binary_search(ps.atoms.begin(), ps.atoms.end(), fine.atoms[0]))
            continue;
          std::vector<cplx> v(sp.m);
          for (auto& x : v) x = gauss();
          for (int i : fine.atoms)
            for (int c = 0; c < sp.m; ++c) fa.at(i)[c] = v[c];
        }
      }
      sys.f[k].push_back(std::move(fa));
    }
  }
}

TangentReport tangent_equivalence(const PartitionSystem& sys, double p, int trials,
                                  Rng& rng) {
  require_finite_exponent(p);
  require_constraint(sys, "the decoupled comparison");
  const AtomicMeasure& mu = *sys.measure;
  const int n = mu.atoms();
  const int m = coeff_dim(sys);
  const SpaceSpec sp = sys.f[0][0].space;
  const int nlev = (int)sys.levels.size();
  const auto w = std::span<const double>(mu.weights);
  const auto owner = owner_maps(sys);
  const auto sums = level_sums(sys);

  TangentReport rep;
  if (trials <= 0) {
    if (nlev > kMaxExactLevels)
      throw ConfigError("exact sign enumeration is limited to 12 levels; got " +
                        std::to_string(nlev));
    rep.exact_signs = rep.exact_resample = true;
    const double lhs_mean = exact_sign_mean(sums, sp, p, w);

    // budget: per atom, every joint choice along its chain of sets
    long long work = 0;
    for (int i = 0; i < n; ++i) {
      long long prod = 1;
      for (int k = 0; k < nlev; ++k)
        prod *= (long long)sys.levels[k].sets[owner[k][i]].atoms.size();
      work += prod << nlev;
      if (work > kMaxExactResample)
        throw ConfigError("exact resampling budget exceeded; use sampling");
    }

    double rhs_mean = 0;
    std::vector<int> digit(nlev), pick(nlev);
    std::vector<std::vector<cplx>> vals(nlev, std::vector<cplx>(m));
    std::vector<cplx> s(m);
    for (int i = 0; i < n; ++i) {
      std::fill(digit.begin(), digit.end(), 0);
      double atom_acc = 0;
      while (true) {
        double weight = 1;
        for (int k = 0; k < nlev; ++k) {
          const auto& ps = sys.levels[k].sets[owner[k][i]];
          const int y = ps.atoms[digit[k]];
          weight *= mu.weights[y] / ps.mass;
          const cplx* fy = sys.f[k][owner[k][i]].at(y);
          for (int c = 0; c < m; ++c) vals[k][c] = fy[c];
        }
        double sign_acc = 0;
        const int npat = 1 << nlev;
        for (int t = 0; t < npat; ++t) {
          std::fill(s.begin(), s.end(), cplx(0));
          for (int k = 0; k < nlev; ++k) {
            const double sg = ((t >> k) & 1) ? 1.0 : -1.0;
            for (int c = 0; c < m; ++c) s[c] += sg * vals[k][c];
          }
          sign_acc += std::pow(x_norm(sp, s.data()), p);
        }
        atom_acc += weight * sign_acc / npat;
        int k = 0;
        while (k < nlev) {
          if (++digit[k] < (int)sys.levels[k].sets[owner[k][i]].atoms.size()) break;
          digit[k++] = 0;
        }
        if (k == nlev) break;
      }
      rhs_mean += w[i] * atom_acc;
    }
    rep.lhs = std::pow(lhs_mean, 1.0 / p);
    rep.rhs = std::pow(rhs_mean, 1.0 / p);
    rep.ratio = safe_ratio(rep.lhs, rep.rhs);
    return rep;
  }

  rep.exact_signs = nlev <= kMaxExactLevels;
  const auto samplers = make_samplers(sys);
  const std::uint64_t base = rng.next_u64();
  const double lhs_exact = rep.exact_signs ? exact_sign_mean(sums, sp, p, w) : 0.0;

  std::vector<std::vector<cplx>> dec(nlev, std::vector<cplx>((size_t)n * m));
  std::vector<double> signs(nlev);
  double lhs_acc = 0, rhs_acc = 0, rhs_sq = 0, lhs_sq = 0;
  for (int t = 0; t < trials; ++t) {
    Rng tr = Rng::substream(base, (std::uint64_t)t);
    if (!rep.exact_signs)
      for (int k = 0; k < nlev; ++k) signs[k] = (double)tr.sign();
    for (int k = 0; k < nlev; ++k) {
      auto& dk = dec[k];
      for (size_t a = 0; a < sys.levels[k].sets.size(); ++a) {
        const auto& ps = sys.levels[k].sets[a];
        const int y = samplers[k][a].draw(ps, tr);
        const cplx* fy = sys.f[k][a].at(y);
        for (int i : ps.atoms)
          for (int c = 0; c < m; ++c) dk[(size_t)i * m + c] = fy[c];
      }
    }
    double rhs_t, lhs_t;
    if (rep.exact_signs) {
      rhs_t = exact_sign_mean(dec, sp, p, w);
      lhs_t = lhs_exact;
    } else {
      rhs_t = one_pattern_integral(dec, signs, sp, p, w);
      lhs_t = one_pattern_integral(sums, signs, sp, p, w);
    }
    rhs_acc += rhs_t;
    rhs_sq += rhs_t * rhs_t;
    lhs_acc += lhs_t;
    lhs_sq += lhs_t * lhs_t;
  }
  const double rhs_mean = rhs_acc / trials;
  const double lhs_mean = lhs_acc / trials;
  rep.lhs = std::pow(lhs_mean, 1.0 / p);
  rep.rhs = std::pow(rhs_mean, 1.0 / p);
  rep.ratio = safe_ratio(rep.lhs, rep.rhs);
  if (trials > 1 && rhs_mean > 0 && lhs_mean > 0) {
    const double var_r = std::max(0.0, rhs_sq / trials - rhs_mean * rhs_mean);
    const double var_l =
        rep.exact_signs ? 0.0 : std::max(0.0, lhs_sq / trials - lhs_mean * lhs_mean);
    const double rel_r = std::sqrt(var_r / trials) / (p * rhs_mean);
    const double rel_l = std::sqrt(var_l / trials) / (p * lhs_mean);
    rep.std_error = rep.ratio * std::sqrt(rel_r * rel_r + rel_l * rel_l);
  }
  return rep;
}

AveragingKernels constant_kernels(const PartitionSystem& sys, cplx value) {
  if (std::abs(value) > 1.0 + 1e-12)
    throw ConfigError("constant kernel value exceeds the unit bound");
  AveragingKernels ks;
  for (const auto& lev : sys.levels) {
    std::vector<std::vector<cplx>> row;
    for (const auto& ps : lev.sets)
      row.emplace_back(ps.atoms.size() * ps.atoms.size(), value);
    ks.tables.push_back(std::move(row));
  }
  return ks;
}

AveragingKernels sign_kernels(const PartitionSystem& sys, Rng& rng) {
  AveragingKernels ks;
  for (const auto& lev : sys.levels) {
    std::vector<std::vector<cplx>> row;
    for (const auto& ps : lev.sets) {
      std::vector<cplx> t(ps.atoms.size() * ps.atoms.size());
      for (auto& v : t) v = cplx((double)rng.sign(), 0.0);
      row.push_back(std::move(t));
    }
    ks.tables.push_back(std::move(row));
  }
  return ks;
}

double averaged_kernel_bound(const PartitionSystem& sys, const AveragingKernels& ks,
                             double p, int trials, Rng& rng) {
  require_finite_exponent(p);
  require_constraint(sys, "the averaged-kernel bound");
  if (ks.tables.size() != sys.levels.size())
    throw ConfigError("kernel tables do not match the partition levels");
  const AtomicMeasure& mu = *sys.measure;
  const int n = mu.atoms();
  const int m = coeff_dim(sys);
  const SpaceSpec sp = sys.f[0][0].space;
  const int nlev = (int)sys.levels.size();
  const auto w = std::span<const double>(mu.weights);

  std::vector<std::vector<cplx>> avg(nlev, std::vector<cplx>((size_t)n * m));
  for (int k = 0; k < nlev; ++k) {
    if (ks.tables[k].size() != sys.levels[k].sets.size())
      throw ConfigError("kernel tables do not match the sets of level " +
                        std::to_string(k));
    for (size_t a = 0; a < sys.levels[k].sets.size(); ++a) {
      const auto& ps = sys.levels[k].sets[a];
      const auto& table = ks.tables[k][a];
      const size_t sz = ps.atoms.size();
      if (table.size() != sz * sz)
        throw ConfigError("kernel table has the wrong shape at level " +
                          std::to_string(k));
      for (const cplx& v : table)
        if (std::abs(v) > 1.0 + 1e-12)
          throw ConfigError("kernel entry exceeds the unit bound");
      for (size_t r = 0; r < sz; ++r) {
        const int i = ps.atoms[r];
        cplx* out = avg[k].data() + (size_t)i * m;
        for (size_t cidx = 0; cidx < sz; ++cidx) {
          const int j = ps.atoms[cidx];
          const cplx kv = table[r * sz + cidx] * (mu.weights[j] / ps.mass);
          const cplx* fj = sys.f[k][a].at(j);
          for (int c = 0; c < m; ++c) out[c] += kv * fj[c];
        }
      }
    }
  }

  const auto sums = level_sums(sys);
  if (nlev <= kMaxExactLevels) {
    const double num = exact_sign_mean(avg, sp, p, w);
    const double den = exact_sign_mean(sums, sp, p, w);
    return safe_ratio(std::pow(num, 1.0 / p), std::pow(den, 1.0 / p));
  }
  if (trials <= 0)
    throw ConfigError("sign sampling needs a positive trial count above 12 levels");
  const std::uint64_t base = rng.next_u64();
  std::vector<double> signs(nlev);
  double num_acc = 0, den_acc = 0;
  for (int t = 0; t < trials; ++t) {
    Rng tr = Rng::substream(base, (std::uint64_t)t);
    for (int k = 0; k < nlev; ++k) signs[k] = (double)tr.sign();
    num_acc += one_pattern_integral(avg, signs, sp, p, w);
    den_acc += one_pattern_integral(sums, signs, sp, p, w);
  }
  return safe_ratio(std::pow(num_acc / trials, 1.0 / p),
                    std::pow(den_acc / trials, 1.0 / p));
}

LinearMap identity_map(int m) {
  LinearMap t;
  t.m = m;
  t.a.assign((size_t)m * m, cplx(0));
  for (int i = 0; i < m; ++i) t.a[(size_t)i * m + i] = 1.0;
  return t;
}

LinearMap scalar_map(int m, cplx lambda) {
  LinearMap t = identity_map(m);
  for (auto& v : t.a) v *= lambda;
  return t;
}

LinearMap diagonal_map(const std::vector<cplx>& d) {
  LinearMap t;
  t.m = (int)d.size();
  t.a.assign((size_t)t.m * t.m, cplx(0));
  for (int i = 0; i < t.m; ++i) t.a[(size_t)i * t.m + i] = d[i];
  return t;
}

namespace {

void map_apply(const LinearMap& t, const cplx* x, cplx* out) {
  for (int r = 0; r < t.m; ++r) {
    cplx s = 0;
    const cplx* row = t.a.data() + (size_t)r * t.m;
    for (int c = 0; c < t.m; ++c) s += row[c] * x[c];
    out[r] = s;
  }
}

/// L^2(signs; X) norm of sum_k eps_k v_k; exact for <= 12 vectors.
double sign_l2(const std::vector<std::vector<cplx>>& vs, SpaceSpec sp,
               std::uint64_t substream_base) {
  const int nv = (int)vs.size();
  const int m = sp.m;
  std::vector<cplx> s(m);
  double acc = 0;
  if (nv <= kMaxExactLevels) {
    const int npat = 1 << nv;
    for (int t = 0; t < npat; ++t) {
      std::fill(s.begin(), s.end(), cplx(0));
      for (int k = 0; k < nv; ++k) {
        const double sg = ((t >> k) & 1) ? 1.0 : -1.0;
        for (int c = 0; c < m; ++c) s[c] += sg * vs[k][c];
      }
      const double x = x_norm(sp, s.data());
      acc += x * x;
    }
    return std::sqrt(acc / npat);
  }
  Rng tr(substream_base);
  for (int t = 0; t < kSampledSignPatterns; ++t) {
    std::fill(s.begin(), s.end(), cplx(0));
    for (int k = 0; k < nv; ++k) {
      const double sg = (double)tr.sign();
      for (int c = 0; c < m; ++c) s[c] += sg * vs[k][c];
    }
    const double x = x_norm(sp, s.data());
    acc += x * x;
  }
  return std::sqrt(acc / kSampledSignPatterns);
}

} // namespace

double rbound_estimate(const std::vector<LinearMap>& family, SpaceSpec sp,
                       int n_vectors, int trials, Rng& rng) {
  if (family.empty()) throw ConfigError("the operator family must not be empty");
  if (n_vectors < 1) throw ConfigError("at least one vector per tuple required");
  const int m = sp.m;
  for (const auto& t : family)
    if (t.m != m || (int)t.a.size() != m * m)
      throw ConfigError("family maps must act on the given coefficient space");

  double best = 0;
  // singletons: each map on each basis vector (unit norm in every l^q)
  std::vector<cplx> e(m), te(m);
  for (const auto& t : family)
    for (int i = 0; i < m; ++i) {
      std::fill(e.begin(), e.end(), cplx(0));
      e[i] = 1.0;
      map_apply(t, e.data(), te.data());
      best = std::max(best, x_norm(sp, te.data()));
    }

  const std::uint64_t base = rng.next_u64();
  std::vector<std::vector<cplx>> xs(n_vectors, std::vector<cplx>(m));
  std::vector<std::vector<cplx>> txs(n_vectors, std::vector<cplx>(m));
  for (int trial = 0; trial < trials; ++trial) {
    Rng tr = Rng::substream(base, (std::uint64_t)trial);
    for (auto& x : xs)
      for (auto& v : x) v = cplx(tr.normal(), tr.normal());
    const double den = sign_l2(xs, sp, base ^ (std::uint64_t)trial);
    if (den < 1e-300) continue; // degenerate tuple: no ratio to take
    // one random assignment, then every constant assignment
    for (int k = 0; k < n_vectors; ++k) {
      const auto& t = family[tr.below((std::uint64_t)family.size())];
      map_apply(t, xs[k].data(), txs[k].data());
    }
    best = std::max(best, sign_l2(txs, sp, base ^ (std::uint64_t)trial) / den);
    for (const auto& t : family) {
      for (int k = 0; k < n_vectors; ++k) map_apply(t, xs[k].data(), txs[k].data());
      best = std::max(best, sign_l2(txs, sp, base ^ (std::uint64_t)trial) / den);
    }
  }
  return best;
}

} // namespace tblab

#include "tblab/measure.hpp"
#include "tblab/errors.hpp"
#include "tblab/rng.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

namespace tblab {

double AtomicMeasure::total_mass() const {
  return std::accumulate(weights.begin(), weights.end(), 0.0);
}

Box AtomicMeasure::bounding_box() const {
  Box b; b.dim = dim;
  for (int i = 0; i < dim; ++i) { b.lo[i] = INFINITY; b.hi[i] = -INFINITY; }
  for (const auto& p : points)
    for (int i = 0; i < dim; ++i) {
      b.lo[i] = std::min(b.lo[i], p[i]);
      b.hi[i] = std::max(b.hi[i], p[i]);
    }
  return b;
}

double AtomicMeasure::diameter() const {
  // diameter of the bounding box dominates the atom-set diameter and is
  // cheap; growth scans only need an upper cutoff radius
  Box b = bounding_box();
  double s = 0;
  for (int i = 0; i < dim; ++i) s += b.side(i) * b.side(i);
  return std::sqrt(s);
}

double AtomicMeasure::min_separation() const {
  double best = INFINITY;
  const int n = atoms();
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      best = std::min(best, dist2(points[i], points[j], dim));
  return n > 1 ? std::sqrt(best) : 0.0;
}

cplx integrate_scalar(const AtomicMeasure& m, std::span<const cplx> values) {
  cplx s = 0;
  for (int i = 0; i < m.atoms(); ++i) s += values[i] * m.weights[i];
  return s;
}

cplx integrate_scalar(const AtomicMeasure& m, std::span<const cplx> values, const Box& region) {
  cplx s = 0;
  for (int i = 0; i < m.atoms(); ++i)
    if (region.contains(m.points[i])) s += values[i] * m.weights[i];
  return s;
}

std::vector<cplx> integrate(const AtomicMeasure& m, const VectorField& f) {
  std::vector<cplx> out(f.space.m, cplx(0));
  for (int i = 0; i < m.atoms(); ++i)
    for (int c = 0; c < f.space.m; ++c) out[c] += f.at(i)[c] * m.weights[i];
  return out;
}

std::vector<cplx> integrate(const AtomicMeasure& m, const VectorField& f, const Box& region) {
  std::vector<cplx> out(f.space.m, cplx(0));
  for (int i = 0; i < m.atoms(); ++i)
    if (region.contains(m.points[i]))
      for (int c = 0; c < f.space.m; ++c) out[c] += f.at(i)[c] * m.weights[i];
  return out;
}

GrowthReport growth_check(const AtomicMeasure& m, double d, double r_min, int max_centers) {
  GrowthReport rep;
  const int n = m.atoms();
  if (n == 0) return rep;
  const double r_max = std::max(m.diameter(), r_min);

  std::vector<int> centers;
  if (max_centers < 0 || max_centers >= n) {
    centers.resize(n);
    std::iota(centers.begin(), centers.end(), 0);
    rep.exhaustive = true;
  } else {
    // deterministic stride subsample; no RNG so reports are reproducible
    int stride = std::max(1, n / max_centers);
    for (int i = 0; i < n; i += stride) centers.push_back(i);
  }
  rep.centers_checked = static_cast<int>(centers.size());

  std::vector<std::pair<double, double>> dm(n); // (ball diameter to include atom, weight)
  for (int ci : centers) {
    for (int j = 0; j < n; ++j)
      dm[j] = {2.0 * dist(m.points[ci], m.points[j], m.dim), m.weights[j]};
    std::sort(dm.begin(), dm.end());

    // Sweep radii upward, sampling exactly at the mass jumps: the open ball
    // of diameter r = D still excludes an atom at distance D/2, so the value
    // at each sampled radius is attained (not a one-sided limit).  Between
    // jumps the ratio only decreases, so the jump radii and r_min dominate
    // the sampled family.
    double mass = 0;
    size_t j = 0;
    // mass strictly inside at r = r_min
    while (j < dm.size() && dm[j].first < r_min) mass += dm[j++].second;
    auto consider = [&](double r, double mass_at) {
      if (r < r_min || r > r_max || r <= 0) return;
      double ratio = mass_at / std::pow(r, d);
      if (ratio > rep.worst_ratio) {
        rep.worst_ratio = ratio;
        rep.worst_center = ci;
        rep.worst_radius = r;
      }
    };
    consider(r_min, mass);
    while (j < dm.size()) {
      double D = dm[j].first;
      if (D > r_min) consider(D, mass);
      double add = 0;
      while (j < dm.size() && dm[j].first == D) add += dm[j++].second;
      mass += add;
    }
  }
  return rep;
}

AccretivityReport accretivity_check(const AtomicMeasure& m, const AccretiveFn& b,
                                    const std::vector<Box>& cubes) {
  AccretivityReport rep;
  rep.min_ratio = INFINITY;
  for (cplx v : b.values) rep.sup_norm = std::max(rep.sup_norm, std::abs(v));
  int idx = 0;
  for (const auto& q : cubes) {
    cplx ib = 0;
    double mass = 0;
    for (int i = 0; i < m.atoms(); ++i)
      if (q.contains(m.points[i])) {
        ib += b.values[i] * m.weights[i];
        mass += m.weights[i];
      }
    if (mass > 0) {
      double ratio = std::abs(ib) / mass;
      if (ratio < rep.min_ratio) { rep.min_ratio = ratio; rep.worst_cube = idx; }
      ++rep.cubes_checked;
    }
    ++idx;
  }
  if (rep.cubes_checked == 0) rep.min_ratio = 0.0;
  return rep;
}

AtomicMeasure lebesgue_grid(int dim, int k) {
  if (dim < 1 || dim > kMaxDim || k < 0 || k > 20)
    throw ConfigError("lebesgue_grid: dim in [1,3], k in [0,20] required");
  AtomicMeasure m;
  m.dim = dim;
  m.growth_d = dim;
  m.kind = "lebesgue_grid";
  const int side = 1 << k;
  const double h = 1.0 / side, w = std::pow(h, dim);
  m.r_min = h;
  IVec idx{};
  const long total = static_cast<long>(std::pow(side, dim));
  for (long t = 0; t < total; ++t) {
    Vec p{};
    long rest = t;
    for (int i = 0; i < dim; ++i) { idx[i] = rest % side; rest /= side; }
    for (int i = 0; i < dim; ++i) p[i] = (idx[i] + 0.5) * h;
    m.points.push_back(p);
    m.weights.push_back(w);
  }
  return m;
}

AtomicMeasure cantor_measure(double ratio, int depth) {
  if (!(ratio > 0 && ratio <= 0.5) || depth < 0 || depth > 20)
    throw ConfigError("cantor: ratio in (0,1/2], depth in [0,20] required");
  AtomicMeasure m;
  m.dim = 1;
  m.growth_d = std::log(2.0) / std::log(1.0 / ratio);
  m.kind = "cantor";
  const double piece = std::pow(ratio, depth);
  m.r_min = piece;
  const long n = 1L << depth;
  const double w = std::pow(0.5, depth);
  for (long t = 0; t < n; ++t) {
    double x = 0, scale = 1;
    for (int i = 0; i < depth; ++i) {
      if ((t >> (depth - 1 - i)) & 1) x += (1.0 - ratio) * scale;
      scale *= ratio;
    }
    m.points.push_back(make_vec(x + piece / 2));
    m.weights.push_back(w);
  }
  return m;
}

AtomicMeasure graph_arclength(int k) {
  if (k < 0 || k > 20) throw ConfigError("graph_arclength: k in [0,20] required");
  AtomicMeasure m;
  m.dim = 2;
  m.growth_d = 1.0;
  m.kind = "graph_arclength";
  const long n = 1L << k;
  const double dx = 2.0 / n, w = dx * std::sqrt(2.0);
  m.r_min = 2.0 * w; // two arclength steps, so a native ball can hold a neighbor
  for (long i = 0; i < n; ++i) {
    double x = -1.0 + (i + 0.5) * dx;
    m.points.push_back(make_vec(x, std::abs(x)));
    m.weights.push_back(w);
  }
  return m;
}

AtomicMeasure custom_measure(std::vector<Vec> points, std::vector<double> weights,
                             int dim, double growth_d) {
  if (points.size() != weights.size() || points.empty())
    throw ConfigError("custom_measure: points/weights size mismatch or empty");
  if (dim < 1 || dim > kMaxDim) throw ConfigError("custom_measure: bad dim");
  AtomicMeasure m;
  m.dim = dim;
  m.growth_d = growth_d;
  m.kind = "custom";
  m.points = std::move(points);
  m.weights = std::move(weights);
  for (double w : m.weights)
    if (!(w >= 0) || !std::isfinite(w)) throw ConfigError("custom_measure: bad weight");
  m.r_min = m.min_separation();
  return m;
}

AtomicMeasure build_measure(const nlohmann::json& spec) {
  if (!spec.is_object() || !spec.contains("kind"))
    throw ConfigError("measure spec must be an object with \"kind\"");
  const std::string kind = spec.at("kind").get<std::string>();
  try {
    if (kind == "lebesgue_grid")
      return lebesgue_grid(spec.value("dim", 1), spec.at("k").get<int>());
    if (kind == "cantor")
      return cantor_measure(spec.at("ratio").get<double>(), spec.at("depth").get<int>());
    if (kind == "graph_arclength")
      return graph_arclength(spec.at("k").get<int>());
    if (kind == "custom") {
      std::vector<Vec> pts;
      for (const auto& row : spec.at("points")) {
        Vec v{};
        int i = 0;
        for (const auto& c : row) v[i++] = c.get<double>();
        pts.push_back(v);
      }
      std::vector<double> ws = spec.at("weights").get<std::vector<double>>();
      int dim = spec.value("dim", pts.empty() ? 1 : static_cast<int>(spec["points"][0].size()));
      return custom_measure(std::move(pts), std::move(ws), dim,
                            spec.value("growth_d", 1.0));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("measure spec: ") + e.what());
  }
  throw ConfigError("unknown measure kind: " + kind);
}

AccretiveFn build_accretive(const nlohmann::json& spec, const AtomicMeasure& m) {
  AccretiveFn b;
  const std::string kind = spec.is_object() ? spec.value("kind", "one") : "one";
  b.values.assign(m.atoms(), cplx(1));
  if (kind == "one") {
    b.delta = 1.0;
  } else if (kind == "exp") {
    // b(x) = exp(i*omega*x_axis): |b| = 1; averages stay bounded below as
    // long as the phase spread omega * side over the support stays under pi
    const double omega = spec.value("omega", 0.5);
    const int axis = spec.value("axis", 0);
    if (axis < 0 || axis >= m.dim) throw ConfigError("accretive exp: bad axis");
    Box bb = m.bounding_box();
    double spread = std::abs(omega) * bb.side(axis);
    if (spread >= 3.0)
      throw ConfigError("accretive exp: phase spread too large for a uniform lower bound");
    for (int i = 0; i < m.atoms(); ++i)
      b.values[i] = std::exp(cplx(0, omega * m.points[i][axis]));
    // all phases lie in an arc of width `spread`, so after rotating the arc
    // onto the real axis every cube average has real part >= cos(spread/2);
    // this holds for any sub-measure, unlike the sinc value of a solid
    // interval which midpoint discretizations can undercut
    b.delta = std::cos(spread / 2);
  } else if (kind == "perturbed") {
    // b = (1 + a e^{i theta(x)}) / (1 + a), random phases: any average lies
    // within a/(1+a) of 1/(1+a)... giving delta = (1-a)/(1+a)
    const double a = spec.value("amp", 0.3);
    if (!(a >= 0 && a < 1)) throw ConfigError("accretive perturbed: amp in [0,1) required");
    Rng rng(spec.value("seed", 17));
    for (int i = 0; i < m.atoms(); ++i) {
      double th = rng.uniform(0, 6.283185307179586477);
      b.values[i] = (cplx(1) + a * std::exp(cplx(0, th))) / (1.0 + a);
    }
    b.delta = (1.0 - a) / (1.0 + a);
  } else {
    throw ConfigError("unknown accretive kind: " + kind);
  }
  double sup = 0;
  for (cplx v : b.values) sup = std::max(sup, std::abs(v));
  if (sup > 1.0) {
    for (auto& v : b.values) v /= sup;
    b.delta /= sup;
    b.normalization = sup;
  }
  return b;
}

std::string measure_to_csv(const AtomicMeasure& m) {
  std::ostringstream os;
  os.precision(17);
  for (int i = 0; i < m.dim; ++i) os << "x" << i << ",";
  os << "weight\n";
  for (int i = 0; i < m.atoms(); ++i) {
    for (int c = 0; c < m.dim; ++c) os << m.points[i][c] << ",";
    os << m.weights[i] << "\n";
  }
  return os.str();
}

AtomicMeasure measure_from_csv(const std::string& csv, double growth_d) {
  std::istringstream is(csv);
  std::string line;
  if (!std::getline(is, line)) throw ConfigError("empty CSV");
  int dim = static_cast<int>(std::count(line.begin(), line.end(), ',')); // header: x0..x{d-1},weight
  if (dim < 1 || dim > kMaxDim) throw ConfigError("CSV header must be x0..x{d-1},weight");
  std::vector<Vec> pts;
  std::vector<double> ws;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    Vec p{};
    for (int c = 0; c < dim; ++c) {
      if (!std::getline(ls, cell, ',')) throw ConfigError("short CSV row");
      p[c] = std::stod(cell);
    }
    if (!std::getline(ls, cell, ',')) throw ConfigError("short CSV row");
    pts.push_back(p);
    ws.push_back(std::stod(cell));
  }
  return custom_measure(std::move(pts), std::move(ws), dim, growth_d);
}

} // namespace tblab

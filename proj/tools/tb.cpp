// tb — command-line front end for the dyadic pairing toolkit.
//
// Subcommands cover the main library entry points: full experiment runs,
// pairing expansion and regime tables, badness frequency checks, paraproduct
// extraction, Haar identity sweeps, tangent decoupling, and the oscillation
// norm equivalence.  Exit codes: 0 when every check passes, 1 on
// configuration errors, 2 when a numerical assertion fails.

#include "CLI11.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tblab/carleson.hpp"
#include "tblab/decoupling.hpp"
#include "tblab/dyadic.hpp"
#include "tblab/errors.hpp"
#include "tblab/estimator.hpp"
#include "tblab/haar.hpp"
#include "tblab/kernel.hpp"
#include "tblab/measure.hpp"

namespace {

using nlohmann::json;
using namespace tblab;

constexpr int kExitPass = 0;
constexpr int kExitConfig = 1;
constexpr int kExitAssert = 2;

json complex_json(cplx z) { return json::array({z.real(), z.imag()}); }

/// Reads a JSON document from a path; a literal object string is accepted as
/// a convenience for one-off invocations.
json load_json_arg(const std::string& arg) {
  std::ifstream is(arg);
  if (is) {
    try {
      return json::parse(is);
    } catch (const json::exception& e) {
      throw ConfigError(arg + ": " + e.what());
    }
  }
  if (!arg.empty() && arg.front() == '{') {
    try {
      return json::parse(arg);
    } catch (const json::exception& e) {
      throw ConfigError(std::string("inline JSON: ") + e.what());
    }
  }
  throw ConfigError("cannot open '" + arg + "'");
}

void emit(const std::string& body, const std::string& path) {
  if (path.empty()) {
    std::fwrite(body.data(), 1, body.size(), stdout);
    return;
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot write '" + path + "'");
  os << body;
}

void print_json(const json& j) {
  std::string s = j.dump(2);
  s.push_back('\n');
  std::fwrite(s.data(), 1, s.size(), stdout);
}

// ---------------------------------------------------------------------------
// experiment-backed subcommands (run / expand / regimes / paraproduct)

struct RunFlags {
  std::string config;
  std::string preset;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out;
};

ExperimentConfig resolve_config(const RunFlags& fl) {
  json j;
  if (!fl.config.empty() && !fl.preset.empty())
    throw ConfigError("--config and --preset are mutually exclusive");
  if (!fl.preset.empty()) {
    if (fl.preset != "cantor-cauchy")
      throw ConfigError("unknown preset '" + fl.preset + "' (available: cantor-cauchy)");
    j = cantor_cauchy_preset();
  } else if (!fl.config.empty()) {
    j = load_json_arg(fl.config);
  } else {
    throw ConfigError("one of --config or --preset is required");
  }
  if (fl.seed_set) j["seed"] = fl.seed;
  if (!fl.out.empty()) j["out_dir"] = fl.out;
  return parse_experiment_config(j);
}

/// Same instance as `run` but without the expensive extras, for the
/// subcommands that only need the pair expansion itself.
ExperimentConfig trimmed(ExperimentConfig cfg) {
  cfg.probes = 1;
  cfg.bad_draws = 0;
  cfg.out_dir.clear();
  cfg.svg = false;
  return cfg;
}

int cmd_run(const RunFlags& fl) {
  ExperimentConfig cfg = resolve_config(fl);
  ExperimentResult res = run_experiment(cfg);
  if (cfg.out_dir.empty()) {
    print_json(res.summary);
  } else {
    std::printf("wrote %s/{summary.json,cells.csv,decay.csv%s}\n", cfg.out_dir.c_str(),
                cfg.svg ? ",decay.svg" : "");
    std::printf("rel_err_expand %.3g  rel_err_cells %.3g  op_norm %.6g  pass %d\n",
                res.report.rel_err_expand, res.report.rel_err_cells, res.report.op_norm,
                res.pass ? 1 : 0);
  }
  return res.pass ? kExitPass : kExitAssert;
}

int cmd_expand(const RunFlags& fl) {
  ExperimentResult res = run_experiment(trimmed(resolve_config(fl)));
  json out = {{"window", res.summary.at("window")},
              {"totals", res.summary.at("totals")},
              {"pass", res.pass}};
  print_json(out);
  return res.pass ? kExitPass : kExitAssert;
}

int cmd_regimes(const RunFlags& fl) {
  ExperimentResult res = run_experiment(trimmed(resolve_config(fl)));
  emit(res.cells_csv, fl.out);
  if (!fl.out.empty())
    std::printf("wrote %s  (%d cells, rel_err_cells %.3g)\n", fl.out.c_str(),
                static_cast<int>(res.report.cells.size()), res.report.rel_err_cells);
  return res.pass ? kExitPass : kExitAssert;
}

int cmd_paraproduct(const RunFlags& fl) {
  ExperimentResult res = run_experiment(trimmed(resolve_config(fl)));
  long long terms = 0;
  int cells = 0;
  for (const auto& [key, stat] : res.report.cells)
    if (key.tag == PairTag::paraproduct_corrected) {
      ++cells;
      terms += stat.count;
    }
  json out = {{"correction", complex_json(res.report.paraproduct_correction)},
              {"cells", cells},
              {"terms", terms},
              {"rel_err_cells", res.report.rel_err_cells},
              {"pass", res.pass}};
  print_json(out);
  return res.pass ? kExitPass : kExitAssert;
}

// ---------------------------------------------------------------------------
// badprob

struct BadprobFlags {
  int dim = 1;
  double alpha = 1.0;
  double d = 1.0;
  int r = 32;
  double gamma = -1.0;
  int trials = 100000;
  std::uint64_t seed = 1;
  int cap = 40;
  int k_fine = -12;
  std::string sweep;
  std::string csv;
};

int cmd_badprob(const BadprobFlags& fl) {
  GoodnessParams gp = GoodnessParams::standard(fl.alpha, fl.d, fl.r);
  if (fl.gamma > 0) gp.gamma = fl.gamma;
  gp.validate();
  BadProbabilityReport rep = bad_probability_mc(fl.dim, gp, fl.trials, fl.seed, fl.cap, fl.k_fine);
  const bool pass = rep.frequency <= rep.analytic_bound + 3.0 * rep.std_error;
  json out = {{"dim", fl.dim},
              {"gamma", gp.gamma},
              {"r", gp.r},
              {"trials", rep.trials},
              {"frequency", rep.frequency},
              {"std_error", rep.std_error},
              {"analytic_bound", rep.analytic_bound},
              {"truncation_tail", rep.truncation_tail},
              {"excess_cap", rep.excess_cap},
              {"pass", pass}};
  print_json(out);

  if (!fl.sweep.empty()) {
    // per-cube classification sweep over a concrete measure
    AtomicMeasure m = build_measure(load_json_arg(fl.sweep));
    auto [lo, hi] = suggest_window(m);
    Rng rng(fl.seed + 1);
    DyadicSystem own(m.dim, ShiftSequence::zero(m.dim, lo, hi));
    ResolvedSystem rs(&m, own, lo, hi);
    GoodnessClassifier cls(&rs.system(), ShiftSequence::random(m.dim, lo, hi + fl.cap, rng),
                           ShiftSequence::random(m.dim, lo - 8, lo, rng), gp, fl.cap);
    std::ostringstream os;
    os << "cube,level,good,min_boundary_distance\n";
    char buf[160];
    for (int lev = lo; lev <= hi; ++lev)
      for (int c = 0; c < rs.cell_count(lev); ++c) {
        const Cube& q = rs.cell(lev, c).cube;
        Box box = rs.realize(q);
        double mind = INFINITY;
        for (int e = gp.r; e <= fl.cap; ++e)
          mind = std::min(mind, cls.hybrid_boundary_distance(box, lev, lev + e));
        std::snprintf(buf, sizeof buf, "%d:%d,%d,%d,%.12g\n", lev, c, lev,
                      cls.is_good(q) ? 1 : 0, mind);
        os << buf;
      }
    emit(os.str(), fl.csv);
    if (!fl.csv.empty()) std::printf("wrote %s\n", fl.csv.c_str());
  }
  return pass ? kExitPass : kExitAssert;
}

// ---------------------------------------------------------------------------
// haar-verify

struct HaarFlags {
  std::string measure;
  std::string b = "{\"kind\":\"one\"}";
  std::uint64_t seed = 1;
  int levels = 8;
  double q = 2.0;
  int m = 1;
  double p = 2.0;
  std::string out;
};

int cmd_haar_verify(const HaarFlags& fl) {
  AtomicMeasure m = build_measure(load_json_arg(fl.measure));
  AccretiveFn b = build_accretive(load_json_arg(fl.b), m);
  auto [lo, hi] = suggest_window(m);
  if (fl.levels < 1) throw ConfigError("--levels must be >= 1");
  const int top = std::min(hi, lo + fl.levels);
  Rng shift_rng(fl.seed);
  DyadicSystem sys(m.dim, ShiftSequence::random(m.dim, lo, top, shift_rng));
  ResolvedSystem rs(&m, sys, lo, top);

  Rng field_rng(fl.seed + 1);
  SpaceSpec sp{fl.q, fl.m};
  VectorField f = random_field(m.atoms(), sp, field_rng, fl.p);
  Decomposition dec = decompose(f, b, rs, top);
  VectorField rec = reconstruct(dec, b, rs);
  rec -= f;
  const double fnorm = lp_norm(f, m.weights, fl.p);
  const double rel = lp_norm(rec, m.weights, fl.p) / std::max(fnorm, 1e-300);

  // identity sweep over every cancellative function of the window
  double max_cancel = 0, max_norm_dev = 0;
  int functions = 0, violations = 0;
  for (int lev = lo + 1; lev <= top; ++lev)
    for (int c = 0; c < rs.cell_count(lev); ++c) {
      const auto& cell = rs.cell(lev, c);
      if (cell.child_end - cell.child_begin < 2) continue;
      std::vector<int> order;
      try {
        order = order_subcubes(rs, lev, c, b, b.delta);
      } catch (const NoValidChild&) {
        ++violations;
        continue;
      }
      for (int u = 1; u < static_cast<int>(order.size()); ++u) {
        HaarFunction phi = build_haar(rs, b, lev, c, u, order);
        HaarNormReport nr = verify_haar_norms(rs, b, phi);
        max_cancel = std::max(max_cancel, std::abs(nr.b_integral));
        max_norm_dev = std::max(max_norm_dev, std::abs(nr.b_square - cplx(1)));
        ++functions;
      }
    }

  if (!fl.out.empty()) {
    std::ostringstream os;
    os << "level";
    for (int a = 0; a < m.dim; ++a) os << ",coord_" << a;
    os << ",u";
    for (int comp = 0; comp < sp.m; ++comp) os << ",re_" << comp << ",im_" << comp;
    os << "\n";
    char buf[64];
    for (const HaarCoefficient& hc : dec.coeffs) {
      const Cube& qc = rs.cell(hc.level, hc.cell).cube;
      os << hc.level;
      for (int a = 0; a < m.dim; ++a) os << ',' << qc.coords[a];
      os << ',' << hc.u;
      for (int comp = 0; comp < sp.m; ++comp) {
        std::snprintf(buf, sizeof buf, ",%.12g,%.12g", hc.value[comp].real(),
                      hc.value[comp].imag());
        os << buf;
      }
      os << "\n";
    }
    emit(os.str(), fl.out);
  }

  const bool pass =
      rel <= 1e-10 && max_cancel <= 1e-12 && max_norm_dev <= 1e-10 && violations == 0;
  json out = {{"atoms", m.atoms()},
              {"window", {{"k_lo", lo}, {"top", top}}},
              {"coefficients", static_cast<int>(dec.coeffs.size())},
              {"reconstruction_rel_err", rel},
              {"cancellative_functions", functions},
              {"max_cancellation", max_cancel},
              {"max_normalization_dev", max_norm_dev},
              {"ordering_violations", violations},
              {"pass", pass}};
  print_json(out);
  return pass ? kExitPass : kExitAssert;
}

// ---------------------------------------------------------------------------
// decouple tangent

struct TangentFlags {
  std::string config;
  int trials = 0;
  double p = 2.0;
  std::uint64_t seed = 1;
};

int cmd_tangent(const TangentFlags& fl) {
  if (fl.config.empty()) throw ConfigError("--config is required");
  json sj = load_json_arg(fl.config);
  if (!sj.is_object()) throw ConfigError("config: object expected");
  if (!sj.contains("measure")) throw ConfigError("config.measure: missing");
  AtomicMeasure m = build_measure(sj.at("measure"));
  const int plevels = sj.value("levels", 4);
  if (plevels < 1 || plevels > 40) throw ConfigError("config.levels: expected 1..40");
  SpaceSpec sp{2.0, 1};
  if (sj.contains("space")) {
    const json& s = sj.at("space");
    sp.q = s.value("q", 2.0);
    sp.m = s.value("m", 1);
    if (!(sp.q >= 1.0) || sp.m < 1) throw ConfigError("config.space: q >= 1 and m >= 1 required");
  }
  const std::string profile = sj.value("profile", "random");
  if (profile != "random" && profile != "constant")
    throw ConfigError("config.profile: 'random' or 'constant' expected");
  const std::uint64_t seed = sj.value("seed", fl.seed);

  // partition ladder: the coarse end of the zero-shift resolution of the measure
  auto [lo, hi] = suggest_window(m);
  DyadicSystem sys(m.dim, ShiftSequence::zero(m.dim, lo, hi));
  ResolvedSystem rs(&m, sys, lo, hi);
  const int k_lo = std::max(lo, hi - (plevels - 1));
  PartitionSystem ps = partition_from_cells(rs, k_lo, hi);
  Rng attach_rng(seed);
  attach_random_functions(ps, sp, attach_rng, profile == "constant");

  if (fl.trials <= 0 && static_cast<int>(ps.levels.size()) > 12)
    throw ConfigError("exact sign enumeration needs <= 12 partition levels; pass --trials");
  Rng eval_rng(Rng::substream(seed, 1));
  TangentReport rep = tangent_equivalence(ps, fl.p, fl.trials, eval_rng);
  const bool pass = std::isfinite(rep.ratio) && rep.ratio > 0;
  json out = {{"lhs", rep.lhs},
              {"rhs", rep.rhs},
              {"ratio", rep.ratio},
              {"stderr", rep.std_error},
              {"exact_signs", rep.exact_signs},
              {"exact_resample", rep.exact_resample},
              {"levels", static_cast<int>(ps.levels.size())},
              {"pass", pass}};
  print_json(out);
  return pass ? kExitPass : kExitAssert;
}

// ---------------------------------------------------------------------------
// jn-test

struct JnFlags {
  int levels = 8;
  int trials = 20;
  std::uint64_t seed = 1;
  int depth = 6;
  std::string out;
};

int cmd_jn_test(const JnFlags& fl) {
  if (fl.levels < 1) throw ConfigError("--levels must be >= 1");
  if (fl.trials < 1) throw ConfigError("--trials must be >= 1");
  if (fl.depth < 1 || fl.depth > 12) throw ConfigError("--depth: expected 1..12");
  AtomicMeasure m = cantor_measure(0.25, fl.depth);
  auto [lo, hi] = suggest_window(m);
  DyadicSystem sys(m.dim, ShiftSequence::zero(m.dim, lo, hi));
  ResolvedSystem rs(&m, sys, lo, hi);
  const int seq_hi = hi;
  const int seq_lo = std::max(lo + 1, hi - fl.levels + 1);

  std::vector<CarlesonSequence> instances;
  instances.reserve(fl.trials);
  for (int t = 0; t < fl.trials; ++t) {
    Rng sub(Rng::substream(fl.seed, static_cast<std::uint64_t>(t)));
    instances.push_back(random_adapted_sequence(rs, seq_lo, seq_hi, {2.0, 1}, sub));
  }
  const int active = seq_hi - seq_lo + 1;
  const int sign_trials = active <= 12 ? 0 : 256;
  Rng jrng(Rng::substream(fl.seed, 1u << 20));
  JnReport rep = jn_equivalence_test(instances, {1.0, 2.0}, rs, sign_trials, jrng);

  emit(jn_report_csv(rep), fl.out);
  bool pass = std::isfinite(rep.max_ratio) && rep.max_ratio >= 1.0;
  for (const JnRow& row : rep.rows) pass = pass && std::isfinite(row.norm) && row.norm >= 0;
  std::fprintf(stderr, "instances %d  levels %d  max_ratio %.6g  pass %d\n", fl.trials,
               active, rep.max_ratio, pass ? 1 : 0);
  return pass ? kExitPass : kExitAssert;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"dyadic pairing toolkit for non-homogeneous measures"};
  app.require_subcommand(1);

  RunFlags run_fl, expand_fl, regimes_fl, para_fl;
  auto add_experiment_flags = [](CLI::App* sub, RunFlags& fl) {
    sub->add_option("--config", fl.config, "experiment configuration (JSON path or literal)");
    sub->add_option("--preset", fl.preset, "bundled configuration (cantor-cauchy)");
    sub->add_option("--seed", fl.seed, "override the configured root seed");
  };

  auto* run = app.add_subcommand("run", "full experiment: expand, aggregate, split, report");
  add_experiment_flags(run, run_fl);
  run->add_option("--out", run_fl.out, "directory for summary.json, cells.csv, decay.csv");

  auto* expand = app.add_subcommand("expand", "pairing expansion totals and reconciliation");
  add_experiment_flags(expand, expand_fl);

  auto* regimes = app.add_subcommand("regimes", "per-regime cell statistics as CSV");
  add_experiment_flags(regimes, regimes_fl);
  regimes->add_option("--out", regimes_fl.out, "CSV file (default: stdout)");

  auto* para = app.add_subcommand("paraproduct", "extracted correction totals");
  add_experiment_flags(para, para_fl);

  BadprobFlags bad_fl;
  auto* bad = app.add_subcommand("badprob", "badness frequency vs the analytic bound");
  bad->add_option("--dim", bad_fl.dim, "ambient dimension")->check(CLI::Range(1, 4));
  bad->add_option("--alpha", bad_fl.alpha, "kernel smoothness exponent");
  bad->add_option("--d", bad_fl.d, "growth degree");
  bad->add_option("--r", bad_fl.r, "goodness threshold level gap");
  bad->add_option("--gamma", bad_fl.gamma, "override the derived exponent gamma");
  bad->add_option("--trials", bad_fl.trials, "Monte Carlo trials")->check(CLI::PositiveNumber);
  bad->add_option("--seed", bad_fl.seed, "root seed");
  bad->add_option("--cap", bad_fl.cap, "largest level excess scanned");
  bad->add_option("--k-fine", bad_fl.k_fine, "finest shift level for the opposing lattice");
  bad->add_option("--sweep", bad_fl.sweep, "measure JSON: also classify its resolved cubes");
  bad->add_option("--csv", bad_fl.csv, "file for the classification sweep (default: stdout)");

  HaarFlags haar_fl;
  auto* haar = app.add_subcommand("haar-verify", "decomposition and identity checks");
  haar->add_option("--measure", haar_fl.measure, "measure JSON (path or literal)")->required();
  haar->add_option("--b", haar_fl.b, "accretive function JSON (default: constant one)");
  haar->add_option("--seed", haar_fl.seed, "root seed for shifts and the test field");
  haar->add_option("--levels", haar_fl.levels, "window height above the resolved floor");
  haar->add_option("--space-q", haar_fl.q, "coefficient space exponent q");
  haar->add_option("--space-m", haar_fl.m, "coefficient space dimension m");
  haar->add_option("--p", haar_fl.p, "integrability exponent");
  haar->add_option("--out", haar_fl.out, "coefficient CSV file");

  TangentFlags tan_fl;
  auto* dec = app.add_subcommand("decouple", "randomized decoupling estimates");
  dec->require_subcommand(1);
  auto* tan = dec->add_subcommand("tangent", "two-sided resampling equivalence");
  tan->add_option("--config", tan_fl.config, "system JSON: measure, levels, space, profile");
  tan->add_option("--trials", tan_fl.trials, "resampling trials (0 = exact)");
  tan->add_option("--p", tan_fl.p, "integrability exponent");
  tan->add_option("--seed", tan_fl.seed, "root seed (config value wins when present)");

  JnFlags jn_fl;
  auto* jn = app.add_subcommand("jn-test", "oscillation norm equivalence across exponents");
  jn->add_option("--levels", jn_fl.levels, "active levels per instance");
  jn->add_option("--trials", jn_fl.trials, "number of random instances");
  jn->add_option("--seed", jn_fl.seed, "root seed");
  jn->add_option("--depth", jn_fl.depth, "Cantor measure depth (4^-depth scale)");
  jn->add_option("--out", jn_fl.out, "CSV file (default: stdout)");

  auto* ver = app.add_subcommand("version", "print version");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitPass : kExitConfig;
  }

  run_fl.seed_set = run->count("--seed") > 0;
  expand_fl.seed_set = expand->count("--seed") > 0;
  regimes_fl.seed_set = regimes->count("--seed") > 0;
  para_fl.seed_set = para->count("--seed") > 0;

  try {
    if (ver->parsed()) {
      std::printf("tb 1.0.0\n");
      return kExitPass;
    }
    if (run->parsed()) return cmd_run(run_fl);
    if (expand->parsed()) return cmd_expand(expand_fl);
    if (regimes->parsed()) return cmd_regimes(regimes_fl);
    if (para->parsed()) return cmd_paraproduct(para_fl);
    if (bad->parsed()) return cmd_badprob(bad_fl);
    if (haar->parsed()) return cmd_haar_verify(haar_fl);
    if (tan->parsed()) return cmd_tangent(tan_fl);
    if (jn->parsed()) return cmd_jn_test(jn_fl);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitConfig;
  }
  return kExitConfig;
}

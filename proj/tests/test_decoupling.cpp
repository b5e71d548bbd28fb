#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <complex>
#include <vector>

#include <tblab/decoupling.hpp>
#include <tblab/dyadic.hpp>
#include <tblab/errors.hpp>
#include <tblab/measure.hpp>

using namespace tblab;

namespace {

ResolvedSystem resolve(const AtomicMeasure& m) {
  auto [k_lo, k_hi] = suggest_window(m);
  return ResolvedSystem(&m, DyadicSystem(m.dim, ShiftSequence::zero(m.dim, k_lo, k_hi)),
                        k_lo, k_hi);
}

// Four weighted atoms, two sets over the top of one: the smallest system
// where the decoupled side genuinely resamples.
struct TinySystem {
  AtomicMeasure mu;
  PartitionSystem sys;
  TinySystem()
      : mu(custom_measure({make_vec(0.1), make_vec(0.3), make_vec(0.6), make_vec(0.9)},
                          {0.3, 0.2, 0.4, 0.1}, 1, 1.0)) {
    sys.measure = &mu;
    PartitionLevel fine, coarse;
    fine.sets.push_back({{0, 1}, 0.5});
    fine.sets.push_back({{2, 3}, 0.5});
    coarse.sets.push_back({{0, 1, 2, 3}, 1.0});
    sys.levels = {fine, coarse};
    const SpaceSpec sp{2.0, 2};
    VectorField f00(4, sp), f01(4, sp), f10(4, sp);
    f00.at(0)[0] = cplx(1.0, 0.5);
    f00.at(0)[1] = cplx(-0.3, 0.0);
    f00.at(1)[0] = cplx(0.2, -1.1);
    f00.at(1)[1] = cplx(0.7, 0.4);
    f01.at(2)[0] = cplx(-0.9, 0.2);
    f01.at(2)[1] = cplx(0.1, 0.1);
    f01.at(3)[0] = cplx(0.4, 0.0);
    f01.at(3)[1] = cplx(-0.5, 0.8);
    for (int i : {0, 1}) {
      f10.at(i)[0] = cplx(0.6, -0.2);
      f10.at(i)[1] = cplx(-0.1, 0.9);
    }
    for (int i : {2, 3}) {
      f10.at(i)[0] = cplx(-0.4, 0.3);
      f10.at(i)[1] = cplx(0.8, 0.0);
    }
    sys.f = {{f00, f01}, {f10}};
  }
};

} // namespace

TEST_CASE("partitions built from resolved cells verify cleanly") {
  auto mu = cantor_measure(0.25, 4);
  auto rs = resolve(mu);
  auto sys = partition_from_cells(rs, rs.k_lo() + 1, rs.k_lo() + 3);
  CHECK_NOTHROW(verify_partition_system(sys));
  CHECK(sys.levels.size() == 3);
  CHECK(measurability_defect(sys) == 0.0);

  Rng rng(11);
  attach_random_functions(sys, SpaceSpec{2.0, 3}, rng, false);
  CHECK_NOTHROW(verify_partition_system(sys));
  CHECK(measurability_defect(sys) <= 1e-15);

  CHECK_THROWS_AS(partition_from_cells(rs, rs.k_lo() - 1, rs.k_lo()), ConfigError);
  CHECK_THROWS_AS(partition_from_cells(rs, 1, 0), ConfigError);
}

TEST_CASE("verification rejects malformed systems") {
  TinySystem t;
  CHECK_NOTHROW(verify_partition_system(t.sys));

  SUBCASE("no measure") {
    t.sys.measure = nullptr;
    CHECK_THROWS_AS(verify_partition_system(t.sys), ConfigError);
  }
  SUBCASE("missing atom") {
    t.sys.levels[0].sets[0].atoms = {0};
    t.sys.levels[0].sets[0].mass = 0.3;
    CHECK_THROWS_AS(verify_partition_system(t.sys), ConfigError);
  }
  SUBCASE("atom covered twice") {
    t.sys.levels[0].sets[1].atoms = {1, 2, 3};
    t.sys.levels[0].sets[1].mass = 0.7;
    CHECK_THROWS_AS(verify_partition_system(t.sys), ConfigError);
  }
  SUBCASE("stale mass") {
    t.sys.levels[0].sets[0].mass = 0.25;
    CHECK_THROWS_AS(verify_partition_system(t.sys), ConfigError);
  }
  SUBCASE("support leak") {
    t.sys.f[0][0].at(2)[0] = cplx(1.0);
    CHECK_THROWS_AS(verify_partition_system(t.sys), ConfigError);
  }
  SUBCASE("broken nesting") {
    // split the coarse level so a fine set straddles both halves
    t.sys.levels[1].sets.clear();
    t.sys.levels[1].sets.push_back({{0, 2}, 0.7});
    t.sys.levels[1].sets.push_back({{1, 3}, 0.3});
    VectorField a(4, SpaceSpec{2.0, 2}), b(4, SpaceSpec{2.0, 2});
    t.sys.f[1] = {a, b};
    CHECK_THROWS_AS(verify_partition_system(t.sys), ConfigError);
  }
  SUBCASE("function table shape") {
    t.sys.f[1].clear();
    CHECK_THROWS_AS(verify_partition_system(t.sys), ConfigError);
  }
  SUBCASE("coefficient dimension drift") {
    t.sys.f[1][0] = VectorField(4, SpaceSpec{2.0, 5});
    CHECK_THROWS_AS(verify_partition_system(t.sys), ConfigError);
  }
}

TEST_CASE("the defect flags variation across a finer set") {
  TinySystem t;
  t.sys.f[1][0].at(1)[0] += cplx(0.05, 0.0);
  CHECK(measurability_defect(t.sys) > 1e-3);
  Rng rng(1);
  CHECK_THROWS_AS(tangent_equivalence(t.sys, 2.0, 0, rng), ConfigError);
  CHECK_THROWS_AS(
      averaged_kernel_bound(t.sys, constant_kernels(t.sys, 1.0), 2.0, 0, rng),
      ConfigError);
}

TEST_CASE("constant data makes both sides identical in every mode") {
  auto mu = cantor_measure(0.25, 4);
  auto rs = resolve(mu);
  auto sys = partition_from_cells(rs, rs.k_lo() + 1, rs.k_lo() + 3);
  Rng rng(11);
  attach_random_functions(sys, SpaceSpec{2.0, 3}, rng, true);
  Rng r1(5), r2(5);
  auto ex = tangent_equivalence(sys, 2.0, 0, r1);
  auto mc = tangent_equivalence(sys, 2.0, 40, r2);
  CHECK(ex.exact_signs);
  CHECK(ex.exact_resample);
  CHECK(ex.ratio == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(mc.ratio == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(mc.std_error == doctest::Approx(0.0).epsilon(1e-14));
}

TEST_CASE("exact resampling matches a direct product-space enumeration") {
  TinySystem t;
  const double p = 2.5;
  Rng rng(1);
  auto rep = tangent_equivalence(t.sys, p, 0, rng);
  CHECK(rep.exact_resample);

  const auto& w = t.mu.weights;
  const SpaceSpec sp{2.0, 2};
  const int owner0[4] = {0, 0, 1, 1};
  double lhs_acc = 0, rhs_acc = 0;
  for (int s = 0; s < 4; ++s) {
    const double e0 = (s & 1) ? 1.0 : -1.0;
    const double e1 = (s & 2) ? 1.0 : -1.0;
    for (int i = 0; i < 4; ++i) {
      cplx v[2];
      for (int c = 0; c < 2; ++c)
        v[c] = e0 * t.sys.f[0][owner0[i]].at(i)[c] + e1 * t.sys.f[1][0].at(i)[c];
      lhs_acc += w[i] * std::pow(x_norm(sp, v), p);
    }
    // every joint draw: y for set {0,1}, set {2,3}, and the top set
    for (int y0 : {0, 1})
      for (int y1 : {2, 3})
        for (int y2 = 0; y2 < 4; ++y2) {
          const double prob = (w[y0] / 0.5) * (w[y1] / 0.5) * w[y2];
          for (int i = 0; i < 4; ++i) {
            const int y_fine = owner0[i] == 0 ? y0 : y1;
            cplx v[2];
            for (int c = 0; c < 2; ++c)
              v[c] = e0 * t.sys.f[0][owner0[i]].at(y_fine)[c] +
                     e1 * t.sys.f[1][0].at(y2)[c];
            rhs_acc += prob * w[i] * std::pow(x_norm(sp, v), p);
          }
        }
  }
  const double lhs = std::pow(lhs_acc / 4, 1.0 / p);
  const double rhs = std::pow(rhs_acc / 4, 1.0 / p);
  CHECK(rep.lhs == doctest::Approx(lhs).epsilon(1e-12));
  CHECK(rep.rhs == doctest::Approx(rhs).epsilon(1e-12));
  CHECK(rep.ratio == doctest::Approx(lhs / rhs).epsilon(1e-12));
}

TEST_CASE("one level and one set collapse to the plain norm") {
  auto mu = lebesgue_grid(1, 3);
  PartitionSystem sys;
  sys.measure = &mu;
  PartitionLevel lev;
  PartitionSet all;
  for (int i = 0; i < mu.atoms(); ++i) all.atoms.push_back(i);
  all.mass = mu.total_mass();
  lev.sets.push_back(all);
  sys.levels = {lev};
  Rng fr(3);
  attach_random_functions(sys, SpaceSpec{2.0, 2}, fr, false);

  const double p = 3.0;
  double acc = 0;
  for (int i = 0; i < mu.atoms(); ++i)
    acc += mu.weights[i] * std::pow(x_norm(sys.f[0][0].space, sys.f[0][0].at(i)), p);
  const double plain = std::pow(acc, 1.0 / p);

  Rng rng(1);
  auto rep = tangent_equivalence(sys, p, 0, rng);
  CHECK(rep.lhs == doctest::Approx(plain).epsilon(1e-12));
  CHECK(rep.rhs == doctest::Approx(plain).epsilon(1e-12));
  CHECK(rep.ratio == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("a square exponent equalizes the two sides exactly") {
  auto mu = lebesgue_grid(1, 4);
  auto rs = resolve(mu);
  auto sys = partition_from_cells(rs, -2, -1);
  Rng fr(42);
  attach_random_functions(sys, SpaceSpec{2.0, 3}, fr, false);
  Rng rng(1);
  auto rep = tangent_equivalence(sys, 2.0, 0, rng);
  CHECK(rep.ratio == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("sampling agrees with exact enumeration") {
  auto mu = lebesgue_grid(1, 4);
  auto rs = resolve(mu);
  auto sys = partition_from_cells(rs, -2, -1);
  Rng fr(42);
  attach_random_functions(sys, SpaceSpec{2.0, 2}, fr, false);
  Rng r1(9), r2(9);
  auto ex = tangent_equivalence(sys, 3.0, 0, r1);
  auto mc = tangent_equivalence(sys, 3.0, 2000, r2);
  CHECK(mc.exact_signs);
  CHECK_FALSE(mc.exact_resample);
  CHECK(std::abs(mc.rhs - ex.rhs) / ex.rhs < 0.02);
  CHECK(std::abs(mc.ratio - ex.ratio) < 0.05);
  CHECK(mc.std_error > 0.0);
  CHECK(mc.std_error < 0.05);
}

TEST_CASE("the comparison stays pinned across level doubling") {
  auto mu = lebesgue_grid(1, 8);
  auto rs = resolve(mu);
  for (double p : {2.0, 3.0}) {
    CAPTURE(p);
    for (int L : {2, 4, 8}) {
      CAPTURE(L);
      auto sys = partition_from_cells(rs, -L, -1);
      Rng fr(100 + L);
      attach_random_functions(sys, SpaceSpec{2.0, 4}, fr, false);
      Rng rng(7);
      auto rep = tangent_equivalence(sys, p, 300, rng);
      CHECK(std::isfinite(rep.ratio));
      CHECK(rep.ratio >= 1.0 / 1.2);
      CHECK(rep.ratio <= 1.2);
      CHECK(rep.std_error < 0.05);
    }
  }
}

TEST_CASE("past twelve levels the signs are sampled") {
  auto mu = cantor_measure(0.25, 7);
  auto rs = resolve(mu);
  REQUIRE(rs.k_hi() - rs.k_lo() >= 13);
  auto sys = partition_from_cells(rs, rs.k_lo() + 1, rs.k_lo() + 13);
  REQUIRE(sys.levels.size() == 13);
  Rng fr(9);
  attach_random_functions(sys, SpaceSpec{2.0, 1}, fr, false);
  Rng rng(4);
  auto rep = tangent_equivalence(sys, 2.0, 60, rng);
  CHECK_FALSE(rep.exact_signs);
  CHECK(std::isfinite(rep.ratio));
  CHECK(rep.ratio > 0.0);
  Rng rng2(4);
  CHECK_THROWS_AS(tangent_equivalence(sys, 2.0, 0, rng2), ConfigError);
}

TEST_CASE("the exact resampling budget is enforced") {
  auto mu = lebesgue_grid(1, 8);
  auto rs = resolve(mu);
  auto sys = partition_from_cells(rs, -4, -1);
  Rng fr(1);
  attach_random_functions(sys, SpaceSpec{2.0, 1}, fr, false);
  Rng rng(1);
  CHECK_THROWS_AS(tangent_equivalence(sys, 2.0, 0, rng), ConfigError);
  // the same system estimates fine by sampling
  Rng rng2(1);
  auto rep = tangent_equivalence(sys, 2.0, 50, rng2);
  CHECK(rep.ratio > 0.0);
}

TEST_CASE("averaging against the constant kernel contracts at square exponent") {
  auto mu = lebesgue_grid(1, 5);
  auto rs = resolve(mu);
  auto sys = partition_from_cells(rs, -3, -1);
  Rng fr(56);
  attach_random_functions(sys, SpaceSpec{2.0, 1}, fr, false);
  Rng rng(1);
  const double ones = averaged_kernel_bound(sys, constant_kernels(sys, 1.0), 2.0, 0, rng);
  const double zeros = averaged_kernel_bound(sys, constant_kernels(sys, 0.0), 2.0, 0, rng);
  CHECK(ones <= 1.0 + 1e-12);
  CHECK(ones > 0.1);
  CHECK(zeros == 0.0);
}

TEST_CASE("sign kernels stay bounded under refinement") {
  double prev = -1.0;
  for (int k : {4, 5, 6, 7}) {
    CAPTURE(k);
    auto mu = lebesgue_grid(1, k);
    auto rs = resolve(mu);
    auto sys = partition_from_cells(rs, -3, -1);
    Rng fr(55);
    attach_random_functions(sys, SpaceSpec{2.0, 2}, fr, false);
    Rng kr(77);
    auto ks = sign_kernels(sys, kr);
    Rng rng(1);
    const double ratio = averaged_kernel_bound(sys, ks, 2.0, 0, rng);
    CHECK(std::isfinite(ratio));
    CHECK(ratio > 0.0);
    CHECK(ratio < 1.0);
    if (prev > 0) CHECK(ratio / prev < 1.2);
    prev = ratio;
  }
}

TEST_CASE("averaging also works with sampled signs") {
  auto mu = cantor_measure(0.25, 7);
  auto rs = resolve(mu);
  auto sys = partition_from_cells(rs, rs.k_lo() + 1, rs.k_lo() + 13);
  Rng fr(9);
  attach_random_functions(sys, SpaceSpec{2.0, 1}, fr, false);
  Rng kr(8);
  auto ks = sign_kernels(sys, kr);
  Rng rng(4);
  const double ratio = averaged_kernel_bound(sys, ks, 2.0, 64, rng);
  CHECK(std::isfinite(ratio));
  CHECK(ratio > 0.0);
  Rng rng2(4);
  CHECK_THROWS_AS(averaged_kernel_bound(sys, ks, 2.0, 0, rng2), ConfigError);
}

TEST_CASE("kernel validation") {
  TinySystem t;
  auto ks = constant_kernels(t.sys, 0.5);
  Rng rng(1);
  SUBCASE("entry above one") {
    ks.tables[0][0][1] = cplx(1.5, 0.0);
    CHECK_THROWS_AS(averaged_kernel_bound(t.sys, ks, 2.0, 0, rng), ConfigError);
    CHECK_THROWS_AS(constant_kernels(t.sys, cplx(0.0, 1.2)), ConfigError);
  }
  SUBCASE("wrong table shape") {
    ks.tables[0][0].pop_back();
    CHECK_THROWS_AS(averaged_kernel_bound(t.sys, ks, 2.0, 0, rng), ConfigError);
  }
  SUBCASE("wrong level count") {
    ks.tables.pop_back();
    CHECK_THROWS_AS(averaged_kernel_bound(t.sys, ks, 2.0, 0, rng), ConfigError);
  }
  SUBCASE("unit-modulus entries pass") {
    ks.tables[0][0][0] = cplx(0.0, 1.0);
    CHECK_NOTHROW(averaged_kernel_bound(t.sys, ks, 2.0, 0, rng));
  }
}

TEST_CASE("randomization bound calibrations") {
  SUBCASE("identity scores one") {
    Rng rng(3);
    const double v = rbound_estimate({identity_map(3)}, SpaceSpec{2.0, 3}, 4, 50, rng);
    CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("a scalar multiple scores its modulus") {
    Rng rng(3);
    const double v =
        rbound_estimate({scalar_map(3, cplx(0.0, -1.5))}, SpaceSpec{2.0, 3}, 4, 50, rng);
    CHECK(v == doctest::Approx(1.5).epsilon(1e-12));
    // consistent with the contraction-principle ceiling of twice the modulus
    CHECK(v <= 2.0 * 1.5 + 1e-12);
  }
  SUBCASE("complementary projections score one") {
    Rng rng(3);
    const std::vector<LinearMap> fam = {diagonal_map({cplx(1.0), cplx(0.0)}),
                                        diagonal_map({cplx(0.0), cplx(1.0)})};
    const double v = rbound_estimate(fam, SpaceSpec{2.0, 2}, 2, 200, rng);
    CHECK(v >= 1.0 - 1e-12);
    CHECK(v == doctest::Approx(1.0).epsilon(1e-9));
  }
  SUBCASE("growing the family never lowers the estimate") {
    Rng r1(3), r2(3);
    const double sub =
        rbound_estimate({scalar_map(2, cplx(0.5))}, SpaceSpec{2.0, 2}, 2, 30, r1);
    const double sup = rbound_estimate({scalar_map(2, cplx(0.5)), scalar_map(2, cplx(2.0))},
                                       SpaceSpec{2.0, 2}, 2, 30, r2);
    CHECK(sub == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(sup == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(sub <= sup + 1e-12);
  }
  SUBCASE("thirteen vectors use sampled signs") {
    Rng rng(3);
    const double v = rbound_estimate({identity_map(2)}, SpaceSpec{2.0, 2}, 13, 5, rng);
    CHECK(v == doctest::Approx(1.0).epsilon(1e-9));
  }
  SUBCASE("rejected inputs") {
    Rng rng(3);
    CHECK_THROWS_AS(rbound_estimate({}, SpaceSpec{2.0, 2}, 2, 10, rng), ConfigError);
    CHECK_THROWS_AS(rbound_estimate({identity_map(3)}, SpaceSpec{2.0, 2}, 2, 10, rng),
                    ConfigError);
    CHECK_THROWS_AS(rbound_estimate({identity_map(2)}, SpaceSpec{2.0, 2}, 0, 10, rng),
                    ConfigError);
  }
}

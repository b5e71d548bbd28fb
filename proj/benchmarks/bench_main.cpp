#include <benchmark/benchmark.h>

#include "tblab/dyadic.hpp"
#include "tblab/measure.hpp"

using namespace tblab;

static void BM_growth_check_cantor(benchmark::State& state) {
  AtomicMeasure m = cantor_measure(0.25, static_cast<int>(state.range(0)));
  for (auto _ : state) {
    GrowthReport rep = growth_check(m, m.growth_d, m.r_min);
    benchmark::DoNotOptimize(rep.worst_ratio);
  }
}
BENCHMARK(BM_growth_check_cantor)->Arg(6)->Arg(8)->Arg(10);

static void BM_resolve_cantor(benchmark::State& state) {
  AtomicMeasure m = cantor_measure(0.25, static_cast<int>(state.range(0)));
  auto [k_lo, k_hi] = suggest_window(m);
  for (auto _ : state) {
    ResolvedSystem rs(&m, DyadicSystem(1, ShiftSequence::zero(1, k_lo, k_hi)), k_lo, k_hi);
    benchmark::DoNotOptimize(rs.cell_count(k_hi));
  }
}
BENCHMARK(BM_resolve_cantor)->Arg(8)->Arg(10)->Arg(12);

static void BM_bad_probability_mc(benchmark::State& state) {
  GoodnessParams p = GoodnessParams::standard(1.0, 1.0, static_cast<int>(state.range(0)));
  for (auto _ : state) {
    BadProbabilityReport rep = bad_probability_mc(1, p, 1000, 4242);
    benchmark::DoNotOptimize(rep.frequency);
  }
}
BENCHMARK(BM_bad_probability_mc)->Arg(8)->Arg(16)->Arg(32);

BENCHMARK_MAIN();

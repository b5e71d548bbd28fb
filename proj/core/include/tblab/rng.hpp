#pragma once
#include <cstdint>
#include <cmath>

namespace tblab {

/// Deterministic 64-bit generator (splitmix64 update, xorshift-style output).
/// Hand-rolled so that streams are reproducible byte-for-byte across standard
/// library implementations; <random> distributions are not portable.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : state_(seed) {
    // decorrelate trivially related seeds
    next_u64();
    next_u64();
  }

  /// Independent substream: used to give each Monte Carlo trial / experiment
  /// stage its own generator so stages can be reordered without changing draws.
  static Rng substream(std::uint64_t seed, std::uint64_t stream) {
    return Rng(mix(seed ^ mix(stream + 0x9e3779b97f4a7c15ULL)));
  }

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    return mix(state_);
  }

  /// Uniform on [0,1) with 53 random bits.
  double u01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform on [a,b).
  double uniform(double a, double b) { return a + (b - a) * u01(); }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    // modulo bias is < 2^-40 for the n used here (n << 2^24); acceptable
    return n ? next_u64() % n : 0;
  }

  int sign() { return (next_u64() & 1) ? 1 : -1; }

  bool bernoulli(double p) { return u01() < p; }

  /// Standard normal via Box-Muller (no cached spare: keeps draws stateless
  /// with respect to call ordering of other methods).
  double normal() {
    double u1 = u01(), u2 = u01();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
  }

private:
  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }
  std::uint64_t state_;
};

} // namespace tblab

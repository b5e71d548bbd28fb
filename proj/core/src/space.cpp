#include "tblab/space.hpp"

namespace tblab {

VectorField random_field(int natoms, SpaceSpec sp, Rng& rng, double p_exp) {
  VectorField f(natoms, sp, p_exp);
  for (auto& v : f.data) v = cplx(rng.normal(), rng.normal()) * 0.7071067811865476;
  return f;
}

} // namespace tblab

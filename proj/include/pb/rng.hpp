#pragma once
#include <cmath>
#include <cstdint>

#include "pb/geom.hpp"

namespace pb {

// splitmix64 generator. Chosen over std::mt19937 because the stream is
// specified exactly, so seeded runs are bit-identical across platforms.
struct Rng {
  uint64_t state = 0x853c49e6748fea9bULL;

  explicit Rng(uint64_t seed = 0) { state = seed + 0x9e3779b97f4a7c15ULL; }

  uint64_t next_u64() {
    uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  uint64_t below(uint64_t n) { return next_u64() % n; }

  // Box-Muller, no cached spare so the stream stays a pure function of
  // the draw count.
  double normal() {
    double u1 = uniform(), u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
  }

  Vec3 normal3() { return {normal(), normal(), normal()}; }

  // Haar-uniform rotation as a unit quaternion (4D Gaussian projected to S^3).
  Quat haar_quat() {
    double a = normal(), b = normal(), c = normal(), d = normal();
    double n = std::sqrt(a * a + b * b + c * c + d * d);
    while (n < 1e-12) {
      a = normal(); b = normal(); c = normal(); d = normal();
      n = std::sqrt(a * a + b * b + c * c + d * d);
    }
    return {a / n, b / n, c / n, d / n};
  }

  // Fork a derived stream; decorrelates substreams drawn from one seed.
  Rng fork(uint64_t salt) {
    Rng r(next_u64() ^ (salt * 0x9e3779b97f4a7c15ULL));
    return r;
  }
};

}  // namespace pb

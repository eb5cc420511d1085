#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "bodyslam/liegeom.hpp"

namespace bodyslam {

// Seeded generator whose uniform and normal draws are defined here rather
// than by the standard library's distributions, so generated data is the
// same on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next() { return eng_(); }
  std::mt19937_64& engine() { return eng_; }

  // (0, 1), never exactly 0 or 1.
  double uniform() { return (static_cast<double>(eng_() >> 11) + 0.5) * (1.0 / 9007199254740992.0); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double r = std::sqrt(-2.0 * std::log(uniform()));
    const double a = 2.0 * kPi * uniform();
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }
  double normal(double sigma) { return sigma * normal(); }

  Vec3 normal3(double sigma) {
    const double x = normal(sigma), y = normal(sigma), z = normal(sigma);
    return {x, y, z};
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Uniform integer in [0, n).
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n; }

  // Independent child stream, e.g. one per sequence.
  Rng split() { return Rng(eng_() ^ 0x9e3779b97f4a7c15ULL); }

 private:
  std::mt19937_64 eng_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace bodyslam

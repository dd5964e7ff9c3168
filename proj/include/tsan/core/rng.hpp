#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <string>

#include "tsan/core/shape.hpp"

namespace tsan {

// Deterministic RNG. Wraps mt19937_64 but converts to doubles/ints with fixed
// arithmetic instead of std distributions, whose output is
// implementation-defined. State round-trips through a string so checkpoints
// can resume the exact stream.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next() { return eng_(); }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  int uniform_int(int n) {
    contract(n > 0, "Rng::uniform_int: n must be positive");
    // Rejection sampling keeps the distribution exact.
    const std::uint64_t un = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % un;
    std::uint64_t x;
    do {
      x = next();
    } while (x >= limit);
    return static_cast<int>(x % un);
  }

  std::string serialize() const {
    std::ostringstream os;
    os << eng_;
    return os.str();
  }

  void deserialize(const std::string& s) {
    std::istringstream is(s);
    is >> eng_;
    contract(!is.fail(), "Rng: malformed serialized state");
  }

  // Derives independent streams from one master seed (splitmix64 step).
  static std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace tsan

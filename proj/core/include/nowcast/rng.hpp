#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace nowcast {

// Deterministic xoshiro256** generator, seeded through splitmix64.
// The raw 64-bit stream is bit-identical for a given seed on every
// platform; derived doubles share that property, derived normals depend
// on libm but are stable for a given build.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();

  // Uniform in [0, 1), 53-bit resolution.
  double uniform();
  double uniform(double lo, double hi);

  // Standard normal via Box-Muller on the uniform stream.
  double normal();

  // Uniform index in [0, n). Modulo reduction; the tiny bias is irrelevant
  // here, determinism is what matters.
  std::size_t index(std::size_t n);

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[index(i)]);
    }
  }

 private:
  std::array<std::uint64_t, 4> state_;
};

}  // namespace nowcast

#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace mmc {

// Seeded RNG whose distributions are implemented locally (not via <random>
// distribution objects) so that streams are identical across standard
// library implementations.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  // Independent stream for one example: parallel and serial attack runs see
  // the same draws regardless of scheduling.
  static Rng for_example(std::uint64_t seed, std::uint64_t index);

  std::uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1) with 53-bit resolution.
  double uniform01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }
  double uniform(double a, double b) { return a + (b - a) * uniform01(); }

  // Box-Muller with cached spare.
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Uniform integer in [0, n), rejection sampled (no modulo bias).
  int uniform_int(int n);

  int rademacher() { return (gen_() & 1u) ? 1 : -1; }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_int(static_cast<int>(i)));
      std::swap(v[i - 1], v[j]);
    }
  }

private:
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace mmc

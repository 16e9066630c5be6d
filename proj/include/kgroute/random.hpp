#pragma once

// Portable seeded randomness. std::mt19937_64 is fully specified by the
// standard; the distributions here are written out so that draws match on
// every platform (the standard distributions are implementation-defined).

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace kgroute {

class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  // Uniform in [0, 1) with 53 bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  bool bernoulli(double p) { return uniform() < p; }
  // Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[static_cast<std::size_t>(below(i))]);
    }
  }

  std::string state() const;
  void set_state(std::string_view s);

 private:
  std::mt19937_64 engine_;
};

// Derives an independent stream seed from a base seed and labels.
std::uint64_t derive_seed(std::uint64_t base, std::string_view a, std::string_view b = {},
                          std::string_view c = {});

}  // namespace kgroute

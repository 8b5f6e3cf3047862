#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace lpd {

// Platform-independent random stream. The engine is std::mt19937_64, whose output
// sequence is fixed by the standard; every distribution on top of it is implemented
// here because the std:: distributions are implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n), rejection-sampled so there is no modulo bias.
  std::uint64_t below(std::uint64_t n);

  /// Standard normal via Box-Muller (pairs cached).
  double normal();

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }
  template <typename T>
  void shuffle(std::vector<T>& items) {
    shuffle(std::span<T>(items));
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Deterministic sub-seed derivation (splitmix64 finalizer over seed and stream tag).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace lpd

#pragma once

#include <cstdint>
#include <string_view>

namespace debias {

// All randomness is derived from one global seed. Per-sample streams hash
// the sample id into the seed so results do not depend on processing order.

std::uint64_t splitmix64(std::uint64_t x) noexcept;

/// FNV-1a 64-bit hash; used for stable id hashing and config hashes.
std::uint64_t fnv1a64(std::string_view bytes) noexcept;

/// Seed for a named sub-stream of `seed` (e.g. "trap-swap", or a sample id).
std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) noexcept;
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) noexcept;

/// Small, fully specified generator (xoshiro256**). Its output sequence is
/// identical across standard libraries, unlike std:: distributions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) noexcept;

  std::uint64_t next() noexcept;
  /// Uniform double in [0, 1).
  double uniform() noexcept;
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n) noexcept;
  /// Uniform integer in [lo, hi] inclusive.
  int range(int lo, int hi) noexcept;
  bool bernoulli(double p) noexcept { return uniform() < p; }
  /// Standard normal via Box-Muller.
  double normal() noexcept;

 private:
  std::uint64_t s_[4];
};

template <typename It>
void shuffle(It first, It last, Rng& rng) {
  const auto n = last - first;
  for (auto i = n - 1; i > 0; --i) {
    auto j = static_cast<decltype(i)>(rng.below(static_cast<std::uint64_t>(i) + 1));
    using std::swap;
    swap(first[i], first[j]);
  }
}

}  // namespace debias

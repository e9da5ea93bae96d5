#pragma once

#include <cstdint>
#include <span>
#include <string_view>

namespace alignrl {

// Deterministic splitmix64 generator. Used instead of std::<random>
// distributions so outputs are bit-identical across platforms and
// standard-library versions; reproducibility contracts depend on that.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1) with 53-bit resolution.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// Uniform integer in [0, n); rejection sampling, so no modulo bias.
  int uniform_int(int n);

  /// Index drawn proportionally to probs (need not be normalized).
  int categorical(std::span<const double> probs);

 private:
  std::uint64_t state_;
};

/// Stable seed for a named substream of `root`: FNV-1a over the name folded
/// into the root seed. `index` selects a per-record stream so draws do not
/// depend on processing order.
std::uint64_t substream_seed(std::uint64_t root, std::string_view name,
                             std::uint64_t index = 0);

}  // namespace alignrl

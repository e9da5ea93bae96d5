#include "alignrl/rng.hpp"

#include <cstdint>
#include <limits>
#include <stdexcept>

namespace alignrl {

int Rng::uniform_int(int n) {
  if (n <= 0) throw std::invalid_argument("Rng::uniform_int: n must be positive");
  const std::uint64_t un = static_cast<std::uint64_t>(n);
  const std::uint64_t limit =
      std::numeric_limits<std::uint64_t>::max() -
      std::numeric_limits<std::uint64_t>::max() % un;
  std::uint64_t x = next_u64();
  while (x >= limit) x = next_u64();
  return static_cast<int>(x % un);
}

int Rng::categorical(std::span<const double> probs) {
  if (probs.empty()) throw std::invalid_argument("Rng::categorical: empty weight row");
  double total = 0.0;
  int last_positive = -1;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = probs[i];
    if (p < 0.0) throw std::invalid_argument("Rng::categorical: negative weight");
    total += p;
    if (p > 0.0) last_positive = static_cast<int>(i);
  }
  if (total <= 0.0 || last_positive < 0)
    throw std::invalid_argument("Rng::categorical: all weights are zero");
  const double u = uniform01() * total;
  double cum = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    cum += probs[i];
    if (u < cum) return static_cast<int>(i);
  }
  // Rounding can leave u marginally above the accumulated total.
  return last_positive;
}

namespace {

std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const char c : text) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ull;
  }
  return h;
}

std::uint64_t mix(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace

std::uint64_t substream_seed(std::uint64_t root, std::string_view name,
                             std::uint64_t index) {
  std::uint64_t h = fnv1a(name);
  h = mix(h ^ (root + 0x9e3779b97f4a7c15ull));
  return mix(h ^ (index + 0x9e3779b97f4a7c15ull));
}

}  // namespace alignrl

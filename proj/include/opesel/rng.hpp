#pragma once

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace opesel {

/// SplitMix64 finalizer. Used as the documented 64-bit mix for sub-seeds.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Sub-seed for stream `stream` of `master`:
///   derive_seed(master, stream) = splitmix64(splitmix64(master) ^ splitmix64(stream + 1))
/// Episodes use stream = episode_id, so an episode's randomness depends only on
/// (master seed, episode id) and never on generation order.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) noexcept {
  return splitmix64(splitmix64(master) ^ splitmix64(stream + 1));
}

/// Seeded generator with platform-independent conversions.
/// std::uniform_*_distribution are implementation-defined, so draws are built
/// directly from the 64-bit engine output.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n).
  int uniform_int(int n) {
    const auto k = static_cast<int>(uniform() * n);
    return k < n ? k : n - 1;
  }

  std::uint64_t next_u64() { return engine_(); }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

/// Fisher-Yates shuffle driven by Rng::uniform_int (portable across standard libraries).
template <typename T>
void shuffle(std::vector<T>& values, Rng& rng) {
  for (std::size_t i = values.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(static_cast<int>(i)));
    std::swap(values[i - 1], values[j]);
  }
}

}  // namespace opesel

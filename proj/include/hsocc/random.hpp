#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>

namespace hsocc {

/// SplitMix64 finalizer. Pure function of its input.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// 64-bit FNV-1a, used to key parameter streams by name.
constexpr std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ull;
  }
  return h;
}

/// Counter-based generator: draw i of stream (seed, key) is
/// splitmix64(splitmix64(seed ^ key) + i). Results depend only on
/// (seed, key, i), never on call order or platform.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t key = 0)
      : base_(splitmix64(seed ^ splitmix64(key))) {}

  std::uint64_t at(std::uint64_t counter) const { return splitmix64(base_ + counter); }
  std::uint64_t next() { return at(counter_++); }

  /// Uniform in [0, 1) with 53 bits of precision.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Lemire's multiply-shift with rejection.
  std::uint64_t below(std::uint64_t n);

  /// Standard normal via Box-Muller (uses two draws).
  double normal();

 private:
  std::uint64_t base_;
  std::uint64_t counter_ = 0;
};

}  // namespace hsocc

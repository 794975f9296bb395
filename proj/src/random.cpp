#include "hsocc/random.hpp"

#include <cmath>
#include <numbers>

namespace hsocc {

std::uint64_t CounterRng::below(std::uint64_t n) {
  if (n == 0) return 0;
  for (;;) {
    const unsigned __int128 m = static_cast<unsigned __int128>(next()) * n;
    const auto low = static_cast<std::uint64_t>(m);
    if (low >= (-n) % n) return static_cast<std::uint64_t>(m >> 64);
  }
}

double CounterRng::normal() {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace hsocc

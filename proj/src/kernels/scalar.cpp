#include "hsocc/kernels.hpp"

namespace hsocc::kernels::scalar {

double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void unpack_bits_msb(const std::uint8_t* bytes, std::uint8_t* bits, std::size_t nbytes) {
  for (std::size_t k = 0; k < nbytes; ++k) {
    const unsigned v = bytes[k];
    for (unsigned b = 0; b < 8; ++b) bits[8 * k + b] = static_cast<std::uint8_t>((v >> (7 - b)) & 1u);
  }
}

void pack_bits_msb(const std::uint8_t* bits, std::uint8_t* bytes, std::size_t nbytes) {
  for (std::size_t k = 0; k < nbytes; ++k) {
    unsigned v = 0;
    for (unsigned b = 0; b < 8; ++b) v = (v << 1) | (bits[8 * k + b] != 0 ? 1u : 0u);
    bytes[k] = static_cast<std::uint8_t>(v);
  }
}

}  // namespace hsocc::kernels::scalar

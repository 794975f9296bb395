#pragma once

// Data-parallel inner loops with a scalar reference implementation and SIMD
// variants selected once at runtime. Elementwise kernels (axpy, bit packing)
// are bit-identical across variants; reductions (dot) differ only in
// summation order.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>

namespace hsocc::kernels {

enum class Isa { scalar, avx2, neon };

std::string_view isa_name(Isa isa);

/// True if this build contains the variant and the CPU can run it.
bool isa_supported(Isa isa);

/// Variant used by the dispatching entry points. Chosen on first use: the
/// HSOCC_ISA environment variable (scalar|avx2|neon) if set and supported,
/// otherwise the best supported variant.
Isa active_isa();

/// Overrides the dispatch choice. Throws ValidationError if unsupported.
void set_isa(Isa isa);

double dot(std::span<const double> a, std::span<const double> b);

/// y += alpha * x
void axpy(double alpha, std::span<const double> x, std::span<double> y);

/// Expands each byte into 8 values in {0,1}, most significant bit first.
/// bits.size() must equal 8 * bytes.size().
void unpack_bits_msb(std::span<const std::uint8_t> bytes, std::span<std::uint8_t> bits);

/// Inverse of unpack_bits_msb; any nonzero input value counts as a set bit.
void pack_bits_msb(std::span<const std::uint8_t> bits, std::span<std::uint8_t> bytes);

// Per-variant entry points, exposed for equivalence testing.
#define HSOCC_DECLARE_KERNELS(ns)                                                          \
  namespace ns {                                                                           \
  double dot(const double* a, const double* b, std::size_t n);                             \
  void axpy(double alpha, const double* x, double* y, std::size_t n);                      \
  void unpack_bits_msb(const std::uint8_t* bytes, std::uint8_t* bits, std::size_t nbytes); \
  void pack_bits_msb(const std::uint8_t* bits, std::uint8_t* bytes, std::size_t nbytes);   \
  }

HSOCC_DECLARE_KERNELS(scalar)
HSOCC_DECLARE_KERNELS(avx2)
HSOCC_DECLARE_KERNELS(neon)

#undef HSOCC_DECLARE_KERNELS

}  // namespace hsocc::kernels

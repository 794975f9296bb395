#include <atomic>
#include <cstdlib>
#include <string>

#include "hsocc/errors.hpp"
#include "hsocc/kernels.hpp"

namespace hsocc::kernels {

namespace {

struct Table {
  double (*dot)(const double*, const double*, std::size_t);
  void (*axpy)(double, const double*, double*, std::size_t);
  void (*unpack)(const std::uint8_t*, std::uint8_t*, std::size_t);
  void (*pack)(const std::uint8_t*, std::uint8_t*, std::size_t);
};

constexpr Table kScalar{scalar::dot, scalar::axpy, scalar::unpack_bits_msb, scalar::pack_bits_msb};
#if HSOCC_WITH_AVX2
constexpr Table kAvx2{avx2::dot, avx2::axpy, avx2::unpack_bits_msb, avx2::pack_bits_msb};
#endif
#if HSOCC_WITH_NEON
constexpr Table kNeon{neon::dot, neon::axpy, neon::unpack_bits_msb, neon::pack_bits_msb};
#endif

const Table* table_for(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return &kScalar;
    case Isa::avx2:
#if HSOCC_WITH_AVX2
      return &kAvx2;
#else
      return nullptr;
#endif
    case Isa::neon:
#if HSOCC_WITH_NEON
      return &kNeon;
#else
      return nullptr;
#endif
  }
  return nullptr;
}

Isa default_isa() {
  if (const char* env = std::getenv("HSOCC_ISA")) {
    const std::string v(env);
    for (Isa isa : {Isa::scalar, Isa::avx2, Isa::neon})
      if (v == isa_name(isa) && isa_supported(isa)) return isa;
  }
  if (isa_supported(Isa::avx2)) return Isa::avx2;
  if (isa_supported(Isa::neon)) return Isa::neon;
  return Isa::scalar;
}

std::atomic<const Table*> g_active{nullptr};
std::atomic<Isa> g_active_isa{Isa::scalar};

const Table& active() {
  const Table* t = g_active.load(std::memory_order_acquire);
  if (t == nullptr) {
    const Isa isa = default_isa();
    g_active_isa.store(isa);
    t = table_for(isa);
    g_active.store(t, std::memory_order_release);
  }
  return *t;
}

void check_sizes(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw ShapeError(std::string(what) + ": size mismatch");
}

}  // namespace

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return "scalar";
    case Isa::avx2:
      return "avx2";
    case Isa::neon:
      return "neon";
  }
  return "unknown";
}

bool isa_supported(Isa isa) {
  if (table_for(isa) == nullptr) return false;
#if defined(__x86_64__) || defined(__i386__)
  if (isa == Isa::avx2) return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#endif
  return true;
}

Isa active_isa() {
  active();
  return g_active_isa.load();
}

void set_isa(Isa isa) {
  if (!isa_supported(isa)) throw ValidationError("kernel variant not supported: " + std::string(isa_name(isa)));
  g_active_isa.store(isa);
  g_active.store(table_for(isa), std::memory_order_release);
}

double dot(std::span<const double> a, std::span<const double> b) {
  check_sizes(a.size(), b.size(), "dot");
  return active().dot(a.data(), b.data(), a.size());
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  check_sizes(x.size(), y.size(), "axpy");
  active().axpy(alpha, x.data(), y.data(), x.size());
}

void unpack_bits_msb(std::span<const std::uint8_t> bytes, std::span<std::uint8_t> bits) {
  check_sizes(bits.size(), 8 * bytes.size(), "unpack_bits_msb");
  active().unpack(bytes.data(), bits.data(), bytes.size());
}

void pack_bits_msb(std::span<const std::uint8_t> bits, std::span<std::uint8_t> bytes) {
  check_sizes(bits.size(), 8 * bytes.size(), "pack_bits_msb");
  active().pack(bits.data(), bytes.data(), bytes.size());
}

}  // namespace hsocc::kernels

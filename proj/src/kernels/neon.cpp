#include <arm_neon.h>

#include "hsocc/kernels.hpp"

namespace hsocc::kernels::neon {

double dot(const double* a, const double* b, std::size_t n) {
  float64x2_t acc0 = vdupq_n_f64(0.0);
  float64x2_t acc1 = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc0 = vfmaq_f64(acc0, vld1q_f64(a + i), vld1q_f64(b + i));
    acc1 = vfmaq_f64(acc1, vld1q_f64(a + i + 2), vld1q_f64(b + i + 2));
  }
  double s = vaddvq_f64(vaddq_f64(acc0, acc1));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  const float64x2_t va = vdupq_n_f64(alpha);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(y + i, vaddq_f64(vld1q_f64(y + i), vmulq_f64(va, vld1q_f64(x + i))));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void unpack_bits_msb(const std::uint8_t* bytes, std::uint8_t* bits, std::size_t nbytes) {
  static const std::uint8_t kMask[8] = {0x80, 0x40, 0x20, 0x10, 0x08, 0x04, 0x02, 0x01};
  const uint8x8_t mask = vld1_u8(kMask);
  const uint8x8_t one = vdup_n_u8(1);
  for (std::size_t k = 0; k < nbytes; ++k) {
    const uint8x8_t hit = vtst_u8(vdup_n_u8(bytes[k]), mask);
    vst1_u8(bits + 8 * k, vand_u8(hit, one));
  }
}

void pack_bits_msb(const std::uint8_t* bits, std::uint8_t* bytes, std::size_t nbytes) {
  static const std::uint8_t kMask[8] = {0x80, 0x40, 0x20, 0x10, 0x08, 0x04, 0x02, 0x01};
  const uint8x8_t mask = vld1_u8(kMask);
  for (std::size_t k = 0; k < nbytes; ++k) {
    const uint8x8_t set = vtst_u8(vld1_u8(bits + 8 * k), vdup_n_u8(0xFF));
    bytes[k] = vaddv_u8(vand_u8(set, mask));
  }
}

}  // namespace hsocc::kernels::neon

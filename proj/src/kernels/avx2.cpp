#include <immintrin.h>

#include "hsocc/kernels.hpp"

namespace hsocc::kernels::avx2 {

double dot(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4)
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
  acc0 = _mm256_add_pd(acc0, acc1);
  const __m128d lo = _mm256_castpd256_pd128(acc0);
  const __m128d hi = _mm256_extractf128_pd(acc0, 1);
  const __m128d pair = _mm_add_pd(lo, hi);
  double s = _mm_cvtsd_f64(_mm_add_sd(pair, _mm_unpackhi_pd(pair, pair)));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  // mul + add, not fmadd: keeps results identical to the scalar path.
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d prod = _mm256_mul_pd(va, _mm256_loadu_pd(x + i));
    _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), prod));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void unpack_bits_msb(const std::uint8_t* bytes, std::uint8_t* bits, std::size_t nbytes) {
  // Four input bytes -> 32 output bytes per iteration: broadcast each byte to
  // its 8 lanes, AND with a per-lane single-bit mask, compare to get 0/1.
  const __m256i shuffle = _mm256_setr_epi8(0, 0, 0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1, 1, 1,
                                           2, 2, 2, 2, 2, 2, 2, 2, 3, 3, 3, 3, 3, 3, 3, 3);
  const __m256i bitmask = _mm256_setr_epi8(
      char(0x80), 0x40, 0x20, 0x10, 0x08, 0x04, 0x02, 0x01, char(0x80), 0x40, 0x20, 0x10, 0x08, 0x04,
      0x02, 0x01, char(0x80), 0x40, 0x20, 0x10, 0x08, 0x04, 0x02, 0x01, char(0x80), 0x40, 0x20, 0x10,
      0x08, 0x04, 0x02, 0x01);
  const __m256i one = _mm256_set1_epi8(1);
  std::size_t k = 0;
  for (; k + 4 <= nbytes; k += 4) {
    std::int32_t word;
    __builtin_memcpy(&word, bytes + k, 4);
    // _mm256_shuffle_epi8 works per 128-bit lane, so place the word in both.
    const __m256i src = _mm256_set1_epi32(word);
    const __m256i lanes = _mm256_shuffle_epi8(src, shuffle);
    const __m256i hit = _mm256_cmpeq_epi8(_mm256_and_si256(lanes, bitmask), bitmask);
    _mm256_storeu_si256(reinterpret_cast<__m256i*>(bits + 8 * k), _mm256_and_si256(hit, one));
  }
  if (k < nbytes) scalar::unpack_bits_msb(bytes + k, bits + 8 * k, nbytes - k);
}

void pack_bits_msb(const std::uint8_t* bits, std::uint8_t* bytes, std::size_t nbytes) {
  // movemask collects lane sign bits LSB-first; reverse bit order per byte by
  // loading lanes in reversed order within each 8-lane group.
  const __m256i reverse = _mm256_setr_epi8(7, 6, 5, 4, 3, 2, 1, 0, 15, 14, 13, 12, 11, 10, 9, 8, 7, 6, 5,
                                           4, 3, 2, 1, 0, 15, 14, 13, 12, 11, 10, 9, 8);
  const __m256i zero = _mm256_setzero_si256();
  std::size_t k = 0;
  for (; k + 4 <= nbytes; k += 4) {
    const __m256i v = _mm256_loadu_si256(reinterpret_cast<const __m256i*>(bits + 8 * k));
    const __m256i set = _mm256_andnot_si256(_mm256_cmpeq_epi8(v, zero), _mm256_set1_epi8(char(0x80)));
    const __m256i rev = _mm256_shuffle_epi8(set, reverse);
    const auto mask = static_cast<std::uint32_t>(_mm256_movemask_epi8(rev));
    __builtin_memcpy(bytes + k, &mask, 4);
  }
  if (k < nbytes) scalar::pack_bits_msb(bits + 8 * k, bytes + k, nbytes - k);
}

}  // namespace hsocc::kernels::avx2

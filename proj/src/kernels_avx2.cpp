// AVX2/FMA kernel variants. This file is compiled with -mavx2 -mfma when the
// toolchain supports it; selection against the scalar reference happens at
// runtime in kernels_dispatch.cpp.

#include "kernels_table.hpp"

#if defined(__AVX2__) && defined(__FMA__)

#include <immintrin.h>

namespace fmpca::kernels::detail {

namespace {

double dot_avx2(const double* x, const double* y, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  __m256d acc2 = _mm256_setzero_pd();
  __m256d acc3 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), acc1);
    acc2 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 8), _mm256_loadu_pd(y + i + 8), acc2);
    acc3 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 12), _mm256_loadu_pd(y + i + 12), acc3);
  }
  for (; i + 4 <= n; i += 4) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
  }
  const __m256d acc = _mm256_add_pd(_mm256_add_pd(acc0, acc1), _mm256_add_pd(acc2, acc3));
  alignas(32) double lane[4];
  _mm256_store_pd(lane, acc);
  double sum = (lane[0] + lane[1]) + (lane[2] + lane[3]);
  for (; i < n; ++i) sum += x[i] * y[i];
  return sum;
}

void axpy_avx2(double a, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(a);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    _mm256_storeu_pd(y + i + 4,
                     _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4)));
  }
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += a * x[i];
}

void scal_avx2(double a, double* x, std::size_t n) {
  const __m256d va = _mm256_set1_pd(a);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(x + i, _mm256_mul_pd(va, _mm256_loadu_pd(x + i)));
  }
  for (; i < n; ++i) x[i] *= a;
}

void rot_avx2(double* x, double* y, double c, double s, std::size_t n) {
  const __m256d vc = _mm256_set1_pd(c);
  const __m256d vs = _mm256_set1_pd(s);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d vx = _mm256_loadu_pd(x + i);
    const __m256d vy = _mm256_loadu_pd(y + i);
    _mm256_storeu_pd(x + i, _mm256_fmsub_pd(vc, vx, _mm256_mul_pd(vs, vy)));
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(vs, vx, _mm256_mul_pd(vc, vy)));
  }
  for (; i < n; ++i) {
    const double xi = x[i];
    const double yi = y[i];
    x[i] = c * xi - s * yi;
    y[i] = s * xi + c * yi;
  }
}

void heat_step_avx2(const double* src, double* dst, std::size_t n, double r) {
  const std::size_t ld = n + 2;
  const __m256d vr = _mm256_set1_pd(r);
  const __m256d vfour = _mm256_set1_pd(4.0);
  for (std::size_t j = 1; j <= n; ++j) {
    const double* mid = src + j * ld;
    const double* left = src + (j - 1) * ld;
    const double* right = src + (j + 1) * ld;
    double* out = dst + j * ld;
    std::size_t i = 1;
    for (; i + 4 <= n + 1; i += 4) {
      const __m256d c = _mm256_loadu_pd(mid + i);
      __m256d acc = _mm256_add_pd(_mm256_loadu_pd(mid + i - 1), _mm256_loadu_pd(mid + i + 1));
      acc = _mm256_add_pd(acc, _mm256_loadu_pd(left + i));
      acc = _mm256_add_pd(acc, _mm256_loadu_pd(right + i));
      acc = _mm256_fnmadd_pd(vfour, c, acc);
      _mm256_storeu_pd(out + i, _mm256_fmadd_pd(vr, acc, c));
    }
    for (; i <= n; ++i) {
      const double c = mid[i];
      out[i] = c + r * (mid[i - 1] + mid[i + 1] + left[i] + right[i] - 4.0 * c);
    }
  }
}

}  // namespace

const KernelTable* avx2_table() {
  static const KernelTable table{dot_avx2, axpy_avx2, scal_avx2, rot_avx2, heat_step_avx2};
  return &table;
}

}  // namespace fmpca::kernels::detail

#else

namespace fmpca::kernels::detail {

const KernelTable* avx2_table() { return nullptr; }

}  // namespace fmpca::kernels::detail

#endif

#include "kernels_table.hpp"

namespace fmpca::kernels::detail {

namespace {

double dot_scalar(const double* x, const double* y, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

void axpy_scalar(double a, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void scal_scalar(double a, double* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) x[i] *= a;
}

void rot_scalar(double* x, double* y, double c, double s, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    const double xi = x[i];
    const double yi = y[i];
    x[i] = c * xi - s * yi;
    y[i] = s * xi + c * yi;
  }
}

void heat_step_scalar(const double* src, double* dst, std::size_t n, double r) {
  const std::size_t ld = n + 2;
  for (std::size_t j = 1; j <= n; ++j) {
    const double* mid = src + j * ld;
    const double* left = src + (j - 1) * ld;
    const double* right = src + (j + 1) * ld;
    double* out = dst + j * ld;
    for (std::size_t i = 1; i <= n; ++i) {
      const double c = mid[i];
      out[i] = c + r * (mid[i - 1] + mid[i + 1] + left[i] + right[i] - 4.0 * c);
    }
  }
}

}  // namespace

const KernelTable& scalar_table() {
  static const KernelTable table{dot_scalar, axpy_scalar, scal_scalar,
                                 rot_scalar, heat_step_scalar};
  return table;
}

}  // namespace fmpca::kernels::detail

#pragma once

#include <cstddef>
#include <string_view>

namespace fmpca::kernels {

enum class Backend { scalar, avx2 };

// The backend is chosen once at startup: AVX2+FMA when the CPU supports it
// and the build carries the AVX2 translation unit, scalar otherwise. The
// FMPCA_KERNELS environment variable (scalar|avx2|auto) overrides the probe.
Backend active_backend();
std::string_view backend_name();
bool avx2_available();

// Force a backend, e.g. from the equivalence tests. Throws
// std::invalid_argument when the requested backend is unavailable.
void set_backend(Backend b);
void reset_backend();

double dot(const double* x, const double* y, std::size_t n);

// y += a * x
void axpy(double a, const double* x, double* y, std::size_t n);

// x *= a
void scal(double a, double* x, std::size_t n);

// Plane rotation of a column pair: x' = c*x - s*y, y' = s*x + c*y.
void rot(double* x, double* y, double c, double s, std::size_t n);

// One explicit step of the five-point heat stencil. src and dst are
// (n+2)x(n+2) column-major grids; only the n*n interior of dst is written,
// the boundary ring of dst must be preset by the caller.
void heat_step(const double* src, double* dst, std::size_t n, double r);

}  // namespace fmpca::kernels

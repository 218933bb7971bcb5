#include "fmpca/kernels.hpp"

#include <cstdlib>
#include <stdexcept>
#include <string>

#include "kernels_table.hpp"

namespace fmpca::kernels {

namespace {

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(__i386__)
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Backend probe_startup_backend() {
  const char* env = std::getenv("FMPCA_KERNELS");
  if (env != nullptr) {
    const std::string v(env);
    if (v == "scalar") return Backend::scalar;
    if (v == "avx2") {
      if (!avx2_available())
        throw std::invalid_argument("FMPCA_KERNELS=avx2 but AVX2 is unavailable");
      return Backend::avx2;
    }
    if (!v.empty() && v != "auto")
      throw std::invalid_argument("FMPCA_KERNELS must be scalar, avx2 or auto");
  }
  return avx2_available() ? Backend::avx2 : Backend::scalar;
}

struct Dispatch {
  Backend startup;
  Backend active;
  const detail::KernelTable* table;
};

Dispatch& dispatch() {
  static Dispatch d = [] {
    Dispatch init{};
    init.startup = probe_startup_backend();
    init.active = init.startup;
    init.table = init.active == Backend::avx2 ? detail::avx2_table()
                                              : &detail::scalar_table();
    return init;
  }();
  return d;
}

}  // namespace

bool avx2_available() { return cpu_has_avx2() && detail::avx2_table() != nullptr; }

Backend active_backend() { return dispatch().active; }

std::string_view backend_name() {
  return dispatch().active == Backend::avx2 ? "avx2" : "scalar";
}

void set_backend(Backend b) {
  if (b == Backend::avx2 && !avx2_available())
    throw std::invalid_argument("AVX2 kernels unavailable on this machine");
  auto& d = dispatch();
  d.active = b;
  d.table = b == Backend::avx2 ? detail::avx2_table() : &detail::scalar_table();
}

void reset_backend() { set_backend(dispatch().startup); }

double dot(const double* x, const double* y, std::size_t n) {
  return dispatch().table->dot(x, y, n);
}

void axpy(double a, const double* x, double* y, std::size_t n) {
  dispatch().table->axpy(a, x, y, n);
}

void scal(double a, double* x, std::size_t n) { dispatch().table->scal(a, x, n); }

void rot(double* x, double* y, double c, double s, std::size_t n) {
  dispatch().table->rot(x, y, c, s, n);
}

void heat_step(const double* src, double* dst, std::size_t n, double r) {
  dispatch().table->heat_step(src, dst, n, r);
}

}  // namespace fmpca::kernels

#pragma once

#include <cstddef>

namespace fmpca::kernels::detail {

struct KernelTable {
  double (*dot)(const double*, const double*, std::size_t);
  void (*axpy)(double, const double*, double*, std::size_t);
  void (*scal)(double, double*, std::size_t);
  void (*rot)(double*, double*, double, double, std::size_t);
  void (*heat_step)(const double*, double*, std::size_t, double);
};

const KernelTable& scalar_table();

// Null when the AVX2 translation unit was not compiled in.
const KernelTable* avx2_table();

}  // namespace fmpca::kernels::detail

#pragma once

#include <vector>

#include "fmpca/tensor.hpp"

namespace fmpca::linalg {

// Left singular factorization carried along the user chain: u is m x m with
// orthonormal columns (the basis is always completed to full size), s holds
// the m singular values in descending order. Sign convention: in each column
// of u the entry of largest magnitude is positive, ties broken by the
// smallest row index.
struct SingularState {
  Matrix u;
  std::vector<double> s;
};

struct SvdResult {
  SingularState state;
  // k x min(m, k); a = u * diag(s) * v^T restricted to the first min(m, k)
  // columns of u. Columns of v matching exactly-zero singular values are
  // left as zero.
  Matrix v;
};

// Deterministic full SVD via one-sided Jacobi with a fixed sweep order.
// u always has m columns; when k < m the basis is completed by
// orthonormalizing coordinate directions in index order, and singular values
// beyond min(m, k) are exactly zero. Throws on non-finite input.
SvdResult svd_full(const Matrix& a);

// Extends the left factorization of A to that of [A B] from (U_A, s_A, B)
// alone: residual R = B - U U^T B, column-normalized to R_hat with columns of
// norm <= 1e-12 * |B|_F treated as zero, then the update matrix
// [[diag(s), U^T B], [0, E]] is factored and U, s are read off its first m
// columns/values. Throws on row-count mismatch or non-finite entries.
SingularState incremental_update(const SingularState& state, const Matrix& b);

// First p columns of the left basis.
Matrix truncate_left(const SingularState& state, std::size_t p);

struct SymEig {
  Matrix vectors;               // columns are eigenvectors
  std::vector<double> values;   // descending
};

// Cyclic Jacobi eigendecomposition of a symmetric matrix.
SymEig sym_eig(const Matrix& a);

}  // namespace fmpca::linalg

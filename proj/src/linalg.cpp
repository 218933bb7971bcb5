#include "fmpca/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "fmpca/kernels.hpp"

namespace fmpca::linalg {

namespace {

constexpr int kMaxSweeps = 40;
constexpr double kOffdiagEps = 1e-15;
constexpr double kResidualRelTol = 1e-12;

void require_finite(const Matrix& a, const char* what) {
  if (!all_finite(a.values()))
    throw std::invalid_argument(std::string(what) + ": non-finite entries");
}

// Orthogonalizes the columns of a in place by cyclic Jacobi rotations,
// accumulating the rotations into rot_accum (which must have a.cols()
// columns). On return the columns of a are mutually orthogonal and
// a_in * rot_accum = a_out.
void jacobi_orthogonalize(Matrix& a, Matrix& rot_accum) {
  const std::size_t n = a.cols();
  if (n < 2) return;
  const std::size_t rows = a.rows();
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double app = kernels::dot(a.col(p), a.col(p), rows);
        const double aqq = kernels::dot(a.col(q), a.col(q), rows);
        if (app == 0.0 || aqq == 0.0) continue;
        const double apq = kernels::dot(a.col(p), a.col(q), rows);
        if (std::abs(apq) <= kOffdiagEps * std::sqrt(app) * std::sqrt(aqq)) continue;
        const double tau = (aqq - app) / (2.0 * apq);
        const double t =
            (tau >= 0.0 ? 1.0 : -1.0) / (std::abs(tau) + std::sqrt(1.0 + tau * tau));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = t * c;
        kernels::rot(a.col(p), a.col(q), c, s, rows);
        kernels::rot(rot_accum.col(p), rot_accum.col(q), c, s, rot_accum.rows());
        rotated = true;
      }
    }
    if (!rotated) break;
  }
}

std::vector<std::size_t> descending_order(const std::vector<double>& sigma) {
  std::vector<std::size_t> idx(sigma.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t i, std::size_t j) { return sigma[i] > sigma[j]; });
  return idx;
}

void copy_column(const Matrix& src, std::size_t sc, Matrix& dst, std::size_t dc) {
  std::copy(src.col(sc), src.col(sc) + src.rows(), dst.col(dc));
}

// Largest-magnitude entry of each column made positive; ties resolved by the
// smallest row index. Columns of v (when given) are flipped in step.
void apply_sign_convention(Matrix& u, Matrix* v) {
  for (std::size_t j = 0; j < u.cols(); ++j) {
    double best = -1.0;
    std::size_t arg = 0;
    const double* col = u.col(j);
    for (std::size_t i = 0; i < u.rows(); ++i) {
      const double mag = std::abs(col[i]);
      if (mag > best) {
        best = mag;
        arg = i;
      }
    }
    if (col[arg] < 0.0) {
      kernels::scal(-1.0, u.col(j), u.rows());
      if (v != nullptr && j < v->cols()) kernels::scal(-1.0, v->col(j), v->rows());
    }
  }
}

// Fills the column slots listed in `slots` with coordinate directions
// orthonormalized against the already-populated columns of u, in index order.
void complete_basis(Matrix& u, const std::vector<std::size_t>& slots,
                    const std::vector<bool>& populated) {
  const std::size_t m = u.rows();
  std::vector<bool> filled = populated;
  std::vector<double> w(m);
  std::size_t next = 0;
  for (std::size_t e = 0; e < m && next < slots.size(); ++e) {
    std::fill(w.begin(), w.end(), 0.0);
    w[e] = 1.0;
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t j = 0; j < u.cols(); ++j) {
        if (!filled[j]) continue;
        const double proj = kernels::dot(u.col(j), w.data(), m);
        kernels::axpy(-proj, u.col(j), w.data(), m);
      }
    }
    const double norm = std::sqrt(kernels::dot(w.data(), w.data(), m));
    if (norm <= 1e-6) continue;
    kernels::scal(1.0 / norm, w.data(), m);
    const std::size_t slot = slots[next++];
    std::copy(w.begin(), w.end(), u.col(slot));
    filled[slot] = true;
  }
  if (next != slots.size()) throw std::runtime_error("basis completion failed");
}

}  // namespace

SvdResult svd_full(const Matrix& a) {
  if (a.rows() == 0 || a.cols() == 0) throw std::invalid_argument("svd of empty matrix");
  require_finite(a, "svd");
  const std::size_t m = a.rows();
  const std::size_t k = a.cols();

  SvdResult out;
  out.state.s.assign(m, 0.0);

  if (m <= k) {
    // Work on a^T so the accumulated rotations directly form the full m x m
    // left basis.
    Matrix t = transpose(a);
    Matrix rot = Matrix::identity(m);
    jacobi_orthogonalize(t, rot);

    std::vector<double> sigma(m);
    for (std::size_t i = 0; i < m; ++i)
      sigma[i] = std::sqrt(kernels::dot(t.col(i), t.col(i), k));
    const auto order = descending_order(sigma);

    out.state.u = Matrix(m, m);
    out.v = Matrix(k, m);
    for (std::size_t j = 0; j < m; ++j) {
      const std::size_t src = order[j];
      copy_column(rot, src, out.state.u, j);
      out.state.s[j] = sigma[src];
      if (sigma[src] > 0.0) {
        copy_column(t, src, out.v, j);
        kernels::scal(1.0 / sigma[src], out.v.col(j), k);
      }
    }
  } else {
    Matrix t = a;
    Matrix rot = Matrix::identity(k);
    jacobi_orthogonalize(t, rot);

    std::vector<double> sigma(k);
    for (std::size_t i = 0; i < k; ++i)
      sigma[i] = std::sqrt(kernels::dot(t.col(i), t.col(i), m));
    const auto order = descending_order(sigma);

    const double zero_tol = 1e-13 * frobenius_norm(a);
    out.state.u = Matrix(m, m);
    out.v = Matrix(k, k);
    std::vector<bool> populated(m, false);
    std::vector<std::size_t> empty_slots;
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t src = order[j];
      copy_column(rot, src, out.v, j);
      out.state.s[j] = sigma[src];
      if (sigma[src] > zero_tol) {
        copy_column(t, src, out.state.u, j);
        kernels::scal(1.0 / sigma[src], out.state.u.col(j), m);
        populated[j] = true;
      } else {
        empty_slots.push_back(j);
      }
    }
    for (std::size_t j = k; j < m; ++j) empty_slots.push_back(j);
    complete_basis(out.state.u, empty_slots, populated);
  }

  apply_sign_convention(out.state.u, &out.v);
  return out;
}

SingularState incremental_update(const SingularState& state, const Matrix& b) {
  const std::size_t m = state.u.rows();
  if (state.u.cols() != m || state.s.size() != m)
    throw std::invalid_argument("incremental update: malformed singular state");
  if (b.rows() != m) throw std::invalid_argument("incremental update: row-count mismatch");
  require_finite(b, "incremental update");
  require_finite(state.u, "incremental update");
  const std::size_t p = b.cols();

  const Matrix w = matmul_at_b(state.u, b);  // U^T B

  Matrix r = b;
  for (std::size_t c = 0; c < p; ++c) {
    for (std::size_t j = 0; j < m; ++j) {
      kernels::axpy(-w(j, c), state.u.col(j), r.col(c), m);
    }
  }

  const double tol = kResidualRelTol * frobenius_norm(b);
  std::vector<std::size_t> kept;
  std::vector<double> norms(p);
  for (std::size_t c = 0; c < p; ++c) {
    norms[c] = std::sqrt(kernels::dot(r.col(c), r.col(c), m));
    if (norms[c] > tol) kept.push_back(c);
  }
  const std::size_t q = kept.size();

  // Update matrix [[diag(s), U^T B], [0, E]] with the rows of exactly-zero
  // residual columns dropped; those rows carry no energy and the matching
  // columns of R_hat are zero, so the factorization is unchanged.
  Matrix update(m + q, m + p);
  for (std::size_t i = 0; i < m; ++i) update(i, i) = state.s[i];
  for (std::size_t c = 0; c < p; ++c)
    for (std::size_t i = 0; i < m; ++i) update(i, m + c) = w(i, c);
  for (std::size_t t = 0; t < q; ++t) update(m + t, m + kept[t]) = norms[kept[t]];

  const SvdResult ms = svd_full(update);

  SingularState result;
  result.u = Matrix(m, m);
  result.s.assign(ms.state.s.begin(), ms.state.s.begin() + m);
  for (std::size_t c = 0; c < m; ++c) {
    double* dst = result.u.col(c);
    for (std::size_t j = 0; j < m; ++j)
      kernels::axpy(ms.state.u(j, c), state.u.col(j), dst, m);
    for (std::size_t t = 0; t < q; ++t) {
      const double weight = ms.state.u(m + t, c) / norms[kept[t]];
      kernels::axpy(weight, r.col(kept[t]), dst, m);
    }
  }
  apply_sign_convention(result.u, nullptr);
  return result;
}

Matrix truncate_left(const SingularState& state, std::size_t p) {
  if (p == 0 || p > state.u.cols())
    throw std::invalid_argument("truncation width out of range");
  Matrix out(state.u.rows(), p);
  for (std::size_t j = 0; j < p; ++j) copy_column(state.u, j, out, j);
  return out;
}

SymEig sym_eig(const Matrix& a) {
  if (a.rows() != a.cols()) throw std::invalid_argument("sym_eig expects a square matrix");
  require_finite(a, "sym_eig");
  const std::size_t n = a.rows();
  Matrix d = a;
  Matrix v = Matrix::identity(n);

  double scale = 0.0;
  for (std::size_t i = 0; i < n; ++i) scale = std::max(scale, std::abs(d(i, i)));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) scale = std::max(scale, std::abs(d(i, j)));
  const double stop = scale == 0.0 ? 0.0 : 1e-15 * scale;

  for (int sweep = 0; sweep < 60; ++sweep) {
    double off = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) off = std::max(off, std::abs(d(i, j)));
    if (off <= stop) break;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double dpq = d(p, q);
        if (std::abs(dpq) <= stop) continue;
        const double theta = (d(q, q) - d(p, p)) / (2.0 * dpq);
        const double t =
            (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(1.0 + theta * theta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = t * c;
        const double dpp = d(p, p);
        const double dqq = d(q, q);
        d(p, p) = dpp - t * dpq;
        d(q, q) = dqq + t * dpq;
        d(p, q) = 0.0;
        d(q, p) = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          if (i == p || i == q) continue;
          const double dip = d(i, p);
          const double diq = d(i, q);
          d(i, p) = c * dip - s * diq;
          d(p, i) = d(i, p);
          d(i, q) = s * dip + c * diq;
          d(q, i) = d(i, q);
        }
        kernels::rot(v.col(p), v.col(q), c, s, n);
      }
    }
  }

  std::vector<double> values(n);
  for (std::size_t i = 0; i < n; ++i) values[i] = d(i, i);
  const auto order = descending_order(values);
  SymEig out;
  out.vectors = Matrix(n, n);
  out.values.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    out.values[j] = values[order[j]];
    copy_column(v, order[j], out.vectors, j);
  }
  return out;
}

}  // namespace fmpca::linalg

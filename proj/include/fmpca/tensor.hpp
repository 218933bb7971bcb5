#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace fmpca {

// Dense order-N tensor over double, stored first-index-fastest (the
// column-major generalization). Element (i_0, ..., i_{N-1}) lives at offset
// sum_k i_k * prod_{m<k} dim_m.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> dims);
  Tensor(std::vector<std::size_t> dims, std::vector<double> data);

  const std::vector<std::size_t>& dims() const { return dims_; }
  std::size_t order() const { return dims_.size(); }
  std::size_t size() const { return data_.size(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double operator[](std::size_t flat) const { return data_[flat]; }
  double& operator[](std::size_t flat) { return data_[flat]; }

  std::size_t offset_of(std::span<const std::size_t> indices) const;
  double at(std::initializer_list<std::size_t> indices) const;
  double& at(std::initializer_list<std::size_t> indices);

 private:
  std::vector<std::size_t> dims_;
  std::vector<double> data_;
};

// Column-major matrix; data layout matches an order-2 Tensor.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  static Matrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double operator()(std::size_t r, std::size_t c) const { return data_[r + c * rows_]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r + c * rows_]; }

  double* col(std::size_t c) { return data_.data() + c * rows_; }
  const double* col(std::size_t c) const { return data_.data() + c * rows_; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// The per-mode projection factors; factor n is I_n x P_n with orthonormal
// columns.
struct ProjectionSet {
  std::vector<Matrix> factors;

  std::vector<std::size_t> ranks() const;
  std::vector<std::size_t> input_dims() const;
};

// Mode-n matricization. Columns are the mode-n fibers; the column index runs
// fastest over index n-1, descending through index 0, then over index N-1,
// descending through index n+1. This is the unique ordering under which
// matricization commutes with multi-mode products via the Kronecker chain
// built by other_modes_kron (validated by the ordering-consistency tests).
Matrix matricize(const Tensor& x, std::size_t mode);

// Exact inverse of matricize under the same column ordering.
Tensor fold(const Matrix& m, std::size_t mode, const std::vector<std::size_t>& dims);

// x times u along `mode`; result dims replace dim(mode) with u.rows().
Tensor mode_product(const Tensor& x, const Matrix& u, std::size_t mode);

// Applies factor^T (or factor when transpose=false) along every mode in
// ascending order.
Tensor multi_mode_project(const Tensor& x, const ProjectionSet& p, bool transpose = true);

Matrix kronecker(const Matrix& a, const Matrix& b);

// Kronecker product of all factors except `mode`, chained in the wrap-around
// order (mode+1, ..., N-1, 0, ..., mode-1). Returns the 1x1 identity for
// order-1 tensors.
Matrix other_modes_kron(const ProjectionSet& p, std::size_t mode);

std::vector<double> vectorize(const Tensor& x);
double frobenius_norm(const Tensor& x);
double inner_product(const Tensor& a, const Tensor& b);

// Elementwise helpers used by centering and masking.
void add_in_place(Tensor& a, const Tensor& b);
void sub_in_place(Tensor& a, const Tensor& b);
void scale_in_place(Tensor& a, double factor);
Tensor tensor_mean(std::span<const Tensor> samples);

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix matmul_at_b(const Matrix& a, const Matrix& b);  // a^T * b
Matrix transpose(const Matrix& a);
double frobenius_norm(const Matrix& a);

Tensor matrix_to_tensor(const Matrix& m);
Matrix tensor_to_matrix(const Tensor& t);

bool all_finite(std::span<const double> values);

// "TNSR" binary format: magic TNSR1\0, u8 order, order u64 little-endian
// dims, then prod(dims) f64 little-endian values in storage order. The
// encode/decode round trip is bit-exact.
std::vector<std::uint8_t> tnsr_encode(const Tensor& t);
Tensor tnsr_decode(std::span<const std::uint8_t> bytes);
void tnsr_save(const std::string& path, const Tensor& t);
Tensor tnsr_load(const std::string& path);

}  // namespace fmpca

#include "fmpca/tensor.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "fmpca/kernels.hpp"

namespace fmpca {

namespace {

std::size_t checked_volume(const std::vector<std::size_t>& dims) {
  if (dims.empty()) throw std::invalid_argument("tensor order must be >= 1");
  std::size_t vol = 1;
  for (std::size_t d : dims) {
    if (d == 0) throw std::invalid_argument("tensor dims must be >= 1");
    if (d != 0 && vol > SIZE_MAX / d) throw std::invalid_argument("tensor volume overflow");
    vol *= d;
  }
  return vol;
}

std::vector<std::size_t> storage_strides(const std::vector<std::size_t>& dims) {
  std::vector<std::size_t> stride(dims.size());
  std::size_t acc = 1;
  for (std::size_t k = 0; k < dims.size(); ++k) {
    stride[k] = acc;
    acc *= dims[k];
  }
  return stride;
}

// Fiber index order for mode-n matricization columns, fastest first:
// (n-1, ..., 0, N-1, ..., n+1).
std::vector<std::size_t> column_index_order(std::size_t order, std::size_t mode) {
  std::vector<std::size_t> ord;
  ord.reserve(order - 1);
  for (std::size_t k = mode; k-- > 0;) ord.push_back(k);
  for (std::size_t k = order; k-- > mode + 1;) ord.push_back(k);
  return ord;
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> dims)
    : dims_(std::move(dims)), data_(checked_volume(dims_), 0.0) {}

Tensor::Tensor(std::vector<std::size_t> dims, std::vector<double> data)
    : dims_(std::move(dims)), data_(std::move(data)) {
  if (checked_volume(dims_) != data_.size())
    throw std::invalid_argument("tensor data length does not match dims");
}

std::size_t Tensor::offset_of(std::span<const std::size_t> indices) const {
  if (indices.size() != dims_.size())
    throw std::invalid_argument("index count does not match tensor order");
  std::size_t off = 0;
  std::size_t stride = 1;
  for (std::size_t k = 0; k < dims_.size(); ++k) {
    if (indices[k] >= dims_[k]) throw std::invalid_argument("tensor index out of range");
    off += indices[k] * stride;
    stride *= dims_[k];
  }
  return off;
}

double Tensor::at(std::initializer_list<std::size_t> indices) const {
  return data_[offset_of(std::span<const std::size_t>(indices.begin(), indices.size()))];
}

double& Tensor::at(std::initializer_list<std::size_t> indices) {
  return data_[offset_of(std::span<const std::size_t>(indices.begin(), indices.size()))];
}

Matrix::Matrix(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols)
    throw std::invalid_argument("matrix data length does not match shape");
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

std::vector<std::size_t> ProjectionSet::ranks() const {
  std::vector<std::size_t> r;
  r.reserve(factors.size());
  for (const auto& f : factors) r.push_back(f.cols());
  return r;
}

std::vector<std::size_t> ProjectionSet::input_dims() const {
  std::vector<std::size_t> d;
  d.reserve(factors.size());
  for (const auto& f : factors) d.push_back(f.rows());
  return d;
}

Matrix matricize(const Tensor& x, std::size_t mode) {
  const auto& dims = x.dims();
  if (mode >= dims.size()) throw std::invalid_argument("matricization mode out of range");
  const std::size_t rows = dims[mode];
  const std::size_t cols = x.size() / rows;
  Matrix out(rows, cols);

  const auto stride = storage_strides(dims);
  const auto ord = column_index_order(dims.size(), mode);
  const std::size_t fiber_stride = stride[mode];

  std::vector<std::size_t> counter(ord.size(), 0);
  std::size_t offset = 0;
  for (std::size_t c = 0; c < cols; ++c) {
    const double* src = x.data() + offset;
    double* dst = out.col(c);
    if (fiber_stride == 1) {
      std::memcpy(dst, src, rows * sizeof(double));
    } else {
      for (std::size_t r = 0; r < rows; ++r) dst[r] = src[r * fiber_stride];
    }
    for (std::size_t t = 0; t < ord.size(); ++t) {
      const std::size_t k = ord[t];
      offset += stride[k];
      if (++counter[t] < dims[k]) break;
      offset -= stride[k] * dims[k];
      counter[t] = 0;
    }
  }
  return out;
}

Tensor fold(const Matrix& m, std::size_t mode, const std::vector<std::size_t>& dims) {
  if (mode >= dims.size()) throw std::invalid_argument("fold mode out of range");
  const std::size_t vol = checked_volume(dims);
  if (m.rows() != dims[mode] || m.rows() * m.cols() != vol)
    throw std::invalid_argument("fold shape mismatch with dims");
  Tensor out(dims);

  const auto stride = storage_strides(dims);
  const auto ord = column_index_order(dims.size(), mode);
  const std::size_t fiber_stride = stride[mode];
  const std::size_t rows = m.rows();

  std::vector<std::size_t> counter(ord.size(), 0);
  std::size_t offset = 0;
  for (std::size_t c = 0; c < m.cols(); ++c) {
    const double* src = m.col(c);
    double* dst = out.data() + offset;
    if (fiber_stride == 1) {
      std::memcpy(dst, src, rows * sizeof(double));
    } else {
      for (std::size_t r = 0; r < rows; ++r) dst[r * fiber_stride] = src[r];
    }
    for (std::size_t t = 0; t < ord.size(); ++t) {
      const std::size_t k = ord[t];
      offset += stride[k];
      if (++counter[t] < dims[k]) break;
      offset -= stride[k] * dims[k];
      counter[t] = 0;
    }
  }
  return out;
}

Tensor mode_product(const Tensor& x, const Matrix& u, std::size_t mode) {
  const auto& dims = x.dims();
  if (mode >= dims.size()) throw std::invalid_argument("mode product mode out of range");
  if (u.cols() != dims[mode])
    throw std::invalid_argument("mode product inner dimension mismatch");
  const Matrix xm = matricize(x, mode);
  const Matrix ym = matmul(u, xm);
  std::vector<std::size_t> out_dims = dims;
  out_dims[mode] = u.rows();
  return fold(ym, mode, out_dims);
}

Tensor multi_mode_project(const Tensor& x, const ProjectionSet& p, bool transpose) {
  if (p.factors.size() != x.order())
    throw std::invalid_argument("projection set order does not match tensor");
  Tensor y = x;
  for (std::size_t n = 0; n < p.factors.size(); ++n) {
    y = mode_product(y, transpose ? fmpca::transpose(p.factors[n]) : p.factors[n], n);
  }
  return y;
}

Matrix kronecker(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (std::size_t ca = 0; ca < a.cols(); ++ca) {
    for (std::size_t cb = 0; cb < b.cols(); ++cb) {
      double* dst = out.col(ca * b.cols() + cb);
      const double* bcol = b.col(cb);
      for (std::size_t ra = 0; ra < a.rows(); ++ra) {
        const double aval = a(ra, ca);
        double* seg = dst + ra * b.rows();
        for (std::size_t rb = 0; rb < b.rows(); ++rb) seg[rb] = aval * bcol[rb];
      }
    }
  }
  return out;
}

Matrix other_modes_kron(const ProjectionSet& p, std::size_t mode) {
  const std::size_t order = p.factors.size();
  if (mode >= order) throw std::invalid_argument("mode out of range");
  if (order == 1) return Matrix::identity(1);
  std::vector<std::size_t> chain;
  for (std::size_t k = mode + 1; k < order; ++k) chain.push_back(k);
  for (std::size_t k = 0; k < mode; ++k) chain.push_back(k);
  Matrix out = p.factors[chain[0]];
  for (std::size_t i = 1; i < chain.size(); ++i) out = kronecker(out, p.factors[chain[i]]);
  return out;
}

std::vector<double> vectorize(const Tensor& x) { return x.values(); }

double frobenius_norm(const Tensor& x) {
  return std::sqrt(kernels::dot(x.data(), x.data(), x.size()));
}

double inner_product(const Tensor& a, const Tensor& b) {
  if (a.dims() != b.dims()) throw std::invalid_argument("inner product dims mismatch");
  return kernels::dot(a.data(), b.data(), a.size());
}

void add_in_place(Tensor& a, const Tensor& b) {
  if (a.dims() != b.dims()) throw std::invalid_argument("tensor add dims mismatch");
  kernels::axpy(1.0, b.data(), a.data(), a.size());
}

void sub_in_place(Tensor& a, const Tensor& b) {
  if (a.dims() != b.dims()) throw std::invalid_argument("tensor sub dims mismatch");
  kernels::axpy(-1.0, b.data(), a.data(), a.size());
}

void scale_in_place(Tensor& a, double factor) {
  kernels::scal(factor, a.data(), a.size());
}

Tensor tensor_mean(std::span<const Tensor> samples) {
  if (samples.empty()) throw std::invalid_argument("mean of empty sample set");
  Tensor acc(samples[0].dims());
  for (const Tensor& s : samples) add_in_place(acc, s);
  scale_in_place(acc, 1.0 / static_cast<double>(samples.size()));
  return acc;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul shape mismatch");
  Matrix c(a.rows(), b.cols());
  for (std::size_t j = 0; j < b.cols(); ++j) {
    double* dst = c.col(j);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double w = b(k, j);
      if (w != 0.0) kernels::axpy(w, a.col(k), dst, a.rows());
    }
  }
  return c;
}

Matrix matmul_at_b(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) throw std::invalid_argument("matmul_at_b shape mismatch");
  Matrix c(a.cols(), b.cols());
  for (std::size_t j = 0; j < b.cols(); ++j) {
    double* dst = c.col(j);
    for (std::size_t i = 0; i < a.cols(); ++i) {
      dst[i] = kernels::dot(a.col(i), b.col(j), a.rows());
    }
  }
  return c;
}

Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t j = 0; j < a.cols(); ++j)
    for (std::size_t i = 0; i < a.rows(); ++i) t(j, i) = a(i, j);
  return t;
}

double frobenius_norm(const Matrix& a) {
  return std::sqrt(kernels::dot(a.data(), a.data(), a.size()));
}

Tensor matrix_to_tensor(const Matrix& m) {
  return Tensor({m.rows(), m.cols()}, m.values());
}

Matrix tensor_to_matrix(const Tensor& t) {
  if (t.order() != 2) throw std::invalid_argument("expected an order-2 tensor");
  return Matrix(t.dims()[0], t.dims()[1], t.values());
}

bool all_finite(std::span<const double> values) {
  for (double v : values)
    if (!std::isfinite(v)) return false;
  return true;
}

namespace {

constexpr char kMagic[6] = {'T', 'N', 'S', 'R', '1', '\0'};

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_u64(std::span<const std::uint8_t> bytes, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[at + i]) << (8 * i);
  return v;
}

}  // namespace

std::vector<std::uint8_t> tnsr_encode(const Tensor& t) {
  if (t.order() > 255) throw std::invalid_argument("tensor order exceeds format limit");
  std::vector<std::uint8_t> out;
  out.reserve(7 + 8 * t.order() + 8 * t.size());
  out.insert(out.end(), kMagic, kMagic + 6);
  out.push_back(static_cast<std::uint8_t>(t.order()));
  for (std::size_t d : t.dims()) put_u64(out, d);
  for (double v : t.values()) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u64(out, bits);
  }
  return out;
}

Tensor tnsr_decode(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 7 || std::memcmp(bytes.data(), kMagic, 6) != 0)
    throw std::invalid_argument("not a TNSR stream");
  const std::size_t order = bytes[6];
  if (order == 0) throw std::invalid_argument("TNSR order must be >= 1");
  std::size_t at = 7;
  if (bytes.size() < at + 8 * order) throw std::invalid_argument("truncated TNSR header");
  std::vector<std::size_t> dims(order);
  for (std::size_t k = 0; k < order; ++k) {
    dims[k] = static_cast<std::size_t>(get_u64(bytes, at));
    at += 8;
  }
  const std::size_t vol = checked_volume(dims);
  if (bytes.size() != at + 8 * vol) throw std::invalid_argument("TNSR payload length mismatch");
  std::vector<double> data(vol);
  for (std::size_t i = 0; i < vol; ++i) {
    const std::uint64_t bits = get_u64(bytes, at);
    std::memcpy(&data[i], &bits, 8);
    at += 8;
  }
  return Tensor(std::move(dims), std::move(data));
}

void tnsr_save(const std::string& path, const Tensor& t) {
  const auto bytes = tnsr_encode(t);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path);
}

Tensor tnsr_load(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw std::runtime_error("cannot open: " + path);
  const std::streamsize len = in.tellg();
  in.seekg(0);
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(len));
  in.read(reinterpret_cast<char*>(bytes.data()), len);
  if (!in) throw std::runtime_error("read failed: " + path);
  return tnsr_decode(bytes);
}

}  // namespace fmpca

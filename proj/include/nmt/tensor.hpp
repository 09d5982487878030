#pragma once

// Dense row-major matrices and the few kernels the transformer needs. Every
// kernel computes each output row from its own input row with a fixed loop
// order, so results do not depend on which other rows share the call.

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace nmt {

template <typename T>
class Matrix {
 public:
  Matrix() = default;
  Matrix(size_t rows, size_t cols, T fill = T(0))
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  size_t rows() const { return rows_; }
  size_t cols() const { return cols_; }
  size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T &operator()(size_t r, size_t c) { return data_[r * cols_ + c]; }
  const T &operator()(size_t r, size_t c) const { return data_[r * cols_ + c]; }
  T &operator[](size_t i) { return data_[i]; }
  const T &operator[](size_t i) const { return data_[i]; }

  T *data() { return data_.data(); }
  const T *data() const { return data_.data(); }
  T *row(size_t r) { return data_.data() + r * cols_; }
  const T *row(size_t r) const { return data_.data() + r * cols_; }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }
  bool same_shape(const Matrix &other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  bool operator==(const Matrix &) const = default;

  template <typename U>
  Matrix<U> cast() const {
    Matrix<U> out(rows_, cols_);
    for (size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

 private:
  size_t rows_ = 0;
  size_t cols_ = 0;
  std::vector<T> data_;
};

namespace kernels {

// c[n x m] += a[n x k] * b[k x m]
// Rows are processed four at a time so each row of b is loaded once per
// block; every output element still sees the same sequence of operations.
template <typename T>
void matmul_acc(const T *__restrict a, const T *__restrict b, T *__restrict c, size_t n,
                size_t k, size_t m) {
  size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    T *__restrict c0 = c + i * m;
    T *__restrict c1 = c0 + m;
    T *__restrict c2 = c1 + m;
    T *__restrict c3 = c2 + m;
    const T *a0 = a + i * k;
    for (size_t p = 0; p < k; ++p) {
      const T s0 = a0[p];
      const T s1 = a0[k + p];
      const T s2 = a0[2 * k + p];
      const T s3 = a0[3 * k + p];
      const T *__restrict brow = b + p * m;
      for (size_t j = 0; j < m; ++j) {
        const T bv = brow[j];
        c0[j] += s0 * bv;
        c1[j] += s1 * bv;
        c2[j] += s2 * bv;
        c3[j] += s3 * bv;
      }
    }
  }
  for (; i < n; ++i) {
    T *__restrict crow = c + i * m;
    const T *arow = a + i * k;
    for (size_t p = 0; p < k; ++p) {
      const T scale = arow[p];
      const T *__restrict brow = b + p * m;
      for (size_t j = 0; j < m; ++j) crow[j] += scale * brow[j];
    }
  }
}

// c[k x m] += a[n x k]^T * b[n x m]
template <typename T>
void matmul_tn_acc(const T *__restrict a, const T *__restrict b, T *__restrict c, size_t n,
                   size_t k, size_t m) {
  for (size_t i = 0; i < n; ++i) {
    const T *arow = a + i * k;
    const T *__restrict brow = b + i * m;
    for (size_t p = 0; p < k; ++p) {
      const T scale = arow[p];
      if (scale == T(0)) continue;
      T *__restrict crow = c + p * m;
      for (size_t j = 0; j < m; ++j) crow[j] += scale * brow[j];
    }
  }
}

template <typename T>
Matrix<T> transpose(const Matrix<T> &m) {
  Matrix<T> out(m.cols(), m.rows());
  for (size_t r = 0; r < m.rows(); ++r) {
    for (size_t c = 0; c < m.cols(); ++c) out(c, r) = m(r, c);
  }
  return out;
}

// c[n x m] += a[n x k] * b[m x k]^T
template <typename T>
void matmul_nt_acc(const Matrix<T> &a, const Matrix<T> &b, Matrix<T> &c) {
  Matrix<T> bt = transpose(b);
  matmul_acc(a.data(), bt.data(), c.data(), a.rows(), a.cols(), b.rows());
}

template <typename T>
void add_inplace(std::span<T> dst, std::span<const T> src) {
  assert(dst.size() == src.size());
  for (size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace kernels
}  // namespace nmt

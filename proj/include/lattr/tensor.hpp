#pragma once

// Dense row-major kernels. Every reduction runs in a fixed loop order and
// accumulates in double, so reruns are bit-identical for either scalar type.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lattr/error.hpp"

namespace lattr {

#ifdef LATTR_DOUBLE
using real = double;
#else
using real = float;
#endif

template <std::floating_point T>
using Vector = std::vector<T>;

template <std::floating_point T>
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T{0})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw ShapeError("matrix data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_string(rows_, cols_));
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = T{1};
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  T operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }

  std::span<const T> data() const noexcept { return data_; }
  std::span<T> data() noexcept { return data_; }

  Matrix transposed() const {
    Matrix t(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r)
      for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
    return t;
  }

  // Columns [begin, begin + count).
  Matrix column_block(std::size_t begin, std::size_t count) const {
    if (begin + count > cols_) throw ShapeError("column block out of range for " + shape());
    Matrix out(rows_, count);
    for (std::size_t r = 0; r < rows_; ++r)
      std::copy_n(data_.begin() + r * cols_ + begin, count, out.data_.begin() + r * count);
    return out;
  }

  // Rows [begin, begin + count).
  Matrix row_block(std::size_t begin, std::size_t count) const {
    if (begin + count > rows_) throw ShapeError("row block out of range for " + shape());
    return Matrix(count, cols_,
                  std::vector<T>(data_.begin() + begin * cols_,
                                 data_.begin() + (begin + count) * cols_));
  }

  template <std::floating_point U>
  Matrix<U> cast() const {
    return Matrix<U>(rows_, cols_, std::vector<U>(data_.begin(), data_.end()));
  }

  std::string shape() const { return shape_string(rows_, cols_); }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  static std::string shape_string(std::size_t r, std::size_t c) {
    return "(" + std::to_string(r) + "x" + std::to_string(c) + ")";
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

template <std::floating_point T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ for " + a.shape() + " x " + b.shape());
  }
  Matrix<T> out(a.rows(), b.cols());
  std::vector<double> acc(b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      const auto brow = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) acc[j] += aik * brow[j];
    }
    for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) = static_cast<T>(acc[j]);
  }
  return out;
}

// Row vector times matrix: x (1 x n) * w (n x m).
template <std::floating_point T>
Vector<T> vec_mat(std::span<const T> x, const Matrix<T>& w) {
  if (x.size() != w.rows()) {
    throw ShapeError("vec_mat: vector of length " + std::to_string(x.size()) +
                     " times " + w.shape());
  }
  std::vector<double> acc(w.cols(), 0.0);
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double xk = x[k];
    const auto wrow = w.row(k);
    for (std::size_t j = 0; j < w.cols(); ++j) acc[j] += xk * wrow[j];
  }
  return Vector<T>(acc.begin(), acc.end());
}

template <std::floating_point T>
double dot(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) {
    throw ShapeError("dot: lengths " + std::to_string(a.size()) + " and " +
                     std::to_string(b.size()));
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]) * b[i];
  return acc;
}

template <std::floating_point T>
void add_inplace(std::span<T> dst, std::span<const T> src) {
  if (dst.size() != src.size()) throw ShapeError("add: length mismatch");
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

// dst += alpha * src
template <std::floating_point T>
void axpy(double alpha, std::span<const T> src, std::span<T> dst) {
  if (dst.size() != src.size()) throw ShapeError("axpy: length mismatch");
  for (std::size_t i = 0; i < dst.size(); ++i)
    dst[i] = static_cast<T>(dst[i] + alpha * src[i]);
}

template <std::floating_point T>
struct LayerNormStats {
  T mean{};
  T std{};  // sqrt(population variance + eps)
};

template <std::floating_point T>
LayerNormStats<T> layer_norm_stats(std::span<const T> x, double eps) {
  if (x.empty()) throw ShapeError("layer_norm_stats: empty vector");
  double sum = 0.0;
  for (T v : x) sum += v;
  const double mean = sum / static_cast<double>(x.size());
  double sq = 0.0;
  for (T v : x) sq += (v - mean) * (v - mean);
  const double var = sq / static_cast<double>(x.size());
  return {static_cast<T>(mean), static_cast<T>(std::sqrt(var + eps))};
}

template <std::floating_point T>
Vector<T> layer_norm(std::span<const T> x, std::span<const T> gamma, std::span<const T> beta,
                     const LayerNormStats<T>& stats) {
  if (gamma.size() != x.size() || beta.size() != x.size()) {
    throw ShapeError("layer_norm: gamma/beta length differs from input");
  }
  Vector<T> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = static_cast<T>((static_cast<double>(x[i]) - stats.mean) / stats.std * gamma[i] +
                            beta[i]);
  }
  return out;
}

template <std::floating_point T>
Vector<T> layer_norm(std::span<const T> x, std::span<const T> gamma, std::span<const T> beta,
                     double eps) {
  return layer_norm(x, gamma, beta, layer_norm_stats(x, eps));
}

template <std::floating_point T>
Vector<T> softmax_row(std::span<const T> x) {
  Vector<T> out(x.size());
  if (x.empty()) return out;
  const double mx = *std::max_element(x.begin(), x.end());
  double sum = 0.0;
  std::vector<double> e(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    e[i] = std::exp(static_cast<double>(x[i]) - mx);
    sum += e[i];
  }
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = static_cast<T>(e[i] / sum);
  return out;
}

// tanh approximation used by GPT-2 ("gelu_new").
template <std::floating_point T>
T gelu(T x) {
  const double v = x;
  const double c = std::sqrt(2.0 / std::numbers::pi);
  return static_cast<T>(0.5 * v * (1.0 + std::tanh(c * (v + 0.044715 * v * v * v))));
}

template <std::floating_point T>
Vector<T> gelu(std::span<const T> x) {
  Vector<T> out(x.size());
  std::transform(x.begin(), x.end(), out.begin(), [](T v) { return gelu(v); });
  return out;
}

template <std::floating_point T>
double l1_norm(std::span<const T> x) {
  double acc = 0.0;
  for (T v : x) acc += std::abs(static_cast<double>(v));
  return acc;
}

template <std::floating_point T>
bool all_finite(std::span<const T> x) {
  return std::all_of(x.begin(), x.end(), [](T v) { return std::isfinite(v); });
}

}  // namespace lattr

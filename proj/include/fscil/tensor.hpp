#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "fscil/error.hpp"
#include "fscil/rng.hpp"

namespace fscil {

// Dense row-major tensor of doubles. Rank is dynamic but everything in this
// engine is a scalar, a vector, or a matrix.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape)
      : shape_(std::move(shape)), values_(checked_numel(shape_), 0.0) {}

  Tensor(std::vector<std::size_t> shape, std::vector<double> values)
      : shape_(std::move(shape)), values_(std::move(values)) {
    if (values_.size() != checked_numel(shape_)) {
      throw DimensionError("tensor value count does not match shape");
    }
  }

  static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<std::size_t> shape, double v) {
    Tensor t(std::move(shape));
    std::fill(t.values_.begin(), t.values_.end(), v);
    return t;
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  static Tensor row_vector(std::vector<double> v) {
    std::size_t n = v.size();
    return Tensor({n}, std::move(v));
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t numel() const { return values_.size(); }
  std::size_t rank() const { return shape_.size(); }

  std::size_t rows() const {
    if (rank() != 2) throw DimensionError("rows() requires a rank-2 tensor");
    return shape_[0];
  }
  std::size_t cols() const {
    if (rank() != 2) throw DimensionError("cols() requires a rank-2 tensor");
    return shape_[1];
  }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  double& at(std::size_t r, std::size_t c) { return values_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return values_[r * shape_[1] + c]; }

  double* row_ptr(std::size_t r) { return values_.data() + r * shape_[1]; }
  const double* row_ptr(std::size_t r) const { return values_.data() + r * shape_[1]; }

  std::span<const double> data() const { return values_; }
  std::span<double> data() { return values_; }
  const std::vector<double>& values() const { return values_; }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  bool all_finite() const {
    for (double v : values_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  // Extracts row r of a matrix as a vector tensor.
  Tensor row(std::size_t r) const {
    std::size_t c = cols();
    std::vector<double> out(values_.begin() + static_cast<std::ptrdiff_t>(r * c),
                            values_.begin() + static_cast<std::ptrdiff_t>((r + 1) * c));
    return Tensor({c}, std::move(out));
  }

 private:
  static std::size_t checked_numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) {
      if (d == 0) throw DimensionError("tensor shape entries must be positive");
      n *= d;
    }
    return shape.empty() ? 0 : n;
  }

  std::vector<std::size_t> shape_;
  std::vector<double> values_;
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

constexpr double kDegenerateNormFloor = 1e-12;

// v / ||v||. Rejects near-zero vectors instead of emitting junk directions.
inline Tensor l2_normalize(const Tensor& v) {
  double n = norm(v.data());
  if (n <= kDegenerateNormFloor) {
    throw DegenerateVectorError("l2_normalize: norm below " + std::to_string(kDegenerateNormFloor));
  }
  std::vector<double> out(v.numel());
  for (std::size_t i = 0; i < v.numel(); ++i) out[i] = v[i] / n;
  return Tensor(v.shape(), std::move(out));
}

// Cosine similarity, clamped to [-1, 1] against rounding.
inline double cosine_sim(const Tensor& u, const Tensor& v) {
  if (u.numel() != v.numel()) throw DimensionError("cosine_sim: length mismatch");
  double nu = norm(u.data());
  double nv = norm(v.data());
  if (nu <= kDegenerateNormFloor || nv <= kDegenerateNormFloor) {
    throw DegenerateVectorError("cosine_sim: degenerate input vector");
  }
  double s = dot(u.data(), v.data()) / (nu * nv);
  return std::clamp(s, -1.0, 1.0);
}

// Xavier/Glorot uniform init over [-sqrt(6/(fan_in+fan_out)), +...].
// Fans default to the first two shape entries.
inline Tensor xavier_uniform_init(std::vector<std::size_t> shape, std::uint64_t seed,
                                  std::size_t fan_in = 0, std::size_t fan_out = 0) {
  if (fan_in == 0 || fan_out == 0) {
    if (shape.size() < 2) {
      throw DimensionError("xavier_uniform_init: need >=2 dims or explicit fans");
    }
    fan_in = shape[0];
    fan_out = shape[1];
  }
  double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t(std::move(shape));
  Rng rng(seed);
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-bound, bound);
  return t;
}

// Plain value-level matrix kernels. The ikj order keeps the inner loops on
// contiguous rows; matmul_nt works directly on row pairs which is what the
// similarity matrices and the pairwise angle pass want.
inline Tensor matmul_nn_value(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions must match");
  }
  std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor c({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c.row_ptr(i);
    for (std::size_t p = 0; p < k; ++p) {
      double aip = a.at(i, p);
      if (aip == 0.0) continue;
      const double* bp = b.row_ptr(p);
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
  return c;
}

// a * b^T
inline Tensor matmul_nt_value(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols()) {
    throw DimensionError("matmul_nt: column counts must match");
  }
  std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  Tensor c({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a.row_ptr(i);
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b.row_ptr(j);
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
      c.at(i, j) = s;
    }
  }
  return c;
}

// a^T * b
inline Tensor matmul_tn_value(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.rows() != b.rows()) {
    throw DimensionError("matmul_tn: row counts must match");
  }
  std::size_t m = a.cols(), k = a.rows(), n = b.cols();
  Tensor c({m, n});
  for (std::size_t p = 0; p < k; ++p) {
    const double* ap = a.row_ptr(p);
    const double* bp = b.row_ptr(p);
    for (std::size_t i = 0; i < m; ++i) {
      double api = ap[i];
      if (api == 0.0) continue;
      double* ci = c.row_ptr(i);
      for (std::size_t j = 0; j < n; ++j) ci[j] += api * bp[j];
    }
  }
  return c;
}

}  // namespace fscil

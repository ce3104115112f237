#pragma once

// Dense double-precision kernels shared by every module: row-major Matrix,
// Vector, numerically stable softmax, mean/max reductions and a seeded PRNG.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "xgrain/error.hpp"

namespace xgrain {

struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;  // row-major, rows*cols

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  double* row(std::size_t r) { return data.data() + r * cols; }
  const double* row(std::size_t r) const { return data.data() + r * cols; }

  std::size_t size() const { return data.size(); }

  bool same_shape(const Matrix& o) const {
    return rows == o.rows && cols == o.cols;
  }
};

struct Vector {
  std::vector<double> data;

  Vector() = default;
  explicit Vector(std::size_t n, double fill = 0.0) : data(n, fill) {}
  Vector(std::initializer_list<double> v) : data(v) {}

  std::size_t len() const { return data.size(); }
  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }
};

inline std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows) + "x" + std::to_string(m.cols);
}

inline void check_finite(const double* p, std::size_t n, const char* what) {
  for (std::size_t i = 0; i < n; ++i)
    if (!std::isfinite(p[i]))
      throw NumericError(std::string("non-finite value in ") + what);
}

inline void check_finite(const Matrix& m, const char* what) {
  check_finite(m.data.data(), m.data.size(), what);
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows)
    throw ShapeError("matmul: incompatible shapes " + shape_str(a) + " * " +
                     shape_str(b));
  Matrix out(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* ar = a.row(i);
    double* orow = out.row(i);
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double av = ar[k];
      if (av == 0.0) continue;
      const double* br = b.row(k);
      for (std::size_t j = 0; j < b.cols; ++j) orow[j] += av * br[j];
    }
  }
  return out;
}

inline Matrix transpose(const Matrix& a) {
  Matrix out(a.cols, a.rows);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j) out.at(j, i) = a.at(i, j);
  return out;
}

inline double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

/// softmax((x - max(x)) / tau); max subtraction keeps tau = 1e-3 finite.
inline Vector softmax_stable(const Vector& x, double tau) {
  if (x.len() == 0) throw ShapeError("softmax_stable: empty vector");
  if (!(tau > 0.0)) throw ParamError("softmax_stable: tau must be > 0");
  const double mx = *std::max_element(x.data.begin(), x.data.end());
  Vector w(x.len());
  double z = 0.0;
  for (std::size_t i = 0; i < x.len(); ++i) {
    w[i] = std::exp((x[i] - mx) / tau);
    z += w[i];
  }
  for (std::size_t i = 0; i < x.len(); ++i) w[i] /= z;
  return w;
}

enum class Reduce { Mean, Max };

inline double reduce(const Vector& x, Reduce kind) {
  if (x.len() == 0) throw ShapeError("reduce: empty vector");
  if (kind == Reduce::Max)
    return *std::max_element(x.data.begin(), x.data.end());
  return std::accumulate(x.data.begin(), x.data.end(), 0.0) /
         static_cast<double>(x.len());
}

/// Deterministic 64-bit PRNG.
///
/// Stream: splitmix64 over an incrementing state (Steele et al., "Fast
/// splittable pseudorandom number generators"). uniform() maps the top 53
/// bits to [0,1); normal() is Box-Muller over two uniforms, no caching.
/// Identical seed gives an identical value stream on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  double uniform() {  // [0, 1)
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal(double mean = 0.0, double stddev = 1.0) {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * r * std::cos(2.0 * M_PI * u2);
  }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

 private:
  std::uint64_t state_;
};

}  // namespace xgrain

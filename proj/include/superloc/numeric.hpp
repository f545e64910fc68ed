#pragma once

// Numeric plumbing shared by the engine modules: deterministic sample
// points, compiled matrices of expressions, and a fixed-step RK4 integrator.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "superloc/linalg.hpp"
#include "superloc/scalar.hpp"

namespace superloc {

using Point = std::map<std::string, double>;

/// `count` points with each named coordinate uniform in [lo, hi], reproducible from `seed`.
inline std::vector<Point> sample_points(const std::vector<std::string>& names, int count, std::uint64_t seed,
                                        double lo = 0.35, double hi = 1.65) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<Point> out;
  for (int c = 0; c < count; ++c) {
    Point p;
    for (const auto& n : names) p[n] = dist(rng);
    out.push_back(std::move(p));
  }
  return out;
}

inline Point merge(Point a, const Point& b) {
  for (const auto& [k, v] : b) a[k] = v;
  return a;
}

/// Free symbols of a collection of expressions.
inline std::set<std::string> free_symbols(const std::vector<ScalarExpr>& es) {
  std::set<std::string> out;
  for (const auto& e : es) collect_symbols(e, out);
  return out;
}

inline std::set<std::string> free_symbols(const Matrix<ScalarExpr>& a) {
  std::set<std::string> out;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) collect_symbols(a(i, j), out);
  return out;
}

/// A matrix of expressions compiled against a fixed variable order. Symbols
/// outside that order must be fixed in `constants` at compile time.
class CompiledMatrix {
 public:
  CompiledMatrix() = default;
  CompiledMatrix(const Matrix<ScalarExpr>& a, const std::vector<std::string>& vars, const Point& constants = {})
      : rows_(a.rows()), cols_(a.cols()) {
    Substitution fix;
    for (const auto& [k, v] : constants)
      if (std::find(vars.begin(), vars.end(), k) == vars.end()) fix[k] = ScalarExpr(exact_rational(v));
    for (std::size_t i = 0; i < rows_; ++i)
      for (std::size_t j = 0; j < cols_; ++j) {
        const ScalarExpr e = fix.empty() ? a(i, j) : substitute(a(i, j), fix);
        cells_.emplace_back(e, std::span<const std::string>(vars));
      }
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }

  Matrix<double> operator()(std::span<const double> x) const {
    Matrix<double> out(rows_, cols_, 0.0);
    for (std::size_t i = 0; i < rows_; ++i)
      for (std::size_t j = 0; j < cols_; ++j) out(i, j) = cells_[i * cols_ + j](x);
    return out;
  }

 private:
  std::size_t rows_ = 0, cols_ = 0;
  std::vector<CompiledScalar> cells_;
};

inline Matrix<ScalarExpr> column(const std::vector<ScalarExpr>& v) {
  Matrix<ScalarExpr> c(v.size(), 1);
  for (std::size_t i = 0; i < v.size(); ++i) c(i, 0) = v[i];
  return c;
}

/// Classical RK4 with `steps` equal steps from s = 0 to s = s1.
inline std::vector<double> rk4(const std::function<std::vector<double>(const std::vector<double>&)>& f,
                               std::vector<double> y, double s1, int steps) {
  const double h = s1 / steps;
  const std::size_t n = y.size();
  std::vector<double> tmp(n);
  for (int s = 0; s < steps; ++s) {
    auto k1 = f(y);
    for (std::size_t i = 0; i < n; ++i) tmp[i] = y[i] + 0.5 * h * k1[i];
    auto k2 = f(tmp);
    for (std::size_t i = 0; i < n; ++i) tmp[i] = y[i] + 0.5 * h * k2[i];
    auto k3 = f(tmp);
    for (std::size_t i = 0; i < n; ++i) tmp[i] = y[i] + h * k3[i];
    auto k4 = f(tmp);
    for (std::size_t i = 0; i < n; ++i) y[i] += h / 6.0 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i]);
  }
  return y;
}

inline double max_abs(const Matrix<double>& a) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) m = std::max(m, std::abs(a(i, j)));
  return m;
}

/// Inverse of a small dense matrix by Gauss-Jordan; throws SingularLinearization.
inline Matrix<double> inverse(const Matrix<double>& a) {
  const std::size_t n = a.rows();
  Matrix<double> inv(n, n, 0.0);
  for (std::size_t c = 0; c < n; ++c) {
    std::vector<double> e(n, 0.0);
    e[c] = 1.0;
    auto x = solve(a, e);
    for (std::size_t r = 0; r < n; ++r) inv(r, c) = x[r];
  }
  return inv;
}

}  // namespace superloc

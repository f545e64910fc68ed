#pragma once

// Small dense matrices over a commutative ring, with division-free
// determinant and Pfaffian expansions so they stay exact over ScalarExpr.

#include <bit>
#include <cmath>
#include <cstdint>
#include <unordered_map>
#include <vector>

#include "superloc/error.hpp"
#include "superloc/scalar.hpp"

namespace superloc {

template <class T>
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, const T& fill = T(0))
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = T(1);
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool square() const { return rows_ == cols_; }

  T& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  const T& operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  template <class F>
  auto map(F&& f) const -> Matrix<decltype(f(std::declval<const T&>()))> {
    Matrix<decltype(f(std::declval<const T&>()))> out(rows_, cols_);
    for (std::size_t i = 0; i < rows_; ++i)
      for (std::size_t j = 0; j < cols_; ++j) out(i, j) = f((*this)(i, j));
    return out;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

template <class T>
bool is_zero_value(const T& v) {
  if constexpr (std::is_same_v<T, ScalarExpr>)
    return v.is_zero();
  else
    return v == 0;
}

template <class T>
bool operator==(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j)
      if (!(a(i, j) == b(i, j))) return false;
  return true;
}

template <class T>
Matrix<T> transpose(const Matrix<T>& a) {
  Matrix<T> t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

template <class T>
Matrix<T> operator*(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.cols() != b.rows()) throw Error(ErrorCode::DimensionMismatch, "matrix product shapes");
  Matrix<T> c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k) {
      if (is_zero_value(a(i, k))) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) = c(i, j) + a(i, k) * b(k, j);
    }
  return c;
}

template <class T>
Matrix<T> operator+(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw Error(ErrorCode::DimensionMismatch, "matrix sum shapes");
  Matrix<T> c(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) c(i, j) = a(i, j) + b(i, j);
  return c;
}

template <class T>
Matrix<T> operator-(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw Error(ErrorCode::DimensionMismatch, "matrix difference shapes");
  Matrix<T> c(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) c(i, j) = a(i, j) - b(i, j);
  return c;
}

template <class T>
Matrix<T> scale(const Matrix<T>& a, const T& s) {
  return a.map([&](const T& v) { return T(v * s); });
}

/// Division-free determinant by dynamic programming over column subsets,
/// O(n 2^n) ring operations. Exact over any commutative ring.
template <class T>
T determinant(const Matrix<T>& a) {
  if (!a.square()) throw Error(ErrorCode::DimensionMismatch, "determinant of non-square matrix");
  const std::size_t n = a.rows();
  if (n == 0) return T(1);
  if (n > 24) throw Error(ErrorCode::DimensionMismatch, "determinant expansion limited to n <= 24");
  const std::uint32_t full = (std::uint32_t{1} << n) - 1;
  std::vector<T> f(std::size_t{1} << n, T(0));
  std::vector<bool> live(std::size_t{1} << n, false);
  f[0] = T(1);
  live[0] = true;
  for (std::uint32_t mask = 0; mask < full; ++mask) {
    if (!live[mask] || is_zero_value(f[mask])) continue;
    const std::size_t row = static_cast<std::size_t>(std::popcount(mask));
    for (std::size_t c = 0; c < n; ++c) {
      const std::uint32_t bit = std::uint32_t{1} << c;
      if (mask & bit) continue;
      if (is_zero_value(a(row, c))) continue;
      const int above = std::popcount(mask >> (c + 1));
      T term = f[mask] * a(row, c);
      f[mask | bit] = (above % 2 == 0) ? T(f[mask | bit] + term) : T(f[mask | bit] - term);
      live[mask | bit] = true;
    }
  }
  return f[full];
}

template <class T>
bool is_skew(const Matrix<T>& a) {
  if (!a.square()) return false;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j)
      if (!is_zero_value(T(a(i, j) + a(j, i)))) return false;
  return true;
}

/// Pfaffian by recursive expansion along the first remaining row, memoized
/// on the remaining index set.
template <class T>
T pfaffian(const Matrix<T>& a) {
  if (!a.square()) throw Error(ErrorCode::DimensionMismatch, "pfaffian of non-square matrix");
  const std::size_t n = a.rows();
  if (n % 2 != 0) throw Error(ErrorCode::OddSize, "pfaffian needs even size, got " + std::to_string(n));
  if (!is_skew(a)) throw Error(ErrorCode::NotSkew, "pfaffian of a matrix that is not skew-symmetric");
  if (n == 0) return T(1);
  if (n > 30) throw Error(ErrorCode::DimensionMismatch, "pfaffian expansion limited to n <= 30");
  std::unordered_map<std::uint32_t, T> memo;
  auto rec = [&](auto&& self, std::uint32_t set) -> T {
    if (set == 0) return T(1);
    if (auto it = memo.find(set); it != memo.end()) return it->second;
    const int i = std::countr_zero(set);
    const std::uint32_t rest = set & ~(std::uint32_t{1} << i);
    T sum(0);
    int position = 0;
    for (std::uint32_t r = rest; r != 0; r &= r - 1) {
      const int j = std::countr_zero(r);
      const T& aij = a(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
      if (!is_zero_value(aij)) {
        T sub = self(self, rest & ~(std::uint32_t{1} << j));
        T term = aij * sub;
        sum = (position % 2 == 0) ? T(sum + term) : T(sum - term);
      }
      ++position;
    }
    memo.emplace(set, sum);
    return sum;
  };
  return rec(rec, (n == 32) ? ~std::uint32_t{0} : ((std::uint32_t{1} << n) - 1));
}

/// Rank by Gaussian elimination over a field (Rational or double).
template <class T>
std::size_t rank(Matrix<T> a, double tol = 1e-10) {
  std::size_t r = 0;
  for (std::size_t c = 0; c < a.cols() && r < a.rows(); ++c) {
    std::size_t piv = a.rows();
    if constexpr (std::is_same_v<T, double>) {
      double best = tol;
      for (std::size_t i = r; i < a.rows(); ++i)
        if (std::abs(a(i, c)) > best) {
          best = std::abs(a(i, c));
          piv = i;
        }
    } else {
      for (std::size_t i = r; i < a.rows(); ++i)
        if (a(i, c) != 0) {
          piv = i;
          break;
        }
    }
    if (piv == a.rows()) continue;
    for (std::size_t j = 0; j < a.cols(); ++j) std::swap(a(r, j), a(piv, j));
    for (std::size_t i = 0; i < a.rows(); ++i) {
      if (i == r) continue;
      T f = a(i, c) / a(r, c);
      if (is_zero_value(f)) continue;
      for (std::size_t j = c; j < a.cols(); ++j) a(i, j) = a(i, j) - f * a(r, j);
    }
    ++r;
  }
  return r;
}

/// Solves a x = b over a field; throws SingularLinearization when singular.
template <class T>
std::vector<T> solve(Matrix<T> a, std::vector<T> b, double tol = 1e-14) {
  const std::size_t n = a.rows();
  if (!a.square() || b.size() != n) throw Error(ErrorCode::DimensionMismatch, "solve shapes");
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = n;
    if constexpr (std::is_same_v<T, double>) {
      double best = tol;
      for (std::size_t i = c; i < n; ++i)
        if (std::abs(a(i, c)) > best) {
          best = std::abs(a(i, c));
          piv = i;
        }
    } else {
      for (std::size_t i = c; i < n; ++i)
        if (a(i, c) != 0) {
          piv = i;
          break;
        }
    }
    if (piv == n) throw Error(ErrorCode::SingularLinearization, "singular linear system");
    for (std::size_t j = 0; j < n; ++j) std::swap(a(c, j), a(piv, j));
    std::swap(b[c], b[piv]);
    for (std::size_t i = c + 1; i < n; ++i) {
      T f = a(i, c) / a(c, c);
      if (is_zero_value(f)) continue;
      for (std::size_t j = c; j < n; ++j) a(i, j) = a(i, j) - f * a(c, j);
      b[i] = b[i] - f * b[c];
    }
  }
  std::vector<T> x(n, T(0));
  for (std::size_t k = n; k-- > 0;) {
    T s = b[k];
    for (std::size_t j = k + 1; j < n; ++j) s = s - a(k, j) * x[j];
    x[k] = s / a(k, k);
  }
  return x;
}

/// Inverse of a square matrix of expressions by cofactors; throws
/// SingularLinearization when the determinant vanishes.
inline Matrix<ScalarExpr> inverse_expr(const Matrix<ScalarExpr>& a) {
  const std::size_t m = a.rows();
  if (!a.square()) throw Error(ErrorCode::DimensionMismatch, "inverse of non-square matrix");
  ScalarExpr det = determinant(a);
  if (det.is_zero()) throw Error(ErrorCode::SingularLinearization, "matrix is singular");
  ScalarExpr inv = reciprocal(det);
  Matrix<ScalarExpr> out(m, m);
  if (m == 1) {
    out(0, 0) = inv;
    return out;
  }
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      Matrix<ScalarExpr> minor(m - 1, m - 1);
      for (std::size_t r = 0, rr = 0; r < m; ++r) {
        if (r == j) continue;
        for (std::size_t c = 0, cc = 0; c < m; ++c) {
          if (c == i) continue;
          minor(rr, cc++) = a(r, c);
        }
        ++rr;
      }
      ScalarExpr cof = determinant(minor);
      out(i, j) = ((i + j) % 2 == 0 ? cof : -cof) * inv;
    }
  return out;
}

inline Matrix<double> to_double(const Matrix<Rational>& a) {
  return a.map([](const Rational& q) { return q.get_d(); });
}

inline Matrix<ScalarExpr> to_expr(const Matrix<Rational>& a) {
  return a.map([](const Rational& q) { return ScalarExpr(q); });
}

inline Matrix<ScalarExpr> substitute(const Matrix<ScalarExpr>& a, const Substitution& sub) {
  return a.map([&](const ScalarExpr& e) { return substitute(e, sub); });
}

inline Matrix<double> evaluate(const Matrix<ScalarExpr>& a, const std::map<std::string, double>& b) {
  return a.map([&](const ScalarExpr& e) { return evaluate(e, b); });
}

/// Exact square root of a nonnegative rational when it is a perfect square.
inline std::optional<Rational> exact_sqrt(const Rational& q) {
  if (q < 0) return std::nullopt;
  mpz_class num = q.get_num(), den = q.get_den();
  if (!mpz_perfect_square_p(num.get_mpz_t()) || !mpz_perfect_square_p(den.get_mpz_t())) return std::nullopt;
  mpz_class rn, rd;
  mpz_sqrt(rn.get_mpz_t(), num.get_mpz_t());
  mpz_sqrt(rd.get_mpz_t(), den.get_mpz_t());
  Rational r(rn, rd);
  r.canonicalize();
  return r;
}

}  // namespace superloc

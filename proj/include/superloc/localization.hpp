#pragma once

// Fixed points, linearisations, Pfaffians and superdeterminants, the
// classical and super localization sums, and the exactness construction.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "superloc/equivariant.hpp"
#include "superloc/linalg.hpp"
#include "superloc/numeric.hpp"
#include "superloc/super.hpp"

namespace superloc {

/// A zero of xi*, with coordinates as expressions (exact rationals for
/// declared or linear points, rational images of doubles for Newton points).
struct FixedPoint {
  Substitution coords;
  bool exact = true;
  int orientation = 1;  // orientation sign of the chart the point is read in
  std::string chart;    // optional chart label

  Point numeric() const {
    Point p;
    for (const auto& [k, v] : coords) p[k] = evaluate(v, Point{});
    return p;
  }
};

enum class FixedPointStrategy { Declared, Linear, Newton };

struct FixedPointOptions {
  FixedPointStrategy strategy = FixedPointStrategy::Newton;
  std::vector<Substitution> declared;
  Point parameters;                              // Lie-parameter values for numeric work
  std::vector<std::pair<double, double>> box;   // Newton search box per coordinate (default [-2,2])
  int grid = 5;
  int max_iterations = 60;
  double tol = 1e-10;
  double dedup = 1e-6;
};

namespace detail {

inline std::vector<ScalarExpr> base_components(const SuperVectorField& x) {
  if (x.parity() != 0) throw Error(ErrorCode::WrongGrade, "fixed points need an even field");
  std::vector<ScalarExpr> v(x.m());
  for (std::size_t i = 0; i < x.m(); ++i) {
    for (const auto& [mask, c] : x.a(i).terms())
      if (mask != 0) throw Error(ErrorCode::WrongGrade, "fixed points need a purely base field");
    v[i] = x.a(i).body();
  }
  return v;
}

inline Substitution to_substitution(const Point& p) {
  Substitution s;
  for (const auto& [k, v] : p) s[k] = ScalarExpr(exact_rational(v));
  return s;
}

/// Largest absolute value of the expressions after binding; zero when they
/// vanish structurally.
inline double residual_norm(const std::vector<ScalarExpr>& r, const Point& params) {
  double mx = 0.0;
  for (const auto& e : r) {
    if (e.is_zero()) continue;
    if (vanishes_identically(e)) continue;
    mx = std::max(mx, std::abs(evaluate(e, params)));
  }
  return mx;
}

inline Matrix<ScalarExpr> jacobian(const std::vector<ScalarExpr>& v, const std::vector<std::string>& vars) {
  Matrix<ScalarExpr> j(v.size(), vars.size());
  for (std::size_t i = 0; i < v.size(); ++i)
    for (std::size_t k = 0; k < vars.size(); ++k) j(i, k) = differentiate(v[i], vars[k]);
  return j;
}

}  // namespace detail

/// Checks that xi* vanishes at p and that the zero is isolated (Jacobian
/// nonsingular).
inline void verify_fixed_point(const std::vector<ScalarExpr>& v, const std::vector<std::string>& vars,
                               const FixedPoint& p, const Point& params, double tol = 1e-10) {
  std::vector<ScalarExpr> r;
  for (const auto& e : v) r.push_back(substitute(e, p.coords));
  const double res = detail::residual_norm(r, params);
  if (res > tol) {
    std::ostringstream os;
    os << "residual " << res << " at candidate fixed point";
    throw Error(ErrorCode::NotAZero, os.str());
  }
  Matrix<ScalarExpr> j = substitute(detail::jacobian(v, vars), p.coords);
  ScalarExpr det = determinant(j);
  if (det.is_zero() || vanishes_identically(det)) throw Error(ErrorCode::NonIsolatedZero, "Jacobian is singular at a zero");
  const std::set<std::string> syms = free_symbols(det);
  bool bound = true;
  for (const auto& s : syms)
    if (!params.count(s)) bound = false;
  if (bound) {
    double scale = 1.0;
    Matrix<double> jn = evaluate(j, params);
    for (std::size_t i = 0; i < jn.rows(); ++i)
      for (std::size_t k = 0; k < jn.cols(); ++k) scale = std::max(scale, std::abs(jn(i, k)));
    if (std::abs(evaluate(det, params)) < 1e-12 * std::pow(scale, static_cast<double>(vars.size())))
      throw Error(ErrorCode::NonIsolatedZero, "Jacobian is numerically singular at a zero");
  }
}

inline std::vector<FixedPoint> find_fixed_points(const SuperVectorField& xi_star, const FixedPointOptions& opt) {
  const std::vector<ScalarExpr> v = detail::base_components(xi_star);
  const std::vector<std::string>& vars = xi_star.chart()->even;
  const std::size_t m = vars.size();
  std::vector<FixedPoint> out;

  switch (opt.strategy) {
    case FixedPointStrategy::Declared: {
      for (const auto& d : opt.declared) {
        FixedPoint p{d, true, 1, ""};
        for (const auto& name : vars)
          if (!p.coords.count(name)) throw Error(ErrorCode::NotAZero, "declared point misses coordinate " + name);
        verify_fixed_point(v, vars, p, opt.parameters, opt.tol);
        out.push_back(p);
      }
      break;
    }
    case FixedPointStrategy::Linear: {
      Substitution psub = detail::to_substitution(opt.parameters);
      Matrix<ScalarExpr> j = detail::jacobian(v, vars);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t k = 0; k < m; ++k)
          for (const auto& s : vars)
            if (!differentiate(j(i, k), s).is_zero())
              throw Error(ErrorCode::AssumptionViolated, "linear strategy needs an affine field");
      Matrix<Rational> a(m, m);
      std::vector<Rational> b(m);
      Substitution zero;
      for (const auto& s : vars) zero[s] = ScalarExpr(0);
      auto as_rational = [&](const ScalarExpr& e) {
        ScalarExpr r = substitute(e, psub);
        auto c = r.constant_value();
        if (!c) throw Error(ErrorCode::UnboundSymbol, "linear strategy needs numeric parameters: " + to_string(r));
        return *c;
      };
      for (std::size_t i = 0; i < m; ++i) {
        b[i] = -as_rational(substitute(v[i], zero));
        for (std::size_t k = 0; k < m; ++k) a(i, k) = as_rational(j(i, k));
      }
      if (rank(a) < m) throw Error(ErrorCode::NonIsolatedZero, "affine field has a singular linear part");
      auto x = solve(a, b);
      FixedPoint p;
      for (std::size_t i = 0; i < m; ++i) p.coords[vars[i]] = ScalarExpr(x[i]);
      verify_fixed_point(v, vars, p, opt.parameters, opt.tol);
      out.push_back(p);
      break;
    }
    case FixedPointStrategy::Newton: {
      Point params = opt.parameters;
      Matrix<ScalarExpr> j = detail::jacobian(v, vars);
      CompiledMatrix F(column(v), vars, params), Jc(j, vars, params);
      std::vector<std::pair<double, double>> box = opt.box;
      if (box.empty()) box.assign(m, {-2.0, 2.0});
      if (box.size() != m) throw Error(ErrorCode::DimensionMismatch, "Newton box needs one interval per coordinate");
      std::size_t total = 1;
      for (std::size_t i = 0; i < m; ++i) total *= static_cast<std::size_t>(opt.grid);
      bool any_converged = false;
      std::vector<std::vector<double>> found;
      for (std::size_t idx = 0; idx < total; ++idx) {
        std::vector<double> x(m);
        std::size_t r = idx;
        for (std::size_t i = 0; i < m; ++i) {
          const int g = static_cast<int>(r % static_cast<std::size_t>(opt.grid));
          r /= static_cast<std::size_t>(opt.grid);
          const double frac = opt.grid == 1 ? 0.5 : static_cast<double>(g) / (opt.grid - 1);
          x[i] = box[i].first + frac * (box[i].second - box[i].first);
        }
        bool ok = false;
        for (int it = 0; it < opt.max_iterations; ++it) {
          Matrix<double> fx = F(x);
          double nrm = 0.0;
          for (std::size_t i = 0; i < m; ++i) nrm = std::max(nrm, std::abs(fx(i, 0)));
          if (nrm < 1e-13) {
            ok = true;
            break;
          }
          std::vector<double> rhs(m);
          for (std::size_t i = 0; i < m; ++i) rhs[i] = -fx(i, 0);
          std::vector<double> dx;
          try {
            dx = solve(Jc(x), rhs);
          } catch (const Error&) {
            break;
          }
          for (std::size_t i = 0; i < m; ++i) x[i] += dx[i];
          if (!std::all_of(x.begin(), x.end(), [](double d) { return std::isfinite(d); })) break;
        }
        if (!ok) continue;
        any_converged = true;
        bool inside = true;
        for (std::size_t i = 0; i < m; ++i)
          if (x[i] < box[i].first - 1e-9 || x[i] > box[i].second + 1e-9) inside = false;
        if (!inside) continue;
        bool dup = false;
        for (const auto& f : found) {
          double d = 0.0;
          for (std::size_t i = 0; i < m; ++i) d = std::max(d, std::abs(f[i] - x[i]));
          if (d < opt.dedup) dup = true;
        }
        if (!dup) found.push_back(x);
      }
      if (!any_converged) throw Error(ErrorCode::NoConvergence, "Newton did not converge from any grid start");
      std::sort(found.begin(), found.end());
      for (const auto& x : found) {
        FixedPoint p;
        p.exact = false;
        for (std::size_t i = 0; i < m; ++i) {
          const double snapped = std::abs(x[i]) < 1e-14 ? 0.0 : x[i];
          p.coords[vars[i]] = ScalarExpr(exact_rational(snapped));
        }
        verify_fixed_point(v, vars, p, params, opt.tol);
        out.push_back(p);
      }
      break;
    }
  }
  return out;
}

/// L_{p,xi}: minus the Jacobian of xi* at p.
inline Matrix<ScalarExpr> linearize_base(const SuperVectorField& xi_star, const FixedPoint& p,
                                         const Point& params = {}, double tol = 1e-10) {
  const std::vector<ScalarExpr> v = detail::base_components(xi_star);
  const std::vector<std::string>& vars = xi_star.chart()->even;
  std::vector<ScalarExpr> r;
  for (const auto& e : v) r.push_back(substitute(e, p.coords));
  if (detail::residual_norm(r, params) > tol) throw Error(ErrorCode::NotAZero, "point is not a zero of xi*");
  Matrix<ScalarExpr> j = substitute(detail::jacobian(v, vars), p.coords);
  return j.map([](const ScalarExpr& e) { return -e; });
}

/// L~^A_B = xi^alpha U_{alpha B}^A at p.
inline Matrix<ScalarExpr> linearize_fiber(const ActionSpec& spec, const LieVector& xi, const FixedPoint& p,
                                          const Point& params = {}, double tol = 1e-10) {
  std::vector<ScalarExpr> r;
  for (const auto& e : fundamental_components(spec, xi)) r.push_back(substitute(e, p.coords));
  if (detail::residual_norm(r, params) > tol) throw Error(ErrorCode::NotAZero, "point is not a zero of xi*");
  return substitute(fiber_generator(spec, xi), p.coords);
}

/// Sdet of the block-diagonal even endomorphism (A, B): det A / det B.
template <class T>
T superdeterminant(const Matrix<T>& a, const Matrix<T>& b) {
  T db = determinant(b);
  if (is_zero_value(db)) throw Error(ErrorCode::SingularFiberBlock, "fibre block is singular");
  if constexpr (std::is_same_v<T, ScalarExpr>) {
    if (vanishes_identically(db)) throw Error(ErrorCode::SingularFiberBlock, "fibre block is singular");
    return determinant(a) * reciprocal(db);
  } else {
    return determinant(a) / db;
  }
}

/// Square root of an expression when it is a monomial with a perfect-square
/// rational coefficient and even powers.
inline std::optional<ScalarExpr> exact_sqrt(const ScalarExpr& e) {
  if (e.is_zero()) return ScalarExpr(0);
  if (!e.is_monomial()) return std::nullopt;
  const Term& t = e.terms().front();
  auto c = exact_sqrt(t.coeff);
  if (!c) return std::nullopt;
  Monomial half;
  for (const auto& f : t.mono) {
    if (f.power % 2 != 0) return std::nullopt;
    half.push_back(Factor{f.atom, f.power / 2});
  }
  return ScalarExpr::from_monomial(half, *c);
}

/// A quantity kept exactly when possible, always with a numeric value.
struct Quantity {
  std::optional<ScalarExpr> exact;
  double numeric = std::numeric_limits<double>::quiet_NaN();
};

inline double numeric_value(const ScalarExpr& e, const Point& params) {
  for (const auto& s : free_symbols(e))
    if (!params.count(s)) return std::numeric_limits<double>::quiet_NaN();
  return evaluate(e, params);
}

inline Quantity make_quantity(const ScalarExpr& e, const Point& params) { return Quantity{e, numeric_value(e, params)}; }

/// All the linear data attached to a fixed point.
struct FixedPointData {
  FixedPoint point;
  Matrix<ScalarExpr> L;       // base linearisation, -Jacobian
  Matrix<ScalarExpr> Ltilde;  // fibre linearisation, indexed (A, B)
  Matrix<ScalarExpr> h, H;    // metrics at p
  Matrix<ScalarExpr> sigma;   // sigma_Q at p
  Matrix<ScalarExpr> a;       // Ltilde^T H
  bool skew = false;
  bool compatible = false;    // Jacobian * sigma = sigma * Ltilde
};

inline FixedPointData analyze_fixed_point(const ActionSpec& spec, const LieVector& xi, const FixedPoint& p,
                                          const Matrix<ScalarExpr>& h, const Matrix<ScalarExpr>& sigma,
                                          const Point& params = {}) {
  FixedPointData d;
  d.point = p;
  SuperVectorField xs = fundamental_field(spec, xi);
  d.L = linearize_base(xs, p, params);
  d.Ltilde = linearize_fiber(spec, xi, p, params);
  d.h = substitute(h, p.coords);
  d.sigma = substitute(sigma, p.coords);
  d.H = transpose(d.sigma) * d.h * d.sigma;
  d.a = transpose(d.Ltilde) * d.H;
  d.skew = true;
  for (std::size_t i = 0; i < d.a.rows(); ++i)
    for (std::size_t j = 0; j < d.a.cols(); ++j)
      if (!vanishes_identically(d.a(i, j) + d.a(j, i))) d.skew = false;
  Matrix<ScalarExpr> jac = d.L.map([](const ScalarExpr& e) { return -e; });
  Matrix<ScalarExpr> diff = jac * d.sigma - d.sigma * d.Ltilde;
  d.compatible = true;
  for (std::size_t i = 0; i < diff.rows(); ++i)
    for (std::size_t j = 0; j < diff.cols(); ++j)
      if (!vanishes_identically(diff(i, j))) d.compatible = false;
  return d;
}

/// det^{1/2}(L) = orientation * Pf(L^T h) / sqrt(det h).
inline Quantity sqrt_det_base(const FixedPointData& d, const Point& params) {
  ScalarExpr pf = pfaffian(transpose(d.L) * d.h);
  ScalarExpr dh = determinant(d.h);
  const int o = d.point.orientation;
  if (auto r = exact_sqrt(dh)) {
    ScalarExpr v = ScalarExpr(o) * pf * reciprocal(*r);
    return make_quantity(v, params);
  }
  Quantity q;
  q.numeric = o * numeric_value(pf, params) / std::sqrt(numeric_value(dh, params));
  return q;
}

/// Sdet^{1/2}(1, L~) = orientation * sqrt(det H) / Pf(L~^T H); its square is
/// 1 / det L~.
inline Quantity sqrt_sdet_via_pfaffian(const FixedPointData& d, const Point& params) {
  if (!d.skew) throw Error(ErrorCode::NotSkew, "lowered fibre linearisation is not skew");
  ScalarExpr pf = pfaffian(d.a);
  if (pf.is_zero() || vanishes_identically(pf)) throw Error(ErrorCode::SingularFiberBlock, "Pfaffian vanishes");
  ScalarExpr dH = determinant(d.H);
  const int o = d.point.orientation;
  if (auto r = exact_sqrt(dH)) {
    ScalarExpr v = ScalarExpr(o) * (*r) * reciprocal(pf);
    return make_quantity(v, params);
  }
  Quantity q;
  q.numeric = o * std::sqrt(numeric_value(dH, params)) / numeric_value(pf, params);
  return q;
}

/// Squared identity Pf(a)^2 = det(L~) det(H), exact.
inline bool pfaffian_squared_identity(const FixedPointData& d) {
  ScalarExpr pf = pfaffian(d.a);
  return vanishes_identically(pf * pf - determinant(d.Ltilde) * determinant(d.H));
}

// ---------------------------------------------------------------------------
// Prefactors

/// coeff * pi^pi_power.
struct Prefactor {
  Rational coeff;
  int pi_power = 0;
  double value() const { return coeff.get_d() * std::pow(std::numbers::pi, pi_power); }
  std::string to_string() const {
    std::string s = coeff.get_str();
    if (pi_power == 1) s += "*pi";
    if (pi_power > 1) s += "*pi^" + std::to_string(pi_power);
    return s;
  }
};

inline bool operator==(const Prefactor& a, const Prefactor& b) { return a.coeff == b.coeff && a.pi_power == b.pi_power; }

inline Rational factorial(int k) {
  Rational r(1);
  for (int i = 2; i <= k; ++i) r *= i;
  return r;
}

inline Rational rpow(const Rational& b, int k) {
  Rational r(1);
  for (int i = 0; i < k; ++i) r *= b;
  return r;
}

/// (-2)^{n/2} (n/2)! pi^{m/2} / (m/2)!.
inline Prefactor super_prefactor(std::size_t m, std::size_t n) {
  if (m % 2 != 0 || n % 2 != 0) throw Error(ErrorCode::OddDimension, "super localization needs m and n even");
  const int hm = static_cast<int>(m / 2), hn = static_cast<int>(n / 2);
  Rational c = rpow(Rational(-2), hn) * factorial(hn) / factorial(hm);
  c.canonicalize();
  return Prefactor{c, hm};
}

/// (-2 pi)^{m/2}.
inline Prefactor classical_prefactor(std::size_t m) {
  if (m % 2 != 0) throw Error(ErrorCode::OddDimension, "classical localization needs m even");
  const int hm = static_cast<int>(m / 2);
  return Prefactor{rpow(Rational(-2), hm), hm};
}

// ---------------------------------------------------------------------------
// Localization sums

struct LocalizationTerm {
  FixedPoint point;
  Quantity root;          // det^{1/2}(L) or Sdet^{1/2}
  Quantity body;          // F(xi)_0(p) or alpha(xi)_0(p)
  Quantity contribution;  // without the prefactor
  bool squared_identity = true;
  bool compatible = true;
};

struct LocalizationResult {
  Prefactor prefactor;
  std::vector<LocalizationTerm> terms;
  Quantity sum;    // sum of contributions
  Quantity total;  // prefactor * sum
};

namespace detail {

inline void finish(LocalizationResult& r, const Point& params) {
  std::sort(r.terms.begin(), r.terms.end(), [](const LocalizationTerm& a, const LocalizationTerm& b) {
    if (a.point.chart != b.point.chart) return a.point.chart < b.point.chart;
    return a.point.numeric() < b.point.numeric();
  });
  bool exact = true;
  ScalarExpr s;
  double sn = 0.0;
  for (const auto& t : r.terms) {
    if (t.contribution.exact)
      s += *t.contribution.exact;
    else
      exact = false;
    sn += t.contribution.numeric;
  }
  if (exact) {
    r.sum = make_quantity(s, params);
    if (r.terms.empty()) r.sum.numeric = 0.0;
  } else {
    r.sum.numeric = sn;
  }
  r.total.numeric = r.prefactor.value() * r.sum.numeric;
}

inline Quantity divide(const Quantity& a, const Quantity& b, const Point& params) {
  Quantity q;
  if (a.exact && b.exact) return make_quantity(*a.exact * reciprocal(*b.exact), params);
  q.numeric = a.numeric / b.numeric;
  return q;
}

inline Quantity multiply(const Quantity& a, const Quantity& b, const Point& params) {
  Quantity q;
  if (a.exact && b.exact) return make_quantity(*a.exact * *b.exact, params);
  q.numeric = a.numeric * b.numeric;
  return q;
}

}  // namespace detail

/// (-2 pi)^{m/2} sum_p alpha(xi)_0(p) / det^{1/2}(L_{p,xi}).
inline LocalizationResult classical_localize(const EquivariantForm& alpha, const ActionSpec& spec, const LieVector& xi,
                                             const std::vector<FixedPoint>& fps, const Matrix<ScalarExpr>& h,
                                             const Point& params = {}) {
  if (!vanishes_identically(equivariant_differential(alpha, spec, xi)))
    throw Error(ErrorCode::NotClosed, "form is not equivariantly closed");
  LocalizationResult r;
  r.prefactor = classical_prefactor(spec.m());
  Matrix<ScalarExpr> id = Matrix<ScalarExpr>::identity(spec.m());
  ActionSpec base = spec;
  base.U.clear();
  for (const auto& p : fps) {
    FixedPointData d;
    d.point = p;
    d.L = linearize_base(fundamental_field(spec, xi), p, params);
    d.h = substitute(h, p.coords);
    ScalarExpr det = determinant(d.L);
    if (det.is_zero() || vanishes_identically(det))
      throw Error(ErrorCode::SingularLinearization, "linearisation is singular at a fixed point");
    LocalizationTerm t;
    t.point = p;
    t.root = sqrt_det_base(d, params);
    t.body = make_quantity(substitute(alpha.body(), p.coords), params);
    t.contribution = detail::divide(t.body, t.root, params);
    if (t.root.exact) t.squared_identity = vanishes_identically(*t.root.exact * *t.root.exact - det);
    r.terms.push_back(t);
  }
  detail::finish(r, params);
  return r;
}

struct SuperLocalizeOptions {
  bool verify_brst = true;
  BrstOptions brst;
};

/// (-2)^{n/2}(n/2)! pi^{m/2}/(m/2)! sum_p Sdet^{1/2}(L_{p,xi}) F(xi)_0(p).
inline LocalizationResult super_localize(const SuperFunction& F, const SuperVectorField& Q, const ActionSpec& spec,
                                         const LieVector& xi, const std::vector<FixedPoint>& fps,
                                         const Matrix<ScalarExpr>& h, const Point& params = {},
                                         const SuperLocalizeOptions& opt = {}) {
  LocalizationResult r;
  r.prefactor = super_prefactor(spec.m(), spec.n());
  if (opt.verify_brst) {
    BrstOptions bo = opt.brst;
    if (bo.parameters.empty()) bo.parameters = params;
    BrstReport br = verify_brst(Q, spec, xi, bo);
    if (!br.all_pass())
      throw Error(ErrorCode::BRSTInvalid, "Q fails the BRST conditions: " + br.square.detail + " | " +
                                              br.equivariant.detail + " | " + br.injective.detail);
  }
  if (!vanishes_identically(apply_field(Q, F))) throw Error(ErrorCode::NotQClosed, "F is not Q-closed");
  Matrix<ScalarExpr> sigma = sigma_matrix(Q);
  for (const auto& p : fps) {
    FixedPointData d = analyze_fixed_point(spec, xi, p, h, sigma, params);
    LocalizationTerm t;
    t.point = p;
    t.compatible = d.compatible;
    t.root = sqrt_sdet_via_pfaffian(d, params);
    t.squared_identity = pfaffian_squared_identity(d);
    if (t.root.exact) {
      ScalarExpr sd = superdeterminant(Matrix<ScalarExpr>::identity(spec.m()), d.Ltilde);
      t.squared_identity = t.squared_identity && vanishes_identically(*t.root.exact * *t.root.exact - sd);
    }
    t.body = make_quantity(substitute(F.body(), p.coords), params);
    t.contribution = detail::multiply(t.root, t.body, params);
    r.terms.push_back(t);
  }
  detail::finish(r, params);
  return r;
}

// ---------------------------------------------------------------------------
// Exactness construction

struct LambdaBeta {
  std::vector<ScalarExpr> lambda;  // lambda_i
  SuperFunction beta;              // sigma*(lambda)
  ScalarExpr mu;                   // normalisation at p
  bool invariant = false;          // L_{xi*} lambda = 0
  double distance_ratio = 0.0;     // lambda(xi*) / h_p(x-p, x-p) near p
};

/// lambda = h(xi*, .)/mu with mu = tr(J^T h J h^{-1})/m at p, so that
/// lambda(xi*) agrees with the squared distance to second order for
/// isotropic linearisations; beta = sigma*(lambda).
inline LambdaBeta build_lambda_beta(const Matrix<ScalarExpr>& h, const ActionSpec& spec, const LieVector& xi,
                                    const FixedPoint& p, const Matrix<ScalarExpr>& sigma, const Point& params = {}) {
  const std::size_t m = spec.m();
  const auto& vars = spec.chart->even;
  auto X = fundamental_components(spec, xi);
  Matrix<ScalarExpr> J = substitute(detail::jacobian(X, vars), p.coords);
  Matrix<ScalarExpr> hp = substitute(h, p.coords);
  if (vanishes_identically(determinant(hp))) throw Error(ErrorCode::DegenerateField, "metric is singular at p");
  Matrix<ScalarExpr> hinv = inverse_expr(hp);
  Matrix<ScalarExpr> prod = transpose(J) * hp * J * hinv;
  ScalarExpr tr;
  for (std::size_t i = 0; i < m; ++i) tr += prod(i, i);
  LambdaBeta out;
  out.mu = tr * ScalarExpr(Rational(1, static_cast<long>(m)));
  if (out.mu.is_zero() || vanishes_identically(out.mu)) throw Error(ErrorCode::DegenerateField, "xi* degenerates at p");
  ScalarExpr inv_mu = reciprocal(out.mu);
  out.lambda.assign(m, ScalarExpr());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) out.lambda[i] += h(i, j) * X[j] * inv_mu;
  out.beta = SuperFunction(spec.chart);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t a = 0; a < spec.n(); ++a)
      if (!sigma(i, a).is_zero()) out.beta.add_term(bit(a), out.lambda[i] * sigma(i, a));
  // Invariance: (L_X lambda)_i = X^j d_j lambda_i + lambda_j d_i X^j.
  out.invariant = true;
  for (std::size_t i = 0; i < m; ++i) {
    ScalarExpr e;
    for (std::size_t j = 0; j < m; ++j)
      e += X[j] * differentiate(out.lambda[i], vars[j]) + out.lambda[j] * differentiate(X[j], vars[i]);
    if (!vanishes_identically(e)) out.invariant = false;
  }
  // Second-order agreement with the squared distance along a fixed direction.
  {
    Point base = merge(p.numeric(), params);
    const double delta = 1e-3;
    Point q = base;
    std::vector<double> dir(m);
    for (std::size_t i = 0; i < m; ++i) {
      dir[i] = 1.0 / std::sqrt(static_cast<double>(m)) * (i % 2 == 0 ? 1.0 : -0.7);
      q[vars[i]] += delta * dir[i];
    }
    ScalarExpr lx;
    for (std::size_t i = 0; i < m; ++i) lx += out.lambda[i] * X[i];
    double dist2 = 0.0;
    Matrix<double> hn = evaluate(hp, params);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < m; ++j) dist2 += hn(i, j) * delta * dir[i] * delta * dir[j];
    out.distance_ratio = numeric_value(lx, q) / dist2;
  }
  return out;
}

/// nu = (beta F Q(beta)^{-1})_{[n-1]}.
inline SuperFunction exactness_witness(const SuperFunction& F, const SuperFunction& beta, const SuperVectorField& Q,
                                       const std::vector<Point>& domain = {}) {
  SuperFunction qb = apply_field(Q, beta);
  SuperFunction inv;
  try {
    inv = invert_even(qb, domain);
  } catch (const Error& e) {
    throw Error(ErrorCode::NonInvertibleQBeta, e.what());
  }
  return (beta * F * inv).grade(static_cast<int>(F.n()) - 1);
}

/// Largest |top(Q nu) - top(F)| over the sample points.
inline double exactness_defect(const SuperFunction& F, const SuperFunction& nu, const SuperVectorField& Q,
                               const std::vector<Point>& points) {
  ScalarExpr d = top_component(apply_field(Q, nu)) - top_component(F);
  double mx = 0.0;
  if (d.is_zero()) return 0.0;
  for (const auto& p : points) mx = std::max(mx, std::abs(evaluate(d, p)));
  return mx;
}

/// x -> s x on the listed even coordinates and grade-k coefficients times s^k.
inline SuperFunction rescale(const SuperFunction& f, const std::string& s, const std::vector<std::string>& vars) {
  Substitution sub;
  const ScalarExpr sv = ScalarExpr::symbol(s);
  for (const auto& v : vars) sub[v] = sv * ScalarExpr::symbol(v);
  SuperFunction out(f.chart());
  for (const auto& [mask, c] : f.terms()) out.add_term(mask, substitute(c, sub) * pow(sv, grade_of(mask)));
  return out;
}

}  // namespace superloc

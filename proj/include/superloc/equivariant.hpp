#pragma once

// Group-action data, fundamental and lifted fields, the equivariant
// differential, BRST operators and the sigma morphism they determine.

#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "superloc/linalg.hpp"
#include "superloc/numeric.hpp"
#include "superloc/super.hpp"

namespace superloc {

/// Infinitesimal action of a Lie algebra with parameters xi^alpha.
///   T[alpha](0, i)    = T_alpha^i(x), the generator of the base action;
///   U[alpha](B, A)    = U_{alpha B}^A(x), the linear action on the odd fibre.
struct ActionSpec {
  ChartPtr chart;
  std::vector<std::string> params;
  std::vector<std::vector<ScalarExpr>> T;
  std::vector<Matrix<ScalarExpr>> U;

  std::size_t dim_g() const { return params.size(); }
  std::size_t m() const { return chart->m(); }
  std::size_t n() const { return chart->n(); }

  void validate() const {
    if (!chart) throw Error(ErrorCode::ShapeMismatch, "action spec has no chart");
    if (T.size() != dim_g()) throw Error(ErrorCode::ShapeMismatch, "T must have one row per Lie parameter");
    for (const auto& row : T)
      if (row.size() != m()) throw Error(ErrorCode::ShapeMismatch, "T rows must have m entries");
    if (!U.empty()) {
      if (U.size() != dim_g()) throw Error(ErrorCode::ShapeMismatch, "U must have one block per Lie parameter");
      for (const auto& u : U)
        if (u.rows() != n() || u.cols() != n()) throw Error(ErrorCode::ShapeMismatch, "U blocks must be n x n");
    }
  }

  /// The Lie parameters as symbols.
  std::vector<ScalarExpr> symbolic_xi() const {
    std::vector<ScalarExpr> xi;
    for (const auto& p : params) xi.push_back(ScalarExpr::symbol(p));
    return xi;
  }
};

using LieVector = std::vector<ScalarExpr>;

inline void check_xi(const ActionSpec& spec, const LieVector& xi) {
  spec.validate();
  if (xi.size() != spec.dim_g())
    throw Error(ErrorCode::ShapeMismatch, "Lie vector has " + std::to_string(xi.size()) + " entries, expected " +
                                              std::to_string(spec.dim_g()));
}

/// Components xi^alpha T_alpha^i of the fundamental field.
inline std::vector<ScalarExpr> fundamental_components(const ActionSpec& spec, const LieVector& xi) {
  check_xi(spec, xi);
  std::vector<ScalarExpr> v(spec.m());
  for (std::size_t al = 0; al < spec.dim_g(); ++al) {
    if (xi[al].is_zero()) continue;
    for (std::size_t i = 0; i < spec.m(); ++i) v[i] += xi[al] * spec.T[al][i];
  }
  return v;
}

/// xi^alpha U_{alpha B}^A as an n x n matrix indexed (A, B), i.e. the fibre
/// linearisation L~ acting on theta-components.
inline Matrix<ScalarExpr> fiber_generator(const ActionSpec& spec, const LieVector& xi) {
  check_xi(spec, xi);
  Matrix<ScalarExpr> l(spec.n(), spec.n());
  if (spec.U.empty()) return l;
  for (std::size_t al = 0; al < spec.dim_g(); ++al) {
    if (xi[al].is_zero()) continue;
    for (std::size_t b = 0; b < spec.n(); ++b)
      for (std::size_t a = 0; a < spec.n(); ++a)
        if (!spec.U[al](b, a).is_zero()) l(a, b) += xi[al] * spec.U[al](b, a);
  }
  return l;
}

/// xi* = xi^alpha T_alpha^i d/dx^i.
inline SuperVectorField fundamental_field(const ActionSpec& spec, const LieVector& xi) {
  auto comps = fundamental_components(spec, xi);
  SuperVectorField x(spec.chart, 0);
  for (std::size_t i = 0; i < spec.m(); ++i) x.a(i) = SuperFunction(spec.chart, comps[i]);
  return x;
}

/// xi-hat* = xi^alpha T_alpha^i d/dx^i + xi^alpha theta^B U_{alpha B}^A d/dtheta^A.
inline SuperVectorField lifted_field(const ActionSpec& spec, const LieVector& xi) {
  SuperVectorField x = fundamental_field(spec, xi);
  const Matrix<ScalarExpr> l = fiber_generator(spec, xi);
  for (std::size_t a = 0; a < spec.n(); ++a) {
    SuperFunction b(spec.chart);
    for (std::size_t bb = 0; bb < spec.n(); ++bb)
      if (!l(a, bb).is_zero()) b.add_term(bit(bb), l(a, bb));
    x.b(a) = b;
  }
  return x;
}

/// Sets U_{alpha B}^A = dT_alpha^A/dx^B, the lift of the action to the
/// cotangent-odd (tautological) chart.
inline ActionSpec tautological_lift(ActionSpec spec) {
  if (spec.n() != spec.m())
    throw Error(ErrorCode::NotTautological, "tautological lift needs n = m");
  spec.U.assign(spec.dim_g(), Matrix<ScalarExpr>(spec.n(), spec.n()));
  for (std::size_t al = 0; al < spec.dim_g(); ++al)
    for (std::size_t b = 0; b < spec.n(); ++b)
      for (std::size_t a = 0; a < spec.n(); ++a)
        spec.U[al](b, a) = differentiate(spec.T[al][a], spec.chart->even[b]);
  return spec;
}

/// Sample-based closure check of the Lie algebra spanned by the fundamental
/// fields: [xi*_a, xi*_b] = c_ab^g xi*_g with constants fitted by least
/// squares at sample points. A zero fit marks an abelian action.
struct ClosureReport {
  bool closed = true;
  bool abelian = true;
  double residual = 0.0;
  std::vector<double> constants;  // c[(a*dim+b)*dim+g]
};

inline ClosureReport check_closure(const ActionSpec& spec, int samples = 8, std::uint64_t seed = 11) {
  spec.validate();
  const std::size_t d = spec.dim_g(), m = spec.m();
  ClosureReport rep;
  rep.constants.assign(d * d * d, 0.0);
  std::vector<std::string> vars = spec.chart->even;
  auto pts = sample_points(vars, samples, seed);
  for (std::size_t a = 0; a < d; ++a)
    for (std::size_t b = a + 1; b < d; ++b) {
      std::vector<ScalarExpr> br(m);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j)
          br[i] += spec.T[a][j] * differentiate(spec.T[b][i], vars[j]) -
                   spec.T[b][j] * differentiate(spec.T[a][i], vars[j]);
      // Least squares over all sample rows.
      Matrix<double> ata(d, d, 0.0);
      std::vector<double> atb(d, 0.0);
      std::vector<std::pair<Matrix<double>, std::vector<double>>> rows;
      for (const auto& p : pts) {
        Matrix<double> g(m, d, 0.0);
        std::vector<double> rhs(m);
        for (std::size_t i = 0; i < m; ++i) {
          rhs[i] = evaluate(br[i], p);
          for (std::size_t gg = 0; gg < d; ++gg) g(i, gg) = evaluate(spec.T[gg][i], p);
        }
        for (std::size_t r = 0; r < d; ++r) {
          for (std::size_t c = 0; c < d; ++c)
            for (std::size_t i = 0; i < m; ++i) ata(r, c) += g(i, r) * g(i, c);
          for (std::size_t i = 0; i < m; ++i) atb[r] += g(i, r) * rhs[i];
        }
        rows.emplace_back(g, rhs);
      }
      double trace = 0.0;
      for (std::size_t r = 0; r < d; ++r) trace += ata(r, r);
      for (std::size_t r = 0; r < d; ++r) ata(r, r) += 1e-13 * (1.0 + trace);  // dependent generators
      std::vector<double> c(d, 0.0);
      try {
        c = solve(ata, atb);
      } catch (const Error&) {
        rep.closed = false;
      }
      for (const auto& [g, rhs] : rows)
        for (std::size_t i = 0; i < m; ++i) {
          double r = rhs[i];
          for (std::size_t gg = 0; gg < d; ++gg) r -= g(i, gg) * c[gg];
          rep.residual = std::max(rep.residual, std::abs(r));
        }
      for (std::size_t gg = 0; gg < d; ++gg) {
        rep.constants[(a * d + b) * d + gg] = c[gg];
        rep.constants[(b * d + a) * d + gg] = -c[gg];
        if (std::abs(c[gg]) > 1e-9) rep.abelian = false;
      }
    }
  if (rep.residual > 1e-8) rep.closed = false;
  return rep;
}

// ---------------------------------------------------------------------------
// Equivariant forms on the tautological chart (theta^i standing for dx^i).

using EquivariantForm = SuperFunction;

inline void require_tautological(const ChartPtr& chart) {
  if (chart->n() != chart->m()) throw Error(ErrorCode::NotTautological, "chart is not tautological (n != m)");
}

inline SuperFunction exterior_derivative(const SuperFunction& alpha) {
  require_tautological(alpha.chart());
  SuperFunction out(alpha.chart());
  for (std::size_t i = 0; i < alpha.m(); ++i) {
    SuperFunction d = even_partial(alpha, i);
    if (!d.is_zero()) out += SuperFunction::generator(alpha.chart(), i) * d;
  }
  return out;
}

/// Contraction i_v with a vector field of components v^i.
inline SuperFunction contraction(const std::vector<ScalarExpr>& v, const SuperFunction& alpha) {
  require_tautological(alpha.chart());
  SuperFunction out(alpha.chart());
  for (std::size_t i = 0; i < v.size(); ++i)
    if (!v[i].is_zero()) out += v[i] * odd_partial(alpha, i);
  return out;
}

/// (d_g alpha)(xi) = d(alpha(xi)) - i_{xi*} alpha(xi).
inline SuperFunction equivariant_differential(const EquivariantForm& alpha, const ActionSpec& spec,
                                              const LieVector& xi) {
  require_tautological(alpha.chart());
  return exterior_derivative(alpha) - contraction(fundamental_components(spec, xi), alpha);
}

/// Cartan formula L_v = d i_v + i_v d on forms.
inline SuperFunction lie_derivative_form(const EquivariantForm& alpha, const std::vector<ScalarExpr>& v) {
  return exterior_derivative(contraction(v, alpha)) + contraction(v, exterior_derivative(alpha));
}

/// Q_xi = d + Pi(xi*, 0): a^i = theta^i, b^A = xi*^A. With the tautological
/// lift, (1/2)[Q,Q] equals the lifted field, and Q at -xi intertwines with
/// d_g at xi under the identification of forms with superfunctions.
inline SuperVectorField tautological_Q(const ActionSpec& spec, const LieVector& xi) {
  require_tautological(spec.chart);
  auto comps = fundamental_components(spec, xi);
  SuperVectorField q(spec.chart, 1);
  for (std::size_t i = 0; i < spec.m(); ++i) {
    q.a(i) = SuperFunction::generator(spec.chart, i);
    q.b(i) = SuperFunction(spec.chart, comps[i]);
  }
  return q;
}

/// Complex structure data for the Kaehler example: even coordinates are
/// (z_1..z_c, zb_1..zb_c) treated as independent formal symbols, and the odd
/// generators pair with the holomorphic differentials dz_j.
struct KahlerData {
  std::size_t c = 0;
};

inline KahlerData kahler_data(const ChartPtr& chart) {
  if (chart->m() % 2 != 0 || chart->n() * 2 != chart->m())
    throw Error(ErrorCode::ShapeMismatch, "Kaehler chart needs m = 2c even coordinates and n = c odd generators");
  return KahlerData{chart->n()};
}

/// The holomorphic projection of an action: zb-components dropped, fibre
/// generators U_{alpha k}^j = dT_alpha^{z_j}/dz_k.
inline ActionSpec kahler_projected_spec(ActionSpec spec) {
  const KahlerData k = kahler_data(spec.chart);
  spec.U.assign(spec.dim_g(), Matrix<ScalarExpr>(k.c, k.c));
  for (std::size_t al = 0; al < spec.dim_g(); ++al) {
    for (std::size_t b = 0; b < k.c; ++b)
      for (std::size_t a = 0; a < k.c; ++a)
        spec.U[al](b, a) = differentiate(spec.T[al][a], spec.chart->even[b]);
    for (std::size_t j = k.c; j < 2 * k.c; ++j) spec.T[al][j] = ScalarExpr();
  }
  return spec;
}

/// Q_xi = del + Pi(xi*, 0) on the Kaehler chart: a^{z_j} = theta^j,
/// a^{zb_j} = 0, b^j = xi*^{z_j}.
inline SuperVectorField kahler_Q(const ActionSpec& spec, const LieVector& xi, const KahlerData& data) {
  if (data.c % 2 != 0)
    throw Error(ErrorCode::OddComplexDimension, "complex dimension " + std::to_string(data.c) + " is odd");
  const KahlerData k = kahler_data(spec.chart);
  if (k.c != data.c) throw Error(ErrorCode::ShapeMismatch, "complex dimension does not match the chart");
  auto comps = fundamental_components(spec, xi);
  SuperVectorField q(spec.chart, 1);
  for (std::size_t j = 0; j < k.c; ++j) {
    q.a(j) = SuperFunction::generator(spec.chart, j);
    q.b(j) = SuperFunction(spec.chart, comps[j]);
  }
  return q;
}

/// sigma^i_A with a^i = sigma^i_A theta^A; throws NotLinearInTheta when some
/// a^i has components of grade other than one.
inline Matrix<ScalarExpr> sigma_matrix(const SuperVectorField& q) {
  Matrix<ScalarExpr> s(q.m(), q.n());
  for (std::size_t i = 0; i < q.m(); ++i)
    for (const auto& [mask, c] : q.a(i).terms()) {
      if (grade_of(mask) != 1)
        throw Error(ErrorCode::NotLinearInTheta, "component a^" + std::to_string(i) + " has a term of grade " +
                                                     std::to_string(grade_of(mask)));
      s(i, static_cast<std::size_t>(std::countr_zero(mask))) = c;
    }
  return s;
}

/// Minimum numeric rank of a matrix of expressions over sample points. A
/// constant matrix is ranked exactly.
inline std::size_t sampled_rank(const Matrix<ScalarExpr>& s, const std::vector<Point>& points) {
  bool constant = true;
  for (std::size_t i = 0; i < s.rows() && constant; ++i)
    for (std::size_t j = 0; j < s.cols(); ++j)
      if (!s(i, j).is_constant()) {
        constant = false;
        break;
      }
  if (constant) return rank(s.map([](const ScalarExpr& e) { return e.constant_value().value_or(Rational(0)); }));
  std::size_t best = std::min(s.rows(), s.cols());
  for (const auto& p : points) best = std::min(best, rank(evaluate(s, p), 1e-9));
  return best;
}

/// Default sample points covering every free symbol of `exprs`.
inline std::vector<Point> default_points(const std::set<std::string>& symbols, int count = 6,
                                         std::uint64_t seed = 7) {
  return sample_points(std::vector<std::string>(symbols.begin(), symbols.end()), count, seed);
}

/// sigma_Q, checked injective (rank n) at the sample points.
inline Matrix<ScalarExpr> sigma_from_Q(const SuperVectorField& q, const std::vector<Point>& points = {}) {
  Matrix<ScalarExpr> s = sigma_matrix(q);
  auto pts = points.empty() ? default_points(free_symbols(s)) : points;
  if (sampled_rank(s, pts) < q.n()) throw Error(ErrorCode::NotInjective, "sigma_Q is not injective");
  return s;
}

// ---------------------------------------------------------------------------
// BRST verification

struct ConditionResult {
  bool checked = false;
  bool pass = false;
  double residual = 0.0;
  std::string detail;
};

struct BrstReport {
  ConditionResult square;       // Q^2 = lifted field
  ConditionResult equivariant;  // invariance under the group flow
  ConditionResult injective;    // sigma_Q of rank n
  bool all_pass() const {
    return (!square.checked || square.pass) && (!equivariant.checked || equivariant.pass) &&
           (!injective.checked || injective.pass);
  }
};

struct BrstOptions {
  std::vector<SuperFunction> samples;  // extra superfunctions f for Q(Q f) = xi-hat*(f)
  std::vector<Point> points;           // base sample points for the numeric conditions
  Point parameters;                    // Lie-parameter values for the numeric conditions
  bool equivariance = true;
  double flow_time = 0.5;
  int flow_steps = 200;
  double tol = 1e-8;
};

/// (1/2)[Q,Q] - xi-hat*.
inline SuperVectorField brst_residual(const SuperVectorField& q, const ActionSpec& spec, const LieVector& xi) {
  SuperVectorField qq = graded_commutator(q, q);
  return ScalarExpr(Rational(1, 2)) * qq - lifted_field(spec, xi);
}

inline std::string describe_field(const SuperVectorField& x) {
  std::ostringstream os;
  for (std::size_t i = 0; i < x.m(); ++i)
    if (!x.a(i).is_zero()) os << "d/d" << x.chart()->even[i] << ": " << to_string(x.a(i)) << "; ";
  for (std::size_t k = 0; k < x.n(); ++k)
    if (!x.b(k).is_zero()) os << "d/d" << x.chart()->odd[k] << ": " << to_string(x.b(k)) << "; ";
  return os.str();
}

namespace detail {

struct FlowData {
  std::vector<std::string> vars;  // even coordinates
  CompiledMatrix V, DV, Ut;       // V: m x 1, DV: m x m, Ut: n x n indexed (A, C)
  CompiledMatrix sigma, b0;       // m x n, n x 1
  std::vector<CompiledMatrix> b2; // per A: n x n antisymmetric coefficient matrix
};

/// Evolves (x, J, M) along the flow of the lifted field for time s1.
inline void flow(const FlowData& f, std::size_t m, std::size_t n, const std::vector<double>& x0, double s1, int steps,
                 std::vector<double>& x, Matrix<double>& J, Matrix<double>& M) {
  std::vector<double> y(m + m * m + n * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) y[i] = x0[i];
  for (std::size_t i = 0; i < m; ++i) y[m + i * m + i] = 1.0;
  for (std::size_t a = 0; a < n; ++a) y[m + m * m + a * n + a] = 1.0;
  auto rhs = [&](const std::vector<double>& s) {
    std::vector<double> d(s.size(), 0.0);
    std::span<const double> xs(s.data(), m);
    auto v = f.V(xs);
    auto dv = f.DV(xs);
    auto u = f.Ut(xs);
    for (std::size_t i = 0; i < m; ++i) d[i] = v(i, 0);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        double acc = 0.0;
        for (std::size_t k = 0; k < m; ++k) acc += dv(i, k) * s[m + k * m + j];
        d[m + i * m + j] = acc;
      }
    const std::size_t off = m + m * m;
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = 0; b < n; ++b) {
        double acc = 0.0;
        for (std::size_t c = 0; c < n; ++c) acc += u(a, c) * s[off + c * n + b];
        d[off + a * n + b] = acc;
      }
    return d;
  };
  y = rk4(rhs, y, s1, steps);
  x.assign(y.begin(), y.begin() + static_cast<std::ptrdiff_t>(m));
  J = Matrix<double>(m, m, 0.0);
  M = Matrix<double>(n, n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) J(i, j) = y[m + i * m + j];
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b) M(a, b) = y[m + m * m + a * n + b];
}

}  // namespace detail

/// Checks invariance of Q under the finite flow of the lifted field along
/// `eta`: J sigma(x0) = sigma(x(s)) M, b0(x(s)) = M b0(x0), and the grade-2
/// part of b^A, using finite differences in x0 for dM/dx0.
inline ConditionResult check_flow_invariance(const SuperVectorField& q, const ActionSpec& spec,
                                             const std::vector<LieVector>& directions,
                                             const std::vector<Point>& points, const Point& params, double s1,
                                             int steps, double tol) {
  ConditionResult res;
  res.checked = true;
  const std::size_t m = spec.m(), n = spec.n();
  const std::vector<std::string>& vars = spec.chart->even;
  Matrix<ScalarExpr> sigma;
  try {
    sigma = sigma_matrix(q);
  } catch (const Error& e) {
    res.pass = false;
    res.detail = e.what();
    return res;
  }
  std::vector<ScalarExpr> b0(n);
  std::vector<Matrix<ScalarExpr>> b2(n, Matrix<ScalarExpr>(n, n));
  int max_b_grade = 0;
  for (std::size_t a = 0; a < n; ++a)
    for (const auto& [mask, c] : q.b(a).terms()) {
      const int g = grade_of(mask);
      max_b_grade = std::max(max_b_grade, g);
      if (g == 0) b0[a] = c;
      if (g == 2) {
        const std::size_t i = static_cast<std::size_t>(std::countr_zero(mask));
        const std::size_t j = static_cast<std::size_t>(std::countr_zero(mask & (mask - 1)));
        b2[a](i, j) = c;
        b2[a](j, i) = -c;
      }
    }
  double worst = 0.0;
  double worst_fd = 0.0;  // grade-2 comparison, limited by the finite-difference step
  for (const auto& eta : directions) {
    detail::FlowData fd;
    fd.vars = vars;
    auto v = fundamental_components(spec, eta);
    Matrix<ScalarExpr> dv(m, m);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < m; ++j) dv(i, j) = differentiate(v[i], vars[j]);
    fd.V = CompiledMatrix(column(v), vars, params);
    fd.DV = CompiledMatrix(dv, vars, params);
    fd.Ut = CompiledMatrix(fiber_generator(spec, eta), vars, params);
    fd.sigma = CompiledMatrix(sigma, vars, params);
    fd.b0 = CompiledMatrix(column(b0), vars, params);
    for (std::size_t a = 0; a < n; ++a) fd.b2.emplace_back(b2[a], vars, params);
    for (const auto& p : points) {
      std::vector<double> x0(m);
      for (std::size_t i = 0; i < m; ++i) x0[i] = p.at(vars[i]);
      std::vector<double> x;
      Matrix<double> J, M;
      detail::flow(fd, m, n, x0, s1, steps, x, J, M);
      Matrix<double> lhs = J * fd.sigma(x0);
      Matrix<double> rhs = fd.sigma(x) * M;
      worst = std::max(worst, max_abs(lhs - rhs) / std::max(1.0, max_abs(lhs)));
      Matrix<double> b_end = fd.b0(x), b_start = M * fd.b0(x0);
      worst = std::max(worst, max_abs(b_end - b_start) / std::max(1.0, max_abs(b_start)));
      if (max_b_grade >= 2) {
        const double h = 1e-5;
        std::vector<Matrix<double>> dM(m);
        for (std::size_t j = 0; j < m; ++j) {
          auto xp = x0, xm = x0;
          xp[j] += h;
          xm[j] -= h;
          std::vector<double> tmp;
          Matrix<double> Jp, Mp, Jm, Mm;
          detail::flow(fd, m, n, xp, s1, steps, tmp, Jp, Mp);
          detail::flow(fd, m, n, xm, s1, steps, tmp, Jm, Mm);
          dM[j] = scale(Mp - Mm, 1.0 / (2 * h));
        }
        Matrix<double> sig0 = fd.sigma(x0);
        for (std::size_t a = 0; a < n; ++a) {
          Matrix<double> K(n, n, 0.0);  // K_{CB} = sigma^j_C dM^a_B/dx^j
          for (std::size_t c = 0; c < n; ++c)
            for (std::size_t b = 0; b < n; ++b)
              for (std::size_t j = 0; j < m; ++j) K(c, b) += sig0(j, c) * dM[j](a, b);
          Matrix<double> right = K - transpose(K);
          for (std::size_t g = 0; g < n; ++g) right = right + scale(fd.b2[g](x0), M(a, g));
          Matrix<double> left = transpose(M) * fd.b2[a](x) * M;
          worst_fd = std::max(worst_fd, max_abs(left - right) / std::max(1.0, max_abs(left)));
        }
      }
    }
  }
  res.residual = worst;
  res.pass = worst < tol && worst_fd < 1e-5;
  std::ostringstream os;
  if (max_b_grade >= 2) os << "grade-2 mismatch " << worst_fd << "; ";
  os << "max relative flow mismatch " << worst << " over " << directions.size() << " direction(s) and "
     << points.size() << " point(s)";
  if (max_b_grade > 2) os << "; grades above 2 in b^A not compared";
  res.detail = os.str();
  return res;
}

/// Verifies the three BRST conditions for Q against the action spec at xi.
inline BrstReport verify_brst(const SuperVectorField& q, const ActionSpec& spec, const LieVector& xi,
                              const BrstOptions& opt = {}) {
  BrstReport rep;
  // Condition 1.
  rep.square.checked = true;
  try {
    SuperVectorField r = brst_residual(q, spec, xi);
    bool ok = vanishes_identically(r, 1e-12);
    std::string detail = ok ? "(1/2)[Q,Q] = lifted field" : "residual: " + describe_field(r);
    SuperVectorField lift = lifted_field(spec, xi);
    for (const auto& f : opt.samples) {
      SuperFunction d = apply_field(q, apply_field(q, f)) - apply_field(lift, f);
      if (!vanishes_identically(d, 1e-12)) {
        ok = false;
        detail += "; Q(Q f) != lifted(f) for f = " + to_string(f);
      }
    }
    rep.square.pass = ok;
    rep.square.detail = detail;
    if (!ok) {
      std::set<std::string> syms;
      auto collect = [&](const SuperFunction& f) {
        for (const auto& [mask, c] : f.terms()) collect_symbols(c, syms);
      };
      for (std::size_t i = 0; i < r.m(); ++i) collect(r.a(i));
      for (std::size_t k = 0; k < r.n(); ++k) collect(r.b(k));
      auto pts = default_points(syms, 1, 3);
      double mx = 0.0;
      auto upd = [&](const SuperFunction& f) {
        for (const auto& [mask, c] : f.terms()) mx = std::max(mx, std::abs(evaluate(c, pts[0])));
      };
      for (std::size_t i = 0; i < r.m(); ++i) upd(r.a(i));
      for (std::size_t k = 0; k < r.n(); ++k) upd(r.b(k));
      rep.square.residual = mx;
    }
  } catch (const Error& e) {
    rep.square.pass = false;
    rep.square.detail = e.what();
  }

  // Numeric bindings for conditions 2 and 3.
  Point params = opt.parameters;
  {
    auto extra = sample_points(spec.params, 1, 19);
    for (const auto& p : spec.params)
      if (!params.count(p)) params[p] = extra[0][p];
  }
  std::vector<Point> points = opt.points;
  if (points.empty()) points = sample_points(spec.chart->even, 4, 23);
  for (auto& p : points) p = merge(p, params);

  // Condition 3.
  rep.injective.checked = true;
  try {
    Matrix<ScalarExpr> s = sigma_matrix(q);
    const std::size_t r = sampled_rank(s, points);
    rep.injective.pass = r == q.n();
    rep.injective.detail = "rank sigma_Q = " + std::to_string(r) + ", n = " + std::to_string(q.n());
  } catch (const Error& e) {
    rep.injective.pass = false;
    rep.injective.detail = e.what();
  }

  // Condition 2.
  if (opt.equivariance) {
    std::vector<LieVector> dirs{xi};
    ClosureReport cl = check_closure(spec);
    if (cl.abelian && cl.closed)
      for (std::size_t al = 0; al < spec.dim_g(); ++al) {
        LieVector e(spec.dim_g(), ScalarExpr(0));
        e[al] = ScalarExpr(1);
        dirs.push_back(e);
      }
    try {
      rep.equivariant = check_flow_invariance(q, spec, dirs, points, params, opt.flow_time, opt.flow_steps, opt.tol);
    } catch (const Error& e) {
      rep.equivariant.checked = true;
      rep.equivariant.pass = false;
      rep.equivariant.detail = e.what();
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Metrics

/// H = sigma^T h sigma.
inline Matrix<ScalarExpr> induced_fiber_metric(const Matrix<ScalarExpr>& h, const Matrix<ScalarExpr>& sigma,
                                               const std::vector<Point>& points = {}) {
  if (h.rows() != sigma.rows()) throw Error(ErrorCode::DimensionMismatch, "metric and sigma shapes");
  auto pts = points.empty() ? default_points(free_symbols(sigma)) : points;
  if (sampled_rank(sigma, pts) < sigma.cols()) throw Error(ErrorCode::NotInjective, "sigma is not injective");
  return transpose(sigma) * h * sigma;
}

enum class FiberConnection { Auto, LeviCivita, HalfHinvDH };

/// Christoffel symbols Gamma^i_{kj} of a metric at a point, from symbolic
/// first derivatives; gamma[k](i, j).
inline std::vector<Matrix<double>> christoffel(const Matrix<ScalarExpr>& g, const std::vector<std::string>& vars,
                                               const Point& p) {
  const std::size_t m = g.rows();
  Matrix<double> gv = evaluate(g, p);
  Matrix<double> ginv = inverse(gv);
  std::vector<Matrix<double>> dg;
  for (std::size_t k = 0; k < m; ++k)
    dg.push_back(evaluate(g.map([&](const ScalarExpr& e) { return differentiate(e, vars[k]); }), p));
  std::vector<Matrix<double>> gamma(m, Matrix<double>(m, m, 0.0));
  for (std::size_t k = 0; k < m; ++k)
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        double s = 0.0;
        for (std::size_t l = 0; l < m; ++l) s += ginv(i, l) * (dg[k](l, j) + dg[j](l, k) - dg[l](k, j));
        gamma[k](i, j) = 0.5 * s;
      }
  return gamma;
}

struct ParallelReport {
  bool pass = false;
  double max_norm = 0.0;
  std::string detail;
};

/// Covariant derivative of sigma: d_k sigma + Gamma sigma - sigma Gamma~,
/// with Levi-Civita on the base and, on the fibre, Levi-Civita of H when
/// sigma is the identity and (1/2)H^{-1} dH otherwise.
inline ParallelReport check_sigma_parallel(const Matrix<ScalarExpr>& sigma, const Matrix<ScalarExpr>& h,
                                           const Matrix<ScalarExpr>& H, const std::vector<std::string>& vars,
                                           const std::vector<Point>& points, double tol = 1e-8,
                                           FiberConnection conn = FiberConnection::Auto) {
  const std::size_t m = sigma.rows(), n = sigma.cols();
  if (conn == FiberConnection::Auto) {
    bool identity = m == n;
    for (std::size_t i = 0; i < m && identity; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (!(sigma(i, j) == ScalarExpr(i == j ? 1 : 0))) identity = false;
    conn = identity ? FiberConnection::LeviCivita : FiberConnection::HalfHinvDH;
  }
  ParallelReport rep;
  for (const auto& p : points) {
    auto gamma = christoffel(h, vars, p);
    std::vector<Matrix<double>> gt;
    if (conn == FiberConnection::LeviCivita) {
      gt = christoffel(H, vars, p);
    } else {
      Matrix<double> Hinv = inverse(evaluate(H, p));
      for (std::size_t k = 0; k < m; ++k)
        gt.push_back(scale(Hinv * evaluate(H.map([&](const ScalarExpr& e) { return differentiate(e, vars[k]); }), p),
                           0.5));
    }
    Matrix<double> s = evaluate(sigma, p);
    for (std::size_t k = 0; k < m; ++k) {
      Matrix<double> ds = evaluate(sigma.map([&](const ScalarExpr& e) { return differentiate(e, vars[k]); }), p);
      Matrix<double> cov = ds + gamma[k] * s - s * gt[k];
      rep.max_norm = std::max(rep.max_norm, max_abs(cov));
    }
  }
  rep.pass = rep.max_norm < tol;
  std::ostringstream os;
  os << "max |nabla sigma| = " << rep.max_norm << " over " << points.size() << " point(s)";
  rep.detail = os.str();
  return rep;
}

}  // namespace superloc

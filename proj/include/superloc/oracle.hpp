#pragma once

// Independent numerical ground truth: Gauss-Legendre quadrature over chart
// boxes, Berezin integrals with a Berezinian density, Hodge duals, and the
// super-Stokes boundary check.

#include <cmath>
#include <cstdlib>
#include <functional>
#include <numbers>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "superloc/equivariant.hpp"
#include "superloc/linalg.hpp"
#include "superloc/localization.hpp"
#include "superloc/numeric.hpp"
#include "superloc/super.hpp"

namespace superloc {

/// Worker count from SUPERLOC_THREADS, else the hardware concurrency.
inline unsigned worker_count() {
  if (const char* env = std::getenv("SUPERLOC_THREADS")) {
    const int v = std::atoi(env);
    if (v >= 1) return static_cast<unsigned>(v);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

/// Nodes and weights of the n-point Gauss-Legendre rule on [-1, 1].
inline std::pair<std::vector<double>, std::vector<double>> gauss_legendre(int n) {
  std::vector<double> x(static_cast<std::size_t>(n)), w(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    double z = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = z;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      if (n == 1) p0 = 1.0;
      dp = n * (z * p1 - p0) / (z * z - 1.0);
      const double dz = p1 / dp;
      z -= dz;
      if (std::abs(dz) < 1e-16) break;
    }
    x[static_cast<std::size_t>(i)] = z;
    w[static_cast<std::size_t>(i)] = 2.0 / ((1.0 - z * z) * dp * dp);
  }
  return {x, w};
}

using Box = std::vector<std::pair<double, double>>;
using Integrand = std::function<double(std::span<const double>)>;

struct QuadratureResult {
  double value = 0.0;
  double error = 0.0;
  int level = 0;
};

struct QuadratureOptions {
  double tol = 1e-8;
  int order = 12;
  int max_depth = 12;
  int min_depth = 1;
  std::size_t max_points = 60'000'000;
};

namespace detail {

/// Tensor Gauss-Legendre sum with 2^level cells per axis; per-cell partial
/// sums are reduced in cell-index order so the result is independent of the
/// thread count.
inline double gl_level(const Integrand& f, const Box& box, int level, int order) {
  static thread_local std::map<int, std::pair<std::vector<double>, std::vector<double>>> cache;
  auto it = cache.find(order);
  if (it == cache.end()) it = cache.emplace(order, gauss_legendre(order)).first;
  const auto& [nodes, weights] = it->second;
  const std::size_t m = box.size();
  const std::size_t per_axis = std::size_t{1} << level;
  std::size_t cells = 1;
  for (std::size_t i = 0; i < m; ++i) cells *= per_axis;
  std::size_t inner = 1;
  for (std::size_t i = 0; i < m; ++i) inner *= static_cast<std::size_t>(order);
  std::vector<double> partial(cells, 0.0);
  auto work = [&](std::size_t begin, std::size_t end) {
    std::vector<double> x(m), lo(m), half(m);
    for (std::size_t c = begin; c < end; ++c) {
      std::size_t r = c;
      double jac = 1.0;
      for (std::size_t d = 0; d < m; ++d) {
        const std::size_t k = r % per_axis;
        r /= per_axis;
        const double h = (box[d].second - box[d].first) / static_cast<double>(per_axis);
        lo[d] = box[d].first + static_cast<double>(k) * h;
        half[d] = 0.5 * h;
        jac *= half[d];
      }
      double s = 0.0;
      for (std::size_t q = 0; q < inner; ++q) {
        std::size_t rq = q;
        double w = 1.0;
        for (std::size_t d = 0; d < m; ++d) {
          const std::size_t k = rq % static_cast<std::size_t>(order);
          rq /= static_cast<std::size_t>(order);
          x[d] = lo[d] + half[d] * (nodes[k] + 1.0);
          w *= weights[k];
        }
        s += w * f(x);
      }
      partial[c] = s * jac;
    }
  };
  const unsigned threads = std::min<std::size_t>(worker_count(), cells);
  if (threads <= 1) {
    work(0, cells);
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (cells + threads - 1) / threads;
    for (unsigned t = 0; t < threads; ++t) {
      const std::size_t b = t * chunk, e = std::min(cells, b + chunk);
      if (b < e) pool.emplace_back(work, b, e);
    }
    for (auto& th : pool) th.join();
  }
  double total = 0.0;
  for (double p : partial) total += p;
  return total;
}

}  // namespace detail

/// Tensor-product Gauss-Legendre with dyadic refinement until successive
/// levels differ by less than tol * max(1, |value|).
inline QuadratureResult quadrature(const Integrand& f, const Box& box, const QuadratureOptions& opt = {}) {
  if (box.empty()) return QuadratureResult{f(std::span<const double>{}), 0.0, 0};
  for (const auto& [a, b] : box)
    if (!(b > a)) throw Error(ErrorCode::DimensionMismatch, "degenerate quadrature box");
  double prev = detail::gl_level(f, box, 0, opt.order);
  for (int level = 1; level <= opt.max_depth; ++level) {
    double points = 1.0;
    for (std::size_t d = 0; d < box.size(); ++d) points *= static_cast<double>(opt.order) * std::ldexp(1.0, level);
    if (points > static_cast<double>(opt.max_points))
      throw Error(ErrorCode::NoConvergence, "quadrature exceeded its evaluation budget");
    const double cur = detail::gl_level(f, box, level, opt.order);
    const double diff = std::abs(cur - prev);
    if (level >= opt.min_depth && diff < opt.tol * std::max(1.0, std::abs(cur)))
      return QuadratureResult{cur, diff, level};
    prev = cur;
  }
  throw Error(ErrorCode::NoConvergence, "quadrature did not converge by the maximum depth");
}

/// Binds parameters and compiles a scalar against the chart variables.
inline Integrand compile_integrand(const ScalarExpr& e, const std::vector<std::string>& vars, const Point& params) {
  Substitution fix;
  for (const auto& [k, v] : params)
    if (std::find(vars.begin(), vars.end(), k) == vars.end()) fix[k] = ScalarExpr(exact_rational(v));
  auto c = std::make_shared<CompiledScalar>(fix.empty() ? e : substitute(e, fix), std::span<const std::string>(vars));
  return [c](std::span<const double> x) { return (*c)(x); };
}

inline QuadratureResult quadrature(const ScalarExpr& f, const std::vector<std::string>& vars, const Box& box,
                                   const Point& params = {}, const QuadratureOptions& opt = {}) {
  return quadrature(compile_integrand(f, vars, params), box, opt);
}

// ---------------------------------------------------------------------------
// Charts and Berezin integrals

/// Local density det^{1/2}(h) / det^{1/2}(H) of the Berezinian section.
struct BerezinianSection {
  Matrix<ScalarExpr> h, H;

  bool tautological() const { return h == H; }

  Integrand density(const std::vector<std::string>& vars, const Point& params) const {
    if (tautological()) return [](std::span<const double>) { return 1.0; };
    auto dh = compile_integrand(determinant(h), vars, params);
    auto dH = compile_integrand(determinant(H), vars, params);
    return [dh, dH](std::span<const double> x) { return std::sqrt(dh(x) / dH(x)); };
  }
};

struct OracleChart {
  std::vector<std::string> vars;
  Box box;
  Matrix<ScalarExpr> h;
  int orientation = 1;
  std::string excluded;  // description of the measure-zero set left out
};

struct ChartedManifold {
  std::size_t m = 0;
  std::vector<OracleChart> charts;
};

/// Sum over charts of orientation * integral of top(F) * density.
/// F and the section are given per chart.
inline QuadratureResult global_berezin(const ChartedManifold& M, const std::vector<BerezinianSection>& theta,
                                       const std::vector<SuperFunction>& F, const Point& params = {},
                                       const QuadratureOptions& opt = {}) {
  if (theta.size() != M.charts.size() || F.size() != M.charts.size())
    throw Error(ErrorCode::DimensionMismatch, "one section and one superfunction per chart");
  QuadratureResult total;
  for (std::size_t c = 0; c < M.charts.size(); ++c) {
    const auto& ch = M.charts[c];
    ScalarExpr top = top_component(F[c]);
    if (top.is_zero()) continue;
    Integrand t = compile_integrand(top, ch.vars, params);
    Integrand d = theta[c].density(ch.vars, params);
    QuadratureResult r = quadrature([&](std::span<const double> x) { return t(x) * d(x); }, ch.box, opt);
    total.value += ch.orientation * r.value;
    total.error += r.error;
    total.level = std::max(total.level, r.level);
  }
  return total;
}

// ---------------------------------------------------------------------------
// Hodge duals

/// The dual of a grade-(n-1) superfunction: components c^A with
/// (*_H nu)^A = c^A / sqrt(det H).
struct FiberDual {
  std::vector<ScalarExpr> numerators;
  ScalarExpr det_H;

  /// Components with the determinant factor folded in, when its square root is exact.
  std::optional<std::vector<ScalarExpr>> exact() const {
    auto r = exact_sqrt(det_H);
    if (!r) return std::nullopt;
    ScalarExpr inv = reciprocal(*r);
    std::vector<ScalarExpr> out;
    for (const auto& c : numerators) out.push_back(c * inv);
    return out;
  }
};

/// Sign of the permutation taking (A, complement of A in increasing order)
/// to increasing order.
inline int epsilon_first(std::size_t a) { return a % 2 == 0 ? 1 : -1; }

/// (*_H nu)^A = det(H)^{-1/2} eps^{A I_A} nu_{I_A}, with I_A the sorted complement of A.
inline FiberDual hodge_dual_H(const SuperFunction& nu, const Matrix<ScalarExpr>& H) {
  const std::size_t n = nu.n();
  if (H.rows() != n || H.cols() != n) throw Error(ErrorCode::DimensionMismatch, "fibre metric must be n x n");
  for (const auto& [mask, c] : nu.terms())
    if (grade_of(mask) != static_cast<int>(n) - 1)
      throw Error(ErrorCode::WrongGrade, "Hodge dual needs a superfunction of grade n-1");
  const Mask full = n == 64 ? ~Mask{0} : (bit(n) - 1);
  FiberDual d;
  d.det_H = determinant(H);
  for (std::size_t a = 0; a < n; ++a) {
    const ScalarExpr& c = nu.coefficient(full & ~bit(a));
    d.numerators.push_back(epsilon_first(a) > 0 ? c : -c);
  }
  return d;
}

/// The reverse map from fibre vectors to grade n-1:
/// nu'_{I_A} = det(H)^{-1/2} eps^{I_A A} w^A. Applied after hodge_dual_H with
/// det H = 1 it returns (-1)^{n-1} nu.
inline SuperFunction hodge_dual_H_vector(const std::vector<ScalarExpr>& w, const Matrix<ScalarExpr>& H,
                                         const ChartPtr& chart) {
  const std::size_t n = chart->n();
  if (w.size() != n) throw Error(ErrorCode::DimensionMismatch, "vector must have n components");
  auto r = exact_sqrt(determinant(H));
  if (!r) throw Error(ErrorCode::AssumptionViolated, "det H has no exact square root");
  ScalarExpr inv = reciprocal(*r);
  const Mask full = n == 64 ? ~Mask{0} : (bit(n) - 1);
  SuperFunction out(chart);
  for (std::size_t a = 0; a < n; ++a) {
    // eps^{I_A A}: move A from the last slot to position a, n-1-a transpositions.
    const int sign = ((n - 1 - a) % 2 == 0) ? 1 : -1;
    out.add_term(full & ~bit(a), (sign > 0 ? w[a] : -w[a]) * inv);
  }
  return out;
}

/// Metric Hodge star on forms of the tautological chart:
/// (*alpha)_J = sqrt(det h) alpha^I eps_{IJ}, summing over sorted I.
inline SuperFunction hodge_star_h(const SuperFunction& alpha, const Matrix<ScalarExpr>& h) {
  require_tautological(alpha.chart());
  const std::size_t m = alpha.m();
  auto root = exact_sqrt(determinant(h));
  if (!root) throw Error(ErrorCode::AssumptionViolated, "det h has no exact square root");
  if (m >= 63) throw Error(ErrorCode::DimensionMismatch, "Hodge star limited to m < 63");
  Matrix<ScalarExpr> hinv = inverse_expr(h);
  const Mask full = m == 64 ? ~Mask{0} : (bit(m) - 1);
  SuperFunction out(alpha.chart());
  // Raise indices: alpha^I = sum_K det(hinv[I, K]) alpha_K over sorted K of the same size.
  for (const auto& [kmask, ck] : alpha.terms()) {
    const int k = grade_of(kmask);
    std::vector<std::size_t> K;
    for (Mask r = kmask; r; r &= r - 1) K.push_back(static_cast<std::size_t>(std::countr_zero(r)));
    for (Mask imask = 0; imask <= full; ++imask) {
      if (grade_of(imask) != k) continue;
      std::vector<std::size_t> I;
      for (Mask r = imask; r; r &= r - 1) I.push_back(static_cast<std::size_t>(std::countr_zero(r)));
      Matrix<ScalarExpr> sub(static_cast<std::size_t>(k), static_cast<std::size_t>(k));
      for (std::size_t p = 0; p < I.size(); ++p)
        for (std::size_t q = 0; q < K.size(); ++q) sub(p, q) = hinv(I[p], K[q]);
      ScalarExpr raised = determinant(sub) * ck;
      if (raised.is_zero()) continue;
      const Mask jmask = full & ~imask;
      const int s = wedge_sign(imask, jmask);
      out.add_term(jmask, (s > 0 ? raised : -raised) * (*root));
    }
  }
  return out;
}

/// Hodge dual of a base 1-form with components omega_i, as an (m-1)-form.
inline SuperFunction hodge_dual_h(const std::vector<ScalarExpr>& omega, const Matrix<ScalarExpr>& h,
                                  const ChartPtr& chart) {
  SuperFunction w(chart);
  for (std::size_t i = 0; i < omega.size(); ++i) w.add_term(bit(i), omega[i]);
  return hodge_star_h(w, h);
}

// ---------------------------------------------------------------------------
// Super-Stokes

struct StokesReport {
  double interior = 0.0;
  double boundary = 0.0;
  double difference = 0.0;
  bool pass = false;
  std::string detail;
};

/// Compares the interior Berezin integral of Q(nu) over the box U with the
/// outward flux of V = sigma(*_H nu) through its faces, weighted by sqrt(det h).
inline StokesReport super_stokes_check(const SuperFunction& nu, const SuperVectorField& Q,
                                       const Matrix<ScalarExpr>& sigma, const Matrix<ScalarExpr>& h,
                                       const Matrix<ScalarExpr>& H, const Box& U, const Point& params = {},
                                       double tol = 1e-7, const QuadratureOptions& qopt = {},
                                       bool check_assumption = true) {
  const auto& vars = Q.chart()->even;
  const std::size_t m = vars.size(), n = Q.n();
  if (U.size() != m) throw Error(ErrorCode::DimensionMismatch, "box must have one interval per coordinate");
  if (check_assumption) {
    std::vector<Point> pts;
    for (int k = 0; k < 5; ++k) {
      Point p = params;
      for (std::size_t i = 0; i < m; ++i)
        p[vars[i]] = U[i].first + (U[i].second - U[i].first) * (0.15 + 0.17 * k + 0.05 * static_cast<double>(i));
      pts.push_back(p);
    }
    ParallelReport pr = check_sigma_parallel(sigma, h, H, vars, pts);
    if (!pr.pass) throw Error(ErrorCode::AssumptionViolated, "sigma is not parallel: " + pr.detail);
  }
  StokesReport rep;
  if (nu.is_zero()) {
    rep.pass = true;
    rep.detail = "nu = 0";
    return rep;
  }
  // Interior.
  BerezinianSection theta{h, H};
  {
    ScalarExpr top = top_component(apply_field(Q, nu));
    Integrand t = compile_integrand(top, vars, params);
    Integrand d = theta.density(vars, params);
    rep.interior = quadrature([&](std::span<const double> x) { return t(x) * d(x); }, U, qopt).value;
  }
  // Boundary: V^i = sigma^i_A c^A / sqrt(det H), flux density sqrt(det h) V^k on the face x^k = const.
  FiberDual dual = hodge_dual_H(nu, H);
  std::vector<ScalarExpr> numer(m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t a = 0; a < n; ++a) numer[i] += sigma(i, a) * dual.numerators[a];
  Integrand dh = compile_integrand(determinant(h), vars, params);
  Integrand dH = compile_integrand(dual.det_H, vars, params);
  for (std::size_t k = 0; k < m; ++k) {
    Integrand vk = compile_integrand(numer[k], vars, params);
    Box face;
    for (std::size_t i = 0; i < m; ++i)
      if (i != k) face.push_back(U[i]);
    for (int side = 0; side < 2; ++side) {
      const double xk = side == 0 ? U[k].first : U[k].second;
      auto g = [&](std::span<const double> y) {
        std::vector<double> x(m);
        for (std::size_t i = 0, j = 0; i < m; ++i) x[i] = (i == k) ? xk : y[j++];
        return std::sqrt(dh(x) / dH(x)) * vk(x);
      };
      const double v = quadrature(g, face, qopt).value;
      rep.boundary += side == 0 ? -v : v;
    }
  }
  rep.difference = std::abs(rep.interior - rep.boundary);
  rep.pass = rep.difference < tol;
  std::ostringstream os;
  os.precision(12);
  os << "interior " << rep.interior << ", boundary " << rep.boundary;
  rep.detail = os.str();
  return rep;
}

}  // namespace superloc

// Acceptance run: one line per criterion, non-zero exit on any failure.
#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>

#include "superloc/scenario.hpp"

using namespace superloc;

namespace {

const std::string kScenarios = std::string(SUPERLOC_SOURCE_DIR) + "/scenarios/";

struct Outcome {
  bool pass = true;
  std::ostringstream note;
  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      note << " [failed: " << what << "]";
    }
  }
};

double rel(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

Matrix<Rational> random_skew(std::mt19937_64& rng, std::size_t n) {
  std::uniform_int_distribution<int> k(-9, 9), d(1, 6);
  Matrix<Rational> a(n, n, Rational(0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      a(i, j) = Rational(k(rng), d(rng));
      a(i, j).canonicalize();
      a(j, i) = -a(i, j);
    }
  return a;
}

Matrix<Rational> random_invertible(std::mt19937_64& rng, std::size_t n) {
  std::uniform_int_distribution<int> k(-5, 5), d(1, 3);
  Matrix<Rational> a(n, n);
  do {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        a(i, j) = Rational(k(rng), d(rng));
        a(i, j).canonicalize();
      }
  } while (determinant(a) == 0);
  return a;
}

// 1. Super localization, quadrature oracle and closed form agree on the sphere.
void duistermaat_heckman(Outcome& o) {
  Scenario s = load_scenario(kScenarios + "sphere_dh.json");
  for (const auto& p : s.parameter_sets) {
    const auto t0 = std::chrono::steady_clock::now();
    QuadratureResult q = detail::oracle_value(s, p);
    const double expected = *detail::expected_value(s, p);
    auto loc = detail::localize_super(
        s, p, [](const ChartSpec& c) { return *c.F; },
        [](const ChartSpec& c, const LieVector& xi) { return c.Q(xi); });
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const double l = loc.result.total.numeric;
    o.note << " t=" << p.at("t") << ": loc " << l << " oracle " << q.value << " (rel " << rel(l, q.value) << ", "
           << secs << " s);";
    o.require(rel(q.value, expected) < 1e-6, "oracle vs closed form");
    o.require(rel(l, q.value) < 1e-6, "localization vs oracle");
    o.require(rel(l, expected) < 1e-6, "localization vs closed form");
    o.require(secs < 30, "runtime");
  }
}

// 2. For d_g-closed forms, the super formula reduces to the classical one.
void tautological_reduction(Outcome& o) {
  Scenario s = load_scenario(kScenarios + "sphere_dh.json");
  s.parameter_sets = {Point{{"t", 1.0}}};
  s.reduction_samples = 20;
  s.reduction_tol = 1e-9;
  o.require(super_prefactor(2, 2) == classical_prefactor(2), "prefactors");
  o.require(super_prefactor(4, 4) == classical_prefactor(4), "prefactors at m = n = 4");
  Report rep;
  run_check(s, "tautological_reduction", rep);
  double worst = 0.0;
  for (const auto& r : rep.records) worst = std::max(worst, r.rel_error().value_or(1.0));
  o.note << " " << rep.count(Status::Pass) << "/" << rep.records.size() << " forms agree, worst rel " << worst
         << ", prefactor " << super_prefactor(2, 2).to_string();
  o.require(rep.records.size() == 20 && rep.passed(), "reduction records");
}

// 3. (1/2)[Q,Q] equals the lifted field for every BRST operator in the library.
void brst_suite(Outcome& o) {
  auto record = [&](const std::string& name, const SuperVectorField& q, const ActionSpec& spec,
                    const Point& numeric = {}) {
    SuperVectorField r = brst_residual(q, spec, spec.symbolic_xi());
    bool ok = r.is_zero();
    double num = 0.0;
    if (!numeric.empty()) {
      SuperVectorField at = r.map_components([&](const SuperFunction& f) {
        return substitute(f, detail::exact_params(numeric));
      });
      num = detail::field_residual(at, numeric, 3, 5);
      ok = ok && num < 1e-12;
    }
    o.note << " " << name << (ok ? " ok" : " FAIL");
    o.require(ok, name);
  };
  {
    ActionSpec s;
    s.chart = SuperChart::make({"x", "y"}, 2);
    s.params = {"t"};
    s.T = {{parse_scalar("-y"), parse_scalar("x")}};
    s = tautological_lift(s);
    record("tautological", tautological_Q(s, s.symbolic_xi()), s);
  }
  {
    Scenario k = load_scenario(kScenarios + "kahler_c2.json");
    for (const auto& c : k.brst) record("kahler(" + c.label + ")", c.Q(c.spec.symbolic_xi()), c.spec);
  }
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> num(-9, 9);
  for (std::size_t k : {1u, 2u}) {
    Point cartan;
    if (k == 2)
      for (const char* p : {"phi_1", "phi_2", "a_1", "a_2", "e1", "e2"}) cartan[p] = num(rng) / 7.0;
    const std::string tag = "(" + std::to_string(k) + ",2)";
    ADHMChart plain(k, 2), full(k, 2, ADHMOptions{true, true});
    record("adhm_unconstrained" + tag, adhm_Q_unconstrained(plain), adhm_action_spec(plain), cartan);
    record("adhm_full" + tag, adhm_Q_full(full), adhm_action_spec(full), cartan);
  }
  ADHMChart c(1, 2, ADHMOptions{true, true});
  ActionSpec literal = adhm_action_spec(c, LiftVariant::Literal);
  const bool rejected = !brst_residual(adhm_Q_full(c), literal, literal.symbolic_xi()).is_zero();
  o.note << "; literal multiplier lift " << (rejected ? "rejected" : "accepted");
  o.require(rejected, "literal lift must leave a residual");
}

// 4. Pfaffians, superdeterminants and the tautological square root, all exact.
void exact_algebra(Outcome& o) {
  std::mt19937_64 rng(4);
  int pf_ok = 0;
  for (int i = 0; i < 50; ++i) {
    Matrix<Rational> a = random_skew(rng, 2 * (1 + i % 4));
    Rational pf = pfaffian(a);
    pf_ok += pf * pf == determinant(a);
  }
  int sdet_ok = 0;
  for (int i = 0; i < 30; ++i) {
    const std::size_t m = 2 + i % 3, n = 2 + (i + 1) % 3;
    auto a1 = random_invertible(rng, m), a2 = random_invertible(rng, m);
    auto b1 = random_invertible(rng, n), b2 = random_invertible(rng, n);
    sdet_ok += superdeterminant(a1 * a2, b1 * b2) == superdeterminant(a1, b1) * superdeterminant(a2, b2);
  }
  // On the rotation fixed points, Sdet^{1/2} of the field that pairs with d_g at xi
  // (built at -xi) equals det^{-1/2}(L) at xi.
  Scenario s = load_scenario(kScenarios + "sphere_dh.json");
  int roots = 0, roots_ok = 0;
  for (const auto& c : s.localization) {
    const LieVector xi = c.spec.symbolic_xi();
    LieVector minus = xi;
    for (auto& x : minus) x = -x;
    for (const auto& fp : detail::chart_fixed_points(c, Point{{"t", 1.0}})) {
      Matrix<ScalarExpr> sigma = sigma_matrix(c.Q(minus));
      FixedPointData sup = analyze_fixed_point(c.spec, minus, fp, *c.h, sigma);
      FixedPointData cla = analyze_fixed_point(c.spec, xi, fp, *c.h, sigma);
      Quantity sd = sqrt_sdet_via_pfaffian(sup, {});
      Quantity dt = sqrt_det_base(cla, {});
      ++roots;
      roots_ok += sd.exact && dt.exact && *sd.exact == reciprocal(*dt.exact) && pfaffian_squared_identity(sup);
      o.note << (roots == 1 ? "" : ",") << " " << c.label << ": Sdet^{1/2} = " << to_string(*sd.exact);
    }
  }
  o.note << "; Pf^2 = det " << pf_ok << "/50, Sdet multiplicative " << sdet_ok << "/30, roots " << roots_ok << "/"
         << roots;
  o.require(pf_ok == 50, "Pfaffian");
  o.require(sdet_ok == 30, "superdeterminant");
  o.require(roots == 2 && roots_ok == roots, "tautological square root");
}

// 5. Super-Stokes on the flat box and the annulus.
void stokes(Outcome& o) {
  Scenario s = load_scenario(kScenarios + "flat_rotation.json");
  Report rep;
  run_check(s, "super_stokes", rep);
  double worst = 0.0;
  for (const auto& r : rep.records) {
    const double d = r.details.value("difference", 1.0);
    worst = std::max(worst, d);
    o.require(r.status == Status::Pass && d < 1e-7, r.name);
  }
  o.note << " " << rep.records.size() << " domains, worst |interior - boundary| = " << worst;
  o.require(rep.records.size() >= 2, "box and annulus present");
}

// 6. ADHM constraints, fermionic linearisation and the multiplier sector.
void adhm_structure(Outcome& o) {
  std::mt19937_64 rng(66);
  std::uniform_int_distribution<int> sn(-7, 7), sd(1, 5);
  int invariant = 0;
  for (int i = 0; i < 50; ++i) {
    const std::size_t k = 1 + i % 2, N = 2;
    ADHMData<Rational> d{k, N, detail::random_cmatrix(k, k, rng), detail::random_cmatrix(k, k, rng),
                         detail::random_cmatrix(k, N, rng), detail::random_cmatrix(N, k, rng)};
    ADHMGroupElement<Rational> g{cayley(detail::random_antihermitian(k, rng)),
                                 cayley(detail::random_antihermitian(N, rng)), circle_point(Rational(sn(rng), sd(rng))),
                                 circle_point(Rational(sn(rng), sd(rng)))};
    auto gd = group_act(g, d);
    invariant += frobenius2(constraint_real(gd)) == frobenius2(constraint_real(d)) &&
                 frobenius2(constraint_complex(gd)) == frobenius2(constraint_complex(d));
  }
  o.require(invariant == 50, "constraint invariance");

  ADHMChart c(2, 2);
  auto cons = adhm_constraints(c);
  auto W = fermionic_constraints(cons.V, c.chart());
  const auto& vars = c.chart()->even;
  std::uniform_real_distribution<double> u(-1, 1);
  double worst = 0.0;
  const double h = 1e-6;
  for (int trial = 0; trial < 30; ++trial) {
    Point x, xp, xm;
    std::vector<double> dx(vars.size());
    for (std::size_t i = 0; i < vars.size(); ++i) {
      x[vars[i]] = u(rng);
      dx[i] = u(rng);
      xp[vars[i]] = x[vars[i]] + h * dx[i];
      xm[vars[i]] = x[vars[i]] - h * dx[i];
    }
    for (std::size_t a = 0; a < W.size(); ++a) {
      const double fd = (evaluate(cons.V[a], xp) - evaluate(cons.V[a], xm)) / (2 * h);
      double lin = 0.0;
      for (std::size_t i = 0; i < vars.size(); ++i) lin += evaluate(W[a].coefficient(bit(i)), x) * dx[i];
      worst = std::max(worst, std::abs(fd - lin) / std::max(1.0, std::abs(lin)));
    }
  }
  o.require(worst < 1e-5, "fermionic linearisation");

  bool residuals = true;
  for (std::size_t k : {1u, 2u}) {
    ADHMChart m(k, 2, ADHMOptions{true, true});
    auto sys = adhm_multiplier_system(m, true, true);
    residuals = residuals && multiplier_completion(sys.V, sys.xi_star, sys.base_vars, sys.Ttilde, sys.H).residual_vanishes;
  }
  o.require(residuals, "multiplier consistency residual");

  Scenario s = load_scenario(kScenarios + "adhm_k2_n2_brst.json");
  ADHMChart m(2, 2, ADHMOptions{true, true});
  auto cs = adhm_multiplier_system(m, false, true);
  auto cr = multiplier_completion(cs.V, cs.xi_star, cs.base_vars, cs.Ttilde, cs.H, s.adhm->parameters);
  const double det = numeric_value(cr.det, s.adhm->parameters);
  ADHMChart toy(1, 2, ADHMOptions{true, true});
  auto ts = adhm_multiplier_system(toy, true, false);
  auto tr = multiplier_completion(ts.V, ts.xi_star, ts.base_vars, ts.Ttilde, ts.H);
  o.require(cr.invertible && std::abs(det) > 1e-12, "N invertible at k = 2");
  o.require(!tr.invertible, "abelian toy flagged");
  o.note << " invariance " << invariant << "/50, linearisation worst rel " << worst << ", residual "
         << (residuals ? "0" : "nonzero") << ", det N(k=2) = " << det << ", toy "
         << (tr.invertible ? "not flagged" : "flagged non-invertible");
}

// 7. Bundle ranks.
void bookkeeping(Outcome& o) {
  int ok = 0, total = 0;
  for (long k = 1; k <= 2; ++k)
    for (long N = 1; N <= 5; ++N) {
      ++total;
      ok += rank_bookkeeping(k, N, 1) == 2 * k * N && rank_bookkeeping(k, N, 2) == 4 * k * N &&
            rank_bookkeeping(k, N, 4) == 8 * k * N;
    }
  o.note << " " << ok << "/" << total << " (k, N) pairs";
  o.require(ok == 10 && total == 10, "ranks");
}

// 8. Two compare runs give byte-identical reports.
void determinism(Outcome& o) {
  Scenario s = load_scenario(kScenarios + "sphere_dh.json");
  const std::string a = run_compare(s).to_json(false).dump(2);
  const std::string b = run_compare(s).to_json(false).dump(2);
  o.note << " " << a.size() << " bytes, hash " << s.hash;
  o.require(a == b, "reports differ");
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<void(Outcome&)>>> criteria{
      {"Duistermaat-Heckman cross-check", duistermaat_heckman},
      {"tautological reduction", tautological_reduction},
      {"BRST axiom suite", brst_suite},
      {"exact algebra", exact_algebra},
      {"super-Stokes", stokes},
      {"ADHM structure", adhm_structure},
      {"rank bookkeeping", bookkeeping},
      {"determinism", determinism},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      criteria[i].second(o);
    } catch (const std::exception& e) {
      o.pass = false;
      o.note << " [exception: " << e.what() << "]";
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failures += !o.pass;
    std::printf("criterion %zu: %s  %s:%s (%.2f s)\n", i + 1, o.pass ? "PASS" : "FAIL", criteria[i].first.c_str(),
                o.note.str().c_str(), secs);
  }
  return failures == 0 ? 0 : 1;
}

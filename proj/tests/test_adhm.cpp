#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "superloc/adhm.hpp"
#include "superloc/numeric.hpp"

using namespace superloc;

namespace {

using CQ = Complex<Rational>;

ScalarExpr X(const char* s) { return parse_scalar(s); }

CQ cq(int re, int im) { return CQ(Rational(re), Rational(im)); }

CMatrix<Rational> random_cmatrix(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> num(-5, 5), den(1, 4);
  CMatrix<Rational> m(r, c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      Rational re(num(rng), den(rng)), im(num(rng), den(rng));
      re.canonicalize();
      im.canonicalize();
      m(i, j) = CQ(re, im);
    }
  return m;
}

CMatrix<Rational> random_unitary(std::size_t n, std::mt19937_64& rng) {
  CMatrix<Rational> a = random_cmatrix(n, n, rng);
  CMatrix<Rational> s = a - dagger(a);
  return cayley(s.map([](const CQ& z) {
    Rational re = z.re / 2, im = z.im / 2;
    re.canonicalize();
    im.canonicalize();
    return CQ(re, im);
  }));
}

ADHMData<Rational> random_adhm(std::size_t k, std::size_t N, std::mt19937_64& rng) {
  return ADHMData<Rational>{k, N, random_cmatrix(k, k, rng), random_cmatrix(k, k, rng), random_cmatrix(k, N, rng),
                            random_cmatrix(N, k, rng)};
}

Substitution bind(std::initializer_list<std::pair<const char*, Rational>> values) {
  Substitution s;
  for (const auto& [k, v] : values) s[k] = ScalarExpr(v);
  return s;
}

ScalarExpr sym(const std::string& s) { return ScalarExpr::symbol(s); }

SuperFunction gen(const ADHMChart& c, const std::string& odd_name) {
  const auto& odd = c.chart()->odd;
  return SuperFunction::generator(c.chart(), static_cast<std::size_t>(std::find(odd.begin(), odd.end(), odd_name) - odd.begin()));
}

SuperFunction coord(const ADHMChart& c, const std::string& name) { return SuperFunction(c.chart(), sym(name)); }

}  // namespace

TEST_CASE("ADHM constraints", "[adhm]") {
  auto zero = ADHMData<Rational>::zero(2, 3);
  CHECK(frobenius2(constraint_real(zero)) == 0);
  CHECK(frobenius2(constraint_complex(zero)) == 0);

  auto d = ADHMData<Rational>::zero(1, 2);
  d.I(0, 0) = cq(1, 2);
  d.I(0, 1) = cq(3, 0);
  d.J(0, 0) = CQ(Rational(1, 2), Rational(0));
  d.J(1, 0) = cq(0, 1);
  CHECK(constraint_real(d)(0, 0) == CQ(Rational(51, 4), Rational(0)));
  CHECK(constraint_complex(d)(0, 0) == CQ(Rational(1, 2), Rational(4)));

  std::mt19937_64 rng(71);
  for (int i = 0; i < 10; ++i) {
    auto r = random_adhm(3, 2, rng);
    CHECK(constraint_real(r) == dagger(constraint_real(r)));
  }
  auto bad = zero;
  bad.I = CMatrix<Rational>(3, 2);
  CHECK_THROWS_AS(constraint_real(bad), Error);
}

TEST_CASE("group_act", "[adhm]") {
  std::mt19937_64 rng(73);
  auto d = random_adhm(2, 2, rng);
  ADHMGroupElement<Rational> id{CMatrix<Rational>::identity(2), CMatrix<Rational>::identity(2)};
  auto same = group_act(id, d);
  CHECK(same.B1 == d.B1);
  CHECK(same.J == d.J);

  CQ t1 = circle_point(Rational(1, 3)), t2 = circle_point(Rational(-2, 5));
  ADHMGroupElement<Rational> torus{CMatrix<Rational>::identity(2), CMatrix<Rational>::identity(2), t1, t2};
  auto g = group_act(torus, d);
  CHECK(g.B1 == cscale(d.B1, t1));
  CHECK(g.B2 == cscale(d.B2, t2));
  CHECK(g.I == d.I);
  CHECK(g.J == cscale(d.J, CQ(t1 * t2)));
  CHECK(constraint_complex(g) == cscale(constraint_complex(d), CQ(t1 * t2)));

  ADHMGroupElement<Rational> bad{CMatrix<Rational>::identity(2), CMatrix<Rational>::identity(2), cq(2, 0)};
  CHECK_THROWS_AS(group_act(bad, d), Error);
}

TEST_CASE("group_act preserves the constraint norms exactly", "[adhm]") {
  std::mt19937_64 rng(79);
  std::uniform_int_distribution<int> sn(-7, 7), sd(1, 5);
  for (int i = 0; i < 30; ++i) {
    const std::size_t k = 1 + i % 2, N = 1 + i % 3;
    auto d = random_adhm(k, N, rng);
    ADHMGroupElement<Rational> g{random_unitary(k, rng), random_unitary(N, rng), circle_point(Rational(sn(rng), sd(rng))),
                                 circle_point(Rational(sn(rng), sd(rng)))};
    REQUIRE(is_unitary(g.U));
    auto gd = group_act(g, d);
    CHECK(frobenius2(constraint_real(gd)) == frobenius2(constraint_real(d)));
    CHECK(frobenius2(constraint_complex(gd)) == frobenius2(constraint_complex(d)));
  }
}

TEST_CASE("adhm_fundamental_field", "[adhm]") {
  ADHMChart c(1, 2);
  SuperVectorField xs = adhm_fundamental_field(c);
  Substitution off = bind({{"phi_1", 0}, {"a_1", 0}, {"a_2", 0}, {"e1", 0}, {"e2", 0}});
  CHECK(xs.map_components([&](const SuperFunction& f) { return substitute(f, off); }).is_zero());

  for (std::size_t r = 0; r < 2; ++r) {
    const std::string tag = "_1_" + std::to_string(r + 1);
    const ScalarExpr w = sym("phi_1") - sym("a_" + std::to_string(r + 1));
    CHECK(xs.a(c.index(Block::I, 0, r, false)).body() == -w * sym("I" + tag + "_im"));
    CHECK(xs.a(c.index(Block::I, 0, r, true)).body() == w * sym("I" + tag + "_re"));
  }
  CHECK(xs.a(c.index(Block::B1, 0, 0, true)).body() == X("e1*B1_1_1_re"));
}

TEST_CASE("the flow of the torus field reproduces group_act", "[adhm]") {
  ADHMChart c(1, 2);
  const double e1 = 0.3, e2 = -0.7;
  Substitution p = bind({{"phi_1", 0}, {"a_1", 0}, {"a_2", 0}, {"e1", Rational(3, 10)}, {"e2", Rational(-7, 10)}});
  const auto& vars = c.chart()->even;
  std::vector<CompiledScalar> comps;
  SuperVectorField xs = adhm_fundamental_field(c);
  for (std::size_t i = 0; i < vars.size(); ++i)
    comps.emplace_back(substitute(xs.a(i).body(), p), std::span<const std::string>(vars));

  std::mt19937_64 rng(83);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<double> x0(vars.size());
  for (auto& v : x0) v = u(rng);
  auto y = rk4(
      [&](const std::vector<double>& x) {
        std::vector<double> out(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) out[i] = comps[i](x);
        return out;
      },
      x0, 1.0, 400);

  auto read = [&](const std::vector<double>& x) {
    auto d = ADHMData<double>::zero(1, 2);
    auto fill = [&](CMatrix<double>& m, Block b) {
      for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j)
          m(i, j) = Complex<double>(x[c.index(b, i, j, false)], x[c.index(b, i, j, true)]);
    };
    fill(d.B1, Block::B1);
    fill(d.B2, Block::B2);
    fill(d.I, Block::I);
    fill(d.J, Block::J);
    return d;
  };
  ADHMGroupElement<double> g{CMatrix<double>::identity(1), CMatrix<double>::identity(2),
                             Complex<double>(std::cos(e1), std::sin(e1)), Complex<double>(std::cos(e2), std::sin(e2))};
  auto expect = group_act(g, read(x0));
  auto got = read(y);
  auto diff = [](const CMatrix<double>& a, const CMatrix<double>& b) { return frobenius2(CMatrix<double>(a - b)); };
  CHECK(diff(got.B1, expect.B1) < 1e-18);
  CHECK(diff(got.B2, expect.B2) < 1e-18);
  CHECK(diff(got.I, expect.I) < 1e-18);
  CHECK(diff(got.J, expect.J) < 1e-18);
}

TEST_CASE("adhm_Q_unconstrained", "[adhm]") {
  ADHMChart c(1, 2);
  SuperVectorField q = adhm_Q_unconstrained(c);
  CHECK(apply_field(q, coord(c, "B1_1_1_re")) == gen(c, "M1_1_1_re"));
  CHECK(apply_field(q, coord(c, "B2_1_1_im")) == gen(c, "M2_1_1_im"));
  // Q(mu_I) = phi I - I a, entry (1, 2): i (phi_1 - a_2) I_12.
  CHECK(apply_field(q, gen(c, "muI_1_2_re")).body() == X("-(phi_1 - a_2)*I_1_2_im"));
  CHECK(apply_field(q, gen(c, "muI_1_2_im")).body() == X("(phi_1 - a_2)*I_1_2_re"));

  ActionSpec spec = adhm_action_spec(c);
  CHECK(brst_residual(q, spec, spec.symbolic_xi()).is_zero());
  CHECK(sigma_from_Q(q) == Matrix<ScalarExpr>::identity(c.chart()->m()));
  CHECK_THROWS_AS(adhm_Q_unconstrained(ADHMChart(1, 2, ADHMOptions{true, true})), Error);
}

TEST_CASE("fermionic_constraints", "[adhm]") {
  auto toy = SuperChart::make({"x"}, 1);
  CHECK(fermionic_constraints({X("x^2")}, toy)[0] == parse_superfunction("2*x*th1", toy));

  ADHMChart c(1, 1);
  ScalarExpr v = X("I_1_1_re*J_1_1_re - I_1_1_im*J_1_1_im");
  auto w = fermionic_constraints({v}, c.chart())[0];
  CHECK(w == parse_superfunction("J_1_1_re*muI_1_1_re - J_1_1_im*muI_1_1_im + I_1_1_re*muJ_1_1_re - I_1_1_im*muJ_1_1_im",
                                 c.chart()));

  ADHMChart c2(2, 2);
  auto q = adhm_Q_unconstrained(c2);
  auto cons = adhm_constraints(c2);
  auto W = fermionic_constraints(cons.V, c2.chart());
  REQUIRE(W.size() == cons.V.size());
  for (std::size_t a = 0; a < W.size(); ++a)
    CHECK(apply_field(q, SuperFunction(c2.chart(), cons.V[a])).grade(1) == W[a]);
}

TEST_CASE("fermionic constraints linearise the bosonic ones", "[adhm]") {
  ADHMChart c(2, 2);
  auto cons = adhm_constraints(c);
  auto W = fermionic_constraints(cons.V, c.chart());
  const auto& vars = c.chart()->even;
  std::mt19937_64 rng(89);
  std::uniform_real_distribution<double> u(-1, 1);
  const double h = 1e-6;
  double worst = 0.0;
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
      for (std::size_t k = 0; k < vars.size(); ++k) lin += evaluate(W[a].coefficient(bit(k)), x) * dx[k];
      worst = std::max(worst, std::abs(fd - lin) / std::max(1.0, std::abs(lin)));
    }
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("multiplier_completion", "[adhm]") {
  ADHMChart toy(1, 2, ADHMOptions{true, true});
  auto ts = adhm_multiplier_system(toy, true, false);
  auto tr = multiplier_completion(ts.V, ts.xi_star, ts.base_vars, ts.Ttilde, ts.H);
  CHECK(tr.N(0, 0).is_zero());
  CHECK_FALSE(tr.invertible);
  CHECK(tr.residual_vanishes);

  ADHMChart c(2, 2, ADHMOptions{true, true});
  auto cs = adhm_multiplier_system(c, false, true);
  auto cr = multiplier_completion(cs.V, cs.xi_star, cs.base_vars, cs.Ttilde, cs.H);
  CHECK(cr.residual_vanishes);
  CHECK(cr.invertible);
  ScalarExpr expected(1);
  for (const char* i : {"phi_1", "phi_2"})
    for (const char* j : {"phi_1", "phi_2"}) expected *= pow(sym(i) - sym(j) + X("e1 + e2"), 2);
  CHECK(cr.det == expected);

  auto fs = adhm_multiplier_system(c, true, true);
  auto fr = multiplier_completion(fs.V, fs.xi_star, fs.base_vars, fs.Ttilde, fs.H);
  CHECK(fr.residual_vanishes);
  CHECK_FALSE(fr.invertible);

  CHECK_THROWS_MATCHES(multiplier_completion({X("x")}, {X("0")}, {"x"}, {X("h^2")}, {"h"}), Error,
                       Catch::Matchers::Predicate<Error>(
                           [](const Error& e) { return e.code() == ErrorCode::NonlinearTtilde; }));
}

TEST_CASE("adhm_Q_full", "[adhm]") {
  ADHMChart c(1, 2, ADHMOptions{true, true});
  SuperVectorField q = adhm_Q_full(c);
  CHECK(apply_field(q, gen(c, "chiR_1_1")) == coord(c, "HR_1_1"));
  CHECK(apply_field(q, gen(c, "chiC_1_1_re")) == coord(c, "HC_1_1_re"));
  CHECK(apply_field(q, coord(c, "phib_1_1_re")) == gen(c, "eta_1_1_re"));
  CHECK(apply_field(q, gen(c, "eta_1_1_re")).is_zero());
  ActionSpec spec = adhm_action_spec(c);
  CHECK(brst_residual(q, spec, spec.symbolic_xi()).is_zero());

  ADHMChart c2(2, 2, ADHMOptions{true, true});
  SuperVectorField q2 = adhm_Q_full(c2);
  // Q(eta) = [phi, phibar]: off-diagonal entry i (phi_1 - phi_2) phibar_12.
  CHECK(apply_field(q2, gen(c2, "eta_1_2_re")).body() == X("-(phi_1 - phi_2)*phib_1_2_im"));
  ActionSpec spec2 = adhm_action_spec(c2);
  CHECK(brst_residual(q2, spec2, spec2.symbolic_xi()).is_zero());

  ActionSpec literal = adhm_action_spec(c, LiftVariant::Literal);
  CHECK_FALSE(brst_residual(q, literal, literal.symbolic_xi()).is_zero());
  CHECK_THROWS_AS(adhm_Q_full(ADHMChart(1, 2)), Error);
}

TEST_CASE("the full ADHM field squares correctly on sample superfunctions", "[adhm]") {
  ADHMChart c(1, 2, ADHMOptions{true, true});
  SuperVectorField q = adhm_Q_full(c);
  ActionSpec spec = adhm_action_spec(c);
  SuperVectorField lift = lifted_field(spec, spec.symbolic_xi());
  std::vector<SuperFunction> fs;
  for (const auto& name : c.chart()->even) fs.push_back(coord(c, name));
  for (std::size_t a = 0; a < c.chart()->n(); ++a) fs.push_back(SuperFunction::generator(c.chart(), a));
  std::mt19937_64 rng(97);
  std::uniform_int_distribution<std::size_t> pick(0, fs.size() - 1);
  const std::size_t basis = fs.size();
  for (int i = 0; i < 20; ++i) fs.push_back(fs[pick(rng) % basis] * fs[pick(rng) % basis] + fs[pick(rng) % basis]);
  for (const auto& f : fs) CHECK((apply_field(q, apply_field(q, f)) - apply_field(lift, f)).is_zero());
}

TEST_CASE("k = 1 fixed points", "[adhm]") {
  ADHMChart c(1, 2);
  Point params{{"a_1", 1.0 / 3}, {"a_2", -0.5}, {"e1", 0.25}, {"e2", 0.75}};
  auto fps = adhm_k1_fixed_points(c, params);
  REQUIRE(fps.size() == 2);
  for (const auto& fp : fps) {
    Matrix<ScalarExpr> L = adhm_k1_tangent_linearization(c, fp);
    CHECK(L.rows() == 8);
    ScalarExpr prod(1);
    for (const auto& w : fp.weights) prod *= w;
    CHECK(pfaffian(transpose(L)) == prod);
    CHECK(stabilizer_dimension(c, fp.coords) == 0);
  }
  CHECK(fps[0].coords.at("I_1_1_re") == X("1"));
  CHECK(fps[1].coords.at("I_1_2_re") == X("1"));

  Point degenerate = params;
  degenerate["a_2"] = degenerate["a_1"];
  CHECK_THROWS_AS(adhm_k1_fixed_points(c, degenerate), Error);
  CHECK_THROWS_AS(adhm_k1_fixed_points(c, params, Rational(2)), Error);
  CHECK_THROWS_AS(require_trivial_stabilizer(c, Substitution{}), Error);
}

TEST_CASE("rank_bookkeeping", "[adhm]") {
  CHECK(rank_bookkeeping(2, 3, 2) == 24);
  CHECK(rank_bookkeeping(1, 2, 1) == 4);
  CHECK(rank_bookkeeping(1, 1, 4) == 8);
  CHECK_THROWS_MATCHES(rank_bookkeeping(1, 1, 3), Error,
                       Catch::Matchers::Predicate<Error>([](const Error& e) { return e.code() == ErrorCode::BadSusy; }));
  CHECK_THROWS_AS(rank_bookkeeping(0, 1, 1), Error);
}

TEST_CASE("ADHM chart bookkeeping", "[adhm]") {
  ADHMChart c(2, 3);
  CHECK(c.chart()->n() == 2 * (2 * 2 * 2 + 2 * 2 * 3));
  CHECK(c.chart()->m() == c.chart()->n());
  ADHMChart full(2, 3, ADHMOptions{true, false});
  CHECK(full.chart()->m() == c.chart()->m() + 4 + 8 + 8);
  CHECK(std::count(full.params().begin(), full.params().end(), "a_1_2_re") == 1);
}

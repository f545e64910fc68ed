#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "superloc/localization.hpp"

using namespace superloc;

namespace {

ScalarExpr X(const char* s) { return parse_scalar(s); }

ActionSpec rotation() {
  ActionSpec s;
  s.chart = SuperChart::make({"x", "y"}, 2);
  s.params = {"t"};
  s.T = {{X("-y"), X("x")}};
  return tautological_lift(s);
}

ActionSpec stereographic(const char* a, const char* b, const char* ta, const char* tb) {
  ActionSpec s;
  s.chart = SuperChart::make({a, b}, 2);
  s.params = {"t"};
  s.T = {{X(ta), X(tb)}};
  return tautological_lift(s);
}

Matrix<ScalarExpr> round_metric(const char* a, const char* b) {
  std::string c = std::string("4/(1+") + a + "^2+" + b + "^2)^2";
  Matrix<ScalarExpr> h(2, 2);
  h(0, 0) = h(1, 1) = parse_scalar(c);
  return h;
}

FixedPoint origin(const ActionSpec& s) {
  FixedPoint p;
  for (const auto& v : s.chart->even) p.coords[v] = ScalarExpr(0);
  return p;
}

Matrix<Rational> random_skew(std::mt19937_64& rng, std::size_t n) {
  std::uniform_int_distribution<int> k(-6, 6), d(1, 4);
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
  std::uniform_int_distribution<int> k(-5, 5);
  Matrix<Rational> a(n, n);
  do {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) a(i, j) = k(rng);
  } while (determinant(a) == 0);
  return a;
}

}  // namespace

TEST_CASE("find_fixed_points", "[localization]") {
  ActionSpec s;
  s.chart = SuperChart::make({"x", "y"}, 0);
  s.params = {"t"};
  s.T = {{X("x"), X("y")}};
  FixedPointOptions opt;
  opt.strategy = FixedPointStrategy::Linear;
  opt.parameters = {{"t", 1.0}};
  auto fps = find_fixed_points(fundamental_field(s, {X("t")}), opt);
  REQUIRE(fps.size() == 1);
  CHECK(fps[0].coords.at("x").is_zero());
  CHECK(fps[0].coords.at("y").is_zero());

  ActionSpec north = stereographic("u", "v", "-v", "u");
  FixedPointOptions newton;
  newton.parameters = {{"t", 1.0}};
  newton.box = {{-1, 1}, {-1, 1}};
  auto poles = find_fixed_points(fundamental_field(north, {X("t")}), newton);
  REQUIRE(poles.size() == 1);
  CHECK(poles[0].numeric().at("u") == 0.0);

  ActionSpec shifted;
  shifted.chart = SuperChart::make({"x", "y"}, 0);
  shifted.params = {"t"};
  shifted.T = {{X("(x-1)*(x+1)"), X("y")}};
  newton.box = {{-2, 2}, {-2, 2}};
  auto two = find_fixed_points(fundamental_field(shifted, {X("t")}), newton);
  REQUIRE(two.size() == 2);
  CHECK(two[0].numeric().at("x") == Catch::Approx(-1.0));
  CHECK(two[1].numeric().at("x") == Catch::Approx(1.0));

  FixedPointOptions declared;
  declared.strategy = FixedPointStrategy::Declared;
  declared.parameters = {{"t", 1.0}};
  declared.declared = {{{"x", X("1/2")}, {"y", X("0")}}};
  CHECK_THROWS_AS(find_fixed_points(fundamental_field(shifted, {X("t")}), declared), Error);

  ActionSpec degenerate;
  degenerate.chart = SuperChart::make({"x", "y"}, 0);
  degenerate.params = {"t"};
  degenerate.T = {{X("x"), X("x")}};
  CHECK_THROWS_AS(find_fixed_points(fundamental_field(degenerate, {X("t")}), opt), Error);
}

TEST_CASE("linearize_base", "[localization]") {
  ActionSpec s = rotation();
  Matrix<ScalarExpr> L = linearize_base(fundamental_field(s, {X("t")}), origin(s));
  CHECK(L(0, 0).is_zero());
  CHECK(L(0, 1) == X("t"));
  CHECK(L(1, 0) == X("-t"));
  CHECK(linearize_base(fundamental_field(s, {X("0")}), origin(s)) == Matrix<ScalarExpr>(2, 2));

  FixedPoint off = origin(s);
  off.coords["x"] = X("1");
  CHECK_THROWS_AS(linearize_base(fundamental_field(s, {X("t")}), off, {{"t", 1.0}}), Error);

  // L e_j equals the bracket [xi*, d_j] for a random affine field.
  std::mt19937_64 rng(41);
  auto c = SuperChart::make({"x", "y", "z"}, 0);
  for (int trial = 0; trial < 5; ++trial) {
    Matrix<Rational> a = random_invertible(rng, 3);
    std::vector<Rational> p{Rational(1, 2), Rational(-2), Rational(3, 5)};
    SuperVectorField xs(c, 0);
    for (std::size_t i = 0; i < 3; ++i) {
      ScalarExpr e;
      for (std::size_t j = 0; j < 3; ++j)
        e += ScalarExpr(a(i, j)) * (ScalarExpr::symbol(c->even[j]) - ScalarExpr(p[j]));
      xs.a(i) = SuperFunction(c, e);
    }
    FixedPoint fp;
    for (std::size_t j = 0; j < 3; ++j) fp.coords[c->even[j]] = ScalarExpr(p[j]);
    Matrix<ScalarExpr> l = linearize_base(xs, fp);
    for (std::size_t j = 0; j < 3; ++j) {
      SuperVectorField dj(c, 0);
      dj.a(j) = SuperFunction(c, ScalarExpr(1));
      SuperVectorField br = graded_commutator(xs, dj);
      for (std::size_t i = 0; i < 3; ++i) CHECK(br.a(i).body() == l(i, j));
    }
  }
}

TEST_CASE("linearize_fiber", "[localization]") {
  ActionSpec bare = rotation();
  bare.U.assign(1, Matrix<ScalarExpr>(2, 2));
  CHECK(linearize_fiber(bare, {X("t")}, origin(bare)) == Matrix<ScalarExpr>(2, 2));

  ActionSpec s = rotation();
  Matrix<ScalarExpr> lt = linearize_fiber(s, {X("t")}, origin(s));
  Matrix<ScalarExpr> L = linearize_base(fundamental_field(s, {X("t")}), origin(s));
  CHECK(lt == L.map([](const ScalarExpr& e) { return -e; }));
  FixedPointData d = analyze_fixed_point(s, {X("t")}, origin(s), Matrix<ScalarExpr>::identity(2),
                                         Matrix<ScalarExpr>::identity(2));
  CHECK(d.compatible);
  CHECK(d.skew);
}

TEST_CASE("Pfaffian squares to the determinant", "[localization][linalg]") {
  std::mt19937_64 rng(43);
  for (int i = 0; i < 50; ++i) {
    const std::size_t n = 2 * (1 + i % 4);
    Matrix<Rational> a = random_skew(rng, n);
    Rational pf = pfaffian(a);
    CHECK(pf * pf == determinant(a));
  }
}

TEST_CASE("superdeterminant", "[localization]") {
  Matrix<Rational> b(2, 2);
  b(0, 0) = 2;
  b(1, 1) = 3;
  CHECK(superdeterminant(Matrix<Rational>::identity(2), b) == Rational(1, 6));
  CHECK_THROWS_AS(superdeterminant(Matrix<Rational>::identity(2), Matrix<Rational>(2, 2)), Error);

  std::mt19937_64 rng(47);
  for (int i = 0; i < 30; ++i) {
    auto a1 = random_invertible(rng, 2), a2 = random_invertible(rng, 2);
    auto b1 = random_invertible(rng, 4), b2 = random_invertible(rng, 4);
    CHECK(superdeterminant(a1 * a2, b1 * b2) == superdeterminant(a1, b1) * superdeterminant(a2, b2));
  }
}

TEST_CASE("square roots on the rotation example", "[localization]") {
  ActionSpec s = rotation();
  auto id = Matrix<ScalarExpr>::identity(2);
  FixedPointData d = analyze_fixed_point(s, {X("t")}, origin(s), id, id);
  CHECK(pfaffian(d.a) == X("t"));
  CHECK(pfaffian_squared_identity(d));
  Quantity sd = sqrt_sdet_via_pfaffian(d, {{"t", 2.0}});
  REQUIRE(sd.exact);
  CHECK(*sd.exact == X("t^-1"));
  CHECK(sd.numeric == Catch::Approx(0.5));
  CHECK(*sd.exact * *sd.exact == superdeterminant(id, d.Ltilde));

  // The tautological reduction pairs Sdet^{1/2} at xi with det^{-1/2} at -xi.
  FixedPointData dm = analyze_fixed_point(s, {X("-t")}, origin(s), id, id);
  Quantity root = sqrt_det_base(dm, {{"t", 2.0}});
  REQUIRE(root.exact);
  CHECK(reciprocal(*root.exact) == *sd.exact);

  FixedPoint flipped = origin(s);
  flipped.orientation = -1;
  FixedPointData df = analyze_fixed_point(s, {X("t")}, flipped, id, id);
  CHECK(*sqrt_sdet_via_pfaffian(df, {{"t", 2.0}}).exact == X("-t^-1"));
}

TEST_CASE("prefactors", "[localization]") {
  CHECK(super_prefactor(2, 2) == Prefactor{Rational(-2), 1});
  CHECK(super_prefactor(2, 2) == classical_prefactor(2));
  CHECK(super_prefactor(4, 2) == Prefactor{Rational(-1), 2});
  CHECK(super_prefactor(4, 2).value() == Catch::Approx(-std::numbers::pi * std::numbers::pi));
  CHECK_THROWS_AS(super_prefactor(2, 1), Error);
  CHECK_THROWS_AS(classical_prefactor(3), Error);
}

TEST_CASE("localization on the round sphere", "[localization]") {
  ActionSpec north = stereographic("u", "v", "-v", "u");
  ActionSpec south = stereographic("p", "q", "q", "-p");
  const Point t1{{"t", 1.0}};
  double total = 0.0;
  for (const ActionSpec* s : {&north, &south}) {
    auto h = round_metric(s->chart->even[0].c_str(), s->chart->even[1].c_str());
    LocalizationResult r = super_localize(SuperFunction(s->chart, X("1")), tautological_Q(*s, {X("t")}), *s,
                                          {X("t")}, {origin(*s)}, h, t1);
    total += r.total.numeric;
    CHECK(r.terms.size() == 1);
    CHECK(r.terms[0].compatible);
    CHECK(r.terms[0].squared_identity);
  }
  CHECK(total == Catch::Approx(0.0).margin(1e-12));

  auto h = round_metric("u", "v");
  auto F = parse_superfunction("exp(-t*(1-u^2-v^2)/(1+u^2+v^2))*(1 + 4/(1+u^2+v^2)^2*th1*th2)", north.chart);
  CHECK_THROWS_AS(super_localize(F, tautological_Q(north, {X("-t")}), north, {X("-t")}, {origin(north)}, h, t1),
                  Error);
  SuperVectorField broken = tautological_Q(north, {X("t")});
  broken.b(0) += parse_superfunction("u*v", north.chart);
  CHECK_THROWS_AS(super_localize(F, broken, north, {X("t")}, {origin(north)}, h, t1), Error);
}

TEST_CASE("classical_localize", "[localization]") {
  ActionSpec s = rotation();
  auto id = Matrix<ScalarExpr>::identity(2);
  auto alpha = parse_superfunction("exp(-t*(x^2+y^2)/2)*(1 + th1*th2)", s.chart);
  REQUIRE(vanishes_identically(equivariant_differential(alpha, s, {X("t")})));
  LocalizationResult r = classical_localize(alpha, s, {X("t")}, {origin(s)}, id, {{"t", 2.0}});
  CHECK(r.prefactor == Prefactor{Rational(-2), 1});
  CHECK(r.total.numeric == Catch::Approx(2 * std::numbers::pi / 2.0));

  auto zero_body = parse_superfunction("th1*th2", s.chart);
  CHECK_THROWS_AS(classical_localize(zero_body, s, {X("t")}, {origin(s)}, id, {{"t", 2.0}}), Error);
  auto exact = parse_superfunction("x*th2 - y*th1", s.chart);
  auto dg = equivariant_differential(exact, s, {X("t")});
  CHECK(classical_localize(dg, s, {X("t")}, {origin(s)}, id, {{"t", 2.0}}).total.numeric == 0.0);
}

TEST_CASE("build_lambda_beta", "[localization]") {
  ActionSpec s = rotation();
  auto id = Matrix<ScalarExpr>::identity(2);
  LambdaBeta lb = build_lambda_beta(id, s, {X("t")}, origin(s), id, {{"t", 1.5}});
  CHECK(lb.lambda[0] == X("-y/t"));
  CHECK(lb.lambda[1] == X("x/t"));
  auto xs = fundamental_components(s, {X("t")});
  CHECK(lb.lambda[0] * xs[0] + lb.lambda[1] * xs[1] == X("x^2 + y^2"));
  CHECK(lb.invariant);
  CHECK(lb.distance_ratio == Catch::Approx(1.0));
  CHECK(lb.beta == parse_superfunction("-y/t*th1 + x/t*th2", s.chart));
  CHECK_THROWS_AS(build_lambda_beta(id, s, {X("0")}, origin(s), id), Error);
}

TEST_CASE("exactness_witness", "[localization]") {
  ActionSpec s = rotation();
  auto id = Matrix<ScalarExpr>::identity(2);
  auto q = tautological_Q(s, {X("t")});
  LambdaBeta lb = build_lambda_beta(id, s, {X("t")}, origin(s), id, {{"t", 1.0}});
  SuperFunction one(s.chart, X("1"));
  SuperFunction nu = exactness_witness(one, lb.beta, q);
  CHECK(nu == nu.grade(1));
  auto pts = sample_points({"x", "y", "t"}, 50, 5);
  CHECK(exactness_defect(one, nu, q, pts) < 1e-9);

  ActionSpec north = stereographic("u", "v", "-v", "u");
  auto h = round_metric("u", "v");
  auto qn = tautological_Q(north, {X("t")});
  auto F = parse_superfunction("exp(-t*(1-u^2-v^2)/(1+u^2+v^2))*(1 + 4/(1+u^2+v^2)^2*th1*th2)", north.chart);
  REQUIRE(vanishes_identically(apply_field(qn, F)));
  LambdaBeta ln = build_lambda_beta(h, north, {X("t")}, origin(north), id, {{"t", 1.0}});
  CHECK(ln.invariant);
  SuperFunction nun = exactness_witness(F, ln.beta, qn);
  CHECK(exactness_defect(F, nun, qn, sample_points({"u", "v", "t"}, 50, 6)) < 1e-9);

  CHECK_THROWS_AS(exactness_witness(one, SuperFunction(s.chart), q), Error);
}

#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "superloc/equivariant.hpp"

using namespace superloc;

namespace {

ScalarExpr X(const char* s) { return parse_scalar(s); }

ActionSpec rotation(std::size_t n) {
  ActionSpec s;
  s.chart = SuperChart::make({"x", "y"}, n);
  s.params = {"t"};
  s.T = {{X("-y"), X("x")}};
  return s;
}

Matrix<ScalarExpr> diag(std::initializer_list<const char*> d) {
  Matrix<ScalarExpr> m(d.size(), d.size());
  std::size_t i = 0;
  for (const char* e : d) m(i, i) = X(e), ++i;
  return m;
}

SuperFunction random_form(std::mt19937_64& rng, const ChartPtr& c) {
  std::uniform_int_distribution<int> k(-3, 3);
  auto poly = [&] { return ScalarExpr(k(rng)) + ScalarExpr(k(rng)) * X("x") + ScalarExpr(k(rng)) * X("x*y") +
                           ScalarExpr(k(rng)) * X("y^2"); };
  SuperFunction f(c, poly());
  f.add_term(bit(0), poly());
  f.add_term(bit(1), poly());
  f.add_term(bit(0) | bit(1), poly());
  return f;
}

ActionSpec kahler_torus() {
  ActionSpec s;
  s.chart = SuperChart::make({"z1", "z2", "zb1", "zb2"}, 2);
  s.params = {"t1", "t2"};
  s.T = {{X("z1"), X("0"), X("-zb1"), X("0")}, {X("0"), X("z2"), X("0"), X("-zb2")}};
  return s;
}

}  // namespace

TEST_CASE("fundamental_field of the planar rotation", "[equivariant]") {
  ActionSpec s = rotation(0);
  SuperVectorField v = fundamental_field(s, {X("t")});
  CHECK(v.a(0).body() == X("-t*y"));
  CHECK(v.a(1).body() == X("t*x"));
  CHECK(fundamental_field(s, {X("0")}).is_zero());
  CHECK_THROWS_AS(fundamental_field(s, {X("t"), X("u")}), Error);
}

TEST_CASE("fundamental fields close on the structure constants", "[equivariant]") {
  ActionSpec s;
  s.chart = SuperChart::make({"x"}, 0);
  s.params = {"a", "b"};
  s.T = {{X("1")}, {X("x")}};
  auto e1 = fundamental_field(s, {X("1"), X("0")});
  auto e2 = fundamental_field(s, {X("0"), X("1")});
  CHECK(graded_commutator(e1, e2).a(0) == e1.a(0));
  ClosureReport r = check_closure(s);
  CHECK(r.closed);
  CHECK_FALSE(r.abelian);
  CHECK(check_closure(rotation(0)).abelian);
}

TEST_CASE("lifted_field", "[equivariant]") {
  ActionSpec s = rotation(2);
  s.U.assign(1, Matrix<ScalarExpr>(2, 2));
  CHECK(lifted_field(s, {X("t")}).b(0).is_zero());

  ActionSpec taut = tautological_lift(rotation(2));
  SuperVectorField l = lifted_field(taut, {X("t")});
  CHECK(l.b(0) == parse_superfunction("-t*th2", taut.chart));
  CHECK(l.b(1) == parse_superfunction("t*th1", taut.chart));
  auto f = parse_superfunction("x^2*y + 3*x", taut.chart);
  CHECK(apply_field(l, f) == apply_field(fundamental_field(taut, {X("t")}), f));
}

TEST_CASE("equivariant_differential", "[equivariant]") {
  ActionSpec s = tautological_lift(rotation(2));
  auto c = s.chart;
  CHECK(equivariant_differential(SuperFunction(c, X("1")), s, {X("t")}).is_zero());
  CHECK(equivariant_differential(parse_superfunction("x*th2 - y*th1", c), s, {X("t")}) ==
        parse_superfunction("2*th1*th2 - t*(x^2+y^2)", c));
  CHECK_THROWS_AS(equivariant_differential(SuperFunction(SuperChart::make({"x", "y"}, 1), X("1")), s, {X("t")}),
                  Error);

  std::mt19937_64 rng(12);
  auto v = fundamental_components(s, {X("t")});
  for (int i = 0; i < 30; ++i) {
    auto a = random_form(rng, c);
    auto dd = equivariant_differential(equivariant_differential(a, s, {X("t")}), s, {X("t")});
    CHECK(dd == -lie_derivative_form(a, v));
  }
}

TEST_CASE("tautological_Q", "[equivariant]") {
  ActionSpec s = tautological_lift(rotation(2));
  auto c = s.chart;
  SuperVectorField q = tautological_Q(s, {X("t")});
  CHECK(apply_field(q, parse_superfunction("x", c)) == parse_superfunction("th1", c));
  CHECK(apply_field(q, parse_superfunction("th2", c)) == parse_superfunction("t*x", c));
  CHECK((graded_commutator(q, q) - ScalarExpr(2) * lifted_field(s, {X("t")})).is_zero());
  CHECK(brst_residual(q, s, {X("t")}).is_zero());
  CHECK(sigma_from_Q(q) == Matrix<ScalarExpr>::identity(2));

  // Q at -xi acts on forms as d_g at xi.
  SuperVectorField qm = tautological_Q(s, {X("-t")});
  std::mt19937_64 rng(21);
  for (int i = 0; i < 10; ++i) {
    auto a = random_form(rng, c);
    CHECK(apply_field(qm, a) == equivariant_differential(a, s, {X("t")}));
  }
  CHECK_THROWS_AS(tautological_Q(rotation(1), {X("t")}), Error);
}

TEST_CASE("kahler_Q", "[equivariant]") {
  ActionSpec s = kahler_projected_spec(kahler_torus());
  SuperVectorField q = kahler_Q(s, {X("t1"), X("t2")}, kahler_data(s.chart));
  CHECK(apply_field(q, parse_superfunction("zb1*zb2", s.chart)).is_zero());
  CHECK(brst_residual(q, s, {X("t1"), X("t2")}).is_zero());
  Matrix<ScalarExpr> sigma = sigma_from_Q(q);
  CHECK(sigma.rows() == 4);
  CHECK(sigma.cols() == 2);
  CHECK(sampled_rank(sigma, {}) == 2);
  CHECK(sigma(0, 0) == X("1"));
  CHECK(sigma(2, 0).is_zero());

  ActionSpec line;
  line.chart = SuperChart::make({"z", "zb"}, 1);
  line.params = {"t"};
  line.T = {{X("z"), X("-zb")}};
  CHECK_THROWS_MATCHES(kahler_Q(line, {X("t")}, kahler_data(line.chart)), Error,
                       Catch::Matchers::Predicate<Error>(
                           [](const Error& e) { return e.code() == ErrorCode::OddComplexDimension; }));
}

TEST_CASE("sigma_from_Q recovers a recombination of the odd generators", "[equivariant]") {
  auto c = SuperChart::make({"x", "y"}, 2);
  std::mt19937_64 rng(31);
  std::uniform_int_distribution<int> k(-5, 5);
  for (int trial = 0; trial < 10; ++trial) {
    Matrix<Rational> m(2, 2);
    do {
      for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 2; ++j) m(i, j) = Rational(k(rng), 3);
    } while (determinant(m) == 0);
    SuperVectorField q(c, 1);
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t a = 0; a < 2; ++a) q.a(i).add_term(bit(a), ScalarExpr(m(i, a)));
    CHECK(sigma_from_Q(q) == to_expr(m));
  }
  SuperVectorField bad(c, 1);
  bad.a(0) = parse_superfunction("th1*th2*th1 + 1", c);
  CHECK_THROWS_AS(sigma_from_Q(bad), Error);
}

TEST_CASE("verify_brst", "[equivariant]") {
  ActionSpec s = tautological_lift(rotation(2));
  BrstReport ok = verify_brst(tautological_Q(s, {X("t")}), s, {X("t")});
  CHECK(ok.square.pass);
  CHECK(ok.equivariant.pass);
  CHECK(ok.injective.pass);
  CHECK(ok.all_pass());

  SuperVectorField flat = tautological_Q(s, {X("t")});
  flat.a(0) = SuperFunction(s.chart);
  flat.a(1) = SuperFunction(s.chart);
  BrstReport r3 = verify_brst(flat, s, {X("t")});
  CHECK_FALSE(r3.injective.pass);
  CHECK_FALSE(r3.all_pass());

  SuperVectorField bent = tautological_Q(s, {X("t")});
  bent.b(0) += parse_superfunction("x*y", s.chart);
  BrstReport r1 = verify_brst(bent, s, {X("t")});
  CHECK_FALSE(r1.square.pass);
  CHECK(r1.square.residual > 0);
  CHECK(r1.square.detail.find("residual") != std::string::npos);
}

TEST_CASE("induced_fiber_metric", "[equivariant]") {
  CHECK(induced_fiber_metric(Matrix<ScalarExpr>::identity(2), diag({"2", "1"})) == diag({"4", "1"}));
  Matrix<ScalarExpr> h = diag({"4/(1+x^2+y^2)^2", "4/(1+x^2+y^2)^2"});
  CHECK(induced_fiber_metric(h, Matrix<ScalarExpr>::identity(2)) == h);

  Matrix<ScalarExpr> sigma = Matrix<ScalarExpr>::identity(2);
  sigma(0, 1) = X("x");
  Matrix<ScalarExpr> H = induced_fiber_metric(h, sigma);
  for (const auto& p : sample_points({"x", "y"}, 20, 4)) {
    Matrix<double> v = evaluate(H, p);
    CHECK(v(0, 1) == Catch::Approx(v(1, 0)));
    CHECK(v(0, 0) > 0);
    CHECK(v(0, 0) * v(1, 1) - v(0, 1) * v(1, 0) > 0);
  }
  Matrix<ScalarExpr> degenerate(2, 2);
  degenerate(0, 0) = X("1");
  CHECK_THROWS_AS(induced_fiber_metric(Matrix<ScalarExpr>::identity(2), degenerate), Error);
}

TEST_CASE("check_sigma_parallel", "[equivariant]") {
  auto pts = sample_points({"x", "y"}, 6, 9);
  auto id = Matrix<ScalarExpr>::identity(2);
  CHECK(check_sigma_parallel(diag({"2", "1"}), id, diag({"4", "1"}), {"x", "y"}, pts).pass);

  Matrix<ScalarExpr> h = diag({"4/(1+x^2+y^2)^2", "4/(1+x^2+y^2)^2"});
  ParallelReport sphere = check_sigma_parallel(id, h, h, {"x", "y"}, pts);
  CHECK(sphere.pass);
  CHECK(sphere.max_norm < 1e-8);

  Matrix<ScalarExpr> sigma = Matrix<ScalarExpr>::identity(2);
  sigma(0, 1) = X("x");
  ParallelReport bent = check_sigma_parallel(sigma, id, transpose(sigma) * sigma, {"x", "y"}, pts);
  CHECK_FALSE(bent.pass);
}

#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "superloc/super.hpp"

using namespace superloc;

namespace {

ChartPtr chart22() { return SuperChart::make({"x", "y"}, 2); }

SuperFunction S(const char* text, const ChartPtr& c) { return parse_superfunction(text, c); }

SuperFunction random_even(std::mt19937_64& rng, const ChartPtr& c, bool unit_body) {
  std::uniform_int_distribution<int> k(-4, 4), d(1, 3);
  auto q = [&] { return ScalarExpr(Rational(k(rng), d(rng))); };
  ScalarExpr body = unit_body ? ScalarExpr(1) + q() * q() * ScalarExpr::symbol("x") * ScalarExpr::symbol("x")
                              : q() * ScalarExpr::symbol("x") + q();
  SuperFunction f(c, body);
  const std::size_t n = c->n();
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = a + 1; b < n; ++b) f.add_term(bit(a) | bit(b), q() * ScalarExpr::symbol("y") + q());
  if (n >= 4) f.add_term(0xF, q());
  return f;
}

}  // namespace

TEST_CASE("wedge carries Koszul signs and nilpotency", "[super]") {
  auto c = chart22();
  auto t1 = SuperFunction::generator(c, 0), t2 = SuperFunction::generator(c, 1);
  CHECK(t1 * t2 == S("th1*th2", c));
  CHECK(t2 * t1 == S("-th1*th2", c));
  CHECK((t1 * t1).is_zero());
  CHECK(wedge(t1, t2).grade(2) == t1 * t2);
}

TEST_CASE("odd_partial is a left derivative", "[super]") {
  auto c = chart22();
  CHECK(odd_partial(S("th1*th2", c), 0) == S("th2", c));
  CHECK(odd_partial(S("th1*th2", c), 1) == S("-th1", c));
}

TEST_CASE("even_partial acts termwise", "[super]") {
  auto c = chart22();
  CHECK(even_partial(S("x*th1", c), 0) == S("th1", c));
  CHECK(even_partial(S("5", c), 0).is_zero());
  std::mt19937_64 rng(2);
  for (int i = 0; i < 20; ++i) {
    auto f = random_even(rng, c, false), g = random_even(rng, c, false);
    CHECK(even_partial(f * g, 0) == even_partial(f, 0) * g + f * even_partial(g, 0));
  }
}

TEST_CASE("top_component reads the top coefficient", "[super]") {
  auto c = chart22();
  CHECK(top_component(S("3 + x*th1*th2", c)) == parse_scalar("x"));
  CHECK(top_component(S("th1", c)).is_zero());
}

TEST_CASE("apply_field and graded_commutator", "[super]") {
  auto c = chart22();
  SuperVectorField d1(c, 1);
  d1.b(0) = SuperFunction(c, ScalarExpr(1));
  CHECK(apply_field(d1, S("th1*th2", c)) == S("th2", c));
  CHECK(graded_commutator(d1, d1).is_zero());

  SuperVectorField euler(c, 0), dx(c, 0);
  euler.a(0) = S("x", c);
  dx.a(0) = S("1", c);
  CHECK(apply_field(euler, S("x^2", c)) == S("2*x^2", c));
  SuperVectorField br = graded_commutator(euler, dx);
  CHECK(br.a(0) == S("-1", c));
  CHECK(br.a(1).is_zero());
}

TEST_CASE("anticommutator of an odd field is twice its square", "[super]") {
  auto c = chart22();
  SuperVectorField q(c, 1);
  q.a(0) = S("y*th1", c);
  q.a(1) = S("th2 + x*th1", c);
  q.b(0) = S("x^2 + th1*th2", c);
  q.b(1) = S("-y", c);
  REQUIRE(q.parity_consistent());
  SuperVectorField qq = graded_commutator(q, q);
  std::mt19937_64 rng(4);
  for (int i = 0; i < 10; ++i) {
    auto f = random_even(rng, c, false) + S("x*th1 + y*th2", c);
    CHECK(apply_field(qq, f) == ScalarExpr(2) * apply_field(q, apply_field(q, f)));
  }
}

TEST_CASE("invert_even", "[super]") {
  auto c = chart22();
  CHECK(invert_even(S("1 + th1*th2", c)) == S("1 - th1*th2", c));
  CHECK(invert_even(S("4", c)) == S("1/4", c));
  CHECK_THROWS_AS(invert_even(S("th1*th2", c)), Error);

  auto c4 = SuperChart::make({"x", "y"}, 4);
  std::mt19937_64 rng(8);
  for (int i = 0; i < 50; ++i) {
    auto f = random_even(rng, c4, true);
    CHECK(vanishes_identically(f * invert_even(f) - SuperFunction(c4, ScalarExpr(1))));
  }
}

TEST_CASE("nilpotency of bodiless superfunctions", "[super]") {
  auto c4 = SuperChart::make({"x"}, 4);
  auto f = parse_superfunction("x*th1*th2 + th3*th4 + th1*th3", c4);
  CHECK_FALSE(pow(f, 2).is_zero());
  CHECK(pow(f, 3).is_zero());
}

TEST_CASE("superfunctions parse and print round-trip", "[super]") {
  auto c = chart22();
  for (const char* s : {"(x^2)*th1*th2 + 3*th1", "y + 3*th1 + (x^2)*th1*th2", "exp(x)*th2 - th1*th2"}) {
    auto f = S(s, c);
    CHECK(parse_superfunction(to_string(f), c) == f);
  }
  CHECK(to_string(S("y + 3*th1 + x^2*th1*th2", c)) == "y + 3*th1 + (x^2)*th1*th2");
}

#pragma once

// Superfunctions on an (m,n) chart: the exterior algebra on n odd generators
// with ScalarExpr coefficients, graded derivations, and supervector fields.
//
// Odd generators are indexed from 0. A term theta^I is stored under the
// bitmask of I, always in increasing order; the Koszul sign of any
// reordering is folded into the coefficient.

#include <bit>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "superloc/error.hpp"
#include "superloc/linalg.hpp"
#include "superloc/parse.hpp"
#include "superloc/scalar.hpp"

namespace superloc {

using Mask = std::uint64_t;

inline int grade_of(Mask m) { return std::popcount(m); }
inline Mask bit(std::size_t a) { return Mask{1} << a; }

/// Sign of theta^I theta^J reordered into increasing order (0 if they overlap).
inline int wedge_sign(Mask i, Mask j) {
  if (i & j) return 0;
  int swaps = 0;
  for (Mask r = j; r != 0; r &= r - 1) {
    const int b = std::countr_zero(r);
    swaps += std::popcount(b == 63 ? Mask{0} : (i >> (b + 1)));
  }
  return (swaps % 2 == 0) ? 1 : -1;
}

struct SuperChart {
  std::vector<std::string> even;  // coordinate symbols x^i
  std::vector<std::string> odd;   // generator names theta^A

  std::size_t m() const { return even.size(); }
  std::size_t n() const { return odd.size(); }

  static std::shared_ptr<const SuperChart> make(std::vector<std::string> even, std::size_t n,
                                                const std::string& prefix = "th") {
    std::vector<std::string> odd;
    for (std::size_t a = 0; a < n; ++a) odd.push_back(prefix + std::to_string(a + 1));
    return make(std::move(even), std::move(odd));
  }
  static std::shared_ptr<const SuperChart> make(std::vector<std::string> even, std::vector<std::string> odd) {
    if (odd.size() > 64) throw Error(ErrorCode::DimensionMismatch, "at most 64 odd generators are supported");
    return std::make_shared<const SuperChart>(SuperChart{std::move(even), std::move(odd)});
  }
};

using ChartPtr = std::shared_ptr<const SuperChart>;

inline bool same_chart(const ChartPtr& a, const ChartPtr& b) {
  return a == b || (a && b && a->even == b->even && a->odd == b->odd);
}

/// Orders multi-indices by grade, then lexicographically on the index list.
struct GradeOrder {
  bool operator()(Mask a, Mask b) const {
    const int ga = grade_of(a), gb = grade_of(b);
    if (ga != gb) return ga < gb;
    while (a != b) {
      const int ia = std::countr_zero(a), ib = std::countr_zero(b);
      if (ia != ib) return ia < ib;
      a &= a - 1;
      b &= b - 1;
    }
    return false;
  }
};

class SuperFunction {
 public:
  using Terms = std::map<Mask, ScalarExpr, GradeOrder>;

  SuperFunction() = default;
  explicit SuperFunction(ChartPtr chart) : chart_(std::move(chart)) {}
  SuperFunction(ChartPtr chart, const ScalarExpr& body) : chart_(std::move(chart)) {
    if (!body.is_zero()) terms_.emplace(Mask{0}, body);
  }

  /// The generator theta^A.
  static SuperFunction generator(ChartPtr chart, std::size_t a) {
    if (a >= chart->n()) throw Error(ErrorCode::IndexOutOfRange, "odd generator index " + std::to_string(a));
    SuperFunction f(std::move(chart));
    f.terms_.emplace(bit(a), ScalarExpr(1));
    return f;
  }

  /// Even coordinate x^i as a superfunction.
  static SuperFunction coordinate(ChartPtr chart, std::size_t i) {
    if (i >= chart->m()) throw Error(ErrorCode::IndexOutOfRange, "even coordinate index " + std::to_string(i));
    ScalarExpr x = ScalarExpr::symbol(chart->even[i]);
    return SuperFunction(std::move(chart), x);
  }

  /// coeff * theta^{a_1} ... theta^{a_k} in the given (possibly unsorted) order.
  static SuperFunction monomial(ChartPtr chart, const ScalarExpr& coeff, const std::vector<std::size_t>& order);

  const ChartPtr& chart() const { return chart_; }
  std::size_t m() const { return chart_ ? chart_->m() : 0; }
  std::size_t n() const { return chart_ ? chart_->n() : 0; }
  const Terms& terms() const { return terms_; }
  bool is_zero() const { return terms_.empty(); }

  const ScalarExpr& coefficient(Mask mask) const {
    static const ScalarExpr zero;
    auto it = terms_.find(mask);
    return it == terms_.end() ? zero : it->second;
  }

  void add_term(Mask mask, const ScalarExpr& c) {
    if (c.is_zero()) return;
    auto [it, inserted] = terms_.try_emplace(mask, c);
    if (!inserted) {
      it->second = it->second + c;
      if (it->second.is_zero()) terms_.erase(it);
    }
  }

  /// Body epsilon(f): the grade-0 coefficient.
  ScalarExpr body() const { return coefficient(0); }

  /// f_[k], the grade-k part of the superfield expansion.
  SuperFunction grade(int k) const {
    SuperFunction out(chart_);
    for (const auto& [mask, c] : terms_)
      if (grade_of(mask) == k) out.terms_.emplace(mask, c);
    return out;
  }

  /// Highest grade present, -1 for zero.
  int max_grade() const { return terms_.empty() ? -1 : grade_of(terms_.rbegin()->first); }

  bool is_even() const {
    for (const auto& [mask, c] : terms_)
      if (grade_of(mask) % 2 != 0) return false;
    return true;
  }
  bool is_odd() const {
    for (const auto& [mask, c] : terms_)
      if (grade_of(mask) % 2 == 0) return false;
    return true;
  }
  /// Parity of a homogeneous element (zero counts as even).
  int parity() const {
    if (is_even()) return 0;
    if (is_odd()) return 1;
    throw Error(ErrorCode::WrongGrade, "superfunction is not homogeneous in parity");
  }

  template <class F>
  SuperFunction map_coefficients(F&& f) const {
    SuperFunction out(chart_);
    for (const auto& [mask, c] : terms_) out.add_term(mask, f(c));
    return out;
  }

 private:
  ChartPtr chart_;
  Terms terms_;
};

inline void check_same_chart(const SuperFunction& f, const SuperFunction& g) {
  if (!f.chart() || !g.chart()) return;
  if (!same_chart(f.chart(), g.chart()))
    throw Error(ErrorCode::DimensionMismatch, "superfunctions live on different (m,n) charts");
}

inline ChartPtr pick_chart(const SuperFunction& f, const SuperFunction& g) { return f.chart() ? f.chart() : g.chart(); }

inline bool operator==(const SuperFunction& f, const SuperFunction& g) {
  if (f.terms().size() != g.terms().size()) return false;
  auto it = g.terms().begin();
  for (const auto& [mask, c] : f.terms()) {
    if (it->first != mask || !(it->second == c)) return false;
    ++it;
  }
  return true;
}
inline bool operator!=(const SuperFunction& f, const SuperFunction& g) { return !(f == g); }

inline SuperFunction operator+(const SuperFunction& f, const SuperFunction& g) {
  check_same_chart(f, g);
  SuperFunction out = f.chart() ? f : SuperFunction(g.chart());
  if (!f.chart()) {
    for (const auto& [mask, c] : f.terms()) out.add_term(mask, c);
  }
  for (const auto& [mask, c] : g.terms()) out.add_term(mask, c);
  return out;
}

inline SuperFunction operator-(const SuperFunction& f) {
  return f.map_coefficients([](const ScalarExpr& c) { return -c; });
}

inline SuperFunction operator-(const SuperFunction& f, const SuperFunction& g) { return f + (-g); }

/// Graded-commutative product.
inline SuperFunction operator*(const SuperFunction& f, const SuperFunction& g) {
  check_same_chart(f, g);
  SuperFunction out(pick_chart(f, g));
  for (const auto& [mi, ci] : f.terms())
    for (const auto& [mj, cj] : g.terms()) {
      const int s = wedge_sign(mi, mj);
      if (s == 0) continue;
      ScalarExpr c = ci * cj;
      out.add_term(mi | mj, s > 0 ? c : -c);
    }
  return out;
}

inline SuperFunction SuperFunction::monomial(ChartPtr chart, const ScalarExpr& coeff,
                                            const std::vector<std::size_t>& order) {
  SuperFunction f(chart, coeff);
  for (std::size_t a : order) f = f * generator(chart, a);
  return f;
}

inline SuperFunction operator*(const ScalarExpr& s, const SuperFunction& f) {
  if (s.is_zero()) return SuperFunction(f.chart());
  return f.map_coefficients([&](const ScalarExpr& c) { return s * c; });
}

inline SuperFunction& operator+=(SuperFunction& f, const SuperFunction& g) { return f = f + g; }
inline SuperFunction& operator-=(SuperFunction& f, const SuperFunction& g) { return f = f - g; }

inline SuperFunction wedge(const SuperFunction& f, const SuperFunction& g) {
  if (f.chart() && g.chart() && (f.m() != g.m() || f.n() != g.n()))
    throw Error(ErrorCode::DimensionMismatch, "wedge of superfunctions with different (m,n)");
  return f * g;
}

inline SuperFunction pow(const SuperFunction& f, int k) {
  if (k < 0) throw Error(ErrorCode::WrongGrade, "negative power of a superfunction; use invert_even");
  SuperFunction r(f.chart(), ScalarExpr(1));
  for (int i = 0; i < k; ++i) r = r * f;
  return r;
}

/// Left graded derivative d/dtheta^A.
inline SuperFunction odd_partial(const SuperFunction& f, std::size_t a) {
  if (a >= f.n()) throw Error(ErrorCode::IndexOutOfRange, "odd_partial index " + std::to_string(a));
  SuperFunction out(f.chart());
  const Mask b = bit(a);
  for (const auto& [mask, c] : f.terms()) {
    if (!(mask & b)) continue;
    const int before = std::popcount(mask & (b - 1));
    out.add_term(mask & ~b, before % 2 == 0 ? c : -c);
  }
  return out;
}

/// Coefficient-wise d/dx^i.
inline SuperFunction even_partial(const SuperFunction& f, std::size_t i) {
  if (i >= f.m()) throw Error(ErrorCode::IndexOutOfRange, "even_partial index " + std::to_string(i));
  const std::string& s = f.chart()->even[i];
  return f.map_coefficients([&](const ScalarExpr& c) { return differentiate(c, s); });
}

/// Coefficient of theta^1 ... theta^n.
inline ScalarExpr top_component(const SuperFunction& f) {
  const std::size_t n = f.n();
  const Mask top = n == 64 ? ~Mask{0} : (bit(n) - 1);
  return f.coefficient(top);
}

inline SuperFunction substitute(const SuperFunction& f, const Substitution& sub) {
  return f.map_coefficients([&](const ScalarExpr& c) { return substitute(c, sub); });
}

inline SuperFunction normalize(const SuperFunction& f) {
  return f.map_coefficients([](const ScalarExpr& c) { return normalize(c); });
}

/// Inverse of an even superfunction with invertible body, by the nilpotent
/// geometric series f0^{-1} sum_j (-nu/f0)^j, truncated at j = floor(n/2).
/// The body is checked to be nonzero at each of the supplied sample points.
inline SuperFunction invert_even(const SuperFunction& f, const std::vector<std::map<std::string, double>>& domain = {}) {
  if (!f.is_even()) throw Error(ErrorCode::WrongGrade, "invert_even needs an even superfunction");
  const ScalarExpr body = f.body();
  if (body.is_zero()) throw Error(ErrorCode::ZeroBody, "body of the superfunction is identically zero");
  for (const auto& point : domain) {
    const double v = evaluate(body, point);
    if (v == 0.0 || !std::isfinite(v)) throw Error(ErrorCode::ZeroBody, "body vanishes at a sample point");
  }
  const ScalarExpr inv0 = reciprocal(body);
  SuperFunction nu = f - SuperFunction(f.chart(), body);
  SuperFunction step = -(inv0 * nu);
  SuperFunction acc(f.chart(), ScalarExpr(1));
  SuperFunction power(f.chart(), ScalarExpr(1));
  for (std::size_t j = 1; j <= f.n() / 2; ++j) {
    power = power * step;
    if (power.is_zero()) break;
    acc += power;
  }
  return inv0 * acc;
}

inline bool vanishes_identically(const SuperFunction& f, double tol = 1e-10) {
  for (const auto& [mask, c] : f.terms())
    if (!vanishes_identically(c, tol)) return false;
  return true;
}

// ---------------------------------------------------------------------------
// Supervector fields

class SuperVectorField {
 public:
  SuperVectorField() = default;
  SuperVectorField(ChartPtr chart, int parity) : chart_(std::move(chart)), parity_(parity) {
    a_.assign(chart_->m(), SuperFunction(chart_));
    b_.assign(chart_->n(), SuperFunction(chart_));
  }
  SuperVectorField(ChartPtr chart, int parity, std::vector<SuperFunction> a, std::vector<SuperFunction> b)
      : chart_(std::move(chart)), parity_(parity), a_(std::move(a)), b_(std::move(b)) {
    if (a_.size() != chart_->m() || b_.size() != chart_->n())
      throw Error(ErrorCode::DimensionMismatch, "supervector field component counts do not match the chart");
  }

  const ChartPtr& chart() const { return chart_; }
  int parity() const { return parity_; }
  std::size_t m() const { return chart_->m(); }
  std::size_t n() const { return chart_->n(); }

  /// Coefficient of d/dx^i.
  const SuperFunction& a(std::size_t i) const { return a_.at(i); }
  SuperFunction& a(std::size_t i) { return a_.at(i); }
  /// Coefficient of d/dtheta^A.
  const SuperFunction& b(std::size_t k) const { return b_.at(k); }
  SuperFunction& b(std::size_t k) { return b_.at(k); }

  bool is_zero() const {
    for (const auto& f : a_)
      if (!f.is_zero()) return false;
    for (const auto& f : b_)
      if (!f.is_zero()) return false;
    return true;
  }

  /// Odd fields carry odd a^i and even b^A; even fields the reverse.
  bool parity_consistent() const {
    for (const auto& f : a_)
      if (parity_ == 0 ? !f.is_even() : !f.is_odd()) return false;
    for (const auto& f : b_)
      if (parity_ == 0 ? !f.is_odd() : !f.is_even()) return false;
    return true;
  }

  template <class F>
  SuperVectorField map_components(F&& fn) const {
    SuperVectorField out(chart_, parity_);
    for (std::size_t i = 0; i < a_.size(); ++i) out.a_[i] = fn(a_[i]);
    for (std::size_t k = 0; k < b_.size(); ++k) out.b_[k] = fn(b_[k]);
    return out;
  }

 private:
  ChartPtr chart_;
  int parity_ = 0;
  std::vector<SuperFunction> a_;
  std::vector<SuperFunction> b_;
};

inline bool vanishes_identically(const SuperVectorField& x, double tol = 1e-10) {
  for (std::size_t i = 0; i < x.m(); ++i)
    if (!vanishes_identically(x.a(i), tol)) return false;
  for (std::size_t k = 0; k < x.n(); ++k)
    if (!vanishes_identically(x.b(k), tol)) return false;
  return true;
}

inline void check_same_chart(const SuperVectorField& x, const SuperFunction& f) {
  if (!f.chart()) return;
  if (!same_chart(x.chart(), f.chart()))
    throw Error(ErrorCode::DimensionMismatch, "field and superfunction live on different charts");
}

/// X(f) = sum a^i df/dx^i + sum b^A df/dtheta^A.
inline SuperFunction apply_field(const SuperVectorField& x, const SuperFunction& f) {
  check_same_chart(x, f);
  SuperFunction out(x.chart());
  for (std::size_t i = 0; i < x.m(); ++i) {
    if (x.a(i).is_zero()) continue;
    SuperFunction d = even_partial(f, i);
    if (!d.is_zero()) out += x.a(i) * d;
  }
  for (std::size_t k = 0; k < x.n(); ++k) {
    if (x.b(k).is_zero()) continue;
    SuperFunction d = odd_partial(f, k);
    if (!d.is_zero()) out += x.b(k) * d;
  }
  return out;
}

inline SuperVectorField operator+(const SuperVectorField& x, const SuperVectorField& y) {
  if (!same_chart(x.chart(), y.chart())) throw Error(ErrorCode::DimensionMismatch, "field sum on different charts");
  SuperVectorField out(x.chart(), x.parity());
  for (std::size_t i = 0; i < x.m(); ++i) out.a(i) = x.a(i) + y.a(i);
  for (std::size_t k = 0; k < x.n(); ++k) out.b(k) = x.b(k) + y.b(k);
  return out;
}

inline SuperVectorField operator-(const SuperVectorField& x, const SuperVectorField& y) {
  if (!same_chart(x.chart(), y.chart()))
    throw Error(ErrorCode::DimensionMismatch, "field difference on different charts");
  SuperVectorField out(x.chart(), x.parity());
  for (std::size_t i = 0; i < x.m(); ++i) out.a(i) = x.a(i) - y.a(i);
  for (std::size_t k = 0; k < x.n(); ++k) out.b(k) = x.b(k) - y.b(k);
  return out;
}

inline SuperVectorField operator*(const ScalarExpr& s, const SuperVectorField& x) {
  return x.map_components([&](const SuperFunction& f) { return s * f; });
}

/// [X,Y] = X o Y - (-1)^{|X||Y|} Y o X, assembled from its values on the
/// coordinate functions.
inline SuperVectorField graded_commutator(const SuperVectorField& x, const SuperVectorField& y) {
  if (!same_chart(x.chart(), y.chart()))
    throw Error(ErrorCode::DimensionMismatch, "graded commutator of fields on different charts");
  const bool anti = (x.parity() * y.parity()) % 2 == 1;
  SuperVectorField out(x.chart(), (x.parity() + y.parity()) % 2);
  for (std::size_t i = 0; i < x.m(); ++i) {
    SuperFunction xy = apply_field(x, y.a(i));
    SuperFunction yx = apply_field(y, x.a(i));
    out.a(i) = anti ? xy + yx : xy - yx;
  }
  for (std::size_t k = 0; k < x.n(); ++k) {
    SuperFunction xy = apply_field(x, y.b(k));
    SuperFunction yx = apply_field(y, x.b(k));
    out.b(k) = anti ? xy + yx : xy - yx;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Text form: `(x^2)*th1*th2 + 3*th1`

struct SuperOps {
  using value_type = SuperFunction;
  ChartPtr chart;

  SuperFunction number(const Rational& q) const { return SuperFunction(chart, ScalarExpr(q)); }
  SuperFunction identifier(const std::string& name) const {
    for (std::size_t a = 0; a < chart->n(); ++a)
      if (chart->odd[a] == name) return SuperFunction::generator(chart, a);
    return SuperFunction(chart, ScalarExpr::symbol(name));
  }
  static const ScalarExpr& require_scalar(const SuperFunction& f, const char* what) {
    for (const auto& [mask, c] : f.terms())
      if (mask != 0) throw Error(ErrorCode::ParseError, std::string(what) + " needs a grade-0 operand");
    return f.coefficient(0);
  }
  SuperFunction call(const std::string& fn, const SuperFunction& arg) const {
    return SuperFunction(chart, ScalarOps{}.call(fn, require_scalar(arg, "function call")));
  }
  SuperFunction add(const SuperFunction& a, const SuperFunction& b) const { return a + b; }
  SuperFunction sub(const SuperFunction& a, const SuperFunction& b) const { return a - b; }
  SuperFunction mul(const SuperFunction& a, const SuperFunction& b) const { return a * b; }
  SuperFunction div(const SuperFunction& a, const SuperFunction& b) const {
    return reciprocal(require_scalar(b, "division")) * a;
  }
  SuperFunction neg(const SuperFunction& a) const { return -a; }
  SuperFunction pow(const SuperFunction& a, int n) const {
    if (n >= 0) return superloc::pow(a, n);
    return SuperFunction(chart, superloc::pow(require_scalar(a, "negative power"), n));
  }
};

inline SuperFunction parse_superfunction(std::string_view text, const ChartPtr& chart) {
  SuperOps ops{chart};
  return ExpressionParser<SuperOps>(text, ops).parse();
}

inline std::string to_string(const SuperFunction& f) {
  if (f.is_zero()) return "0";
  std::string out;
  bool first = true;
  for (const auto& [mask, c] : f.terms()) {
    std::string gens;
    for (Mask r = mask; r != 0; r &= r - 1) gens += "*" + f.chart()->odd[static_cast<std::size_t>(std::countr_zero(r))];
    std::string term;
    bool negative = false;
    if (mask == 0) {
      term = to_string(c);
      if (!out.empty() && term.front() == '-') {
        negative = true;
        term = to_string(-c);
      }
    } else if (auto q = c.constant_value()) {
      Rational v = *q;
      negative = v < 0;
      if (negative) v = -v;
      term = (v == 1) ? gens.substr(1) : v.get_str() + gens;
    } else {
      term = "(" + to_string(c) + ")" + gens;
    }
    if (first)
      out += negative ? "-" + term : term;
    else
      out += negative ? " - " + term : " + " + term;
    first = false;
  }
  return out;
}

}  // namespace superloc

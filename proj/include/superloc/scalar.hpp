#pragma once

// Exact symbolic scalars: Laurent polynomials with rational coefficients over
// atoms (symbols, exp/sin/cos of an expression, reciprocals of sums).
//
// Every ScalarExpr is kept in canonical form: a sorted list of terms with
// nonzero coefficients, each term a sorted list of (atom, power) factors.
// Transcendental atoms are opaque; no addition theorems are applied.

#include <gmpxx.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "superloc/error.hpp"

namespace superloc {

using Rational = mpq_class;

enum class AtomKind : std::uint8_t { Symbol = 0, Exp = 1, Sin = 2, Cos = 3, Inv = 4 };

struct AtomNode;
using Atom = std::shared_ptr<const AtomNode>;

struct Factor {
  Atom atom;
  int power = 1;
};
using Monomial = std::vector<Factor>;

struct Term {
  Monomial mono;
  Rational coeff;
};

int compare_atoms(const Atom& a, const Atom& b);
int compare_monomials(const Monomial& a, const Monomial& b);

class ScalarExpr {
 public:
  ScalarExpr() : terms_(empty_terms()) {}
  ScalarExpr(int v) : ScalarExpr(Rational(v)) {}  // NOLINT(google-explicit-constructor)
  ScalarExpr(const Rational& v) {                  // NOLINT(google-explicit-constructor)
    if (v == 0) {
      terms_ = empty_terms();
    } else {
      auto t = std::make_shared<std::vector<Term>>();
      Rational c = v;
      c.canonicalize();
      t->push_back(Term{{}, c});
      terms_ = std::move(t);
    }
  }

  static ScalarExpr symbol(const std::string& name);
  static ScalarExpr from_atom(Atom atom, int power = 1);
  static ScalarExpr from_monomial(const Monomial& m, const Rational& c);
  /// Builds from arbitrary (unsorted, possibly duplicated) terms.
  static ScalarExpr from_terms(std::vector<Term> terms);

  const std::vector<Term>& terms() const { return *terms_; }
  bool is_zero() const { return terms_->empty(); }
  bool is_constant() const {
    return terms_->empty() || (terms_->size() == 1 && terms_->front().mono.empty());
  }
  std::optional<Rational> constant_value() const {
    if (terms_->empty()) return Rational(0);
    if (is_constant()) return terms_->front().coeff;
    return std::nullopt;
  }
  bool is_monomial() const { return terms_->size() == 1; }

 private:
  static std::shared_ptr<const std::vector<Term>> empty_terms() {
    static const auto e = std::make_shared<const std::vector<Term>>();
    return e;
  }
  std::shared_ptr<const std::vector<Term>> terms_;
};

struct AtomNode {
  AtomKind kind;
  std::string name;  // Symbol only
  ScalarExpr arg;    // Exp/Sin/Cos argument, or the denominator of Inv
};

int compare_exprs(const ScalarExpr& a, const ScalarExpr& b);

inline int compare_atoms(const Atom& a, const Atom& b) {
  if (a.get() == b.get()) return 0;
  if (a->kind != b->kind) return a->kind < b->kind ? -1 : 1;
  if (a->kind == AtomKind::Symbol) {
    int c = a->name.compare(b->name);
    return c < 0 ? -1 : (c > 0 ? 1 : 0);
  }
  return compare_exprs(a->arg, b->arg);
}

inline int compare_monomials(const Monomial& a, const Monomial& b) {
  const std::size_t n = std::min(a.size(), b.size());
  for (std::size_t i = 0; i < n; ++i) {
    int c = compare_atoms(a[i].atom, b[i].atom);
    if (c != 0) return c;
    if (a[i].power != b[i].power) return a[i].power < b[i].power ? -1 : 1;
  }
  if (a.size() != b.size()) return a.size() < b.size() ? -1 : 1;
  return 0;
}

inline int compare_exprs(const ScalarExpr& a, const ScalarExpr& b) {
  const auto& ta = a.terms();
  const auto& tb = b.terms();
  const std::size_t n = std::min(ta.size(), tb.size());
  for (std::size_t i = 0; i < n; ++i) {
    int c = compare_monomials(ta[i].mono, tb[i].mono);
    if (c != 0) return c;
    int cc = cmp(ta[i].coeff, tb[i].coeff);
    if (cc != 0) return cc < 0 ? -1 : 1;
  }
  if (ta.size() != tb.size()) return ta.size() < tb.size() ? -1 : 1;
  return 0;
}

struct MonomialLess {
  bool operator()(const Monomial& a, const Monomial& b) const { return compare_monomials(a, b) < 0; }
};

inline bool operator==(const ScalarExpr& a, const ScalarExpr& b) { return compare_exprs(a, b) == 0; }
inline bool operator!=(const ScalarExpr& a, const ScalarExpr& b) { return !(a == b); }
inline bool operator<(const ScalarExpr& a, const ScalarExpr& b) { return compare_exprs(a, b) < 0; }

namespace detail {

inline Monomial multiply_monomials(const Monomial& a, const Monomial& b) {
  Monomial out;
  out.reserve(a.size() + b.size());
  std::size_t i = 0, j = 0;
  while (i < a.size() || j < b.size()) {
    if (j == b.size()) {
      out.push_back(a[i++]);
    } else if (i == a.size()) {
      out.push_back(b[j++]);
    } else {
      int c = compare_atoms(a[i].atom, b[j].atom);
      if (c < 0) {
        out.push_back(a[i++]);
      } else if (c > 0) {
        out.push_back(b[j++]);
      } else {
        int p = a[i].power + b[j].power;
        if (p != 0) out.push_back(Factor{a[i].atom, p});
        ++i;
        ++j;
      }
    }
  }
  return out;
}

}  // namespace detail

inline ScalarExpr ScalarExpr::from_terms(std::vector<Term> terms) {
  std::map<Monomial, Rational, MonomialLess> acc;
  for (auto& t : terms) {
    if (t.coeff == 0) continue;
    auto [it, inserted] = acc.try_emplace(std::move(t.mono), t.coeff);
    if (!inserted) it->second += t.coeff;
  }
  auto out = std::make_shared<std::vector<Term>>();
  out->reserve(acc.size());
  for (auto& [m, c] : acc) {
    if (c == 0) continue;
    c.canonicalize();
    out->push_back(Term{m, c});
  }
  ScalarExpr e;
  if (!out->empty()) e.terms_ = std::move(out);
  return e;
}

inline ScalarExpr ScalarExpr::from_monomial(const Monomial& m, const Rational& c) {
  std::vector<Term> t;
  t.push_back(Term{m, c});
  return from_terms(std::move(t));
}

inline ScalarExpr ScalarExpr::from_atom(Atom atom, int power) {
  if (power == 0) return ScalarExpr(1);
  return from_monomial(Monomial{Factor{std::move(atom), power}}, Rational(1));
}

inline ScalarExpr ScalarExpr::symbol(const std::string& name) {
  return from_atom(std::make_shared<const AtomNode>(AtomNode{AtomKind::Symbol, name, ScalarExpr()}));
}

inline ScalarExpr operator+(const ScalarExpr& a, const ScalarExpr& b) {
  if (a.is_zero()) return b;
  if (b.is_zero()) return a;
  std::vector<Term> t(a.terms());
  t.insert(t.end(), b.terms().begin(), b.terms().end());
  return ScalarExpr::from_terms(std::move(t));
}

inline ScalarExpr operator-(const ScalarExpr& a) {
  std::vector<Term> t(a.terms());
  for (auto& x : t) x.coeff = -x.coeff;
  return ScalarExpr::from_terms(std::move(t));
}

inline ScalarExpr operator-(const ScalarExpr& a, const ScalarExpr& b) { return a + (-b); }

inline ScalarExpr operator*(const ScalarExpr& a, const ScalarExpr& b) {
  if (a.is_zero() || b.is_zero()) return ScalarExpr();
  std::vector<Term> t;
  t.reserve(a.terms().size() * b.terms().size());
  for (const auto& x : a.terms())
    for (const auto& y : b.terms())
      t.push_back(Term{detail::multiply_monomials(x.mono, y.mono), x.coeff * y.coeff});
  return ScalarExpr::from_terms(std::move(t));
}

inline ScalarExpr& operator+=(ScalarExpr& a, const ScalarExpr& b) { return a = a + b; }
inline ScalarExpr& operator-=(ScalarExpr& a, const ScalarExpr& b) { return a = a - b; }
inline ScalarExpr& operator*=(ScalarExpr& a, const ScalarExpr& b) { return a = a * b; }

ScalarExpr reciprocal(const ScalarExpr& e);

inline ScalarExpr pow(const ScalarExpr& base, int n) {
  if (n < 0) return pow(reciprocal(base), -n);
  ScalarExpr result(1);
  ScalarExpr b = base;
  while (n > 0) {
    if (n & 1) result = result * b;
    n >>= 1;
    if (n > 0) b = b * b;
  }
  return result;
}

namespace detail {

/// Reciprocal of a single term; reciprocals of Inv atoms expand back into
/// their denominators.
inline ScalarExpr reciprocal_term(const Term& t) {
  if (t.coeff == 0) throw Error(ErrorCode::DivisionByZero, "reciprocal of zero");
  Monomial plain;
  ScalarExpr expanded(1);
  for (const auto& f : t.mono) {
    if (f.atom->kind == AtomKind::Inv && f.power > 0) {
      expanded = expanded * pow(f.atom->arg, f.power);
    } else {
      plain.push_back(Factor{f.atom, -f.power});
    }
  }
  Rational c = 1 / t.coeff;
  return ScalarExpr::from_monomial(plain, c) * expanded;
}

}  // namespace detail

inline ScalarExpr reciprocal(const ScalarExpr& e) {
  if (e.is_zero()) throw Error(ErrorCode::DivisionByZero, "reciprocal of zero expression");
  if (e.is_monomial()) return detail::reciprocal_term(e.terms().front());
  // Factor out the monomial content and the leading coefficient so that the
  // remaining denominator is canonical.
  std::map<Atom, int, bool (*)(const Atom&, const Atom&)> minpow(
      +[](const Atom& a, const Atom& b) { return compare_atoms(a, b) < 0; });
  for (const auto& t : e.terms())
    for (const auto& f : t.mono)
      if (f.atom->kind != AtomKind::Inv) minpow.try_emplace(f.atom, 0);
  for (auto& [atom, p] : minpow) {
    bool first = true;
    for (const auto& t : e.terms()) {
      int q = 0;
      for (const auto& f : t.mono)
        if (compare_atoms(f.atom, atom) == 0) q = f.power;
      p = first ? q : std::min(p, q);
      first = false;
    }
  }
  Monomial content;
  for (const auto& [atom, p] : minpow)
    if (p != 0) content.push_back(Factor{atom, p});
  const Rational lead = e.terms().front().coeff;
  ScalarExpr content_expr = ScalarExpr::from_monomial(content, lead);
  ScalarExpr inv_content = detail::reciprocal_term(Term{content, lead});
  ScalarExpr rest = e * inv_content;
  if (rest.is_monomial()) return inv_content * detail::reciprocal_term(rest.terms().front());
  auto atom = std::make_shared<const AtomNode>(AtomNode{AtomKind::Inv, "", rest});
  return inv_content * ScalarExpr::from_atom(atom);
}

inline ScalarExpr operator/(const ScalarExpr& a, const ScalarExpr& b) { return a * reciprocal(b); }

inline ScalarExpr exp(const ScalarExpr& g) {
  if (g.is_zero()) return ScalarExpr(1);
  return ScalarExpr::from_atom(std::make_shared<const AtomNode>(AtomNode{AtomKind::Exp, "", g}));
}
inline ScalarExpr sin(const ScalarExpr& g) {
  if (g.is_zero()) return ScalarExpr();
  return ScalarExpr::from_atom(std::make_shared<const AtomNode>(AtomNode{AtomKind::Sin, "", g}));
}
inline ScalarExpr cos(const ScalarExpr& g) {
  if (g.is_zero()) return ScalarExpr(1);
  return ScalarExpr::from_atom(std::make_shared<const AtomNode>(AtomNode{AtomKind::Cos, "", g}));
}

/// Canonical form. Construction already canonicalizes, so this is the identity
/// on every value the library hands out; kept as an explicit entry point.
inline ScalarExpr normalize(const ScalarExpr& e) { return ScalarExpr::from_terms(e.terms()); }

ScalarExpr differentiate(const ScalarExpr& e, const std::string& s);

namespace detail {

inline ScalarExpr differentiate_atom(const Atom& a, const std::string& s) {
  switch (a->kind) {
    case AtomKind::Symbol: return a->name == s ? ScalarExpr(1) : ScalarExpr();
    case AtomKind::Exp: return ScalarExpr::from_atom(a) * differentiate(a->arg, s);
    case AtomKind::Sin: return cos(a->arg) * differentiate(a->arg, s);
    case AtomKind::Cos: return -(sin(a->arg) * differentiate(a->arg, s));
    case AtomKind::Inv: return -(ScalarExpr::from_atom(a, 2) * differentiate(a->arg, s));
  }
  return ScalarExpr();
}

}  // namespace detail

inline ScalarExpr differentiate(const ScalarExpr& e, const std::string& s) {
  ScalarExpr out;
  for (const auto& t : e.terms()) {
    for (std::size_t i = 0; i < t.mono.size(); ++i) {
      ScalarExpr da = detail::differentiate_atom(t.mono[i].atom, s);
      if (da.is_zero()) continue;
      Monomial rest;
      for (std::size_t j = 0; j < t.mono.size(); ++j) {
        if (j == i) {
          if (t.mono[j].power != 1) rest.push_back(Factor{t.mono[j].atom, t.mono[j].power - 1});
        } else {
          rest.push_back(t.mono[j]);
        }
      }
      out += ScalarExpr::from_monomial(rest, t.coeff * t.mono[i].power) * da;
    }
  }
  return out;
}

inline void collect_symbols(const ScalarExpr& e, std::set<std::string>& out) {
  for (const auto& t : e.terms())
    for (const auto& f : t.mono) {
      if (f.atom->kind == AtomKind::Symbol)
        out.insert(f.atom->name);
      else
        collect_symbols(f.atom->arg, out);
    }
}

inline std::set<std::string> free_symbols(const ScalarExpr& e) {
  std::set<std::string> s;
  collect_symbols(e, s);
  return s;
}

inline bool has_transcendental(const ScalarExpr& e) {
  for (const auto& t : e.terms())
    for (const auto& f : t.mono) {
      if (f.atom->kind == AtomKind::Exp || f.atom->kind == AtomKind::Sin || f.atom->kind == AtomKind::Cos)
        return true;
      if (f.atom->kind == AtomKind::Inv && has_transcendental(f.atom->arg)) return true;
    }
  return false;
}

/// True when the expression contains reciprocal atoms, whose identities with
/// their denominators are only certified numerically.
inline bool has_reciprocal(const ScalarExpr& e) {
  for (const auto& t : e.terms())
    for (const auto& f : t.mono) {
      if (f.atom->kind == AtomKind::Inv) return true;
      if (f.atom->kind != AtomKind::Symbol && has_reciprocal(f.atom->arg)) return true;
    }
  return false;
}

using Substitution = std::map<std::string, ScalarExpr>;

inline ScalarExpr substitute(const ScalarExpr& e, const Substitution& sub);

namespace detail {

inline ScalarExpr substitute_atom(const Atom& a, const Substitution& sub) {
  switch (a->kind) {
    case AtomKind::Symbol: {
      auto it = sub.find(a->name);
      return it == sub.end() ? ScalarExpr::from_atom(a) : it->second;
    }
    case AtomKind::Exp: return exp(substitute(a->arg, sub));
    case AtomKind::Sin: return sin(substitute(a->arg, sub));
    case AtomKind::Cos: return cos(substitute(a->arg, sub));
    case AtomKind::Inv: return reciprocal(substitute(a->arg, sub));
  }
  return ScalarExpr();
}

}  // namespace detail

inline ScalarExpr substitute(const ScalarExpr& e, const Substitution& sub) {
  if (sub.empty()) return e;
  ScalarExpr out;
  for (const auto& t : e.terms()) {
    ScalarExpr term(t.coeff);
    for (const auto& f : t.mono) term = term * pow(detail::substitute_atom(f.atom, sub), f.power);
    out += term;
  }
  return out;
}

inline ScalarExpr substitute(const ScalarExpr& e, const std::string& s, const ScalarExpr& v) {
  return substitute(e, Substitution{{s, v}});
}

// ---------------------------------------------------------------------------
// Evaluation

using Value = std::variant<Rational, double>;
using Binding = std::map<std::string, Value>;

inline double to_double(const Value& v) {
  return std::holds_alternative<double>(v) ? std::get<double>(v) : std::get<Rational>(v).get_d();
}

inline double ipow(double x, int p) {
  if (p < 0) return 1.0 / ipow(x, -p);
  double r = 1.0;
  while (p > 0) {
    if (p & 1) r *= x;
    x *= x;
    p >>= 1;
  }
  return r;
}

inline double evaluate(const ScalarExpr& e, const std::map<std::string, double>& b);

namespace detail {

inline double evaluate_atom(const Atom& a, const std::map<std::string, double>& b) {
  switch (a->kind) {
    case AtomKind::Symbol: {
      auto it = b.find(a->name);
      if (it == b.end()) throw Error(ErrorCode::UnboundSymbol, a->name);
      return it->second;
    }
    case AtomKind::Exp: return std::exp(evaluate(a->arg, b));
    case AtomKind::Sin: return std::sin(evaluate(a->arg, b));
    case AtomKind::Cos: return std::cos(evaluate(a->arg, b));
    case AtomKind::Inv: return 1.0 / evaluate(a->arg, b);
  }
  return 0.0;
}

}  // namespace detail

inline double evaluate(const ScalarExpr& e, const std::map<std::string, double>& b) {
  double s = 0.0;
  for (const auto& t : e.terms()) {
    double v = t.coeff.get_d();
    for (const auto& f : t.mono) v *= ipow(detail::evaluate_atom(f.atom, b), f.power);
    s += v;
  }
  return s;
}

/// Exact evaluation; nullopt when a transcendental atom is reached.
inline std::optional<Rational> evaluate_exact(const ScalarExpr& e, const std::map<std::string, Rational>& b) {
  Rational s = 0;
  for (const auto& t : e.terms()) {
    Rational v = t.coeff;
    for (const auto& f : t.mono) {
      Rational base;
      switch (f.atom->kind) {
        case AtomKind::Symbol: {
          auto it = b.find(f.atom->name);
          if (it == b.end()) throw Error(ErrorCode::UnboundSymbol, f.atom->name);
          base = it->second;
          break;
        }
        case AtomKind::Inv: {
          auto d = evaluate_exact(f.atom->arg, b);
          if (!d) return std::nullopt;
          if (*d == 0) throw Error(ErrorCode::DivisionByZero, "reciprocal vanishes at evaluation point");
          base = 1 / *d;
          break;
        }
        default: return std::nullopt;
      }
      if (base == 0 && f.power < 0) throw Error(ErrorCode::DivisionByZero, "negative power of zero");
      Rational p = 1;
      const int n = std::abs(f.power);
      for (int k = 0; k < n; ++k) p *= base;
      v *= f.power < 0 ? Rational(1 / p) : p;
    }
    s += v;
  }
  s.canonicalize();
  return s;
}

/// Evaluates on a mixed binding. The result is exact when every symbol the
/// expression uses is bound to a rational and no transcendental atom occurs.
inline Value evaluate(const ScalarExpr& e, const Binding& b) {
  bool exact = !has_transcendental(e);
  for (const auto& s : free_symbols(e)) {
    auto it = b.find(s);
    if (it == b.end()) throw Error(ErrorCode::UnboundSymbol, s);
    if (std::holds_alternative<double>(it->second)) exact = false;
  }
  if (exact) {
    std::map<std::string, Rational> rb;
    for (const auto& [k, v] : b)
      if (std::holds_alternative<Rational>(v)) rb.emplace(k, std::get<Rational>(v));
    if (auto r = evaluate_exact(e, rb)) return *r;
  }
  std::map<std::string, double> db;
  for (const auto& [k, v] : b) db.emplace(k, to_double(v));
  return evaluate(e, db);
}

// ---------------------------------------------------------------------------
// Printing

std::string to_string(const ScalarExpr& e);

namespace detail {

inline std::string factor_string(const Factor& f) {
  std::string base;
  switch (f.atom->kind) {
    case AtomKind::Symbol: base = f.atom->name; break;
    case AtomKind::Exp: base = "exp(" + to_string(f.atom->arg) + ")"; break;
    case AtomKind::Sin: base = "sin(" + to_string(f.atom->arg) + ")"; break;
    case AtomKind::Cos: base = "cos(" + to_string(f.atom->arg) + ")"; break;
    case AtomKind::Inv: return "(" + to_string(f.atom->arg) + ")^" + std::to_string(-f.power);
  }
  if (f.power == 1) return base;
  return base + "^" + std::to_string(f.power);
}

}  // namespace detail

inline std::string to_string(const Rational& q) { return q.get_str(); }

inline std::string to_string(const ScalarExpr& e) {
  if (e.is_zero()) return "0";
  std::string out;
  bool first = true;
  for (const auto& t : e.terms()) {
    std::string body;
    for (const auto& f : t.mono) {
      if (!body.empty()) body += "*";
      body += detail::factor_string(f);
    }
    Rational c = t.coeff;
    const bool negative = c < 0;
    if (negative) c = -c;
    std::string term;
    if (body.empty())
      term = c.get_str();
    else if (c == 1)
      term = body;
    else
      term = c.get_str() + "*" + body;
    if (first)
      out += negative ? "-" + term : term;
    else
      out += negative ? " - " + term : " + " + term;
    first = false;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Compiled evaluation over a fixed variable order, for quadrature and Newton.

class CompiledScalar {
 public:
  CompiledScalar() = default;
  CompiledScalar(const ScalarExpr& e, std::span<const std::string> vars) {
    for (const auto& t : e.terms()) {
      CTerm ct;
      ct.coeff = t.coeff.get_d();
      for (const auto& f : t.mono) {
        CFactor cf;
        cf.kind = f.atom->kind;
        cf.power = f.power;
        if (f.atom->kind == AtomKind::Symbol) {
          auto it = std::find(vars.begin(), vars.end(), f.atom->name);
          if (it == vars.end()) throw Error(ErrorCode::UnboundSymbol, f.atom->name);
          cf.var = static_cast<int>(it - vars.begin());
        } else {
          cf.arg = std::make_shared<CompiledScalar>(f.atom->arg, vars);
        }
        ct.factors.push_back(std::move(cf));
      }
      terms_.push_back(std::move(ct));
    }
  }

  double operator()(std::span<const double> x) const {
    double s = 0.0;
    for (const auto& t : terms_) {
      double v = t.coeff;
      for (const auto& f : t.factors) {
        double b = 0.0;
        switch (f.kind) {
          case AtomKind::Symbol: b = x[static_cast<std::size_t>(f.var)]; break;
          case AtomKind::Exp: b = std::exp((*f.arg)(x)); break;
          case AtomKind::Sin: b = std::sin((*f.arg)(x)); break;
          case AtomKind::Cos: b = std::cos((*f.arg)(x)); break;
          case AtomKind::Inv: b = 1.0 / (*f.arg)(x); break;
        }
        v *= f.power == 1 ? b : ipow(b, f.power);
      }
      s += v;
    }
    return s;
  }

 private:
  struct CFactor {
    AtomKind kind = AtomKind::Symbol;
    int var = -1;
    int power = 1;
    std::shared_ptr<const CompiledScalar> arg;
  };
  struct CTerm {
    double coeff = 0.0;
    std::vector<CFactor> factors;
  };
  std::vector<CTerm> terms_;
};

/// Zero test. Polynomials in symbols are decided exactly; expressions with
/// reciprocal or transcendental atoms are sampled at deterministic
/// pseudo-random points and accepted when every value is below `tol`
/// relative to the size of the individual terms.
inline bool vanishes_identically(const ScalarExpr& e, double tol = 1e-10, int samples = 12) {
  if (e.is_zero()) return true;
  if (!has_reciprocal(e) && !has_transcendental(e)) return false;
  const std::set<std::string> syms = free_symbols(e);
  std::vector<std::string> vars(syms.begin(), syms.end());
  std::vector<CompiledScalar> parts;
  for (const auto& t : e.terms()) parts.emplace_back(ScalarExpr::from_monomial(t.mono, t.coeff), vars);
  std::mt19937_64 rng(0x5eed1234u);
  std::uniform_real_distribution<double> dist(0.35, 1.65);
  std::vector<double> x(vars.size());
  int used = 0;
  for (int attempt = 0; attempt < samples * 4 && used < samples; ++attempt) {
    for (auto& v : x) v = dist(rng);
    double sum = 0.0, scale = 1.0;
    bool finite = true;
    for (const auto& p : parts) {
      const double v = p(x);
      if (!std::isfinite(v)) finite = false;
      sum += v;
      scale = std::max(scale, std::abs(v));
    }
    if (!finite) continue;
    ++used;
    if (std::abs(sum) > tol * scale) return false;
  }
  return used > 0;
}

/// Exact rational nearest to a double (the double's own binary value).
inline Rational exact_rational(double v) {
  Rational q(v);
  q.canonicalize();
  return q;
}

}  // namespace superloc

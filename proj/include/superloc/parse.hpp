#pragma once

// Recursive-descent parser for the plain-text expression grammar
//
//   expr    := term (('+' | '-') term)*
//   term    := unary (('*' | '/') unary)*
//   unary   := '-' unary | power
//   power   := primary ('^' '-'? INTEGER)?
//   primary := NUMBER | IDENT | IDENT '(' expr ')' | '(' expr ')'
//
// The value algebra is supplied by an Ops policy so the same grammar serves
// scalars and superfunctions.

#include <cctype>
#include <string>
#include <string_view>

#include "superloc/error.hpp"
#include "superloc/scalar.hpp"

namespace superloc {

template <class Ops>
class ExpressionParser {
 public:
  using Value = typename Ops::value_type;

  ExpressionParser(std::string_view text, Ops& ops) : text_(text), ops_(ops) {}

  Value parse() {
    Value v = expr();
    skip_ws();
    if (pos_ != text_.size()) fail("unexpected trailing input");
    return v;
  }

 private:
  [[noreturn]] void fail(const std::string& msg) const {
    throw Error(ErrorCode::ParseError, msg + " at offset " + std::to_string(pos_) + " in '" + std::string(text_) + "'");
  }

  void skip_ws() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  bool accept(char c) {
    skip_ws();
    if (pos_ < text_.size() && text_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  Value expr() {
    Value v = term();
    for (;;) {
      if (accept('+'))
        v = ops_.add(v, term());
      else if (accept('-'))
        v = ops_.sub(v, term());
      else
        return v;
    }
  }

  Value term() {
    Value v = unary();
    for (;;) {
      if (accept('*'))
        v = ops_.mul(v, unary());
      else if (accept('/'))
        v = ops_.div(v, unary());
      else
        return v;
    }
  }

  Value unary() {
    if (accept('-')) return ops_.neg(unary());
    if (accept('+')) return unary();
    return power();
  }

  Value power() {
    Value base = primary();
    if (accept('^')) {
      skip_ws();
      bool negative = false;
      if (pos_ < text_.size() && text_[pos_] == '-') {
        negative = true;
        ++pos_;
      }
      skip_ws();
      const std::size_t start = pos_;
      while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) ++pos_;
      if (start == pos_) fail("expected integer exponent");
      int n = std::stoi(std::string(text_.substr(start, pos_ - start)));
      return ops_.pow(base, negative ? -n : n);
    }
    return base;
  }

  Rational number() {
    const std::size_t start = pos_;
    while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    std::string digits(text_.substr(start, pos_ - start));
    Rational value(digits.empty() ? "0" : digits);
    if (pos_ < text_.size() && text_[pos_] == '.') {
      ++pos_;
      const std::size_t fs = pos_;
      while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) ++pos_;
      std::string frac(text_.substr(fs, pos_ - fs));
      if (!frac.empty()) {
        mpz_class den = 1;
        for (std::size_t i = 0; i < frac.size(); ++i) den *= 10;
        value += Rational(mpz_class(frac), den);
      }
    }
    if (pos_ + 1 < text_.size() && (text_[pos_] == 'e' || text_[pos_] == 'E')) {
      std::size_t p = pos_ + 1;
      bool neg = false;
      if (text_[p] == '+' || text_[p] == '-') {
        neg = text_[p] == '-';
        ++p;
      }
      if (p < text_.size() && std::isdigit(static_cast<unsigned char>(text_[p]))) {
        pos_ = p;
        const std::size_t es = pos_;
        while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) ++pos_;
        int ex = std::stoi(std::string(text_.substr(es, pos_ - es)));
        mpz_class scale = 1;
        for (int i = 0; i < ex; ++i) scale *= 10;
        value = neg ? Rational(value / scale) : Rational(value * scale);
      }
    }
    value.canonicalize();
    return value;
  }

  Value primary() {
    skip_ws();
    if (pos_ >= text_.size()) fail("unexpected end of input");
    const char c = text_[pos_];
    if (c == '(') {
      ++pos_;
      Value v = expr();
      if (!accept(')')) fail("expected ')'");
      return v;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return ops_.number(number());
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      const std::size_t start = pos_;
      while (pos_ < text_.size() &&
             (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_'))
        ++pos_;
      std::string name(text_.substr(start, pos_ - start));
      if (accept('(')) {
        Value arg = expr();
        if (!accept(')')) fail("expected ')' after function argument");
        return ops_.call(name, arg);
      }
      return ops_.identifier(name);
    }
    fail(std::string("unexpected character '") + c + "'");
  }

  std::string_view text_;
  Ops& ops_;
  std::size_t pos_ = 0;
};

struct ScalarOps {
  using value_type = ScalarExpr;
  ScalarExpr number(const Rational& q) const { return ScalarExpr(q); }
  ScalarExpr identifier(const std::string& name) const { return ScalarExpr::symbol(name); }
  ScalarExpr call(const std::string& fn, const ScalarExpr& arg) const {
    if (fn == "exp") return exp(arg);
    if (fn == "sin") return sin(arg);
    if (fn == "cos") return cos(arg);
    throw Error(ErrorCode::ParseError, "unknown function '" + fn + "'");
  }
  ScalarExpr add(const ScalarExpr& a, const ScalarExpr& b) const { return a + b; }
  ScalarExpr sub(const ScalarExpr& a, const ScalarExpr& b) const { return a - b; }
  ScalarExpr mul(const ScalarExpr& a, const ScalarExpr& b) const { return a * b; }
  ScalarExpr div(const ScalarExpr& a, const ScalarExpr& b) const { return a / b; }
  ScalarExpr neg(const ScalarExpr& a) const { return -a; }
  ScalarExpr pow(const ScalarExpr& a, int n) const { return superloc::pow(a, n); }
};

inline ScalarExpr parse_scalar(std::string_view text) {
  ScalarOps ops;
  return ExpressionParser<ScalarOps>(text, ops).parse();
}

}  // namespace superloc

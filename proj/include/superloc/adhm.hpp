#pragma once

// ADHM data (B1, B2, I, J), the real and complex constraints, the action of
// U(k) x U(N) x T^2, and the BRST fields of the ADHM supermanifold with and
// without the Lagrange-multiplier sector.
//
// Conventions: I is k x N and J is N x k, so that phi I - I a and
// -J phi + a J are defined. Complex entries are flattened to real
// coordinates X_i_j_re, X_i_j_im (1-based); hermitian blocks keep a real
// diagonal X_i_i and the upper triangle. Lie parameters are real symbols:
// phi = i diag(phi_1..phi_k), a = i diag(a_1..a_N), eps_l = i e_l.

#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "superloc/equivariant.hpp"
#include "superloc/linalg.hpp"
#include "superloc/localization.hpp"
#include "superloc/super.hpp"

namespace superloc {

template <class T>
struct Complex {
  T re{0};
  T im{0};

  Complex() = default;
  Complex(int v) : re(v), im(0) {}  // NOLINT(google-explicit-constructor)
  Complex(T r) : re(std::move(r)), im(0) {}  // NOLINT(google-explicit-constructor)
  Complex(T r, T i) : re(std::move(r)), im(std::move(i)) {}
};

template <class T>
bool is_zero_value(const Complex<T>& z) {
  return is_zero_value(z.re) && is_zero_value(z.im);
}

template <class T>
bool operator==(const Complex<T>& a, const Complex<T>& b) {
  return a.re == b.re && a.im == b.im;
}

template <class T>
Complex<T> operator+(const Complex<T>& a, const Complex<T>& b) {
  return {T(a.re + b.re), T(a.im + b.im)};
}
template <class T>
Complex<T> operator-(const Complex<T>& a, const Complex<T>& b) {
  return {T(a.re - b.re), T(a.im - b.im)};
}
template <class T>
Complex<T> operator-(const Complex<T>& a) {
  return {T(-a.re), T(-a.im)};
}
template <class T>
Complex<T> operator*(const Complex<T>& a, const Complex<T>& b) {
  return {T(a.re * b.re - a.im * b.im), T(a.re * b.im + a.im * b.re)};
}
template <class T>
Complex<T> conj(const Complex<T>& a) {
  return {a.re, T(-a.im)};
}
template <class T>
T norm2(const Complex<T>& a) {
  return T(a.re * a.re + a.im * a.im);
}
template <class T>
Complex<T> operator/(const Complex<T>& a, const Complex<T>& b) {
  const T d = norm2(b);
  if (is_zero_value(d)) throw Error(ErrorCode::DivisionByZero, "complex division by zero");
  const Complex<T> n = a * conj(b);
  if constexpr (std::is_same_v<T, ScalarExpr>) {
    const ScalarExpr inv = reciprocal(d);
    return {n.re * inv, n.im * inv};
  } else {
    return {T(n.re / d), T(n.im / d)};
  }
}

template <class T>
using CMatrix = Matrix<Complex<T>>;

template <class T>
CMatrix<T> dagger(const CMatrix<T>& a) {
  CMatrix<T> out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = conj(a(i, j));
  return out;
}

template <class T>
CMatrix<T> commutator(const CMatrix<T>& a, const CMatrix<T>& b) {
  return a * b - b * a;
}

template <class T>
CMatrix<T> cscale(const CMatrix<T>& a, const Complex<T>& s) {
  return a.map([&](const Complex<T>& z) { return Complex<T>(s * z); });
}

/// Frobenius norm squared, tr(A A^dagger).
template <class T>
T frobenius2(const CMatrix<T>& a) {
  T s(0);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) s = s + norm2(a(i, j));
  return s;
}

/// Inverse over a field by Gauss-Jordan.
template <class T>
CMatrix<T> cinverse(CMatrix<T> a) {
  const std::size_t n = a.rows();
  CMatrix<T> inv = CMatrix<T>::identity(n);
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = n;
    for (std::size_t r = c; r < n; ++r)
      if (!is_zero_value(a(r, c))) {
        piv = r;
        break;
      }
    if (piv == n) throw Error(ErrorCode::SingularLinearization, "singular complex matrix");
    for (std::size_t j = 0; j < n; ++j) {
      std::swap(a(c, j), a(piv, j));
      std::swap(inv(c, j), inv(piv, j));
    }
    const Complex<T> p = a(c, c);
    for (std::size_t j = 0; j < n; ++j) {
      a(c, j) = a(c, j) / p;
      inv(c, j) = inv(c, j) / p;
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (r == c || is_zero_value(a(r, c))) continue;
      const Complex<T> f = a(r, c);
      for (std::size_t j = 0; j < n; ++j) {
        a(r, j) = a(r, j) - f * a(c, j);
        inv(r, j) = inv(r, j) - f * inv(c, j);
      }
    }
  }
  return inv;
}

// ---------------------------------------------------------------------------
// Data, constraints, group action

template <class T>
struct ADHMData {
  std::size_t k = 0, N = 0;
  CMatrix<T> B1, B2, I, J;  // k x k, k x k, k x N, N x k

  static ADHMData zero(std::size_t k, std::size_t N) {
    return ADHMData{k, N, CMatrix<T>(k, k), CMatrix<T>(k, k), CMatrix<T>(k, N), CMatrix<T>(N, k)};
  }

  void validate() const {
    auto chk = [](const CMatrix<T>& m, std::size_t r, std::size_t c, const char* what) {
      if (m.rows() != r || m.cols() != c)
        throw Error(ErrorCode::ShapeMismatch, std::string("ADHM block ") + what + " has the wrong shape");
    };
    chk(B1, k, k, "B1");
    chk(B2, k, k, "B2");
    chk(I, k, N, "I");
    chk(J, N, k, "J");
  }
};

/// [B1,B1^dag] + [B2,B2^dag] + I I^dag - J^dag J.
template <class T>
CMatrix<T> constraint_real(const ADHMData<T>& d) {
  d.validate();
  return commutator(d.B1, dagger(d.B1)) + commutator(d.B2, dagger(d.B2)) + d.I * dagger(d.I) - dagger(d.J) * d.J;
}

/// [B1,B2] + I J.
template <class T>
CMatrix<T> constraint_complex(const ADHMData<T>& d) {
  d.validate();
  return commutator(d.B1, d.B2) + d.I * d.J;
}

/// Element of U(k) x U(N) x T^2; t1, t2 are unit complex numbers.
template <class T>
struct ADHMGroupElement {
  CMatrix<T> U;  // k x k
  CMatrix<T> V;  // N x N
  Complex<T> t1{1}, t2{1};
};

template <class T>
bool is_unitary(const CMatrix<T>& u, double tol = 1e-12) {
  CMatrix<T> p = u * dagger(u) - CMatrix<T>::identity(u.rows());
  for (std::size_t i = 0; i < p.rows(); ++i)
    for (std::size_t j = 0; j < p.cols(); ++j) {
      if constexpr (std::is_same_v<T, double>) {
        if (std::abs(p(i, j).re) > tol || std::abs(p(i, j).im) > tol) return false;
      } else {
        if (!is_zero_value(p(i, j))) return false;
      }
    }
  return true;
}

/// (B_l, I, J) -> (t_l U B_l U^dag, U I V^dag, t1 t2 V J U^dag).
template <class T>
ADHMData<T> group_act(const ADHMGroupElement<T>& g, const ADHMData<T>& d) {
  d.validate();
  if (g.U.rows() != d.k || g.V.rows() != d.N) throw Error(ErrorCode::ShapeMismatch, "group element shapes");
  CMatrix<T> t1(1, 1), t2(1, 1);
  t1(0, 0) = g.t1;
  t2(0, 0) = g.t2;
  if (!is_unitary(g.U) || !is_unitary(g.V) || !is_unitary(t1) || !is_unitary(t2))
    throw Error(ErrorCode::NotUnitary, "group element is not unitary");
  const CMatrix<T> Ud = dagger(g.U), Vd = dagger(g.V);
  ADHMData<T> out = d;
  out.B1 = cscale(CMatrix<T>(g.U * d.B1 * Ud), g.t1);
  out.B2 = cscale(CMatrix<T>(g.U * d.B2 * Ud), g.t2);
  out.I = g.U * d.I * Vd;
  out.J = cscale(CMatrix<T>(g.V * d.J * Ud), Complex<T>(g.t1 * g.t2));
  return out;
}

/// Cayley transform (1 - A)(1 + A)^{-1} of an anti-hermitian A: exactly unitary.
template <class T>
CMatrix<T> cayley(const CMatrix<T>& A) {
  const std::size_t n = A.rows();
  CMatrix<T> id = CMatrix<T>::identity(n);
  return (id - A) * cinverse(CMatrix<T>(id + A));
}

/// Rational point (1 - s^2 + 2 i s)/(1 + s^2) of the unit circle.
inline Complex<Rational> circle_point(const Rational& s) {
  Rational d = 1 + s * s;
  Rational re = (1 - s * s) / d, im = (2 * s) / d;
  re.canonicalize();
  im.canonicalize();
  return {re, im};
}

// ---------------------------------------------------------------------------
// The flattened ADHM supermanifold

enum class Block { B1, B2, I, J, HR, HC, Phibar };

struct Slot {
  Block block;
  std::size_t i, j;  // 0-based entry
  bool imag;
};

inline std::string block_name(Block b, bool odd) {
  switch (b) {
    case Block::B1: return odd ? "M1" : "B1";
    case Block::B2: return odd ? "M2" : "B2";
    case Block::I: return odd ? "muI" : "I";
    case Block::J: return odd ? "muJ" : "J";
    case Block::HR: return odd ? "chiR" : "HR";
    case Block::HC: return odd ? "chiC" : "HC";
    case Block::Phibar: return odd ? "eta" : "phib";
  }
  return "?";
}

inline bool hermitian_block(Block b) { return b == Block::HR; }

struct ADHMOptions {
  bool multipliers = false;  // include (H_R, H_C, phibar | chi_R, chi_C, eta)
  bool cartan = true;        // diagonal phi and a
};

/// Coordinates, Lie parameters and symbol matrices of the flattened chart.
/// The odd coordinate with the same index as an even one is its partner.
class ADHMChart {
 public:
  ADHMChart(std::size_t k, std::size_t N, ADHMOptions opt = {}) : k_(k), N_(N), opt_(opt) {
    if (k == 0 || N == 0) throw Error(ErrorCode::ShapeMismatch, "k and N must be positive");
    std::vector<Block> blocks{Block::B1, Block::B2, Block::I, Block::J};
    if (opt.multipliers) blocks.insert(blocks.end(), {Block::HR, Block::HC, Block::Phibar});
    std::vector<std::string> even, odd;
    for (Block b : blocks) {
      auto [r, c] = shape(b);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) {
          if (hermitian_block(b)) {
            if (j < i) continue;
            if (i == j) {
              add(b, i, j, false, even, odd, "");
              continue;
            }
          }
          add(b, i, j, false, even, odd, "_re");
          add(b, i, j, true, even, odd, "_im");
        }
    }
    chart_ = SuperChart::make(even, odd);
    for (std::size_t j = 1; j <= k; ++j) params_.push_back("phi_" + std::to_string(j));
    if (!opt.cartan)
      for (std::size_t j = 1; j <= k; ++j)
        for (std::size_t l = j + 1; l <= k; ++l) {
          params_.push_back("phi_" + std::to_string(j) + "_" + std::to_string(l) + "_re");
          params_.push_back("phi_" + std::to_string(j) + "_" + std::to_string(l) + "_im");
        }
    for (std::size_t j = 1; j <= N; ++j) params_.push_back("a_" + std::to_string(j));
    if (!opt.cartan)
      for (std::size_t j = 1; j <= N; ++j)
        for (std::size_t l = j + 1; l <= N; ++l) {
          params_.push_back("a_" + std::to_string(j) + "_" + std::to_string(l) + "_re");
          params_.push_back("a_" + std::to_string(j) + "_" + std::to_string(l) + "_im");
        }
    params_.push_back("e1");
    params_.push_back("e2");
  }

  std::size_t k() const { return k_; }
  std::size_t N() const { return N_; }
  const ADHMOptions& options() const { return opt_; }
  const ChartPtr& chart() const { return chart_; }
  const std::vector<Slot>& slots() const { return slots_; }
  const std::vector<std::string>& params() const { return params_; }

  std::pair<std::size_t, std::size_t> shape(Block b) const {
    switch (b) {
      case Block::I: return {k_, N_};
      case Block::J: return {N_, k_};
      default: return {k_, k_};
    }
  }

  /// Complex matrix of even coordinate symbols (odd names when `odd`, used
  /// as placeholders for expressions linear in the generators).
  CMatrix<ScalarExpr> matrix(Block b, bool odd = false) const {
    auto [r, c] = shape(b);
    CMatrix<ScalarExpr> m(r, c);
    const auto& names = odd ? chart_->odd : chart_->even;
    for (std::size_t s = 0; s < slots_.size(); ++s) {
      const Slot& sl = slots_[s];
      if (sl.block != b) continue;
      const ScalarExpr sym = ScalarExpr::symbol(names[s]);
      if (sl.imag)
        m(sl.i, sl.j).im = sym;
      else
        m(sl.i, sl.j).re = sym;
    }
    if (hermitian_block(b))
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < i; ++j) m(i, j) = conj(m(j, i));
    return m;
  }

  ADHMData<ScalarExpr> data(bool odd = false) const {
    return ADHMData<ScalarExpr>{k_, N_, matrix(Block::B1, odd), matrix(Block::B2, odd), matrix(Block::I, odd),
                                matrix(Block::J, odd)};
  }

  CMatrix<ScalarExpr> phi() const { return lie_matrix("phi", k_); }
  CMatrix<ScalarExpr> a() const { return lie_matrix("a", N_); }
  Complex<ScalarExpr> eps1() const { return {ScalarExpr(0), ScalarExpr::symbol("e1")}; }
  Complex<ScalarExpr> eps2() const { return {ScalarExpr(0), ScalarExpr::symbol("e2")}; }
  Complex<ScalarExpr> eps() const { return eps1() + eps2(); }

  /// Reads the coordinate components of per-block complex matrices.
  std::vector<ScalarExpr> flatten(const std::map<Block, CMatrix<ScalarExpr>>& blocks) const {
    std::vector<ScalarExpr> out(slots_.size());
    for (std::size_t s = 0; s < slots_.size(); ++s) {
      const Slot& sl = slots_[s];
      auto it = blocks.find(sl.block);
      if (it == blocks.end()) continue;
      const Complex<ScalarExpr>& z = it->second(sl.i, sl.j);
      out[s] = sl.imag ? z.im : z.re;
    }
    return out;
  }

  /// Even coordinate index of an entry.
  std::size_t index(Block b, std::size_t i, std::size_t j, bool imag) const {
    for (std::size_t s = 0; s < slots_.size(); ++s)
      if (slots_[s].block == b && slots_[s].i == i && slots_[s].j == j && slots_[s].imag == imag) return s;
    throw Error(ErrorCode::IndexOutOfRange, "no such ADHM coordinate");
  }

 private:
  void add(Block b, std::size_t i, std::size_t j, bool imag, std::vector<std::string>& even,
           std::vector<std::string>& odd, const std::string& suffix) {
    const std::string idx = "_" + std::to_string(i + 1) + "_" + std::to_string(j + 1) + suffix;
    even.push_back(block_name(b, false) + idx);
    odd.push_back(block_name(b, true) + idx);
    slots_.push_back(Slot{b, i, j, imag});
  }

  CMatrix<ScalarExpr> lie_matrix(const std::string& base, std::size_t n) const {
    CMatrix<ScalarExpr> m(n, n);
    for (std::size_t j = 0; j < n; ++j) m(j, j).im = ScalarExpr::symbol(base + "_" + std::to_string(j + 1));
    if (!opt_.cartan)
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t l = j + 1; l < n; ++l) {
          const std::string p = base + "_" + std::to_string(j + 1) + "_" + std::to_string(l + 1);
          m(j, l) = Complex<ScalarExpr>(ScalarExpr::symbol(p + "_re"), ScalarExpr::symbol(p + "_im"));
          m(l, j) = -conj(m(j, l));
        }
    return m;
  }

  std::size_t k_, N_;
  ADHMOptions opt_;
  ChartPtr chart_;
  std::vector<Slot> slots_;
  std::vector<std::string> params_;
};

/// Converts an expression linear in the odd names (used as placeholder
/// symbols) into a grade-1 superfunction.
inline SuperFunction odd_linear(const ScalarExpr& e, const ChartPtr& chart) {
  SuperFunction out(chart);
  ScalarExpr rest = e;
  for (std::size_t a = 0; a < chart->n(); ++a) {
    ScalarExpr c = differentiate(e, chart->odd[a]);
    if (c.is_zero()) continue;
    out.add_term(bit(a), c);
    rest = rest - c * ScalarExpr::symbol(chart->odd[a]);
  }
  if (!rest.is_zero()) throw Error(ErrorCode::NotLinearInTheta, "expression is not linear in the odd generators");
  return out;
}

enum class LiftVariant { Corrected, Literal };

/// Per-block infinitesimal action at the Lie parameters of the chart, applied
/// to the even symbols (odd = false) or to the odd placeholders.
inline std::map<Block, CMatrix<ScalarExpr>> adhm_action(const ADHMChart& c, bool odd,
                                                        LiftVariant variant = LiftVariant::Corrected) {
  const auto phi = c.phi(), a = c.a();
  const auto e1 = c.eps1(), e2 = c.eps2(), e = c.eps();
  const auto d = c.data(odd);
  std::map<Block, CMatrix<ScalarExpr>> out;
  out[Block::B1] = commutator(phi, d.B1) + cscale(d.B1, e1);
  out[Block::B2] = commutator(phi, d.B2) + cscale(d.B2, e2);
  out[Block::I] = phi * d.I - d.I * a;
  out[Block::J] = CMatrix<ScalarExpr>(a * d.J - d.J * phi) + cscale(d.J, e);
  if (c.options().multipliers) {
    const auto hr = c.matrix(Block::HR, odd), hc = c.matrix(Block::HC, odd), pb = c.matrix(Block::Phibar, odd);
    const auto hc_rot = commutator(phi, hc) + cscale(hc, e);
    out[Block::HR] = commutator(phi, hr);
    out[Block::Phibar] = commutator(phi, pb);
    if (variant == LiftVariant::Corrected) {
      out[Block::HC] = hc_rot;
    } else {
      out[Block::HR] = out[Block::HR] + hc_rot;
      out[Block::HC] = CMatrix<ScalarExpr>(c.k(), c.k());
    }
  }
  return out;
}

/// The action spec of the chart: T from the base action, U from the action
/// on the odd partners.
inline ActionSpec adhm_action_spec(const ADHMChart& c, LiftVariant variant = LiftVariant::Corrected) {
  const auto base = c.flatten(adhm_action(c, false, variant));
  const auto fib = c.flatten(adhm_action(c, true, variant));
  ActionSpec spec;
  spec.chart = c.chart();
  spec.params = c.params();
  const std::size_t n = c.chart()->n();
  for (const auto& p : spec.params) {
    std::vector<ScalarExpr> row;
    for (const auto& comp : base) row.push_back(differentiate(comp, p));
    spec.T.push_back(row);
    Matrix<ScalarExpr> u(n, n);
    for (std::size_t A = 0; A < n; ++A) {
      ScalarExpr dp = differentiate(fib[A], p);
      if (dp.is_zero()) continue;
      for (std::size_t B = 0; B < n; ++B) u(B, A) = differentiate(dp, c.chart()->odd[B]);
    }
    spec.U.push_back(u);
  }
  return spec;
}

/// xi* on the flattened chart (purely base, even).
inline SuperVectorField adhm_fundamental_field(const ADHMChart& c) {
  const auto base = c.flatten(adhm_action(c, false));
  SuperVectorField x(c.chart(), 0);
  for (std::size_t i = 0; i < base.size(); ++i) x.a(i) = SuperFunction(c.chart(), base[i]);
  return x;
}

/// Q = mu_I d/dI + mu_J d/dJ + M_l d/dB_l + (phi I - I a) d/dmu_I + ... on
/// the matter chart.
inline SuperVectorField adhm_Q_unconstrained(const ADHMChart& c) {
  if (c.options().multipliers)
    throw Error(ErrorCode::ShapeMismatch, "unconstrained Q lives on the chart without multipliers");
  const auto base = c.flatten(adhm_action(c, false));
  SuperVectorField q(c.chart(), 1);
  for (std::size_t i = 0; i < base.size(); ++i) {
    q.a(i) = SuperFunction::generator(c.chart(), i);
    q.b(i) = SuperFunction(c.chart(), base[i]);
  }
  return q;
}

/// The field with the multiplier sector: Q(H_R) = [phi, chi_R],
/// Q(H_C) = [phi, chi_C] + eps chi_C, Q(phibar) = eta, Q(chi) = H,
/// Q(eta) = [phi, phibar].
inline SuperVectorField adhm_Q_full(const ADHMChart& c) {
  if (!c.options().multipliers) throw Error(ErrorCode::ShapeMismatch, "full Q needs the multiplier chart");
  const auto phi = c.phi();
  const auto e = c.eps();
  const auto base = c.flatten(adhm_action(c, false));
  std::map<Block, CMatrix<ScalarExpr>> odd_targets;
  odd_targets[Block::HR] = commutator(phi, c.matrix(Block::HR, true));
  odd_targets[Block::HC] = commutator(phi, c.matrix(Block::HC, true)) + cscale(c.matrix(Block::HC, true), e);
  odd_targets[Block::Phibar] = c.matrix(Block::Phibar, true);
  const auto a_mult = c.flatten(odd_targets);
  std::map<Block, CMatrix<ScalarExpr>> even_targets;
  even_targets[Block::HR] = c.matrix(Block::HR);
  even_targets[Block::HC] = c.matrix(Block::HC);
  even_targets[Block::Phibar] = commutator(phi, c.matrix(Block::Phibar));
  const auto b_mult = c.flatten(even_targets);
  SuperVectorField q(c.chart(), 1);
  for (std::size_t i = 0; i < c.slots().size(); ++i) {
    const Block b = c.slots()[i].block;
    const bool matter = b == Block::B1 || b == Block::B2 || b == Block::I || b == Block::J;
    if (matter) {
      q.a(i) = SuperFunction::generator(c.chart(), i);
      q.b(i) = SuperFunction(c.chart(), base[i]);
    } else {
      q.a(i) = odd_linear(a_mult[i], c.chart());
      q.b(i) = SuperFunction(c.chart(), b_mult[i]);
    }
  }
  return q;
}

// ---------------------------------------------------------------------------
// Constraints as functions on the chart

/// Flattened real and complex constraints: the hermitian real constraint
/// contributes its diagonal and upper triangle, the complex one every entry.
struct ADHMConstraints {
  std::vector<ScalarExpr> V;
  std::vector<std::string> labels;
};

inline ADHMConstraints adhm_constraints(const ADHMChart& c) {
  const auto d = c.data();
  const auto cr = constraint_real(d), cc = constraint_complex(d);
  ADHMConstraints out;
  const std::size_t k = c.k();
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = i; j < k; ++j) {
      const std::string idx = "_" + std::to_string(i + 1) + "_" + std::to_string(j + 1);
      if (i == j) {
        out.V.push_back(cr(i, i).re);
        out.labels.push_back("VR" + idx);
      } else {
        out.V.push_back(cr(i, j).re);
        out.labels.push_back("VR" + idx + "_re");
        out.V.push_back(cr(i, j).im);
        out.labels.push_back("VR" + idx + "_im");
      }
    }
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      const std::string idx = "_" + std::to_string(i + 1) + "_" + std::to_string(j + 1);
      out.V.push_back(cc(i, j).re);
      out.labels.push_back("VC" + idx + "_re");
      out.V.push_back(cc(i, j).im);
      out.labels.push_back("VC" + idx + "_im");
    }
  return out;
}

/// W_a = (dV_a/dx^k) theta^k on a tautological pairing of theta with x.
inline std::vector<SuperFunction> fermionic_constraints(const std::vector<ScalarExpr>& V, const ChartPtr& chart) {
  std::vector<SuperFunction> out;
  for (const auto& v : V) {
    SuperFunction w(chart);
    for (std::size_t k = 0; k < chart->m() && k < chart->n(); ++k) w.add_term(bit(k), differentiate(v, chart->even[k]));
    out.push_back(w);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Multiplier completion

struct MultiplierReport {
  Matrix<ScalarExpr> N;               // N(a, b) = d Ttilde^b / d H^a
  std::vector<ScalarExpr> residual;   // sum_b N(a,b) V_b + dV_a/dx^k xi*^k
  bool residual_vanishes = false;
  ScalarExpr det;
  bool invertible = false;
  std::string detail;
};

/// V: constraints on the base; xi_star: base components of xi*;
/// Ttilde: xi^alpha Ttilde_alpha^a, one expression per multiplier H^a;
/// H: the multiplier coordinate names, paired with V in order.
inline MultiplierReport multiplier_completion(const std::vector<ScalarExpr>& V, const std::vector<ScalarExpr>& xi_star,
                                              const std::vector<std::string>& base_vars,
                                              const std::vector<ScalarExpr>& Ttilde,
                                              const std::vector<std::string>& H, const Point& params = {}) {
  const std::size_t r = H.size();
  if (V.size() != r || Ttilde.size() != r)
    throw Error(ErrorCode::DimensionMismatch, "one constraint and one Ttilde component per multiplier");
  MultiplierReport rep;
  rep.N = Matrix<ScalarExpr>(r, r);
  for (std::size_t a = 0; a < r; ++a)
    for (std::size_t b = 0; b < r; ++b) {
      rep.N(a, b) = differentiate(Ttilde[b], H[a]);
      for (const auto& h : H)
        if (!differentiate(rep.N(a, b), h).is_zero())
          throw Error(ErrorCode::NonlinearTtilde, "Ttilde is not linear in the multipliers");
    }
  for (std::size_t b = 0; b < r; ++b) {
    Substitution zero;
    for (const auto& h : H) zero[h] = ScalarExpr(0);
    if (!substitute(Ttilde[b], zero).is_zero())
      throw Error(ErrorCode::NonlinearTtilde, "Ttilde has a part independent of the multipliers");
  }
  rep.residual_vanishes = true;
  for (std::size_t a = 0; a < r; ++a) {
    ScalarExpr s;
    for (std::size_t b = 0; b < r; ++b) s += rep.N(a, b) * V[b];
    for (std::size_t k = 0; k < base_vars.size(); ++k) s += differentiate(V[a], base_vars[k]) * xi_star[k];
    rep.residual.push_back(s);
    if (!vanishes_identically(s)) rep.residual_vanishes = false;
  }
  rep.det = determinant(rep.N);
  rep.invertible = !rep.det.is_zero() && !vanishes_identically(rep.det);
  if (rep.invertible && !params.empty()) {
    const double v = numeric_value(rep.det, params);
    if (std::isfinite(v) && std::abs(v) < 1e-12) rep.invertible = false;
  }
  std::ostringstream os;
  os << "det N = " << to_string(rep.det) << (rep.invertible ? " (invertible)" : " (not invertible)");
  rep.detail = os.str();
  return rep;
}

/// The multiplier data of the ADHM chart: pairs H_R with the real
/// constraint and H_C with the complex one.
struct ADHMMultiplierSystem {
  std::vector<ScalarExpr> V, xi_star, Ttilde;
  std::vector<std::string> base_vars, H;
};

inline ADHMMultiplierSystem adhm_multiplier_system(const ADHMChart& c, bool include_real = true,
                                                   bool include_complex = true) {
  if (!c.options().multipliers) throw Error(ErrorCode::ShapeMismatch, "multiplier system needs the multiplier chart");
  ADHMMultiplierSystem s;
  const auto cons = adhm_constraints(c);
  const auto action = c.flatten(adhm_action(c, false));
  const auto& even = c.chart()->even;
  for (std::size_t i = 0; i < c.slots().size(); ++i) {
    const Block b = c.slots()[i].block;
    if (b == Block::B1 || b == Block::B2 || b == Block::I || b == Block::J) {
      s.base_vars.push_back(even[i]);
      s.xi_star.push_back(action[i]);
    }
  }
  std::size_t vi = 0;
  for (std::size_t i = 0; i < c.slots().size(); ++i) {
    const Block b = c.slots()[i].block;
    if (b != Block::HR && b != Block::HC) continue;
    const bool take = (b == Block::HR && include_real) || (b == Block::HC && include_complex);
    if (take) {
      s.H.push_back(even[i]);
      s.Ttilde.push_back(action[i]);
      s.V.push_back(cons.V[vi]);
    }
    ++vi;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Fixed points at k = 1 and bookkeeping

struct ADHMFixedPoint {
  std::size_t l = 0;           // I is supported on framing direction l
  ScalarExpr phi;              // compensating U(1) parameter, phi = a_l
  Substitution coords;         // exact coordinates on the matter chart
  std::vector<ScalarExpr> weights;  // tangent weights
};

/// Tangent weights at the k = 1 fixed point labelled l:
/// e1, e2 and, for every m != l, a_l - a_m and a_m - a_l + e1 + e2.
inline std::vector<ScalarExpr> adhm_k1_weights(std::size_t N, std::size_t l) {
  const ScalarExpr e1 = ScalarExpr::symbol("e1"), e2 = ScalarExpr::symbol("e2");
  std::vector<ScalarExpr> w{e1, e2};
  const ScalarExpr al = ScalarExpr::symbol("a_" + std::to_string(l + 1));
  for (std::size_t m = 0; m < N; ++m) {
    if (m == l) continue;
    const ScalarExpr am = ScalarExpr::symbol("a_" + std::to_string(m + 1));
    w.push_back(al - am);
    w.push_back(am - al + e1 + e2);
  }
  return w;
}

/// Rank of the infinitesimal U(k) action at the data; trivial stabilizer
/// means rank k^2.
inline std::size_t stabilizer_dimension(const ADHMChart& c, const Substitution& point) {
  const std::size_t k = c.k();
  // Columns: the action of the basis of u(k) (i E_jj, E_jl - E_lj, i(E_jl + E_lj)).
  std::vector<CMatrix<Rational>> basis;
  for (std::size_t j = 0; j < k; ++j) {
    CMatrix<Rational> m(k, k);
    m(j, j) = Complex<Rational>(Rational(0), Rational(1));
    basis.push_back(m);
    for (std::size_t l = j + 1; l < k; ++l) {
      CMatrix<Rational> r(k, k), s(k, k);
      r(j, l) = 1;
      r(l, j) = -1;
      s(j, l) = Complex<Rational>(Rational(0), Rational(1));
      s(l, j) = Complex<Rational>(Rational(0), Rational(1));
      basis.push_back(r);
      basis.push_back(s);
    }
  }
  auto eval = [&](const CMatrix<ScalarExpr>& m) {
    return m.map([&](const Complex<ScalarExpr>& z) {
      auto re = substitute(z.re, point).constant_value(), im = substitute(z.im, point).constant_value();
      if (!re || !im) throw Error(ErrorCode::UnboundSymbol, "stabilizer check needs exact numeric data");
      return Complex<Rational>(*re, *im);
    });
  };
  const auto d = c.data();
  const auto B1 = eval(d.B1), B2 = eval(d.B2), I = eval(d.I), J = eval(d.J);
  std::vector<std::vector<Rational>> cols;
  for (const auto& x : basis) {
    std::vector<Rational> col;
    auto push = [&](const CMatrix<Rational>& m) {
      for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) {
          col.push_back(m(i, j).re);
          col.push_back(m(i, j).im);
        }
    };
    push(commutator(x, B1));
    push(commutator(x, B2));
    push(x * I);
    push(CMatrix<Rational>(CMatrix<Rational>(c.N(), k) - J * x));
    cols.push_back(col);
  }
  Matrix<Rational> m(cols.front().size(), cols.size());
  for (std::size_t j = 0; j < cols.size(); ++j)
    for (std::size_t i = 0; i < cols[j].size(); ++i) m(i, j) = cols[j][i];
  return basis.size() - rank(m);
}

inline void require_trivial_stabilizer(const ADHMChart& c, const Substitution& point) {
  if (stabilizer_dimension(c, point) != 0)
    throw Error(ErrorCode::StabilizerNotTrivial, "data has a nontrivial U(k) stabilizer");
}

/// Fixed points of the T^2 x U(N) Cartan action on the k = 1 moduli space
/// with real moment-map level zeta (a positive rational square). The
/// compensating phi makes the weight of one I-entry vanish; solving the
/// linear equations xi* = 0 with that phi and imposing the constraints
/// leaves I = sqrt(zeta) e_l and all other data zero.
inline std::vector<ADHMFixedPoint> adhm_k1_fixed_points(const ADHMChart& c, const Point& params,
                                                        const Rational& zeta = 1) {
  if (c.k() != 1) throw Error(ErrorCode::ShapeMismatch, "k = 1 fixed-point solver");
  if (c.options().multipliers) throw Error(ErrorCode::ShapeMismatch, "use the matter chart");
  auto root = exact_sqrt(zeta);
  if (!root || zeta <= 0) throw Error(ErrorCode::AssumptionViolated, "zeta must be a positive rational square");
  const std::size_t N = c.N();
  const auto& even = c.chart()->even;
  std::vector<ADHMFixedPoint> out;
  Substitution psub = detail::to_substitution(params);
  for (std::size_t l = 0; l < N; ++l) {
    // xi* with phi = a_l: a linear map on the flattened data.
    Substitution with_phi = psub;
    const ScalarExpr al = ScalarExpr::symbol("a_" + std::to_string(l + 1));
    with_phi["phi_1"] = substitute(al, psub);
    const auto comps = c.flatten(adhm_action(c, false));
    const std::size_t m = even.size();
    Matrix<Rational> A(m, m);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        auto v = substitute(differentiate(comps[i], even[j]), with_phi).constant_value();
        if (!v) throw Error(ErrorCode::UnboundSymbol, "k = 1 fixed points need numeric Lie parameters");
        A(i, j) = *v;
      }
    // The kernel must be exactly the I_l plane for an isolated point on the quotient.
    if (m - rank(A) != 2) throw Error(ErrorCode::NonIsolatedZero, "Lie parameters are not generic");
    const std::size_t re = c.index(Block::I, 0, l, false), im = c.index(Block::I, 0, l, true);
    for (std::size_t i = 0; i < m; ++i)
      if (A(i, re) != 0 || A(i, im) != 0)
        throw Error(ErrorCode::NonIsolatedZero, "kernel is not the I_l plane");
    ADHMFixedPoint fp;
    fp.l = l;
    fp.phi = al;
    for (const auto& name : even) fp.coords[name] = ScalarExpr(0);
    fp.coords[even[re]] = ScalarExpr(*root);
    // Constraints hold exactly: |I|^2 - |J|^2 = zeta and I J = 0.
    const auto cons = adhm_constraints(c);
    if (!(substitute(cons.V[0], fp.coords) == ScalarExpr(zeta)))
      throw Error(ErrorCode::AssumptionViolated, "real constraint fails at the fixed point");
    for (std::size_t i = 1; i < cons.V.size(); ++i)
      if (!substitute(cons.V[i], fp.coords).is_zero())
        throw Error(ErrorCode::AssumptionViolated, "complex constraint fails at the fixed point");
    require_trivial_stabilizer(c, fp.coords);
    // xi* at phi = a_l vanishes at the point.
    for (const auto& comp : comps)
      if (!substitute(substitute(comp, fp.coords), with_phi).is_zero())
        throw Error(ErrorCode::NotAZero, "xi* does not vanish at the candidate");
    fp.weights = adhm_k1_weights(N, l);
    out.push_back(fp);
  }
  return out;
}

/// The fibre linearisation at a k = 1 fixed point restricted to the tangent
/// directions (B1, B2, I_m, J_m for m != l), in (re, im) pairs: a real
/// 4N x 4N matrix, block diagonal with rotation blocks of the weights.
inline Matrix<ScalarExpr> adhm_k1_tangent_linearization(const ADHMChart& c, const ADHMFixedPoint& fp) {
  ActionSpec spec = adhm_action_spec(c);
  LieVector xi;
  for (const auto& p : spec.params)
    xi.push_back(p == "phi_1" ? fp.phi : ScalarExpr::symbol(p));
  Matrix<ScalarExpr> full = substitute(fiber_generator(spec, xi), fp.coords);
  std::vector<std::size_t> idx;
  auto pair = [&](Block b, std::size_t i, std::size_t j) {
    idx.push_back(c.index(b, i, j, false));
    idx.push_back(c.index(b, i, j, true));
  };
  pair(Block::B1, 0, 0);
  pair(Block::B2, 0, 0);
  for (std::size_t m = 0; m < c.N(); ++m) {
    if (m == fp.l) continue;
    pair(Block::I, 0, m);
    pair(Block::J, m, 0);
  }
  Matrix<ScalarExpr> out(idx.size(), idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i)
    for (std::size_t j = 0; j < idx.size(); ++j) out(i, j) = full(idx[i], idx[j]);
  return out;
}

/// Ranks of the bundles S_1, S_2, S_4 over the k-instanton moduli space.
inline long rank_bookkeeping(long k, long N, int susy) {
  if (k < 1 || N < 1) throw Error(ErrorCode::ShapeMismatch, "k and N must be positive");
  switch (susy) {
    case 1: return 2 * k * N;
    case 2: return 4 * k * N;
    case 4: return 8 * k * N;
    default: throw Error(ErrorCode::BadSusy, "susy must be 1, 2 or 4");
  }
}

}  // namespace superloc

#pragma once

// Scenario files and reports for the command-line harness.
//
// A scenario is a JSON document with optional sections "localization",
// "oracle", "stokes", "brst" and "adhm", a list of parameter sets, and a
// list of checks. Each command runs the checks of its own family; a check
// is evaluated once per parameter set when it depends on parameters.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <ctime>
#include <fstream>
#include <functional>
#include <iomanip>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "superloc/adhm.hpp"
#include "superloc/equivariant.hpp"
#include "superloc/localization.hpp"
#include "superloc/oracle.hpp"
#include "superloc/parse.hpp"
#include "superloc/super.hpp"

namespace superloc {

using Json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Loading

inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

[[noreturn]] inline void schema_error(const std::string& where, const std::string& what) {
  throw Error(ErrorCode::SchemaError, where + ": " + what);
}

namespace detail {

inline const Json& require(const Json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) schema_error(where, std::string("missing field '") + key + "'");
  return j.at(key);
}

inline std::string text_of(const Json& j, const std::string& where) {
  if (j.is_string()) return j.get<std::string>();
  if (j.is_number_integer()) return std::to_string(j.get<long long>());
  if (j.is_number()) return exact_rational(j.get<double>()).get_str();
  schema_error(where, "expected an expression string or a number");
}

inline ScalarExpr scalar(const Json& j, const std::string& where) {
  try {
    return parse_scalar(text_of(j, where));
  } catch (const Error& e) {
    schema_error(where, e.what());
  }
}

inline SuperFunction superfunction(const Json& j, const ChartPtr& chart, const std::string& where) {
  try {
    return parse_superfunction(text_of(j, where), chart);
  } catch (const Error& e) {
    schema_error(where, e.what());
  }
}

inline std::vector<std::string> names(const Json& j, const std::string& where) {
  if (!j.is_array()) schema_error(where, "expected an array of names");
  std::vector<std::string> out;
  for (const auto& x : j) {
    if (!x.is_string()) schema_error(where, "expected a name");
    out.push_back(x.get<std::string>());
  }
  return out;
}

inline Matrix<ScalarExpr> matrix(const Json& j, std::size_t rows, std::size_t cols, const std::string& where) {
  if (!j.is_array() || j.size() != rows) schema_error(where, "expected " + std::to_string(rows) + " rows");
  Matrix<ScalarExpr> m(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    if (!j[i].is_array() || j[i].size() != cols) schema_error(where, "expected " + std::to_string(cols) + " columns");
    for (std::size_t k = 0; k < cols; ++k) m(i, k) = scalar(j[i][k], where);
  }
  return m;
}

/// Numeric value of an expression with pi and the given parameters bound.
inline double number(const Json& j, const Point& params, const std::string& where) {
  if (j.is_number()) return j.get<double>();
  ScalarExpr e = scalar(j, where);
  Point p = params;
  p["pi"] = std::numbers::pi;
  for (const auto& s : free_symbols(e))
    if (!p.count(s)) schema_error(where, "unbound symbol '" + s + "'");
  return evaluate(e, p);
}

inline Point parameter_set(const Json& j, const std::string& where) {
  if (!j.is_object()) schema_error(where, "parameter set must be an object");
  Point p;
  for (const auto& [k, v] : j.items()) p[k] = number(v, {}, where + "." + k);
  return p;
}

}  // namespace detail

/// One coordinate chart with its action, BRST field, metric and forms.
struct ChartSpec {
  std::string label;
  ChartPtr chart;
  ActionSpec spec;          // the action the BRST field squares to
  ActionSpec base_spec;     // the action as written (before any projection)
  std::string q_kind = "tautological";
  std::vector<SuperFunction> q_a, q_b;  // explicit field components
  std::optional<Matrix<ScalarExpr>> h, H;
  std::optional<SuperFunction> F, alpha, nu;
  int orientation = 1;
  FixedPointOptions fixed;
  std::vector<std::pair<Json, Json>> box;  // bounds as expressions
  std::string excluded;
  bool equivariance = true;
  bool check_assumption = true;

  SuperVectorField Q(const LieVector& xi) const {
    if (q_kind == "tautological") return tautological_Q(spec, xi);
    if (q_kind == "kahler") return kahler_Q(base_spec, xi, kahler_data(chart));
    SuperVectorField q(chart, 1);
    for (std::size_t i = 0; i < chart->m(); ++i) q.a(i) = q_a[i];
    for (std::size_t k = 0; k < chart->n(); ++k) q.b(k) = q_b[k];
    return q;
  }

  Box numeric_box(const Point& params) const {
    Box b;
    for (std::size_t i = 0; i < box.size(); ++i)
      b.push_back({detail::number(box[i].first, params, label + ".box"),
                   detail::number(box[i].second, params, label + ".box")});
    return b;
  }
};

inline ChartSpec load_chart(const Json& j, const std::string& where) {
  using namespace detail;
  ChartSpec c;
  c.label = j.value("label", where);
  const std::string w = where + "(" + c.label + ")";
  std::vector<std::string> even = names(require(j, "even", w), w + ".even");
  if (j.contains("odd")) {
    c.chart = SuperChart::make(even, names(j.at("odd"), w + ".odd"));
  } else {
    const std::size_t n = j.value("n", even.size());
    c.chart = SuperChart::make(even, n);
  }
  const std::size_t m = c.chart->m(), n = c.chart->n();

  const Json& act = require(j, "action", w);
  c.spec.chart = c.chart;
  c.spec.params = names(require(act, "params", w + ".action"), w + ".action.params");
  const Json& T = require(act, "T", w + ".action");
  if (!T.is_array() || T.size() != c.spec.params.size()) schema_error(w, "action.T needs one row per parameter");
  for (const auto& row : T) {
    if (!row.is_array() || row.size() != m) schema_error(w, "action.T rows need one entry per even coordinate");
    std::vector<ScalarExpr> r;
    for (const auto& e : row) r.push_back(scalar(e, w + ".action.T"));
    c.spec.T.push_back(r);
  }
  c.q_kind = "tautological";
  if (j.contains("Q")) {
    const Json& q = j.at("Q");
    if (q.is_string()) {
      c.q_kind = q.get<std::string>();
      if (c.q_kind != "tautological" && c.q_kind != "kahler") schema_error(w, "unknown Q kind '" + c.q_kind + "'");
    } else if (q.is_object()) {
      c.q_kind = "explicit";
      const Json& a = require(q, "a", w + ".Q");
      const Json& b = require(q, "b", w + ".Q");
      if (!a.is_array() || a.size() != m || !b.is_array() || b.size() != n)
        schema_error(w, "explicit Q needs m even and n odd components");
      for (const auto& x : a) c.q_a.push_back(superfunction(x, c.chart, w + ".Q.a"));
      for (const auto& x : b) c.q_b.push_back(superfunction(x, c.chart, w + ".Q.b"));
    } else {
      schema_error(w, "Q must be a kind name or an object with a and b");
    }
  }
  const std::string U = act.contains("U") && act.at("U").is_string() ? act.at("U").get<std::string>() : "";
  try {
    if (act.contains("U") && act.at("U").is_array()) {
      for (const auto& blk : act.at("U")) c.spec.U.push_back(matrix(blk, n, n, w + ".action.U"));
    } else if (U == "tautological" || (U.empty() && c.q_kind == "tautological")) {
      if (m != n) schema_error(w, "tautological lift needs n = m");
      c.spec = tautological_lift(c.spec);
    } else if (U == "kahler" || (U.empty() && c.q_kind == "kahler")) {
      c.base_spec = c.spec;
      c.spec = kahler_projected_spec(c.spec);
    } else if (!U.empty()) {
      schema_error(w, "unknown action.U kind '" + U + "'");
    } else {
      schema_error(w, "action.U is required for an explicit Q");
    }
    if (c.base_spec.chart == nullptr) c.base_spec = c.spec;
    c.spec.validate();
  } catch (const Error& e) {
    if (e.code() == ErrorCode::SchemaError) throw;
    schema_error(w, e.what());
  }
  if (j.contains("metric")) c.h = matrix(j.at("metric"), m, m, w + ".metric");
  if (j.contains("fiber_metric")) c.H = matrix(j.at("fiber_metric"), n, n, w + ".fiber_metric");
  if (j.contains("F")) c.F = superfunction(j.at("F"), c.chart, w + ".F");
  if (j.contains("alpha")) c.alpha = superfunction(j.at("alpha"), c.chart, w + ".alpha");
  if (j.contains("nu")) c.nu = superfunction(j.at("nu"), c.chart, w + ".nu");
  c.orientation = j.value("orientation", 1);
  if (c.orientation != 1 && c.orientation != -1) schema_error(w, "orientation must be 1 or -1");
  c.excluded = j.value("excluded", "");
  c.equivariance = j.value("equivariance", true);
  c.check_assumption = j.value("check_assumption", true);
  if (j.contains("box")) {
    const Json& b = j.at("box");
    if (!b.is_array() || b.size() != m) schema_error(w, "box needs one interval per even coordinate");
    for (const auto& iv : b) {
      if (!iv.is_array() || iv.size() != 2) schema_error(w, "box intervals are [lo, hi]");
      c.box.emplace_back(iv[0], iv[1]);
    }
  }
  if (j.contains("fixed_points")) {
    const Json& fp = j.at("fixed_points");
    const std::string s = fp.value("strategy", "newton");
    if (s == "newton") {
      c.fixed.strategy = FixedPointStrategy::Newton;
      if (fp.contains("box")) {
        for (const auto& iv : fp.at("box")) {
          if (!iv.is_array() || iv.size() != 2) schema_error(w, "fixed_points.box intervals are [lo, hi]");
          c.fixed.box.emplace_back(number(iv[0], {}, w), number(iv[1], {}, w));
        }
        if (c.fixed.box.size() != m) schema_error(w, "fixed_points.box needs one interval per coordinate");
      }
      c.fixed.grid = fp.value("grid", c.fixed.grid);
    } else if (s == "linear") {
      c.fixed.strategy = FixedPointStrategy::Linear;
    } else if (s == "declared") {
      c.fixed.strategy = FixedPointStrategy::Declared;
      for (const auto& p : require(fp, "points", w + ".fixed_points")) {
        Substitution sub;
        for (const auto& [k, v] : p.items()) sub[k] = scalar(v, w + ".fixed_points");
        c.fixed.declared.push_back(sub);
      }
    } else {
      schema_error(w, "unknown fixed-point strategy '" + s + "'");
    }
  }
  return c;
}

struct ADHMScenario {
  std::size_t k = 1, N = 2;
  bool cartan = true;
  Point parameters;  // Lie-parameter values for the numeric parts
  int group_samples = 50;
  int fd_samples = 10;
  std::uint64_t seed = 7;
  bool equivariance = false;
};

struct Scenario {
  std::string name, description;
  std::string hash;
  std::vector<Point> parameter_sets;
  double tol = 1e-8;
  double reduction_tol = 1e-9;
  std::string expected;  // closed-form reference value, optional
  std::vector<ChartSpec> localization, oracle, stokes, brst;
  std::optional<ADHMScenario> adhm;
  QuadratureOptions quadrature;
  int reduction_samples = 20;
  std::uint64_t seed = 1;
  std::optional<std::vector<std::string>> checks;
};

inline Scenario load_scenario_text(const std::string& text) {
  using namespace detail;
  Json j;
  try {
    j = Json::parse(text);
  } catch (const std::exception& e) {
    schema_error("scenario", std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object()) schema_error("scenario", "top level must be an object");
  Scenario s;
  s.hash = "fnv1a64:" + hex64(fnv1a64(text));
  s.name = require(j, "name", "scenario").get<std::string>();
  s.description = j.value("description", "");
  if (j.contains("parameter_sets"))
    for (const auto& p : j.at("parameter_sets")) s.parameter_sets.push_back(parameter_set(p, "parameter_sets"));
  if (s.parameter_sets.empty()) s.parameter_sets.push_back(Point{});
  if (j.contains("tolerances")) {
    const Json& t = j.at("tolerances");
    s.tol = t.value("tol", s.tol);
    s.reduction_tol = t.value("reduction", s.reduction_tol);
    s.quadrature.tol = t.value("quadrature", s.quadrature.tol);
  }
  if (j.contains("quadrature")) {
    const Json& q = j.at("quadrature");
    s.quadrature.order = q.value("order", s.quadrature.order);
    s.quadrature.max_depth = q.value("max_depth", s.quadrature.max_depth);
    s.quadrature.min_depth = q.value("min_depth", s.quadrature.min_depth);
  }
  if (j.contains("expected")) s.expected = text_of(j.at("expected"), "expected");
  auto charts = [&](const char* key, std::vector<ChartSpec>& out) {
    if (!j.contains(key)) return;
    const Json& sec = j.at(key);
    const Json& list = sec.is_object() ? require(sec, "charts", key) : sec;
    if (!list.is_array()) schema_error(key, "expected a list of charts");
    for (std::size_t i = 0; i < list.size(); ++i)
      out.push_back(load_chart(list[i], std::string(key) + "[" + std::to_string(i) + "]"));
  };
  charts("localization", s.localization);
  charts("oracle", s.oracle);
  charts("stokes", s.stokes);
  charts("brst", s.brst);
  for (const auto& c : s.oracle)
    if (!c.F || !c.h || c.box.empty()) schema_error("oracle", "chart " + c.label + " needs F, metric and box");
  for (const auto& c : s.stokes)
    if (!c.nu || !c.h || !c.H || c.box.empty())
      schema_error("stokes", "chart " + c.label + " needs nu, metric, fiber_metric and box");
  if (j.contains("adhm")) {
    const Json& a = j.at("adhm");
    ADHMScenario ad;
    ad.k = a.value("k", ad.k);
    ad.N = a.value("N", ad.N);
    ad.cartan = a.value("cartan", ad.cartan);
    ad.group_samples = a.value("group_samples", ad.group_samples);
    ad.fd_samples = a.value("fd_samples", ad.fd_samples);
    ad.seed = a.value("seed", ad.seed);
    ad.equivariance = a.value("equivariance", ad.equivariance);
    if (a.contains("parameters")) ad.parameters = parameter_set(a.at("parameters"), "adhm.parameters");
    if (ad.k == 0 || ad.N == 0) schema_error("adhm", "k and N must be positive");
    s.adhm = ad;
  }
  if (j.contains("reduction")) {
    s.reduction_samples = j.at("reduction").value("samples", s.reduction_samples);
    s.seed = j.at("reduction").value("seed", s.seed);
  }
  if (j.contains("checks")) s.checks = names(j.at("checks"), "checks");
  return s;
}

inline Scenario load_scenario(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) schema_error(path, "cannot open scenario file");
  std::stringstream ss;
  ss << in.rdbuf();
  return load_scenario_text(ss.str());
}

// ---------------------------------------------------------------------------
// Reports

enum class Status { Pass, Fail, Skipped };

struct CheckRecord {
  std::string name;
  Status status = Status::Fail;
  std::string reason;
  std::optional<double> lhs, rhs;
  double runtime = 0.0;
  Json details = Json::object();

  std::optional<double> abs_error() const {
    if (!lhs || !rhs) return std::nullopt;
    return std::abs(*lhs - *rhs);
  }
  std::optional<double> rel_error() const {
    if (!lhs || !rhs) return std::nullopt;
    return std::abs(*lhs - *rhs) / std::max(1.0, std::abs(*rhs));
  }
};

struct Report {
  std::string scenario, command, hash;
  std::vector<CheckRecord> records;

  std::size_t count(Status s) const {
    return static_cast<std::size_t>(
        std::count_if(records.begin(), records.end(), [&](const CheckRecord& r) { return r.status == s; }));
  }
  bool passed() const { return count(Status::Fail) == 0; }
  int exit_code() const { return passed() ? 0 : 1; }

  /// The JSON report; runtimes and the wall-clock time sit under "timestamp"
  /// so that everything else is reproducible byte for byte.
  Json to_json(bool with_timestamp = true) const {
    Json j;
    j["scenario"] = scenario;
    j["command"] = command;
    j["scenario_hash"] = hash;
    Json recs = Json::array();
    for (const auto& r : records) {
      Json x;
      x["name"] = r.name;
      x["status"] = r.status == Status::Pass ? "pass" : r.status == Status::Fail ? "fail" : "skipped";
      if (!r.reason.empty()) x["reason"] = r.reason;
      x["lhs"] = r.lhs ? Json(*r.lhs) : Json(nullptr);
      x["rhs"] = r.rhs ? Json(*r.rhs) : Json(nullptr);
      x["abs_error"] = r.abs_error() ? Json(*r.abs_error()) : Json(nullptr);
      x["rel_error"] = r.rel_error() ? Json(*r.rel_error()) : Json(nullptr);
      x["details"] = r.details;
      recs.push_back(x);
    }
    j["records"] = recs;
    j["totals"] = Json{{"pass", count(Status::Pass)}, {"fail", count(Status::Fail)}, {"skipped", count(Status::Skipped)}};
    if (with_timestamp) {
      Json ts;
      const std::time_t now = std::time(nullptr);
      char buf[32];
      std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
      ts["generated_at"] = buf;
      Json rt = Json::object();
      for (const auto& r : records) rt[r.name] = r.runtime;
      ts["runtimes_s"] = rt;
      j["timestamp"] = ts;
    }
    return j;
  }

  std::string summary() const {
    std::ostringstream os;
    for (const auto& r : records) {
      os << (r.status == Status::Pass ? "PASS " : r.status == Status::Fail ? "FAIL " : "SKIP ") << r.name;
      if (r.lhs) os << "  lhs=" << std::setprecision(15) << *r.lhs;
      if (r.rhs) os << "  rhs=" << std::setprecision(15) << *r.rhs;
      if (r.rel_error()) os << "  rel=" << std::setprecision(3) << *r.rel_error();
      if (!r.reason.empty()) os << "  (" << r.reason << ")";
      os << "\n";
    }
    os << "totals: " << count(Status::Pass) << " pass, " << count(Status::Fail) << " fail, " << count(Status::Skipped)
       << " skipped\n";
    return os.str();
  }
};

/// Raised for failures inside the engine that are not a verdict on the
/// checked property; the CLI maps it to exit code 3.
class ComputationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Checks

enum class Command { Localize, Oracle, Compare, BrstCheck };

inline std::string to_string(Command c) {
  switch (c) {
    case Command::Localize: return "localize";
    case Command::Oracle: return "oracle";
    case Command::Compare: return "compare";
    case Command::BrstCheck: return "brst-check";
  }
  return "?";
}

inline std::optional<Command> command_of_check(const std::string& check) {
  static const std::map<std::string, Command> table{
      {"super_localize", Command::Localize},
      {"classical_localize", Command::Localize},
      {"tautological_reduction", Command::Localize},
      {"global_berezin", Command::Oracle},
      {"super_stokes", Command::Oracle},
      {"compare", Command::Compare},
      {"verify_brst", Command::BrstCheck},
      {"sigma_parallel", Command::BrstCheck},
      {"adhm_closure_unconstrained", Command::BrstCheck},
      {"adhm_closure_full", Command::BrstCheck},
      {"adhm_verify_brst", Command::BrstCheck},
      {"adhm_constraint_invariance", Command::BrstCheck},
      {"adhm_fermionic_constraints", Command::BrstCheck},
      {"adhm_multipliers", Command::BrstCheck},
      {"adhm_fixed_points", Command::BrstCheck},
      {"rank_bookkeeping", Command::BrstCheck},
  };
  auto it = table.find(check);
  if (it == table.end()) return std::nullopt;
  return it->second;
}

inline std::vector<std::string> default_checks(const Scenario& s, Command c) {
  std::vector<std::string> out;
  switch (c) {
    case Command::Localize:
      if (!s.localization.empty()) out.push_back("super_localize");
      break;
    case Command::Oracle:
      if (!s.oracle.empty()) out.push_back("global_berezin");
      if (!s.stokes.empty()) out.push_back("super_stokes");
      break;
    case Command::Compare:
      if (!s.localization.empty() && !s.oracle.empty()) out.push_back("compare");
      break;
    case Command::BrstCheck:
      if (!s.brst.empty()) out.push_back("verify_brst");
      if (s.adhm) out.insert(out.end(), {"adhm_closure_unconstrained", "adhm_closure_full"});
      break;
  }
  return out;
}

namespace detail {

inline std::string label(const Point& p) {
  if (p.empty()) return "";
  std::ostringstream os;
  os << "[";
  bool first = true;
  for (const auto& [k, v] : p) {
    if (!first) os << ",";
    first = false;
    os << k << "=" << std::setprecision(12) << v;
  }
  os << "]";
  return os.str();
}

inline Json point_json(const FixedPoint& p) {
  Json c = Json::object();
  for (const auto& [k, v] : p.coords) c[k] = to_string(v);
  return c;
}

inline Json quantity_json(const Quantity& q) {
  Json j;
  j["value"] = q.numeric;
  if (q.exact) j["exact"] = to_string(*q.exact);
  return j;
}

inline std::vector<FixedPoint> chart_fixed_points(const ChartSpec& c, const Point& params) {
  FixedPointOptions opt = c.fixed;
  opt.parameters = params;
  auto fps = find_fixed_points(fundamental_field(c.spec, c.spec.symbolic_xi()), opt);
  for (auto& p : fps) {
    p.orientation = c.orientation;
    p.chart = c.label;
  }
  return fps;
}

struct Localized {
  LocalizationResult result;
  Json terms = Json::array();
};

/// Super localization summed over the localization charts.
inline Localized localize_super(const Scenario& s, const Point& params,
                                const std::function<SuperFunction(const ChartSpec&)>& pick,
                                const std::function<SuperVectorField(const ChartSpec&, const LieVector&)>& field,
                                bool negate_xi = false) {
  Localized out;
  bool first = true;
  double total_sum = 0.0;
  for (const auto& c : s.localization) {
    if (!c.h) throw Error(ErrorCode::SchemaError, "localization chart " + c.label + " needs a metric");
    LieVector xi = c.spec.symbolic_xi();
    if (negate_xi)
      for (auto& x : xi) x = -x;
    auto fps = chart_fixed_points(c, params);
    SuperLocalizeOptions opt;
    opt.brst.equivariance = false;
    opt.brst.parameters = params;
    LocalizationResult r = super_localize(pick(c), field(c, xi), c.spec, xi, fps, *c.h, params, opt);
    if (first) out.result.prefactor = r.prefactor;
    if (!(r.prefactor == out.result.prefactor))
      throw Error(ErrorCode::DimensionMismatch, "charts disagree on the prefactor");
    first = false;
    for (const auto& t : r.terms) {
      out.result.terms.push_back(t);
      Json tj;
      tj["chart"] = c.label;
      tj["point"] = point_json(t.point);
      tj["sdet_half"] = quantity_json(t.root);
      tj["body"] = quantity_json(t.body);
      tj["contribution"] = quantity_json(t.contribution);
      tj["squared_identity"] = t.squared_identity;
      tj["compatible"] = t.compatible;
      out.terms.push_back(tj);
    }
    total_sum += r.sum.numeric;
  }
  out.result.sum.numeric = total_sum;
  out.result.total.numeric = out.result.prefactor.value() * total_sum;
  return out;
}

inline Localized localize_classical(const Scenario& s, const Point& params,
                                    const std::function<SuperFunction(const ChartSpec&)>& pick) {
  Localized out;
  double total_sum = 0.0;
  for (const auto& c : s.localization) {
    if (!c.h) throw Error(ErrorCode::SchemaError, "localization chart " + c.label + " needs a metric");
    const LieVector xi = c.spec.symbolic_xi();
    auto fps = chart_fixed_points(c, params);
    LocalizationResult r = classical_localize(pick(c), c.spec, xi, fps, *c.h, params);
    out.result.prefactor = r.prefactor;
    for (const auto& t : r.terms) {
      out.result.terms.push_back(t);
      Json tj;
      tj["chart"] = c.label;
      tj["point"] = point_json(t.point);
      tj["det_half"] = quantity_json(t.root);
      tj["body"] = quantity_json(t.body);
      tj["contribution"] = quantity_json(t.contribution);
      tj["squared_identity"] = t.squared_identity;
      out.terms.push_back(tj);
    }
    total_sum += r.sum.numeric;
  }
  out.result.sum.numeric = total_sum;
  out.result.total.numeric = out.result.prefactor.value() * total_sum;
  return out;
}

inline QuadratureResult oracle_value(const Scenario& s, const Point& params) {
  ChartedManifold M;
  std::vector<BerezinianSection> sections;
  std::vector<SuperFunction> Fs;
  for (const auto& c : s.oracle) {
    M.m = c.chart->m();
    M.charts.push_back(OracleChart{c.chart->even, c.numeric_box(params), *c.h, c.orientation, c.excluded});
    sections.push_back(BerezinianSection{*c.h, c.H ? *c.H : *c.h});
    Fs.push_back(*c.F);
  }
  return global_berezin(M, sections, Fs, params, s.quadrature);
}

inline std::optional<double> expected_value(const Scenario& s, const Point& params) {
  if (s.expected.empty()) return std::nullopt;
  return number(Json(s.expected), params, "expected");
}

inline void judge(CheckRecord& r, double tol) {
  const auto rel = r.rel_error();
  const bool finite = r.lhs && std::isfinite(*r.lhs);
  r.status = finite && (!rel || *rel < tol) ? Status::Pass : Status::Fail;
}

/// Random equivariantly closed forms on a tautological chart:
/// c0 F + c1 F^2 + c2 with F the chart's closed form, plus c3 when F is
/// absent. Products of closed forms stay closed.
inline SuperFunction random_closed(const SuperFunction& base, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> num(-6, 6), den(1, 5);
  auto q = [&] { return ScalarExpr(Rational(num(rng), den(rng))); };
  SuperFunction one(base.chart(), ScalarExpr(1));
  return q() * base + q() * (base * base) + q() * one;
}

template <class T>
Complex<Rational> random_complex(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> num(-5, 5), den(1, 4);
  return Complex<Rational>(Rational(num(rng), den(rng)), Rational(num(rng), den(rng)));
}

inline CMatrix<Rational> random_cmatrix(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  CMatrix<Rational> m(r, c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      m(i, j) = random_complex<Rational>(rng);
      m(i, j).re.canonicalize();
      m(i, j).im.canonicalize();
    }
  return m;
}

inline CMatrix<Rational> random_antihermitian(std::size_t n, std::mt19937_64& rng) {
  CMatrix<Rational> a = random_cmatrix(n, n, rng);
  CMatrix<Rational> s = a - dagger(a);
  return s.map([](const Complex<Rational>& z) {
    Complex<Rational> h(Rational(z.re / 2), Rational(z.im / 2));
    h.re.canonicalize();
    h.im.canonicalize();
    return h;
  });
}

inline Substitution exact_params(const Point& p) {
  Substitution s;
  for (const auto& [k, v] : p) s[k] = ScalarExpr(exact_rational(v));
  return s;
}

/// Max |residual| of a vector field at sample points and parameter values.
inline double field_residual(const SuperVectorField& r, const Point& params, int samples, std::uint64_t seed) {
  std::set<std::string> syms;
  for (std::size_t i = 0; i < r.m(); ++i)
    for (const auto& [mask, c] : r.a(i).terms()) collect_symbols(c, syms);
  for (std::size_t k = 0; k < r.n(); ++k)
    for (const auto& [mask, c] : r.b(k).terms()) collect_symbols(c, syms);
  std::vector<std::string> free;
  for (const auto& s : syms)
    if (!params.count(s)) free.push_back(s);
  double worst = 0.0;
  for (const auto& p : sample_points(free, samples, seed)) {
    const Point q = merge(p, params);
    auto scan = [&](const SuperFunction& f) {
      for (const auto& [mask, c] : f.terms()) worst = std::max(worst, std::abs(evaluate(c, q)));
    };
    for (std::size_t i = 0; i < r.m(); ++i) scan(r.a(i));
    for (std::size_t k = 0; k < r.n(); ++k) scan(r.b(k));
  }
  return worst;
}

}  // namespace detail

/// Runs one named check for every parameter set where it applies and
/// appends its records.
inline void run_check(const Scenario& s, const std::string& check, Report& rep) {
  using namespace detail;
  auto timed = [&](const std::string& name, const std::function<void(CheckRecord&)>& body) {
    CheckRecord r;
    r.name = name;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      body(r);
    } catch (const Error& e) {
      switch (e.code()) {
        case ErrorCode::OddDimension:
        case ErrorCode::OddComplexDimension:
          r.status = Status::Skipped;
          r.reason = std::string(superloc::to_string(e.code()));
          break;
        case ErrorCode::NotQClosed:
        case ErrorCode::NotClosed:
        case ErrorCode::BRSTInvalid:
        case ErrorCode::AssumptionViolated:
        case ErrorCode::NotInjective:
          r.status = Status::Fail;
          r.reason = e.what();
          break;
        case ErrorCode::SchemaError:
          throw;
        default:
          throw ComputationError(name + ": " + e.what());
      }
    }
    r.runtime = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    rep.records.push_back(std::move(r));
  };
  auto require_section = [&](bool ok, const char* what) {
    if (!ok) schema_error(check, std::string("scenario has no ") + what + " section");
  };

  if (check == "super_localize") {
    require_section(!s.localization.empty(), "localization");
    for (const auto& p : s.parameter_sets)
      timed(check + label(p), [&](CheckRecord& r) {
        auto loc = localize_super(
            s, p,
            [](const ChartSpec& c) {
              if (!c.F) throw Error(ErrorCode::SchemaError, "chart " + c.label + " needs F");
              return *c.F;
            },
            [](const ChartSpec& c, const LieVector& xi) { return c.Q(xi); });
        r.lhs = loc.result.total.numeric;
        r.rhs = expected_value(s, p);
        r.details["prefactor"] = loc.result.prefactor.to_string();
        r.details["fixed_points"] = loc.result.terms.size();
        r.details["terms"] = loc.terms;
        judge(r, s.tol);
      });
  } else if (check == "classical_localize") {
    require_section(!s.localization.empty(), "localization");
    for (const auto& p : s.parameter_sets)
      timed(check + label(p), [&](CheckRecord& r) {
        auto loc = localize_classical(s, p, [](const ChartSpec& c) {
          if (!c.alpha) throw Error(ErrorCode::SchemaError, "chart " + c.label + " needs alpha");
          return *c.alpha;
        });
        r.lhs = loc.result.total.numeric;
        r.rhs = expected_value(s, p);
        r.details["prefactor"] = loc.result.prefactor.to_string();
        r.details["terms"] = loc.terms;
        judge(r, s.tol);
      });
  } else if (check == "tautological_reduction") {
    require_section(!s.localization.empty(), "localization");
    for (const auto& c : s.localization)
      if (c.q_kind != "tautological" || !c.alpha)
        schema_error(check, "needs tautological charts with alpha");
    std::mt19937_64 rng(s.seed);
    for (const auto& p : s.parameter_sets)
      for (int i = 0; i < s.reduction_samples; ++i) {
        std::vector<SuperFunction> forms;
        // One random combination per chart with shared coefficients.
        const std::uint64_t draw = rng();
        for (const auto& c : s.localization) {
          std::mt19937_64 local(draw);
          forms.push_back(random_closed(*c.alpha, local));
        }
        timed(check + label(p) + "#" + std::to_string(i), [&](CheckRecord& r) {
          std::size_t idx = 0;
          std::map<std::string, std::size_t> index;
          for (const auto& c : s.localization) index[c.label] = idx++;
          auto pick = [&](const ChartSpec& c) { return forms[index.at(c.label)]; };
          // A d_g-closed form is Q-closed for the field built at -xi.
          auto sup = localize_super(
              s, p, pick, [](const ChartSpec& c, const LieVector& xi) { return c.Q(xi); }, true);
          auto cla = localize_classical(s, p, pick);
          const bool same_prefactor = sup.result.prefactor == cla.result.prefactor;
          r.lhs = sup.result.total.numeric;
          r.rhs = cla.result.total.numeric;
          r.details["super_prefactor"] = sup.result.prefactor.to_string();
          r.details["classical_prefactor"] = cla.result.prefactor.to_string();
          judge(r, s.reduction_tol);
          if (!same_prefactor) {
            r.status = Status::Fail;
            r.reason = "prefactors differ";
          }
        });
      }
  } else if (check == "global_berezin") {
    require_section(!s.oracle.empty(), "oracle");
    for (const auto& p : s.parameter_sets)
      timed(check + label(p), [&](CheckRecord& r) {
        QuadratureResult q = oracle_value(s, p);
        r.lhs = q.value;
        r.rhs = expected_value(s, p);
        r.details["error_estimate"] = q.error;
        r.details["level"] = q.level;
        Json ex = Json::array();
        for (const auto& c : s.oracle)
          if (!c.excluded.empty()) ex.push_back(c.label + ": " + c.excluded);
        r.details["excluded"] = ex;
        judge(r, s.tol);
      });
  } else if (check == "compare") {
    require_section(!s.localization.empty() && !s.oracle.empty(), "localization and oracle");
    for (const auto& p : s.parameter_sets)
      timed(check + label(p), [&](CheckRecord& r) {
        auto loc = localize_super(
            s, p,
            [](const ChartSpec& c) {
              if (!c.F) throw Error(ErrorCode::SchemaError, "chart " + c.label + " needs F");
              return *c.F;
            },
            [](const ChartSpec& c, const LieVector& xi) { return c.Q(xi); });
        QuadratureResult q = oracle_value(s, p);
        r.lhs = loc.result.total.numeric;
        r.rhs = q.value;
        r.details["fixed_points"] = loc.result.terms.size();
        r.details["terms"] = loc.terms;
        r.details["oracle_error_estimate"] = q.error;
        if (auto e = expected_value(s, p)) {
          r.details["expected"] = *e;
          r.details["oracle_vs_expected"] = std::abs(q.value - *e) / std::max(1.0, std::abs(*e));
        }
        judge(r, s.tol);
      });
  } else if (check == "super_stokes") {
    require_section(!s.stokes.empty(), "stokes");
    for (const auto& c : s.stokes)
      for (const auto& p : s.parameter_sets)
        timed(check + "(" + c.label + ")" + label(p), [&](CheckRecord& r) {
          const LieVector xi = c.spec.symbolic_xi();
          SuperVectorField Q = c.Q(xi);
          Matrix<ScalarExpr> sigma = sigma_matrix(Q);
          StokesReport sr = super_stokes_check(*c.nu, Q, sigma, *c.h, *c.H, c.numeric_box(p), p, s.tol, s.quadrature,
                                               c.check_assumption);
          r.lhs = sr.interior;
          r.rhs = sr.boundary;
          r.details["difference"] = sr.difference;
          r.details["detail"] = sr.detail;
          r.status = sr.pass ? Status::Pass : Status::Fail;
        });
  } else if (check == "verify_brst") {
    require_section(!s.brst.empty(), "brst");
    for (const auto& c : s.brst)
      for (const auto& p : s.parameter_sets)
        timed(check + "(" + c.label + ")" + label(p), [&](CheckRecord& r) {
          const LieVector xi = c.spec.symbolic_xi();
          BrstOptions opt;
          opt.parameters = p;
          opt.equivariance = c.equivariance;
          opt.tol = s.tol;
          BrstReport br = verify_brst(c.Q(xi), c.spec, xi, opt);
          auto cond = [](const ConditionResult& x) {
            return Json{{"checked", x.checked}, {"pass", x.pass}, {"residual", x.residual}, {"detail", x.detail}};
          };
          r.details["square"] = cond(br.square);
          r.details["equivariant"] = cond(br.equivariant);
          r.details["injective"] = cond(br.injective);
          r.lhs = br.square.residual;
          r.status = br.all_pass() ? Status::Pass : Status::Fail;
        });
  } else if (check == "sigma_parallel") {
    require_section(!s.brst.empty(), "brst");
    for (const auto& c : s.brst)
      for (const auto& p : s.parameter_sets)
        timed(check + "(" + c.label + ")" + label(p), [&](CheckRecord& r) {
          if (!c.h) throw Error(ErrorCode::SchemaError, "chart " + c.label + " needs a metric");
          const LieVector xi = c.spec.symbolic_xi();
          Matrix<ScalarExpr> sigma = sigma_matrix(c.Q(xi));
          std::set<std::string> syms = free_symbols(sigma);
          for (const auto& v : free_symbols(*c.h)) syms.insert(v);
          for (const auto& v : c.chart->even) syms.insert(v);
          for (const auto& [k, v] : p) syms.erase(k);
          std::vector<std::string> free(syms.begin(), syms.end());
          std::vector<Point> pts;
          for (const auto& q : sample_points(free, 6, 5)) pts.push_back(merge(q, p));
          Matrix<ScalarExpr> H = c.H ? *c.H : induced_fiber_metric(*c.h, sigma, pts);
          ParallelReport pr = check_sigma_parallel(sigma, *c.h, H, c.chart->even, pts, s.tol);
          r.lhs = pr.max_norm;
          r.details["detail"] = pr.detail;
          r.status = pr.pass ? Status::Pass : Status::Fail;
        });
  } else if (check.rfind("adhm_", 0) == 0) {
    require_section(s.adhm.has_value(), "adhm");
    const ADHMScenario& a = *s.adhm;
    const Substitution exact = exact_params(a.parameters);
    if (check == "adhm_closure_unconstrained" || check == "adhm_closure_full") {
      const bool full = check == "adhm_closure_full";
      timed(check, [&](CheckRecord& r) {
        ADHMChart c(a.k, a.N, ADHMOptions{full, a.cartan});
        SuperVectorField Q = full ? adhm_Q_full(c) : adhm_Q_unconstrained(c);
        ActionSpec spec = adhm_action_spec(c);
        SuperVectorField res = brst_residual(Q, spec, spec.symbolic_xi());
        const bool symbolic = res.is_zero();
        // Numeric reading at the scenario's Lie parameters.
        SuperVectorField at = res.map_components([&](const SuperFunction& f) { return substitute(f, exact); });
        const double num = field_residual(at, a.parameters, 4, a.seed);
        r.lhs = num;
        r.details["symbolic_zero"] = symbolic;
        r.details["even_dim"] = c.chart()->m();
        r.details["odd_dim"] = c.chart()->n();
        r.details["parameters"] = a.parameters.empty() ? Json("symbolic") : Json(label(a.parameters));
        r.status = symbolic && num < 1e-12 ? Status::Pass : Status::Fail;
        if (r.status == Status::Fail) r.reason = "residual: " + describe_field(res);
      });
    } else if (check == "adhm_verify_brst") {
      timed(check, [&](CheckRecord& r) {
        ADHMChart c(a.k, a.N, ADHMOptions{false, a.cartan});
        ActionSpec spec = adhm_action_spec(c);
        BrstOptions opt;
        opt.parameters = a.parameters;
        opt.equivariance = a.equivariance;
        opt.flow_steps = 60;
        opt.points = sample_points(c.chart()->even, 1, a.seed, -0.8, 0.8);
        BrstReport br = verify_brst(adhm_Q_unconstrained(c), spec, spec.symbolic_xi(), opt);
        r.details["square"] = br.square.pass;
        r.details["equivariant"] = br.equivariant.checked ? Json(br.equivariant.pass) : Json("not checked");
        r.details["injective"] = br.injective.pass;
        r.status = br.all_pass() ? Status::Pass : Status::Fail;
      });
    } else if (check == "adhm_constraint_invariance") {
      timed(check, [&](CheckRecord& r) {
        std::mt19937_64 rng(a.seed);
        std::uniform_int_distribution<int> sn(-7, 7), sd(1, 5);
        int failures = 0;
        for (int i = 0; i < a.group_samples; ++i) {
          ADHMData<Rational> d{a.k, a.N, random_cmatrix(a.k, a.k, rng), random_cmatrix(a.k, a.k, rng),
                               random_cmatrix(a.k, a.N, rng), random_cmatrix(a.N, a.k, rng)};
          ADHMGroupElement<Rational> g{cayley(random_antihermitian(a.k, rng)), cayley(random_antihermitian(a.N, rng)),
                                       circle_point(Rational(sn(rng), sd(rng))),
                                       circle_point(Rational(sn(rng), sd(rng)))};
          ADHMData<Rational> gd = group_act(g, d);
          if (frobenius2(constraint_real(gd)) != frobenius2(constraint_real(d)) ||
              frobenius2(constraint_complex(gd)) != frobenius2(constraint_complex(d)))
            ++failures;
        }
        r.lhs = failures;
        r.rhs = 0;
        r.details["samples"] = a.group_samples;
        r.details["arithmetic"] = "exact rational";
        r.status = failures == 0 ? Status::Pass : Status::Fail;
      });
    } else if (check == "adhm_fermionic_constraints") {
      timed(check, [&](CheckRecord& r) {
        ADHMChart c(a.k, a.N, ADHMOptions{false, a.cartan});
        const auto cons = adhm_constraints(c);
        const auto W = fermionic_constraints(cons.V, c.chart());
        const auto& vars = c.chart()->even;
        std::vector<CompiledScalar> Vc, Wc;
        for (const auto& v : cons.V) Vc.emplace_back(v, std::span<const std::string>(vars));
        std::vector<std::vector<CompiledScalar>> dW;
        for (const auto& w : W) {
          std::vector<CompiledScalar> row;
          for (std::size_t k = 0; k < vars.size(); ++k) row.emplace_back(w.coefficient(bit(k)), std::span<const std::string>(vars));
          dW.push_back(std::move(row));
        }
        std::mt19937_64 rng(a.seed);
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        double worst = 0.0;
        const double h = 1e-5;
        for (int s2 = 0; s2 < a.fd_samples; ++s2) {
          std::vector<double> x(vars.size()), dx(vars.size()), xp(vars.size()), xm(vars.size());
          for (std::size_t i = 0; i < vars.size(); ++i) {
            x[i] = u(rng);
            dx[i] = u(rng);
            xp[i] = x[i] + h * dx[i];
            xm[i] = x[i] - h * dx[i];
          }
          for (std::size_t q = 0; q < Vc.size(); ++q) {
            const double fd = (Vc[q](xp) - Vc[q](xm)) / (2 * h);
            double lin = 0.0;
            for (std::size_t k = 0; k < vars.size(); ++k) lin += dW[q][k](x) * dx[k];
            worst = std::max(worst, std::abs(fd - lin) / std::max(1.0, std::abs(lin)));
          }
        }
        r.lhs = worst;
        r.details["constraints"] = cons.V.size();
        r.details["tolerance"] = 1e-5;
        r.status = worst < 1e-5 ? Status::Pass : Status::Fail;
      });
    } else if (check == "adhm_multipliers") {
      timed(check, [&](CheckRecord& r) {
        ADHMChart c(a.k, a.N, ADHMOptions{true, a.cartan});
        auto cs = adhm_multiplier_system(c, false, true);
        auto cr = multiplier_completion(cs.V, cs.xi_star, cs.base_vars, cs.Ttilde, cs.H, a.parameters);
        auto fs = adhm_multiplier_system(c, true, true);
        auto fr = multiplier_completion(fs.V, fs.xi_star, fs.base_vars, fs.Ttilde, fs.H, a.parameters);
        ADHMChart toy(1, a.N, ADHMOptions{true, true});
        auto ts = adhm_multiplier_system(toy, true, false);
        auto tr = multiplier_completion(ts.V, ts.xi_star, ts.base_vars, ts.Ttilde, ts.H);
        r.details["complex_sector"] = Json{{"residual_vanishes", cr.residual_vanishes},
                                           {"invertible", cr.invertible},
                                           {"det", to_string(cr.det)}};
        r.details["full_sector"] =
            Json{{"residual_vanishes", fr.residual_vanishes}, {"invertible", fr.invertible}};
        r.details["abelian_toy"] = Json{{"residual_vanishes", tr.residual_vanishes},
                                        {"flagged_non_invertible", !tr.invertible}};
        const bool ok = cr.residual_vanishes && fr.residual_vanishes && tr.residual_vanishes && cr.invertible &&
                        !tr.invertible;
        r.status = ok ? Status::Pass : Status::Fail;
      });
    } else if (check == "adhm_fixed_points") {
      timed(check, [&](CheckRecord& r) {
        if (a.k != 1) throw Error(ErrorCode::SchemaError, "adhm_fixed_points needs k = 1");
        ADHMChart c(1, a.N, ADHMOptions{false, true});
        auto fps = adhm_k1_fixed_points(c, a.parameters);
        Json pts = Json::array();
        bool ok = fps.size() == a.N;
        for (const auto& fp : fps) {
          Matrix<ScalarExpr> L = adhm_k1_tangent_linearization(c, fp);
          ScalarExpr pf = pfaffian(transpose(L));
          ScalarExpr prod(1);
          Json w = Json::array();
          for (const auto& x : fp.weights) {
            prod = prod * x;
            w.push_back(to_string(x));
          }
          const bool match = vanishes_identically(pf - prod);
          ok = ok && match;
          pts.push_back(Json{{"l", fp.l + 1}, {"weights", w}, {"pfaffian", to_string(pf)}, {"matches_product", match}});
        }
        r.lhs = static_cast<double>(fps.size());
        r.rhs = static_cast<double>(a.N);
        r.details["points"] = pts;
        r.status = ok ? Status::Pass : Status::Fail;
      });
    } else {
      schema_error("checks", "unknown check '" + check + "'");
    }
  } else if (check == "rank_bookkeeping") {
    timed(check, [&](CheckRecord& r) {
      Json rows = Json::array();
      bool ok = true;
      for (long k = 1; k <= 2; ++k)
        for (long N = 1; N <= 5; ++N) {
          const long r1 = rank_bookkeeping(k, N, 1), r2 = rank_bookkeeping(k, N, 2), r4 = rank_bookkeeping(k, N, 4);
          ok = ok && r1 == 2 * k * N && r2 == 4 * k * N && r4 == 8 * k * N;
          rows.push_back(Json{{"k", k}, {"N", N}, {"S1", r1}, {"S2", r2}, {"S4", r4}});
        }
      r.details["ranks"] = rows;
      r.status = ok ? Status::Pass : Status::Fail;
    });
  } else {
    schema_error("checks", "unknown check '" + check + "'");
  }
}

inline Report run_command(const Scenario& s, Command c, std::optional<double> tol = std::nullopt) {
  Scenario sc = s;
  if (tol) sc.tol = *tol;
  Report rep;
  rep.scenario = sc.name;
  rep.command = to_string(c);
  rep.hash = sc.hash;
  std::vector<std::string> checks;
  if (sc.checks) {
    for (const auto& name : *sc.checks) {
      auto fam = command_of_check(name);
      if (!fam) schema_error("checks", "unknown check '" + name + "'");
      if (*fam == c) checks.push_back(name);
    }
  } else {
    checks = default_checks(sc, c);
  }
  for (const auto& name : checks) run_check(sc, name, rep);
  return rep;
}

inline Report run_localize(const Scenario& s, std::optional<double> tol = std::nullopt) {
  return run_command(s, Command::Localize, tol);
}
inline Report run_oracle(const Scenario& s, std::optional<double> tol = std::nullopt) {
  return run_command(s, Command::Oracle, tol);
}
inline Report run_compare(const Scenario& s, std::optional<double> tol = std::nullopt) {
  return run_command(s, Command::Compare, tol);
}
inline Report run_brst_check(const Scenario& s, std::optional<double> tol = std::nullopt) {
  return run_command(s, Command::BrstCheck, tol);
}

}  // namespace superloc

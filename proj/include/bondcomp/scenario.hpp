#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "bondcomp/claims.hpp"
#include "bondcomp/errors.hpp"
#include "bondcomp/hedge.hpp"
#include "bondcomp/hjm.hpp"
#include "bondcomp/levy.hpp"
#include "bondcomp/paths.hpp"
#include "bondcomp/probe.hpp"

namespace bondcomp {

using json = nlohmann::json;

/// Read-only view of a config node that knows its own field path, so that every
/// validation failure names the offending field.
class ConfigNode {
 public:
  ConfigNode(const json& j, std::string path) : j_(&j), path_(std::move(path)) {}

  const std::string& path() const { return path_; }
  const json& raw() const { return *j_; }

  bool has(const std::string& key) const { return j_->is_object() && j_->contains(key); }

  ConfigNode operator[](const std::string& key) const {
    if (!j_->is_object()) fail("expected an object");
    auto it = j_->find(key);
    if (it == j_->end()) throw ConfigError(child(key), "missing required field");
    return ConfigNode(*it, child(key));
  }

  ConfigNode at(std::size_t i) const {
    if (!j_->is_array()) fail("expected an array");
    if (i >= j_->size()) fail("index out of range");
    return ConfigNode((*j_)[i], path_ + "[" + std::to_string(i) + "]");
  }

  std::size_t size() const {
    if (!j_->is_array()) fail("expected an array");
    return j_->size();
  }

  double number() const {
    if (!j_->is_number()) fail("expected a number");
    const double v = j_->get<double>();
    if (!std::isfinite(v)) fail("must be finite");
    return v;
  }
  double positive() const {
    const double v = number();
    if (!(v > 0.0)) fail("must be positive");
    return v;
  }
  std::int64_t integer() const {
    if (!j_->is_number_integer()) fail("expected an integer");
    return j_->get<std::int64_t>();
  }
  std::size_t count(std::size_t min = 1) const {
    const auto v = integer();
    if (v < static_cast<std::int64_t>(min)) fail("must be at least " + std::to_string(min));
    return static_cast<std::size_t>(v);
  }
  std::string string() const {
    if (!j_->is_string()) fail("expected a string");
    return j_->get<std::string>();
  }
  bool boolean() const {
    if (!j_->is_boolean()) fail("expected true or false");
    return j_->get<bool>();
  }

  double number_or(const std::string& key, double dflt) const { return has(key) ? (*this)[key].number() : dflt; }
  double positive_or(const std::string& key, double dflt) const { return has(key) ? (*this)[key].positive() : dflt; }
  std::size_t count_or(const std::string& key, std::size_t dflt, std::size_t min = 1) const {
    return has(key) ? (*this)[key].count(min) : dflt;
  }
  std::string string_or(const std::string& key, const std::string& dflt) const {
    return has(key) ? (*this)[key].string() : dflt;
  }
  bool boolean_or(const std::string& key, bool dflt) const { return has(key) ? (*this)[key].boolean() : dflt; }

  [[noreturn]] void fail(const std::string& what) const { throw ConfigError(path_.empty() ? "<root>" : path_, what); }

 private:
  std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json* j_;
  std::string path_;
};

enum class Experiment { HedgeBacktest, MartingaleCheck, ConcentrationProbe, DiscreteProbe, IsometryCheck };

inline const char* to_string(Experiment e) {
  switch (e) {
    case Experiment::HedgeBacktest: return "hedge_backtest";
    case Experiment::MartingaleCheck: return "martingale_check";
    case Experiment::ConcentrationProbe: return "concentration_probe";
    case Experiment::DiscreteProbe: return "discrete_probe";
    case Experiment::IsometryCheck: return "isometry_check";
  }
  return "?";
}

struct GridSpec {
  MaturityGrid grid;
  std::size_t n_steps = 0;
  double sim_horizon = 0.0;
  std::size_t quad_points = 64;
};

struct Scenario {
  json config;  // as loaded, used for hashing and per-experiment options
  std::string name;
  Experiment experiment = Experiment::HedgeBacktest;
  double horizon = 1.0;
  GridSpec grid;
  std::vector<double> f0;
  std::optional<ModelCoefficients> coefficients;
  std::optional<LevyMeasure> levy;
  std::uint64_t seed = 0;
  std::size_t paths = 0;
  HedgeOptions hedge;
  std::size_t sweep_levels = 3;
  bool write_csv = true;
  std::optional<std::size_t> dump_path;

  const ModelCoefficients& mc() const { return *coefficients; }
  const LevyMeasure& nu() const { return *levy; }
  MarketModel market(std::size_t n_steps) const {
    return MarketModel(mc(), nu(), grid.grid, f0, grid.sim_horizon, n_steps);
  }
  MarketModel market() const { return market(grid.n_steps); }
};

/// FNV-1a over the canonical (key-sorted, compact) dump.
inline std::uint64_t config_hash(const json& config) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : config.dump()) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << v;
  return os.str();
}

namespace parse {

inline Experiment experiment(const ConfigNode& n) {
  const auto s = n.string();
  for (auto e : {Experiment::HedgeBacktest, Experiment::MartingaleCheck, Experiment::ConcentrationProbe,
                 Experiment::DiscreteProbe, Experiment::IsometryCheck}) {
    if (s == to_string(e)) return e;
  }
  n.fail("unknown experiment '" + s + "'");
}

inline GridSpec grid(const ConfigNode& n, double horizon) {
  GridSpec g;
  const auto cells = n["maturity_cells"].count(1);
  g.grid = MaturityGrid::uniform(horizon, cells);
  if (n.has("tradeable")) {
    const auto t = n["tradeable"];
    if (t.raw().is_string()) {
      if (t.string() != "dyadic") t.fail("expected \"dyadic\" or a list of maturities");
    } else {
      std::vector<std::size_t> J;
      for (std::size_t i = 0; i < t.size(); ++i) {
        const auto e = t.at(i);
        const double T = e.number();
        const auto node = g.grid.find(T);
        if (!node) e.fail("maturity " + std::to_string(T) + " is not a grid point");
        if (*node == 0) e.fail("maturity 0 cannot be traded");
        J.push_back(*node);
      }
      if (J.empty()) t.fail("J must be nonempty");
      g.grid.tradeable = std::move(J);
    }
  }
  g.n_steps = n["n_steps"].count(1);
  g.sim_horizon = n.positive_or("sim_horizon", horizon);
  if (g.sim_horizon > horizon * (1.0 + 1e-12)) n["sim_horizon"].fail("must not exceed the horizon");
  g.quad_points = n.count_or("quad_points", 64, 2);
  return g;
}

inline CurveFn curve(const ConfigNode& n) {
  const auto type = n["type"].string();
  if (type == "zero") return coeff::zero();
  if (type == "constant") return coeff::constant(n["value"].number());
  if (type == "exp_decay") return coeff::exp_decay(n["value"].number(), n["lambda"].number());
  n["type"].fail("unknown curve type '" + type + "'");
}

inline JumpFn gamma(const ConfigNode& n) {
  const auto type = n["type"].string();
  if (type == "zero") return coeff::zero_jump();
  if (type == "linear") return make_linear_gamma(curve(n["coeff"]));
  if (type == "mark_decay") return coeff::mark_decay(n["value"].number(), n["kappa"].positive());
  if (type == "saturating") return coeff::saturating(n["value"].number());
  n["type"].fail("unknown gamma type '" + type + "'");
}

inline std::vector<Atom> atom_list(const ConfigNode& n) {
  std::vector<Atom> atoms;
  for (std::size_t i = 0; i < n.size(); ++i) {
    const auto a = n.at(i);
    atoms.push_back(Atom{a["x"].number(), a["mass"].positive()});
  }
  return atoms;
}

// Atoms x_i = scale * i, i = 1..count, with a closed-form bound on the omitted mass.
inline LevyMeasure discrete_family(const ConfigNode& n) {
  const auto count = n["count"].count(1);
  const double scale = n.positive_or("scale", 1.0);
  const auto m = n["masses"];
  const auto type = m["type"].string();
  std::vector<Atom> atoms;
  double tail = 0.0;
  const double N = static_cast<double>(count);
  if (type == "power") {
    const double p = m["exponent"].number();
    if (!(p > 1.0)) m["exponent"].fail("must exceed 1");
    for (std::size_t i = 1; i <= count; ++i) atoms.push_back({scale * static_cast<double>(i), std::pow(static_cast<double>(i), -p)});
    tail = std::pow(N, 1.0 - p) / (p - 1.0);
  } else if (type == "geometric") {
    const double q = m["ratio"].positive();
    if (!(q < 1.0)) m["ratio"].fail("must lie in (0,1)");
    for (std::size_t i = 1; i <= count; ++i) atoms.push_back({scale * static_cast<double>(i), std::pow(q, static_cast<double>(i - 1))});
    tail = std::pow(q, N) / (1.0 - q);
  } else if (type == "exponential") {
    const double r = m["rate"].positive();
    for (std::size_t i = 1; i <= count; ++i) atoms.push_back({scale * static_cast<double>(i), std::exp(-r * static_cast<double>(i))});
    tail = std::exp(-r * (N + 1.0)) / (1.0 - std::exp(-r));
  } else {
    m["type"].fail("unknown mass family '" + type + "'");
  }
  return LevyMeasure::discrete(std::move(atoms), tail);
}

inline LevyMeasure levy(const ConfigNode& n) {
  const auto type = n["type"].string();
  try {
    if (type == "finite_atoms") return LevyMeasure::finite(atom_list(n["atoms"]));
    if (type == "discrete_atoms") return LevyMeasure::discrete(atom_list(n["atoms"]), n["tail_bound"].number());
    if (type == "discrete_family") return discrete_family(n);
    if (type == "uniform") {
      return LevyMeasure::uniform(n["lo"].number(), n["hi"].number(), n["intensity"].positive(),
                                  n.number_or("concentration_point", 0.5 * (n["lo"].number() + n["hi"].number())),
                                  n.count_or("grid_points", 4096, 2));
    }
  } catch (const std::invalid_argument& e) {
    n.fail(e.what());
  }
  n["type"].fail("unknown measure type '" + type + "'");
}

inline EpsilonSequence epsilon(const ConfigNode& n) {
  const auto rule = n["rule"].string();
  try {
    if (rule == "harmonic") return EpsilonSequence::harmonic(n.positive_or("scale", 1.0));
    if (rule == "geometric") return EpsilonSequence::geometric(n.positive_or("scale", 1.0), n["ratio"].number());
    if (rule == "explicit") {
      const auto r = n["radii"];
      std::vector<double> radii;
      for (std::size_t i = 0; i < r.size(); ++i) radii.push_back(r.at(i).number());
      return EpsilonSequence::explicit_prefix(std::move(radii));
    }
  } catch (const std::invalid_argument& e) {
    n.fail(e.what());
  }
  n["rule"].fail("unknown epsilon rule '" + rule + "'");
}

}  // namespace parse

/// Parse and validate a scenario. Every failure is a ConfigError naming the field.
inline Scenario load_scenario(const json& config) {
  const ConfigNode root(config, "");
  Scenario s;
  s.config = config;
  s.name = root["name"].string();
  s.experiment = parse::experiment(root["experiment"]);
  s.horizon = root["horizon"].positive();
  s.grid = parse::grid(root["grid"], s.horizon);

  const auto fwd = root["initial_forward"];
  const double level = fwd["level"].number();
  const double slope = fwd.number_or("slope", 0.0);
  for (double T : s.grid.grid.nodes) s.f0.push_back(level + slope * T);

  s.coefficients.emplace(parse::curve(root["sigma"]), parse::gamma(root["gamma"]), std::nullopt, s.horizon);
  s.levy.emplace(parse::levy(root["levy"]));
  try {
    s.coefficients->check_integrability(*s.levy, s.grid.grid);
  } catch (const NumericalError& e) {
    throw ConfigError("gamma", e.what());
  }

  const auto seeds = root["seeds"];
  const auto base = seeds["base"].integer();
  if (base < 0) seeds["base"].fail("must be non-negative");
  s.seed = static_cast<std::uint64_t>(base);
  s.paths = seeds.count_or("paths", 0, 0);

  if (root.has("hedge")) {
    const auto h = root["hedge"];
    s.hedge.rank_tol = h.positive_or("rank_tol", s.hedge.rank_tol);
    s.hedge.condition_threshold = h.positive_or("condition_threshold", s.hedge.condition_threshold);
  }
  if (root.has("sweep")) s.sweep_levels = root["sweep"].count_or("levels", 3, 2);
  if (root.has("output")) {
    const auto o = root["output"];
    s.write_csv = o.boolean_or("csv", true);
    if (o.has("dump_path")) s.dump_path = o["dump_path"].count(0);
  }

  // Experiment-specific sections are validated eagerly so `validate` catches them.
  switch (s.experiment) {
    case Experiment::HedgeBacktest:
    case Experiment::IsometryCheck:
      if (!root.has("claim")) throw ConfigError("claim", "missing required field");
      if (s.paths == 0) throw ConfigError("seeds.paths", "must be at least 1");
      break;
    case Experiment::MartingaleCheck:
      if (s.paths < 2) throw ConfigError("seeds.paths", "must be at least 2");
      break;
    case Experiment::ConcentrationProbe:
    case Experiment::DiscreteProbe:
      if (!root.has("probe")) throw ConfigError("probe", "missing required field");
      break;
  }
  if (s.experiment == Experiment::HedgeBacktest && s.levy->is_density())
    throw ConfigError("levy.type", "hedge_backtest needs an atom measure");
  if (s.experiment == Experiment::ConcentrationProbe) {
    const auto p = root["probe"];
    (void)p["x0"].number();
    (void)parse::epsilon(p["eps"]);
  }
  if (s.experiment == Experiment::DiscreteProbe) {
    const auto p = root["probe"];
    if (s.levy->is_density()) throw ConfigError("levy.type", "discrete_probe needs an atom measure");
    // Finite measures run the complete-case control and need no kind.
    if (!s.levy->is_finite_atoms() || p.has("kind")) {
      const auto k = p["kind"];
      if (!discrete_kind_from_string(k.string())) k.fail("unknown probe kind '" + k.string() + "'");
    }
  }
  return s;
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("--config", "cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("<root>", std::string("malformed JSON: ") + e.what());
  }
}

inline Scenario load_scenario_file(const std::string& path) { return load_scenario(read_json_file(path)); }

/// Mark-only jump integrand of a claim section (oscillating, sqrt_thin_atoms,
/// constant_one, exponential).
inline std::optional<PsiConstruction> build_psi(const ConfigNode& claim, const LevyMeasure& nu) {
  const auto type = claim["type"].string();
  try {
    if (type == "oscillating") return make_oscillating_psi(claim["x0"].number(), parse::epsilon(claim["eps"]));
    if (type == "sqrt_thin_atoms") return make_sqrt_psi(nu);
    if (type == "constant_one") return make_constant_psi(nu, claim.number_or("value", 1.0));
    if (type == "exponential")
      return make_exponential_psi(claim["g_tilde"].positive(), claim["epsilon"].positive(), nu);
  } catch (const std::invalid_argument& e) {
    claim.fail(e.what());
  }
  return std::nullopt;
}

/// Claim section to ClaimSpec. Bond claims need the market to read off their integrands.
inline ClaimSpec build_claim(const ConfigNode& claim, const MarketModel& model) {
  const auto type = claim["type"].string();
  if (type == "bond") {
    const auto m = claim["maturity"];
    const auto node = model.grid().find(m.number());
    if (!node) m.fail("maturity is not a grid point");
    return bond_claim(model, *node);
  }
  if (type == "constant") {
    return constant_claim(claim.number_or("x0", 0.0), claim.number_or("phi", 0.0), claim.number_or("psi", 0.0));
  }
  if (type == "zero") return constant_claim(0.0, 0.0, 0.0);
  if (type == "random_bounded") {
    const auto seed = claim.has("seed") ? claim["seed"].integer() : 1;
    return random_bounded_claim(static_cast<std::uint64_t>(seed));
  }
  if (auto psi = build_psi(claim, model.levy())) return jump_claim(*psi, type);
  claim["type"].fail("unknown claim type '" + type + "'");
}

}  // namespace bondcomp

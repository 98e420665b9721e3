#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "bondcomp/claims.hpp"
#include "bondcomp/hedge.hpp"
#include "bondcomp/parallel.hpp"
#include "bondcomp/paths.hpp"
#include "bondcomp/probe.hpp"
#include "bondcomp/scenario.hpp"

namespace bondcomp {

inline constexpr int kSchemaVersion = 1;

struct RunOptions {
  std::size_t jobs = 1;
  std::uint64_t seed_offset = 0;
};

struct CsvTable {
  std::string name;
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;
};

struct RunResult {
  json summary;
  std::vector<CsvTable> tables;
  std::optional<std::string> verdict;  // probes only
  double headline = 0.0;               // the number a sweep tracks
};

// Round-trippable decimal form, identical across runs and platforms using IEEE doubles.
inline std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline json to_json(const GammaCertificate& c) {
  json j;
  j["scenario"] = c.scenario;
  j["kind"] = c.kind;
  j["threshold"] = c.threshold;
  j["verdict"] = c.verdict;
  j["points"] = c.points;
  j["numerators"] = c.numerators;
  j["denominators"] = c.denominators;
  json g = json::array();
  for (double v : c.gammas) g.push_back(finite_or_null(v));
  j["gammas"] = g;
  if (!c.separations.empty()) {
    j["separations"] = c.separations;
    j["lipschitz_bound"] = c.lipschitz_bound;
    j["differentiability_integral"] = c.differentiability_integral;
  }
  return j;
}

inline json to_json(const std::set<ClassTag>& tags) {
  json j = json::array();
  for (auto t : tags) j.push_back(to_string(t));
  return j;
}

namespace detail {

inline std::uint64_t path_seed(const Scenario& s, const RunOptions& o, std::size_t i) {
  return derive_seed(s.seed + o.seed_offset, stream::kPath, i);
}

inline MarketState initial_state(const Scenario& s) {
  MarketState st;
  st.t = 0.0;
  st.f = s.f0;
  reprice(st, s.grid.grid);
  return st;
}

inline ProbeContext probe_context(const Scenario& s) {
  return ProbeContext(integrate_coefficients(s.mc(), s.grid.grid, s.grid.quad_points), s.grid.grid, initial_state(s));
}

inline CsvTable path_dump(const MarketModel& model, const PathRecord& rec) {
  CsvTable t;
  t.name = "path";
  t.columns = {"t", "B"};
  for (std::size_t j : model.grid().tradeable) t.columns.push_back("Phat_" + fmt(model.grid().nodes[j]));
  t.columns.push_back("dW");
  t.columns.push_back("jump_marks");
  for (std::size_t k = 0; k < rec.states.size(); ++k) {
    std::vector<std::string> row{fmt(rec.times[k]), fmt(rec.states[k].bank)};
    for (std::size_t j : model.grid().tradeable) row.push_back(fmt(rec.states[k].Phat[j]));
    row.push_back(k == 0 ? "" : fmt(rec.noise.dW[k - 1]));
    std::string marks;
    for (std::size_t e = 0; e < rec.noise.jumps.size(); ++e) {
      if (k > 0 && rec.noise.jump_step[e] == k - 1) marks += (marks.empty() ? "" : ";") + fmt(rec.noise.jumps[e].mark);
    }
    row.push_back(marks);
    t.rows.push_back(std::move(row));
  }
  return t;
}

}  // namespace detail

inline RunResult run_martingale_check(const Scenario& s, const RunOptions& o, std::size_t n_steps) {
  const MarketModel model = s.market(n_steps);
  const auto p0 = model.initial_state().Phat;
  const auto terminal = parallel_map(s.paths, o.jobs, [&](std::size_t i) {
    return simulate_path(model, detail::path_seed(s, o, i), {.record_states = false}).terminal();
  });
  const std::size_t m = model.grid().size();
  std::vector<double> mean(m, 0.0), var(m, 0.0);
  double min_price = std::numeric_limits<double>::infinity();
  double min_bank = min_price;
  for (const auto& st : terminal) {
    for (std::size_t j = 0; j < m; ++j) {
      mean[j] += st.Phat[j];
      min_price = std::min(min_price, st.P[j]);
    }
    min_bank = std::min(min_bank, st.bank);
  }
  const double n = static_cast<double>(s.paths);
  for (double& v : mean) v /= n;
  for (const auto& st : terminal)
    for (std::size_t j = 0; j < m; ++j) var[j] += (st.Phat[j] - mean[j]) * (st.Phat[j] - mean[j]);
  RunResult r;
  CsvTable t{"maturities", {"T", "Phat0", "mean", "se", "z"}, {}};
  double max_z = 0.0;
  json z_list = json::array();
  for (std::size_t j = 0; j < m; ++j) {
    const double se = std::sqrt(var[j] / (n - 1.0) / n);
    const double diff = std::abs(mean[j] - p0[j]);
    const double z = se > 0.0 ? diff / se : (diff <= 1e-14 ? 0.0 : std::numeric_limits<double>::infinity());
    max_z = std::max(max_z, z);
    z_list.push_back(finite_or_null(z));
    t.rows.push_back({fmt(model.grid().nodes[j]), fmt(p0[j]), fmt(mean[j]), fmt(se), fmt(z)});
  }
  r.summary["paths"] = s.paths;
  r.summary["n_steps"] = n_steps;
  r.summary["max_z"] = finite_or_null(max_z);
  r.summary["z"] = z_list;
  r.summary["pass"] = max_z <= 3.0;
  r.summary["min_bond_price"] = min_price;
  r.summary["min_bank"] = min_bank;
  r.tables.push_back(std::move(t));
  if (s.dump_path && *s.dump_path < s.paths)
    r.tables.push_back(detail::path_dump(model, simulate_path(model, detail::path_seed(s, o, *s.dump_path))));
  r.headline = max_z;
  return r;
}

inline RunResult run_hedge_backtest(const Scenario& s, const RunOptions& o, std::size_t n_steps) {
  const MarketModel model = s.market(n_steps);
  const ConfigNode claim_node(s.config["claim"], "claim");
  const ClaimSpec claim = build_claim(claim_node, model);
  const Hedger hedger(model, s.hedge);
  const auto results = parallel_map(s.paths, o.jobs, [&](std::size_t i) {
    return hedger.run(simulate_path(model, detail::path_seed(s, o, i)), claim);
  });
  const auto rep = summarize(results);
  RunResult r;
  json cols = json::array();
  for (std::size_t c : hedger.initial_columns()) cols.push_back(model.grid().nodes[c]);
  r.summary["paths"] = s.paths;
  r.summary["n_steps"] = n_steps;
  r.summary["claim"] = claim.name;
  r.summary["atoms"] = hedger.atom_count();
  r.summary["initial_columns"] = cols;
  r.summary["mean_error"] = rep.mean_error;
  r.summary["rms_error"] = rep.rms_error;
  r.summary["max_abs_error"] = rep.max_abs_error;
  r.summary["worst_residual"] = rep.worst_residual;
  r.summary["residual_median"] = rep.residual_median;
  r.summary["residual_p99"] = rep.residual_p99;
  r.summary["worst_condition"] = rep.worst_condition;
  r.summary["reselections"] = rep.reselections;
  CsvTable t{"paths", {"path", "terminal_wealth", "claim_value", "error", "max_residual"}, {}};
  for (std::size_t i = 0; i < results.size(); ++i) {
    t.rows.push_back({std::to_string(i), fmt(rep.terminal_wealth[i]), fmt(rep.claim_value[i]), fmt(rep.error[i]),
                      fmt(rep.max_residual[i])});
  }
  r.tables.push_back(std::move(t));
  if (s.dump_path && *s.dump_path < s.paths)
    r.tables.push_back(detail::path_dump(model, simulate_path(model, detail::path_seed(s, o, *s.dump_path))));
  r.headline = rep.rms_error;
  return r;
}

struct ClaimSample {
  double value = 0.0;
  double tau = 0.0;
  bool stopped = false;
};

/// Samples of X = int int psi dN~ (optionally stopped at level k0) over the configured
/// paths, with the bounded-claim and isometry statistics.
inline json claim_statistics(const Scenario& s, const RunOptions& o, const PsiConstruction& psi,
                             std::optional<double> k0, std::size_t n_steps, CsvTable* table = nullptr) {
  const double horizon = s.grid.sim_horizon;
  const double comp = s.nu().compensator_integral(psi.fn);
  const double comp2 = s.nu().compensator_integral([&](double x) { return psi(x) * psi(x); });
  const auto samples = parallel_map(s.paths, o.jobs, [&](std::size_t i) {
    const auto noise = simulate_noise(s.nu(), horizon, n_steps, detail::path_seed(s, o, i));
    ClaimSample c;
    if (k0) {
      const auto st = truncate_claim_by_stopping(psi.fn, s.nu(), noise, *k0);
      c = ClaimSample{st.value, st.tau, st.stopped};
    } else {
      c = ClaimSample{compensated_jump_integral(noise, comp, psi.fn), horizon, false};
    }
    return c;
  });
  const double n = static_cast<double>(samples.size());
  // Isometry: E[X^2] = E[tau] int psi^2 nu, tested through D = X^2 - tau int psi^2 nu.
  double m1 = 0.0, m2 = 0.0, d1 = 0.0, d2 = 0.0, tau = 0.0, max_abs = 0.0;
  std::size_t stopped = 0, violations = 0;
  for (const auto& c : samples) {
    const double x2 = c.value * c.value;
    const double d = x2 - c.tau * comp2;
    m1 += c.value;
    m2 += x2;
    d1 += d;
    tau += c.tau;
    max_abs = std::max(max_abs, std::abs(c.value));
    stopped += c.stopped ? 1 : 0;
    if (k0 && std::abs(c.value) > *k0 + 1.0) ++violations;
  }
  m1 /= n;
  m2 /= n;
  d1 /= n;
  tau /= n;
  double x2var = 0.0;
  for (const auto& c : samples) {
    const double d = c.value * c.value - c.tau * comp2 - d1;
    d2 += d * d;
    x2var += (c.value * c.value - m2) * (c.value * c.value - m2);
  }
  const double d_se = std::sqrt(d2 / (n - 1.0) / n);
  const double z = d_se > 0.0 ? std::abs(d1) / d_se : (std::abs(d1) <= 1e-14 ? 0.0 : std::numeric_limits<double>::infinity());
  json j;
  j["paths"] = s.paths;
  j["mean"] = m1;
  j["second_moment"] = m2;
  j["second_moment_se"] = std::sqrt(x2var / (n - 1.0) / n);
  j["isometry_value"] = tau * comp2;
  j["isometry_z"] = finite_or_null(z);
  j["isometry_pass"] = z <= 3.0;
  j["compensator_l2"] = comp2;
  j["max_abs_claim"] = max_abs;
  if (k0) {
    j["k0"] = *k0;
    j["bound"] = *k0 + 1.0;
    j["violations"] = violations;
    j["stopped_fraction"] = static_cast<double>(stopped) / n;
    j["mean_tau"] = tau;
  }
  if (table) {
    *table = CsvTable{"claims", {"path", "value", "tau", "stopped"}, {}};
    for (std::size_t i = 0; i < samples.size(); ++i)
      table->rows.push_back({std::to_string(i), fmt(samples[i].value), fmt(samples[i].tau), samples[i].stopped ? "1" : "0"});
  }
  return j;
}

inline std::optional<double> stopping_level(const ConfigNode& claim) {
  if (!claim.has("stopping")) return std::nullopt;
  return claim["stopping"]["k0"].positive();
}

inline RunResult run_isometry_check(const Scenario& s, const RunOptions& o, std::size_t n_steps) {
  const ConfigNode claim(s.config["claim"], "claim");
  const auto psi = build_psi(claim, s.nu());
  if (!psi) claim["type"].fail("isometry_check needs a mark-only claim");
  RunResult r;
  CsvTable t;
  r.summary = claim_statistics(s, o, *psi, stopping_level(claim), n_steps, &t);
  r.summary["claim"] = to_string(psi->kind);
  const auto cls = classify_integrand([&](std::size_t, double x) { return (*psi)(x); }, s.nu(), n_steps,
                                      s.grid.sim_horizon, psi->tails);
  r.summary["class_tags"] = to_json(cls.tags);
  if (s.nu().is_discrete_atoms()) {
    // Partial sums of sum psi^2 nu over the truncation, which must be non-decreasing.
    const auto partial = s.nu().compensator_partial_sums([&](double x) { return (*psi)(x) * (*psi)(x); });
    bool monotone = true;
    for (std::size_t i = 1; i < partial.size(); ++i) monotone = monotone && partial[i] >= partial[i - 1];
    r.summary["l2_sum"] = partial.empty() ? 0.0 : partial.back();
    r.summary["l2_partial_sums_monotone"] = monotone;
    if (psi->tails.l2) r.summary["l2_tail_bound"] = *psi->tails.l2;
  }
  r.tables.push_back(std::move(t));
  r.headline = r.summary["isometry_z"].is_null() ? std::numeric_limits<double>::infinity()
                                                  : r.summary["isometry_z"].get<double>();
  return r;
}

inline std::vector<std::size_t> doubling_prefixes(std::size_t n) {
  std::vector<std::size_t> p;
  for (std::size_t m = 1; m < n; m *= 2) p.push_back(m);
  p.push_back(n);
  return p;
}

inline RunResult run_concentration_probe(const Scenario& s, const RunOptions& o, std::size_t n_steps) {
  const ConfigNode p(s.config["probe"], "probe");
  const double x0 = p["x0"].number();
  const auto eps = parse::epsilon(p["eps"]);
  ConcentrationOptions opts;
  opts.depth = p.count_or("depth", opts.depth);
  opts.threshold = p.positive_or("threshold", opts.threshold);
  const auto psi_kind = p.string_or("psi", "oscillating");
  std::function<double(double)> psi;
  if (psi_kind == "linear") psi = [x0](double x) { return x - x0; };
  else if (psi_kind != "oscillating") p["psi"].fail("expected \"oscillating\" or \"linear\"");
  const auto ctx = detail::probe_context(s);
  auto cert = concentration_probe(s.nu(), x0, ctx, eps, opts, psi);
  cert.scenario = s.name;

  const auto osc = make_oscillating_psi(x0, eps);
  const auto tags =
      classify_integrand([&](std::size_t, double x) { return osc(x); }, s.nu(), n_steps, s.grid.sim_horizon).tags;
  auto ts = MomentTestSet::build(ctx, cert.points, std::vector<double>(cert.points.size(), 1.0), osc.fn);
  auto report = incompleteness_report(cert, tags, best_effort_residuals(ts, doubling_prefixes(s.grid.grid.tradeable.size())));

  RunResult r;
  r.summary["certificate"] = to_json(report.certificate);
  r.summary["claim_tags"] = to_json(report.claim_tags);
  r.summary["report_verdict"] = report.verdict;
  r.summary["best_effort_residuals"] = report.best_effort;
  if (s.config.contains("claim") && s.paths > 0) {
    const ConfigNode claim(s.config["claim"], "claim");
    r.summary["bounded_claim"] = claim_statistics(s, o, osc, stopping_level(claim), n_steps);
  }
  CsvTable t{"gamma", {"k", "point", "numerator", "denominator", "separation", "gamma"}, {}};
  for (std::size_t k = 0; k < cert.gammas.size(); ++k)
    t.rows.push_back({std::to_string(k + 1), fmt(cert.points[k]), fmt(cert.numerators[k]), fmt(cert.denominators[k]),
                      fmt(cert.separations[k]), fmt(cert.gammas[k])});
  r.tables.push_back(std::move(t));
  r.verdict = cert.verdict;
  r.headline = cert.gammas.back();
  return r;
}

inline PsiConstruction default_psi(DiscreteKind kind, const LevyMeasure& nu, const DiscreteProbeOptions& opts) {
  switch (kind) {
    case DiscreteKind::GNonpositive:
    case DiscreteKind::GToAlpha: return make_sqrt_psi(nu);
    case DiscreteKind::GToZero: return make_constant_psi(nu);
    case DiscreteKind::GLinearBounded: return make_exponential_psi(opts.g_tilde, opts.epsilon, nu);
  }
  throw std::logic_error("default_psi");
}

inline RunResult run_discrete_probe(const Scenario& s, const RunOptions& o, std::size_t n_steps) {
  const ConfigNode p(s.config["probe"], "probe");
  RunResult r;
  const bool control = s.nu().is_finite_atoms() && !p.has("kind");
  std::optional<PsiConstruction> psi;
  if (s.config.contains("claim")) psi = build_psi(ConfigNode(s.config["claim"], "claim"), s.nu());

  if (control) {
    const MarketModel model = s.market(n_steps);
    const auto fn = psi ? psi->fn : std::function<double(double)>([](double) { return 1.0; });
    const auto c = finite_support_probe(model, fn, p.count_or("probes", 100), s.seed + o.seed_offset,
                                        p.positive_or("threshold", 1e6));
    r.summary["mode"] = "complete_control";
    r.summary["theta_l1"] = c.theta_l1;
    r.summary["max_gamma"] = c.max_gamma;
    r.summary["bounded"] = c.bounded;
    r.summary["verdict"] = c.verdict;
    r.summary["report_verdict"] = c.verdict == "divergent" ? "incompleteness evidence" : "no incompleteness evidence";
    CsvTable t{"gamma", {"probe", "gamma"}, {}};
    for (std::size_t k = 0; k < c.gammas.size(); ++k) t.rows.push_back({std::to_string(k + 1), fmt(c.gammas[k])});
    r.tables.push_back(std::move(t));
    r.verdict = c.verdict;
    r.headline = c.max_gamma;
    return r;
  }

  DiscreteProbeOptions opts;
  const auto kind = *discrete_kind_from_string(p["kind"].string());
  opts.depth = p.count_or("depth", 0, 0);
  opts.threshold = p.positive_or("threshold", opts.threshold);
  opts.g_tilde = p.positive_or("g_tilde", opts.g_tilde);
  opts.epsilon = p.positive_or("epsilon", opts.epsilon);
  if (!psi) psi = default_psi(kind, s.nu(), opts);
  const auto ctx = detail::probe_context(s);
  auto cert = discrete_support_probe(s.nu(), ctx, kind, *psi, opts);
  cert.scenario = s.name;

  const auto cls = classify_integrand([&](std::size_t, double x) { return (*psi)(x); }, s.nu(), n_steps,
                                      s.grid.sim_horizon, psi->tails);
  auto ts = MomentTestSet::build(ctx, cert.points, std::vector<double>(cert.points.size(), 1.0), psi->fn);
  auto report = incompleteness_report(cert, cls.tags, best_effort_residuals(ts, doubling_prefixes(s.grid.grid.tradeable.size())));
  r.summary["mode"] = "incompleteness";
  r.summary["certificate"] = to_json(report.certificate);
  r.summary["claim"] = to_string(psi->kind);
  r.summary["claim_tags"] = to_json(report.claim_tags);
  r.summary["report_verdict"] = report.verdict;
  r.summary["best_effort_residuals"] = report.best_effort;
  if (s.paths > 0) {
    std::optional<double> k0;
    if (s.config.contains("claim")) k0 = stopping_level(ConfigNode(s.config["claim"], "claim"));
    r.summary["claim_statistics"] = claim_statistics(s, o, *psi, k0, n_steps);
  }
  CsvTable t{"gamma", {"atom", "psi", "denominator", "gamma"}, {}};
  for (std::size_t k = 0; k < cert.gammas.size(); ++k)
    t.rows.push_back({fmt(cert.points[k]), fmt(cert.numerators[k]), fmt(cert.denominators[k]), fmt(cert.gammas[k])});
  r.tables.push_back(std::move(t));
  r.verdict = cert.verdict;
  r.headline = cert.gammas.empty() ? 0.0 : cert.gammas.back();
  return r;
}

inline json envelope(const Scenario& s, const RunOptions& o) {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["scenario"] = s.name;
  j["experiment"] = to_string(s.experiment);
  j["config_hash"] = hex64(config_hash(s.config));
  j["seed_offset"] = o.seed_offset;
  return j;
}

inline RunResult run_scenario(const Scenario& s, const RunOptions& o = {}, std::optional<std::size_t> n_steps = {}) {
  const std::size_t steps = n_steps.value_or(s.grid.n_steps);
  RunResult r;
  switch (s.experiment) {
    case Experiment::HedgeBacktest: r = run_hedge_backtest(s, o, steps); break;
    case Experiment::MartingaleCheck: r = run_martingale_check(s, o, steps); break;
    case Experiment::ConcentrationProbe: r = run_concentration_probe(s, o, steps); break;
    case Experiment::DiscreteProbe: r = run_discrete_probe(s, o, steps); break;
    case Experiment::IsometryCheck: r = run_isometry_check(s, o, steps); break;
  }
  json full = envelope(s, o);
  full["results"] = std::move(r.summary);
  if (r.verdict) full["verdict"] = *r.verdict;
  r.summary = std::move(full);
  return r;
}

/// Repeat the experiment with dt halved per level. Seeds are reused, and the noise is
/// nested across levels, so every level sees the same Brownian and jump skeleton.
inline RunResult refine_sweep(const Scenario& s, const RunOptions& o, std::size_t levels) {
  if (levels < 2) throw ConfigError("sweep.levels", "must be at least 2");
  RunResult out;
  out.summary = envelope(s, o);
  CsvTable t{"sweep", {"level", "n_steps", "dt", "metric", "ratio"}, {}};
  json rows = json::array();
  double prev = 0.0;
  for (std::size_t l = 0; l < levels; ++l) {
    const std::size_t n = s.grid.n_steps << l;
    const auto r = run_scenario(s, o, n);
    const double ratio = l == 0 ? std::numeric_limits<double>::quiet_NaN() : (prev > 0.0 ? r.headline / prev : 0.0);
    json row;
    row["level"] = l;
    row["n_steps"] = n;
    row["dt"] = s.grid.sim_horizon / static_cast<double>(n);
    row["metric"] = finite_or_null(r.headline);
    row["ratio"] = finite_or_null(ratio);
    rows.push_back(row);
    t.rows.push_back({std::to_string(l), std::to_string(n), fmt(s.grid.sim_horizon / static_cast<double>(n)),
                      fmt(r.headline), l == 0 ? "" : fmt(ratio)});
    prev = r.headline;
    if (r.verdict) out.verdict = r.verdict;
    out.headline = r.headline;
  }
  out.summary["levels"] = rows;
  out.tables.push_back(std::move(t));
  return out;
}

inline std::string timestamp_utc() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline void write_csv(const std::filesystem::path& file, const CsvTable& t, const std::string& hash) {
  std::ofstream out(file);
  if (!out) throw std::runtime_error("cannot write " + file.string());
  out << "# schema_version=" << kSchemaVersion << " config_hash=" << hash << "\n";
  for (std::size_t c = 0; c < t.columns.size(); ++c) out << (c ? "," : "") << t.columns[c];
  out << "\n";
  for (const auto& row : t.rows) {
    for (std::size_t c = 0; c < row.size(); ++c) out << (c ? "," : "") << row[c];
    out << "\n";
  }
}

/// Writes <name>.summary.json (generated_at is the only run-dependent field) and, when
/// enabled, <name>.<table>.csv. Returns the summary path.
inline std::filesystem::path write_outputs(const Scenario& s, RunResult r, const std::filesystem::path& dir,
                                           const std::string& suffix = "") {
  std::filesystem::create_directories(dir);
  const std::string base = s.name + suffix;
  const std::string hash = r.summary.value("config_hash", hex64(config_hash(s.config)));
  r.summary["generated_at"] = timestamp_utc();
  const auto summary = dir / (base + ".summary.json");
  std::ofstream(summary) << r.summary.dump(2) << "\n";
  if (s.write_csv)
    for (const auto& t : r.tables) write_csv(dir / (base + "." + t.name + ".csv"), t, hash);
  return summary;
}

}  // namespace bondcomp

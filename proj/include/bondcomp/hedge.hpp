#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "bondcomp/claims.hpp"
#include "bondcomp/errors.hpp"
#include "bondcomp/paths.hpp"

namespace bondcomp {

namespace detail {

inline Eigen::VectorXd singular_values(const Eigen::MatrixXd& m) {
  if (m.size() == 0) return Eigen::VectorXd();
  return Eigen::JacobiSVD<Eigen::MatrixXd>(m).singularValues();
}

inline std::size_t numeric_rank(const Eigen::VectorXd& sv, double abs_tol) {
  std::size_t r = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i) r += sv[i] > abs_tol ? 1 : 0;
  return r;
}

inline double condition_number(const Eigen::MatrixXd& m) {
  const auto sv = singular_values(m);
  if (sv.size() == 0) return 1.0;
  const double lo = sv[sv.size() - 1];
  return lo > 0.0 ? sv[0] / lo : std::numeric_limits<double>::infinity();
}

}  // namespace detail

/// Choose n+1 independent columns of `rows` ((n+1) x |J|, columns in J order).
///
/// First the shortest prefix of J on which the rows reach full rank (singular values
/// above rank_tol * sigma_max), then an in-order greedy scan of that prefix keeping each
/// column that raises the rank. Returns positions into the column order of `rows`.
inline std::vector<std::size_t> select_columns(const Eigen::MatrixXd& rows, double rank_tol = 1e-10) {
  const auto need = static_cast<std::size_t>(rows.rows());
  const auto cols = static_cast<std::size_t>(rows.cols());
  if (need == 0) throw std::invalid_argument("select_columns: no rows");
  std::size_t prefix = 0;
  double scale = 0.0;
  for (std::size_t m = need; m <= cols && prefix == 0; ++m) {
    const auto sv = detail::singular_values(rows.leftCols(static_cast<Eigen::Index>(m)));
    if (sv[0] == 0.0) continue;
    if (detail::numeric_rank(sv, rank_tol * sv[0]) == need) {
      prefix = m;
      scale = sv[0];
    }
  }
  if (prefix == 0) throw NumericalError("rows dependent over J");

  std::vector<std::size_t> chosen;
  Eigen::MatrixXd basis(rows.rows(), 0);
  for (std::size_t c = 0; c < prefix && chosen.size() < need; ++c) {
    Eigen::MatrixXd trial(rows.rows(), basis.cols() + 1);
    trial << basis, rows.col(static_cast<Eigen::Index>(c));
    if (detail::numeric_rank(detail::singular_values(trial), rank_tol * scale) ==
        static_cast<std::size_t>(trial.cols())) {
      basis = std::move(trial);
      chosen.push_back(c);
    }
  }
  if (chosen.size() != need) throw NumericalError("rows dependent over J");
  return chosen;
}

/// Holdings of one rebalancing date. `columns` are grid node indices.
struct StrategyStep {
  std::size_t step = 0;
  std::vector<std::size_t> columns;
  std::vector<double> holdings;
  double bank = 0.0;  // discounted bank position, wealth minus the bond leg
  double condition = 0.0;
  double residual = 0.0;
};

// Hedge matrix at the maturities `columns`: row 0 is S, row 1+a is exp(G(x_a)) - 1.
inline Eigen::MatrixXd hedge_matrix(std::span<const double> S, const std::vector<std::vector<double>>& G_atoms,
                                    const std::vector<std::size_t>& columns) {
  const auto n1 = static_cast<Eigen::Index>(G_atoms.size() + 1);
  Eigen::MatrixXd M(n1, static_cast<Eigen::Index>(columns.size()));
  for (std::size_t j = 0; j < columns.size(); ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    M(0, jj) = S[columns[j]];
    for (std::size_t a = 0; a < G_atoms.size(); ++a)
      M(static_cast<Eigen::Index>(a + 1), jj) = std::expm1(G_atoms[a][columns[j]]);
  }
  return M;
}

/// Solve sum_j M_{rj} y_j = target_r with y_j = Phat(t-,T_{c_j}) * holding_j.
inline StrategyStep solve_strategy_step(std::span<const double> S, const std::vector<std::vector<double>>& G_atoms,
                                        std::span<const double> phat, std::span<const double> targets,
                                        const std::vector<std::size_t>& columns, double condition_threshold = 1e8,
                                        std::size_t step = 0) {
  if (targets.size() != G_atoms.size() + 1 || columns.size() != targets.size())
    throw std::invalid_argument("solve_strategy_step: system must be square");
  const Eigen::MatrixXd M = hedge_matrix(S, G_atoms, columns);
  Eigen::VectorXd b(static_cast<Eigen::Index>(targets.size()));
  for (std::size_t r = 0; r < targets.size(); ++r) b[static_cast<Eigen::Index>(r)] = targets[r];
  StrategyStep out;
  out.step = step;
  out.columns = columns;
  out.condition = detail::condition_number(M);
  if (!(out.condition <= condition_threshold)) throw NearSingularError(step, out.condition);
  const Eigen::VectorXd y = M.colPivHouseholderQr().solve(b);
  out.residual = (M * y - b).cwiseAbs().maxCoeff();
  out.holdings.resize(columns.size());
  for (std::size_t j = 0; j < columns.size(); ++j) {
    if (!(phat[columns[j]] > 0.0)) throw NumericalError("solve_strategy_step: non-positive discounted price");
    out.holdings[j] = y[static_cast<Eigen::Index>(j)] / phat[columns[j]];
  }
  return out;
}

/// (|<theta, Phat S> - phi|, max_a |<theta, Phat (e^G - 1)> - psi_a|).
inline std::pair<double, double> verify_representation_match(const StrategyStep& s, std::span<const double> S,
                                                              const std::vector<std::vector<double>>& G_atoms,
                                                              std::span<const double> phat,
                                                              std::span<const double> targets) {
  double wiener = 0.0;
  for (std::size_t j = 0; j < s.columns.size(); ++j) wiener += s.holdings[j] * phat[s.columns[j]] * S[s.columns[j]];
  double jump = 0.0;
  for (std::size_t a = 0; a < G_atoms.size(); ++a) {
    double v = 0.0;
    for (std::size_t j = 0; j < s.columns.size(); ++j)
      v += s.holdings[j] * phat[s.columns[j]] * std::expm1(G_atoms[a][s.columns[j]]);
    jump = std::max(jump, std::abs(v - targets[a + 1]));
  }
  return {std::abs(wiener - targets[0]), jump};
}

struct HedgeOptions {
  double rank_tol = 1e-10;
  double condition_threshold = 1e8;
  bool record_steps = false;
  // Also rebalance right after each observed jump, from the pre-jump curve Phat(t-).
  bool rebalance_at_jumps = true;
};

struct WealthStep {
  StrategyStep strategy;
  std::optional<std::size_t> jump;  // leg ending at this jump; empty for the diffusion leg
  double wealth_before = 0.0;
  double wealth_after = 0.0;
  double bond_leg = 0.0;  // <theta, Phat(end) - Phat(start)>
};

struct HedgePathResult {
  double terminal_wealth = 0.0;
  double claim_value = 0.0;
  double error = 0.0;
  double max_residual = 0.0;
  double max_condition = 0.0;
  std::size_t reselections = 0;
  std::vector<WealthStep> steps;
};

/// Replication engine over a market with finitely many atoms. Columns are chosen once
/// from the t = 0 coefficients and re-chosen only when the current system degrades.
///
/// Within step k the simulated curve first moves by drift and diffusion, then by each
/// jump in turn. Holdings for the diffusion leg come from the step-start curve; with
/// rebalance_at_jumps every jump leg is hedged from the curve just before that jump.
class Hedger {
 public:
  Hedger(const MarketModel& model, HedgeOptions opts = {}) : model_(model), opts_(opts) {
    if (model_.levy().is_density() || !model_.atoms_cached())
      throw std::invalid_argument("Hedger: needs a measure with finitely many (cached) atoms");
    initial_columns_ = choose(0);
  }

  const std::vector<std::size_t>& initial_columns() const { return initial_columns_; }
  std::size_t atom_count() const { return model_.levy().atoms().size(); }
  const HedgeOptions& options() const { return opts_; }

  /// Selection over the live tradeable maturities of step k; returns grid node indices.
  std::vector<std::size_t> choose(std::size_t k) const {
    const auto& L = model_.loadings(k);
    const auto& J = model_.grid().tradeable;
    std::vector<std::size_t> live;
    for (std::size_t j : J)
      if (L.live[j]) live.push_back(j);
    const Eigen::MatrixXd M = hedge_matrix(L.S, L.G_atoms, live);
    auto picked = select_columns(M, opts_.rank_tol);
    for (auto& p : picked) p = live[p];
    return picked;
  }

  std::vector<double> targets(const ClaimSpec& claim, const StepContext& ctx) const {
    const auto atoms = model_.levy().atoms();
    std::vector<double> t(atoms.size() + 1);
    t[0] = claim.phi(ctx);
    for (std::size_t a = 0; a < atoms.size(); ++a) t[a + 1] = claim.psi(ctx, atoms[a].location);
    return t;
  }

  HedgePathResult run(const PathRecord& path, const ClaimSpec& claim) const {
    if (!path.full) throw std::invalid_argument("run_hedge: path needs recorded states");
    HedgePathResult out;
    auto columns = initial_columns_;
    double wealth = claim.x0;
    StrategyStep held;

    auto rebalance = [&](std::size_t k, const MarketState& at, const StepContext& ctx) {
      const auto& L = model_.loadings(k);
      bool stale = std::any_of(columns.begin(), columns.end(), [&](std::size_t c) { return !L.live[c]; });
      if (!stale) stale = detail::condition_number(hedge_matrix(L.S, L.G_atoms, columns)) > opts_.condition_threshold;
      if (stale) {
        columns = choose(k);
        ++out.reselections;
      }
      held = solve_strategy_step(L.S, L.G_atoms, at.Phat, targets(claim, ctx), columns, opts_.condition_threshold, k);
      double bonds = 0.0;
      for (std::size_t j = 0; j < columns.size(); ++j) bonds += held.holdings[j] * at.Phat[columns[j]];
      held.bank = wealth - bonds;
      out.max_residual = std::max(out.max_residual, held.residual);
      out.max_condition = std::max(out.max_condition, held.condition);
    };
    auto advance = [&](const MarketState& from, const MarketState& to, std::optional<std::size_t> jump) {
      double leg = 0.0;
      for (std::size_t j = 0; j < held.columns.size(); ++j)
        leg += held.holdings[j] * (to.Phat[held.columns[j]] - from.Phat[held.columns[j]]);
      const double before = wealth;
      wealth += leg;
      if (opts_.record_steps) out.steps.push_back(WealthStep{held, jump, before, wealth, leg});
    };

    std::size_t next_jump = 0;
    const auto& jumps = path.noise.jump_step;
    for (std::size_t k = 0; k < model_.n_steps(); ++k) {
      const auto& now = path.states[k];
      rebalance(k, now, StepContext{model_, path, k});
      std::size_t end = next_jump;
      while (end < jumps.size() && jumps[end] == k) ++end;
      if (!opts_.rebalance_at_jumps || end == next_jump) {
        advance(now, path.states[k + 1], std::nullopt);
        next_jump = end;
        continue;
      }
      advance(now, path.pre_jump[next_jump], std::nullopt);
      for (std::size_t i = next_jump; i < end; ++i) {
        const auto& pre = path.pre_jump[i];
        rebalance(k, pre, StepContext{model_, path, k, &pre});
        advance(pre, i + 1 < end ? path.pre_jump[i + 1] : path.states[k + 1], i);
      }
      next_jump = end;
    }
    out.terminal_wealth = wealth;
    out.claim_value = claim.value(model_, path);
    out.error = out.terminal_wealth - out.claim_value;
    return out;
  }

 private:
  const MarketModel& model_;
  HedgeOptions opts_;
  std::vector<std::size_t> initial_columns_;
};

inline HedgePathResult run_hedge(const MarketModel& model, const PathRecord& path, const ClaimSpec& claim,
                                 HedgeOptions opts = {}) {
  return Hedger(model, opts).run(path, claim);
}

struct HedgeReport {
  std::vector<double> terminal_wealth;
  std::vector<double> claim_value;
  std::vector<double> error;
  std::vector<double> max_residual;
  double mean_error = 0.0;
  double rms_error = 0.0;
  double max_abs_error = 0.0;
  double worst_residual = 0.0;
  double worst_condition = 0.0;
  double residual_median = 0.0;
  double residual_p99 = 0.0;
  std::size_t reselections = 0;
};

inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

// Aggregation in path order.
inline HedgeReport summarize(const std::vector<HedgePathResult>& paths) {
  HedgeReport r;
  double s = 0.0, s2 = 0.0;
  for (const auto& p : paths) {
    r.terminal_wealth.push_back(p.terminal_wealth);
    r.claim_value.push_back(p.claim_value);
    r.error.push_back(p.error);
    r.max_residual.push_back(p.max_residual);
    s += p.error;
    s2 += p.error * p.error;
    r.max_abs_error = std::max(r.max_abs_error, std::abs(p.error));
    r.worst_residual = std::max(r.worst_residual, p.max_residual);
    r.worst_condition = std::max(r.worst_condition, p.max_condition);
    r.reselections += p.reselections;
  }
  if (!paths.empty()) {
    const double n = static_cast<double>(paths.size());
    r.mean_error = s / n;
    r.rms_error = std::sqrt(s2 / n);
  }
  r.residual_median = quantile(r.max_residual, 0.5);
  r.residual_p99 = quantile(r.max_residual, 0.99);
  return r;
}

}  // namespace bondcomp

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "bondcomp/hjm.hpp"
#include "bondcomp/levy.hpp"
#include "bondcomp/rng.hpp"

namespace bondcomp {

/// Snapshot of the term structure on the maturity grid at time t.
struct MarketState {
  double t = 0.0;
  std::vector<double> f;     // forward rates f(t, T_j)
  std::vector<double> P;     // bond prices P(t, T_j)
  std::vector<double> Phat;  // discounted prices P(t, T_j) / B(t)
  double bank = 1.0;         // B(t)
};

// Cumulative trapezoid of `values` over the grid nodes: out[j] = int_0^{T_j}.
inline void cumulative_trapezoid(const MaturityGrid& grid, std::span<const double> values, std::span<double> out) {
  out[0] = 0.0;
  for (std::size_t j = 1; j < grid.size(); ++j) {
    out[j] = out[j - 1] + 0.5 * (grid.nodes[j] - grid.nodes[j - 1]) * (values[j - 1] + values[j]);
  }
}

/// Recompute P, B and Phat from the forward curve.
///
/// Phat(t,T_j) = exp(-int_0^{T_j} f(t,s) ds) over the grid nodes (forward rates of
/// matured maturities stay frozen at their short-rate values, so the part over [0,t] is
/// the accumulated short rate). B(t) = exp(int_0^t f(t,s) ds) with f(t,t) linearly
/// interpolated, so that P(t,T_j) = B(t) Phat(t,T_j) = exp(-int_t^{T_j} f(t,s) ds) is
/// the trapezoid over {t} and the nodes beyond t.
inline void reprice(MarketState& state, const MaturityGrid& grid) {
  const std::size_t m = grid.size();
  std::vector<double> cum(m);
  cumulative_trapezoid(grid, state.f, cum);
  const auto& T = grid.nodes;
  const double t = std::clamp(state.t, 0.0, T.back());
  std::size_t cell = static_cast<std::size_t>(std::upper_bound(T.begin(), T.end(), t) - T.begin());
  cell = std::clamp<std::size_t>(cell, 1, m - 1) - 1;  // T[cell] <= t <= T[cell+1]
  const double w = (t - T[cell]) / (T[cell + 1] - T[cell]);
  const double short_rate = (1.0 - w) * state.f[cell] + w * state.f[cell + 1];
  const double log_bank = cum[cell] + 0.5 * (t - T[cell]) * (state.f[cell] + short_rate);
  state.bank = std::exp(log_bank);
  state.P.resize(m);
  state.Phat.resize(m);
  for (std::size_t j = 0; j < m; ++j) {
    state.Phat[j] = std::exp(-cum[j]);
    state.P[j] = std::exp(log_bank - cum[j]);
  }
}

/// Coefficients of one Euler step [t, t+dt] evaluated on the maturity nodes.
///
/// A node is live when T_j >= t + dt; dead nodes carry zero loadings. S and G are the
/// grid-trapezoid integrals of the node loadings, i.e. exactly the log-price loadings
/// that repricing realises, so Phat(t+dt) = Phat(t) exp(-int alpha dt + S dW + sum G).
struct StepLoadings {
  double t = 0.0;
  double dt = 0.0;
  std::vector<char> live;
  std::vector<double> sigma;
  std::vector<double> alpha;
  std::vector<double> S;
  std::vector<std::vector<double>> gamma_atoms;  // per cached atom, node gamma
  std::vector<std::vector<double>> G_atoms;      // per cached atom, integrated G
};

/// Deterministic market description plus the per-step coefficient table shared by
/// every simulated path.
class MarketModel {
 public:
  static constexpr std::size_t kMaxCachedAtoms = 64;

  MarketModel(ModelCoefficients mc, LevyMeasure nu, MaturityGrid grid, std::vector<double> f0, double horizon,
              std::size_t n_steps)
      : mc_(std::move(mc)), nu_(std::move(nu)), grid_(std::move(grid)), f0_(std::move(f0)), horizon_(horizon),
        n_steps_(n_steps) {
    grid_.validate();
    if (n_steps_ == 0) throw std::invalid_argument("MarketModel: n_steps must be at least 1");
    if (!(horizon_ > 0.0) || horizon_ > grid_.horizon() * (1.0 + 1e-12))
      throw std::invalid_argument("MarketModel: simulation horizon must lie in (0, T*]");
    if (f0_.size() != grid_.size()) throw std::invalid_argument("MarketModel: initial curve must match the grid");
    cache_atoms_ = !nu_.is_density() && nu_.atoms().size() <= kMaxCachedAtoms;
    table_.reserve(n_steps_);
    for (std::size_t k = 0; k < n_steps_; ++k) table_.push_back(build_step(k));
  }

  const ModelCoefficients& coefficients() const { return mc_; }
  const LevyMeasure& levy() const { return nu_; }
  const MaturityGrid& grid() const { return grid_; }
  double horizon() const { return horizon_; }
  std::size_t n_steps() const { return n_steps_; }
  double dt() const { return horizon_ / static_cast<double>(n_steps_); }
  double time(std::size_t k) const { return k == n_steps_ ? horizon_ : dt() * static_cast<double>(k); }
  const StepLoadings& loadings(std::size_t k) const { return table_.at(k); }
  bool atoms_cached() const { return cache_atoms_; }

  std::optional<std::size_t> atom_index(double x) const {
    if (!cache_atoms_) return std::nullopt;
    const auto at = nu_.atoms();
    for (std::size_t a = 0; a < at.size(); ++a) {
      if (at[a].location == x) return a;
    }
    return std::nullopt;
  }

  // Node gamma(t_k, x, T_j) on live nodes.
  std::vector<double> node_gamma(std::size_t k, double x) const {
    const auto& L = table_.at(k);
    if (auto a = atom_index(x)) return L.gamma_atoms[*a];
    std::vector<double> g(grid_.size(), 0.0);
    for (std::size_t j = 0; j < grid_.size(); ++j) {
      if (L.live[j]) g[j] = mc_.gamma(L.t, x, grid_.nodes[j]);
    }
    return g;
  }

  // Integrated jump loading G(t_k, x, T_j) as realised by a jump of mark x in step k.
  std::vector<double> integrated_G(std::size_t k, double x) const {
    const auto& L = table_.at(k);
    if (auto a = atom_index(x)) return L.G_atoms[*a];
    auto g = node_gamma(k, x);
    std::vector<double> G(grid_.size());
    cumulative_trapezoid(grid_, g, G);
    for (double& v : G) v = -v;
    return G;
  }

  MarketState initial_state() const {
    MarketState s;
    s.t = 0.0;
    s.f = f0_;
    reprice(s, grid_);
    return s;
  }

 private:
  StepLoadings build_step(std::size_t k) const {
    const std::size_t m = grid_.size();
    StepLoadings L;
    L.t = time(k);
    L.dt = dt();
    const double live_from = L.t + L.dt - 1e-12 * std::max(1.0, grid_.horizon());
    L.live.assign(m, 0);
    L.sigma.assign(m, 0.0);
    L.alpha.assign(m, 0.0);
    L.S.assign(m, 0.0);
    for (std::size_t j = 0; j < m; ++j) {
      L.live[j] = grid_.nodes[j] >= live_from ? 1 : 0;
      if (L.live[j]) L.sigma[j] = mc_.sigma(L.t, grid_.nodes[j]);
    }
    cumulative_trapezoid(grid_, L.sigma, L.S);
    for (double& v : L.S) v = -v;

    auto loading_pair = [&](double x, std::vector<double>& g, std::vector<double>& G) {
      g.assign(m, 0.0);
      G.assign(m, 0.0);
      for (std::size_t j = 0; j < m; ++j) {
        if (L.live[j]) g[j] = mc_.gamma(L.t, x, grid_.nodes[j]);
      }
      cumulative_trapezoid(grid_, g, G);
      for (double& v : G) v = -v;
    };

    if (cache_atoms_) {
      const auto at = nu_.atoms();
      L.gamma_atoms.resize(at.size());
      L.G_atoms.resize(at.size());
      for (std::size_t a = 0; a < at.size(); ++a) loading_pair(at[a].location, L.gamma_atoms[a], L.G_atoms[a]);
    }

    if (!mc_.martingale_drift()) {
      for (std::size_t j = 0; j < m; ++j) {
        if (L.live[j]) L.alpha[j] = mc_.alpha(L.t, grid_.nodes[j]);
      }
      return L;
    }
    // Martingale drift on the grid: D_j = S_j^2 / 2 + int (exp(G_j(x)) - 1) nu(dx) is
    // -A(t, T_j) built from the realised loadings, and alpha is the node vector whose
    // trapezoid cumulative equals D. Then E[Phat(t+dt, T_j) / Phat(t, T_j)] = 1 exactly.
    std::vector<double> D(m, 0.0);
    auto accumulate = [&](const std::vector<double>& G, double weight) {
      for (std::size_t j = 0; j < m; ++j) {
        if (G[j] != 0.0) D[j] += weight * std::expm1(G[j]);
      }
    };
    if (cache_atoms_) {
      const auto at = nu_.atoms();
      for (std::size_t a = 0; a < at.size(); ++a) accumulate(L.G_atoms[a], at[a].mass);
    } else {
      std::vector<double> g, G;
      if (nu_.is_density()) {
        const auto xs = nu_.quadrature_nodes();
        const auto ws = nu_.quadrature_weights();
        for (std::size_t i = 0; i < xs.size(); ++i) {
          if (ws[i] == 0.0) continue;
          loading_pair(xs[i], g, G);
          accumulate(G, ws[i]);
        }
      } else {
        for (const auto& a : nu_.atoms()) {
          loading_pair(a.location, g, G);
          accumulate(G, a.mass);
        }
      }
    }
    for (std::size_t j = 0; j < m; ++j) D[j] += 0.5 * L.S[j] * L.S[j];
    for (std::size_t j = 1; j < m; ++j) {
      if (!L.live[j]) continue;
      const double h = grid_.nodes[j] - grid_.nodes[j - 1];
      L.alpha[j] = 2.0 * (D[j] - D[j - 1]) / h - L.alpha[j - 1];
    }
    return L;
  }

  ModelCoefficients mc_;
  LevyMeasure nu_;
  MaturityGrid grid_;
  std::vector<double> f0_;
  double horizon_;
  std::size_t n_steps_;
  bool cache_atoms_ = false;
  std::vector<StepLoadings> table_;
};

/// Driving noise of one path: Brownian increments per step and the jump events, each
/// tagged with the step (t_k, t_{k+1}] containing it.
struct NoisePath {
  double horizon = 0.0;
  std::size_t n_steps = 0;
  std::vector<double> dW;
  std::vector<JumpEvent> jumps;
  std::vector<std::size_t> jump_step;

  double dt() const { return horizon / static_cast<double>(n_steps); }
};

inline std::size_t step_of(double time, double dt, std::size_t n_steps) {
  const double k = std::ceil(time / dt) - 1.0;
  if (k < 0.0) return 0;
  return std::min(static_cast<std::size_t>(k), n_steps - 1);
}

/// Jumps come from their own stream, independent of n_steps, and the Brownian path is
/// nested across dyadic refinements (see wiener_increments), so refining the step
/// keeps the same noise skeleton.
inline NoisePath simulate_noise(const LevyMeasure& nu, double horizon, std::size_t n_steps, std::uint64_t seed,
                                bool antithetic = false) {
  NoisePath noise;
  noise.horizon = horizon;
  noise.n_steps = n_steps;
  noise.dW = wiener_increments(seed, horizon, n_steps, antithetic);
  Rng jump_rng(derive_seed(seed, stream::kJumps));
  noise.jumps = nu.sample_jumps(horizon, jump_rng);
  noise.jump_step.reserve(noise.jumps.size());
  for (const auto& e : noise.jumps) noise.jump_step.push_back(step_of(e.time, noise.dt(), n_steps));
  return noise;
}

struct PathRecord {
  NoisePath noise;
  std::vector<double> times;
  // states[k] is the curve at t_k after all jumps of earlier steps. With
  // record_states == false only the initial and the terminal state are kept.
  std::vector<MarketState> states;
  // Curve immediately before each jump, aligned with noise.jumps.
  std::vector<MarketState> pre_jump;
  bool full = true;

  const MarketState& terminal() const { return states.back(); }
};

struct SimulationOptions {
  bool record_states = true;
  bool antithetic = false;
};

/// Euler step of the forward curve over step k: live nodes move by
/// alpha dt + sigma dW, then each jump of the step adds gamma(t_k, x, T_j). The curve
/// before each jump is appended to `pre_jump` when given.
inline MarketState step_forward_curve(const MarketModel& model, MarketState state, std::size_t k, double dW,
                                      std::span<const JumpEvent> jumps, std::vector<MarketState>* pre_jump = nullptr) {
  const auto& L = model.loadings(k);
  const std::size_t m = model.grid().size();
  state.t = model.time(k + 1);
  for (std::size_t j = 0; j < m; ++j) {
    if (L.live[j]) state.f[j] += L.alpha[j] * L.dt + L.sigma[j] * dW;
  }
  reprice(state, model.grid());
  for (const auto& e : jumps) {
    if (pre_jump) pre_jump->push_back(state);
    if (auto a = model.atom_index(e.mark)) {
      const auto& g = L.gamma_atoms[*a];
      for (std::size_t j = 0; j < m; ++j) state.f[j] += g[j];
    } else {
      const auto g = model.node_gamma(k, e.mark);
      for (std::size_t j = 0; j < m; ++j) state.f[j] += g[j];
    }
    reprice(state, model.grid());
  }
  return state;
}

inline PathRecord simulate_path(const MarketModel& model, std::uint64_t seed, SimulationOptions opts = {}) {
  PathRecord rec;
  rec.noise = simulate_noise(model.levy(), model.horizon(), model.n_steps(), seed, opts.antithetic);
  rec.full = opts.record_states;
  const std::size_t n = model.n_steps();
  rec.times.resize(n + 1);
  for (std::size_t k = 0; k <= n; ++k) rec.times[k] = model.time(k);
  MarketState state = model.initial_state();
  if (opts.record_states) rec.states.reserve(n + 1);
  rec.states.push_back(state);
  std::size_t next_jump = 0;
  std::vector<MarketState>* pre = opts.record_states ? &rec.pre_jump : nullptr;
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t end = next_jump;
    while (end < rec.noise.jumps.size() && rec.noise.jump_step[end] == k) ++end;
    std::span<const JumpEvent> step_jumps(rec.noise.jumps.data() + next_jump, end - next_jump);
    state = step_forward_curve(model, std::move(state), k, rec.noise.dW[k], step_jumps, pre);
    next_jump = end;
    if (opts.record_states) rec.states.push_back(state);
  }
  if (!opts.record_states) rec.states.push_back(std::move(state));
  return rec;
}

/// Discretised int phi dW + int int psi dN~ along a noise path:
///   sum_k phi(k) dW_k + sum_jumps psi(k, x) - sum_k [int psi(k, x) nu(dx)] dt.
template <class Phi, class Psi>
double stochastic_integral(const NoisePath& noise, const LevyMeasure& nu, Phi&& phi, Psi&& psi) {
  double total = 0.0;
  const double dt = noise.dt();
  for (std::size_t k = 0; k < noise.n_steps; ++k) {
    const double wiener = phi(k);
    if (wiener != 0.0) total += wiener * noise.dW[k];
    total -= nu.compensator_integral([&](double x) { return psi(k, x); }) * dt;
  }
  for (std::size_t i = 0; i < noise.jumps.size(); ++i) total += psi(noise.jump_step[i], noise.jumps[i].mark);
  return total;
}

/// Same integral for a mark-only psi, with the compensator evaluated once.
template <class Psi>
double compensated_jump_integral(const NoisePath& noise, double compensator, Psi&& psi) {
  double total = -compensator * noise.horizon;
  for (const auto& e : noise.jumps) total += psi(e.mark);
  return total;
}

}  // namespace bondcomp

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "bondcomp/errors.hpp"
#include "bondcomp/levy.hpp"
#include "bondcomp/paths.hpp"

namespace bondcomp {

enum class ClassTag { Phi, Psi1, Psi2, Psi12, IndeterminateTail };

inline const char* to_string(ClassTag tag) {
  switch (tag) {
    case ClassTag::Phi: return "Phi";
    case ClassTag::Psi1: return "Psi1";
    case ClassTag::Psi2: return "Psi2";
    case ClassTag::Psi12: return "Psi12";
    case ClassTag::IndeterminateTail: return "indeterminate-tail";
  }
  return "?";
}

// Bounds on the contribution of atoms omitted by a truncation, per unit time, for
// sum |psi| nu, sum |psi|^2 nu and sum (|psi|^2 ^ |psi|) nu respectively.
struct TailBounds {
  std::optional<double> l1;
  std::optional<double> l2;
  std::optional<double> l12;
};

struct ClassReport {
  std::set<ClassTag> tags;
  double l1 = 0.0;
  double l2 = 0.0;
  double l12 = 0.0;

  bool has(ClassTag t) const { return tags.count(t) > 0; }
};

/// Integrability classes of a jump integrand psi(step, x) over a uniform time grid.
/// On a truncated infinite family a class is only certified when the matching tail
/// bound is known; otherwise the report carries IndeterminateTail instead.
template <class Psi>
ClassReport classify_integrand(Psi&& psi, const LevyMeasure& nu, std::size_t n_steps, double horizon,
                               const TailBounds& tails = {}) {
  ClassReport r;
  const double dt = horizon / static_cast<double>(n_steps);
  bool finite1 = true, finite2 = true, finite12 = true;
  auto integrate = [&](auto&& g, bool& finite) {
    double s = 0.0;
    for (std::size_t k = 0; k < n_steps && finite; ++k) {
      try {
        s += dt * nu.compensator_integral([&](double x) { return g(psi(k, x)); });
      } catch (const NumericalError&) {
        finite = false;
      }
    }
    if (!std::isfinite(s)) finite = false;
    return s;
  };
  r.l1 = integrate([](double v) { return std::abs(v); }, finite1);
  r.l2 = integrate([](double v) { return v * v; }, finite2);
  r.l12 = integrate([](double v) { return std::min(v * v, std::abs(v)); }, finite12);

  const bool truncated = nu.is_discrete_atoms();
  auto certify = [&](ClassTag tag, bool finite, const std::optional<double>& tail, double& value) {
    if (!finite) return;
    if (truncated) {
      if (!tail) {
        r.tags.insert(ClassTag::IndeterminateTail);
        return;
      }
      value += *tail * horizon;
    }
    r.tags.insert(tag);
  };
  certify(ClassTag::Psi1, finite1, tails.l1, r.l1);
  certify(ClassTag::Psi2, finite2, tails.l2, r.l2);
  certify(ClassTag::Psi12, finite12, tails.l12, r.l12);
  return r;
}

// Wiener integrand class: sum phi^2 dt finite.
template <class Phi>
bool in_phi_class(Phi&& phi, std::size_t n_steps, double horizon) {
  const double dt = horizon / static_cast<double>(n_steps);
  double s = 0.0;
  for (std::size_t k = 0; k < n_steps; ++k) {
    const double v = phi(k);
    s += v * v * dt;
  }
  return std::isfinite(s);
}

/// Decreasing radii eps_1 > eps_2 > ... -> 0 (1-based), harmonic c/n, geometric
/// c q^(n-1) or an explicit finite prefix.
class EpsilonSequence {
 public:
  static EpsilonSequence harmonic(double scale = 1.0) { return EpsilonSequence(Kind::Harmonic, scale, 0.0, {}); }
  static EpsilonSequence geometric(double scale, double ratio) {
    if (!(ratio > 0.0 && ratio < 1.0)) throw std::invalid_argument("EpsilonSequence: ratio must lie in (0,1)");
    return EpsilonSequence(Kind::Geometric, scale, ratio, {});
  }
  static EpsilonSequence explicit_prefix(std::vector<double> radii) {
    for (std::size_t i = 0; i < radii.size(); ++i) {
      if (!(radii[i] > 0.0) || (i > 0 && !(radii[i] < radii[i - 1])))
        throw std::invalid_argument("EpsilonSequence: radii must be positive and strictly decreasing");
    }
    return EpsilonSequence(Kind::Explicit, 0.0, 0.0, std::move(radii));
  }

  std::optional<std::size_t> length() const {
    if (kind_ == Kind::Explicit) return radii_.size();
    return std::nullopt;
  }

  double operator()(std::size_t n) const {
    if (n == 0) throw std::out_of_range("EpsilonSequence is 1-based");
    switch (kind_) {
      case Kind::Harmonic: return scale_ / static_cast<double>(n);
      case Kind::Geometric: return scale_ * std::pow(ratio_, static_cast<double>(n - 1));
      case Kind::Explicit:
        if (n > radii_.size()) throw std::out_of_range("EpsilonSequence: beyond the explicit prefix");
        return radii_[n - 1];
    }
    return 0.0;
  }

  std::vector<double> prefix(std::size_t count) const {
    std::vector<double> out(count);
    for (std::size_t n = 1; n <= count; ++n) out[n - 1] = (*this)(n);
    return out;
  }

  /// Annulus index n with eps_{n+1} < d <= eps_n; 0 when d > eps_1. Empty for d = 0 or
  /// when d falls below the explicit prefix.
  std::optional<std::size_t> annulus_index(double d) const {
    if (!(d > 0.0)) return std::nullopt;
    if (d > (*this)(1)) return 0;
    const auto len = length();
    // Largest n with eps_n >= d, by doubling then bisection.
    std::size_t lo = 1, hi = 2;
    while (true) {
      if (len && hi > *len) {
        hi = *len + 1;
        break;
      }
      if ((*this)(hi) < d) break;
      lo = hi;
      hi *= 2;
    }
    while (hi - lo > 1) {
      const std::size_t mid = lo + (hi - lo) / 2;
      if ((*this)(mid) >= d) lo = mid; else hi = mid;
    }
    if (len && lo == *len) return std::nullopt;  // eps_{n+1} unknown
    return lo;
  }

 private:
  enum class Kind { Harmonic, Geometric, Explicit };
  EpsilonSequence(Kind k, double s, double q, std::vector<double> r)
      : kind_(k), scale_(s), ratio_(q), radii_(std::move(r)) {}

  Kind kind_;
  double scale_;
  double ratio_;
  std::vector<double> radii_;
};

enum class PsiKind { OscillatingAtX0, SqrtAtThinAtoms, ConstantOne, ExponentialMoment, Custom };

inline const char* to_string(PsiKind k) {
  switch (k) {
    case PsiKind::OscillatingAtX0: return "oscillating";
    case PsiKind::SqrtAtThinAtoms: return "sqrt_thin_atoms";
    case PsiKind::ConstantOne: return "constant_one";
    case PsiKind::ExponentialMoment: return "exponential";
    case PsiKind::Custom: return "custom";
  }
  return "?";
}

/// Deterministic, mark-only jump integrand.
struct PsiConstruction {
  PsiKind kind = PsiKind::Custom;
  std::function<double(double)> fn;
  TailBounds tails;
  // SqrtAtThinAtoms: (atom index i_k, k) pairs in increasing order.
  std::vector<std::pair<std::size_t, std::uint64_t>> thin_atoms;

  double operator()(double x) const { return fn(x); }
};

/// psi = +-(|x| ^ 1) with the sign alternating over the annuli around x0: positive on
/// odd annuli B(x0,eps_{2k+1}) \ B(x0,eps_{2k+2}), negative on even ones, and positive
/// outside B(x0, eps_1) and at x0 itself.
inline PsiConstruction make_oscillating_psi(double x0, EpsilonSequence eps) {
  PsiConstruction p;
  p.kind = PsiKind::OscillatingAtX0;
  p.fn = [x0, eps = std::move(eps)](double x) {
    const double mag = std::min(std::abs(x), 1.0);
    const auto n = eps.annulus_index(std::abs(x - x0));
    if (!n || *n == 0) return mag;
    return (*n % 2 == 1) ? mag : -mag;
  };
  return p;
}

/// psi(x_i) = sqrt(k) at i = i_k = inf{ i : nu(x_i) <= 1/k^3 } and 0 elsewhere. When one
/// atom is i_k for several k, the smallest k labels it and the others are skipped.
inline PsiConstruction make_sqrt_psi(const LevyMeasure& nu) {
  if (nu.is_density()) throw std::invalid_argument("make_sqrt_psi: needs an atom measure");
  const auto atoms = nu.atoms();
  PsiConstruction p;
  p.kind = PsiKind::SqrtAtThinAtoms;
  std::map<double, double> values;
  std::uint64_t k = 1;
  auto qualifies = [](double mass, std::uint64_t kk) {
    const double kd = static_cast<double>(kk);
    return mass * kd * kd * kd <= 1.0 + 1e-12;  // ties admitted; absorbs rounding of 1/k^3
  };
  for (std::size_t i = 0; i < atoms.size(); ++i) {
    if (!qualifies(atoms[i].mass, k)) continue;
    p.thin_atoms.emplace_back(i, k);
    values[atoms[i].location] = std::sqrt(static_cast<double>(k));
    // Atom i also serves every k' with mass <= 1/k'^3; the next new index needs more.
    std::uint64_t last = static_cast<std::uint64_t>(std::floor(std::cbrt(1.0 / atoms[i].mass)));
    last = std::max(last, k);
    while (qualifies(atoms[i].mass, last + 1)) ++last;
    while (last > k && !qualifies(atoms[i].mass, last)) --last;
    k = last + 1;
  }
  if (p.thin_atoms.size() < 2) throw NumericalError("no thin atoms in truncation");
  // Omitted atoms can only carry labels k' >= k, each contributing at most k'/k'^3.
  const double K = static_cast<double>(k);
  p.tails.l2 = 1.0 / (K - 1.0);
  p.tails.l12 = *p.tails.l2;
  p.tails.l1 = (2.0 / 3.0) * std::pow(K - 1.0, -1.5);
  p.fn = [values = std::move(values)](double x) {
    auto it = values.find(x);
    return it == values.end() ? 0.0 : it->second;
  };
  return p;
}

inline PsiConstruction make_constant_psi(const LevyMeasure& nu, double c = 1.0) {
  PsiConstruction p;
  p.kind = PsiKind::ConstantOne;
  p.fn = [c](double) { return c; };
  const double tail = nu.tail_bound();
  p.tails = TailBounds{tail * std::abs(c), tail * c * c, tail * std::min(c * c, std::abs(c))};
  return p;
}

/// psi(x) = exp((G~ + eps)|x|), after checking that nu has an exponential moment of
/// order 2(G~ + eps) over the truncation with a geometrically decaying tail.
inline PsiConstruction make_exponential_psi(double g_tilde, double eps, const LevyMeasure& nu) {
  if (!(g_tilde > 0.0) || !(eps > 0.0)) throw std::invalid_argument("make_exponential_psi: G~ and eps must be positive");
  const double rate = g_tilde + eps;
  PsiConstruction p;
  p.kind = PsiKind::ExponentialMoment;
  p.fn = [rate](double x) { return std::exp(rate * std::abs(x)); };
  if (nu.is_density()) throw std::invalid_argument("make_exponential_psi: needs an atom measure");
  const auto atoms = nu.atoms();
  std::vector<double> terms;
  double sum = 0.0;
  for (const auto& a : atoms) {
    terms.push_back(std::exp(2.0 * rate * std::abs(a.location)) * a.mass);
    sum += terms.back();
  }
  if (!std::isfinite(sum)) throw NumericalError("exponential moment check failed: divergent sum");
  double tail = 0.0;
  if (nu.is_discrete_atoms()) {
    if (terms.size() < 4) throw NumericalError("exponential moment check failed: truncation too short");
    double ratio = 0.0;
    for (std::size_t i = terms.size() - terms.size() / 4; i < terms.size(); ++i)
      ratio = std::max(ratio, terms[i] / terms[i - 1]);
    if (!(ratio < 1.0)) throw NumericalError("exponential moment check failed: terms do not decay");
    tail = terms.back() * ratio / (1.0 - ratio);
  }
  // psi >= 1, so |psi| and |psi|^2 ^ |psi| are dominated by |psi|^2.
  p.tails = TailBounds{tail, tail, tail};
  return p;
}

/// Context handed to claim integrands: the path, its market states and the step. At a
/// jump, `pre` points at the curve just before the jump, i.e. the value at s-.
struct StepContext {
  const MarketModel& model;
  const PathRecord& path;
  std::size_t step;
  const MarketState* pre = nullptr;

  double t() const { return model.time(step); }
  const MarketState& state() const { return pre ? *pre : path.states[step]; }
};

/// A claim identified by its representation (x0, phi, psi):
///   X = x0 + int phi dW + int int psi dN~.
struct ClaimSpec {
  std::string name;
  double x0 = 0.0;
  std::function<double(const StepContext&)> phi;
  std::function<double(const StepContext&, double)> psi;
  std::set<ClassTag> class_tags;
  // Needs full market states (path-dependent integrands).
  bool needs_states = false;

  /// x0 + sum phi dW - sum [int psi nu] dt + sum_jumps psi(s-, x). The compensator uses
  /// the step-start curve; each jump sees the curve just before it.
  double value(const MarketModel& model, const PathRecord& path) const {
    if (needs_states && !path.full) throw std::invalid_argument("ClaimSpec: path has no recorded states");
    const auto& noise = path.noise;
    const double dt = noise.dt();
    double total = x0;
    for (std::size_t k = 0; k < noise.n_steps; ++k) {
      const StepContext ctx{model, path, k};
      total += phi(ctx) * noise.dW[k];
      total -= model.levy().compensator_integral([&](double x) { return psi(ctx, x); }) * dt;
    }
    for (std::size_t i = 0; i < noise.jumps.size(); ++i) {
      const MarketState* pre = path.full && i < path.pre_jump.size() ? &path.pre_jump[i] : nullptr;
      total += psi(StepContext{model, path, noise.jump_step[i], pre}, noise.jumps[i].mark);
    }
    return total;
  }
};

/// X = Phat(T*, T0) read off the discounted bond dynamics:
/// phi = Phat(t-,T0) S(t,T0), psi = Phat(t-,T0) (exp(G(t,x,T0)) - 1).
inline ClaimSpec bond_claim(const MarketModel& model, std::size_t maturity_node) {
  if (maturity_node >= model.grid().size()) throw std::invalid_argument("bond_claim: maturity off grid");
  ClaimSpec c;
  c.name = "bond";
  c.needs_states = true;
  c.x0 = model.initial_state().Phat[maturity_node];
  c.phi = [maturity_node](const StepContext& ctx) {
    return ctx.state().Phat[maturity_node] * ctx.model.loadings(ctx.step).S[maturity_node];
  };
  c.psi = [maturity_node](const StepContext& ctx, double x) {
    const auto G = ctx.model.integrated_G(ctx.step, x);
    return ctx.state().Phat[maturity_node] * std::expm1(G[maturity_node]);
  };
  c.class_tags = {ClassTag::Phi, ClassTag::Psi1, ClassTag::Psi2, ClassTag::Psi12};
  return c;
}

inline ClaimSpec constant_claim(double x0, double phi, double psi) {
  ClaimSpec c;
  c.name = "constant";
  c.x0 = x0;
  c.phi = [phi](const StepContext&) { return phi; };
  c.psi = [psi](const StepContext&, double) { return psi; };
  c.class_tags = {ClassTag::Phi, ClassTag::Psi1, ClassTag::Psi2, ClassTag::Psi12};
  return c;
}

// Smooth bounded integrands with seed-drawn amplitudes and phases.
inline ClaimSpec random_bounded_claim(std::uint64_t seed) {
  Rng rng(derive_seed(seed, stream::kAux));
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const double a = 0.05 * u(rng), b = 0.05 * u(rng);
  const double w1 = 3.0 * u(rng), w2 = 3.0 * u(rng), kappa = u(rng);
  const double p1 = 3.0 * u(rng), p2 = 3.0 * u(rng);
  ClaimSpec c;
  c.name = "random_bounded";
  c.x0 = u(rng);
  c.phi = [=](const StepContext& ctx) { return a * std::sin(w1 * ctx.t() + p1); };
  c.psi = [=](const StepContext& ctx, double x) { return b * std::cos(w2 * ctx.t() + kappa * x + p2); };
  c.class_tags = {ClassTag::Phi, ClassTag::Psi1, ClassTag::Psi2, ClassTag::Psi12};
  return c;
}

// Pure-jump claim X = int int psi dN~ for a mark-only construction.
inline ClaimSpec jump_claim(const PsiConstruction& construction, const std::string& name) {
  ClaimSpec c;
  c.name = name;
  c.x0 = 0.0;
  c.phi = [](const StepContext&) { return 0.0; };
  c.psi = [fn = construction.fn](const StepContext&, double x) { return fn(x); };
  return c;
}

struct StoppedClaim {
  double value = 0.0;
  bool stopped = false;
  double tau = 0.0;
};

/// X = int int psi 1_{(0, tau]} dN~ with tau the first time the running compensated
/// integral reaches [k0, inf) in absolute value (capped at the horizon). Between jumps
/// the integral drifts linearly, so band exits by drift are located exactly.
template <class Psi>
StoppedClaim truncate_claim_by_stopping(Psi&& psi, const LevyMeasure& nu, const NoisePath& noise, double k0) {
  const double rate = nu.compensator_integral(psi);
  StoppedClaim out;
  double value = 0.0;
  double t = 0.0;
  auto drift_to = [&](double until) {
    const double next = value - rate * (until - t);
    if (std::abs(next) >= k0 && std::abs(value) < k0 && rate != 0.0) {
      const double level = next > 0.0 ? k0 : -k0;
      out.tau = t + (value - level) / rate;
      out.value = level;
      out.stopped = true;
      return true;
    }
    value = next;
    t = until;
    return false;
  };
  for (const auto& e : noise.jumps) {
    if (drift_to(e.time)) return out;
    value += psi(e.mark);
    if (std::abs(value) >= k0) {
      out.value = value;
      out.stopped = true;
      out.tau = e.time;
      return out;
    }
  }
  if (drift_to(noise.horizon)) return out;
  out.value = value;
  out.tau = noise.horizon;
  return out;
}

}  // namespace bondcomp

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "bondcomp/claims.hpp"
#include "bondcomp/errors.hpp"
#include "bondcomp/hedge.hpp"
#include "bondcomp/hjm.hpp"
#include "bondcomp/levy.hpp"
#include "bondcomp/paths.hpp"

namespace bondcomp {

/// Market data the moment-lemma tests are evaluated against: the integrated
/// coefficients and the discounted curve of one state (omega, t), restricted to J.
struct ProbeContext {
  IntegratedCoefficients ic;
  MaturityGrid grid;
  double t = 0.0;
  std::vector<double> phat;  // on the grid nodes

  ProbeContext(IntegratedCoefficients c, MaturityGrid g, const MarketState& state)
      : ic(std::move(c)), grid(std::move(g)), t(state.t), phat(state.Phat) {
    if (phat.size() != grid.size()) throw std::invalid_argument("ProbeContext: state does not match the grid");
  }

  std::vector<double> G_on_J(double x) const {
    std::vector<double> out;
    out.reserve(grid.tradeable.size());
    for (std::size_t j : grid.tradeable) out.push_back(ic.G(t, x, grid.nodes[j]));
    return out;
  }

  // h(u) = Phat(t-, T) (exp(G(t, u, T)) - 1) over J.
  std::vector<double> h(double u) const {
    std::vector<double> out;
    out.reserve(grid.tradeable.size());
    for (std::size_t j : grid.tradeable) out.push_back(phat[j] * std::expm1(ic.G(t, u, grid.nodes[j])));
    return out;
  }

  double G_norm(double x) const {
    double m = 0.0;
    for (double v : G_on_J(x)) m = std::max(m, std::abs(v));
    return m;
  }

  double phat_sup() const {
    double m = 0.0;
    for (std::size_t j : grid.tradeable) m = std::max(m, phat[j]);
    return m;
  }
};

struct MomentTestSet {
  std::vector<double> points;
  std::vector<double> beta;
  std::vector<double> g;
  std::vector<std::vector<double>> h;  // one vector over J per point

  static MomentTestSet build(const ProbeContext& ctx, std::vector<double> u, std::vector<double> beta,
                             const std::function<double(double)>& psi) {
    MomentTestSet ts;
    ts.points = std::move(u);
    ts.beta = std::move(beta);
    for (double x : ts.points) {
      ts.g.push_back(psi(x));
      ts.h.push_back(ctx.h(x));
    }
    return ts;
  }
};

struct GammaBound {
  double value = 0.0;
  bool infinite = false;
  double numerator = 0.0;
  double denominator = 0.0;
};

inline constexpr double kUnderflowFloor = 1e-280;

/// |sum beta_i g(u_i)| / ||sum beta_i h(u_i)||_sup over J.
inline GammaBound gamma_lower_bound(const MomentTestSet& ts) {
  if (ts.points.empty() || ts.beta.size() != ts.points.size() || ts.g.size() != ts.points.size() ||
      ts.h.size() != ts.points.size())
    throw std::invalid_argument("gamma_lower_bound: malformed test set");
  GammaBound b;
  double num = 0.0;
  for (std::size_t i = 0; i < ts.points.size(); ++i) num += ts.beta[i] * ts.g[i];
  const std::size_t J = ts.h.front().size();
  double den = 0.0;
  for (std::size_t j = 0; j < J; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < ts.points.size(); ++i) s += ts.beta[i] * ts.h[i][j];
    if (!std::isfinite(s)) throw NumericalError("gamma_lower_bound: h-vectors not finite in sup-norm");
    den = std::max(den, std::abs(s));
  }
  b.numerator = std::abs(num);
  b.denominator = den;
  if (den < kUnderflowFloor) {
    if (b.numerator < kUnderflowFloor) throw NumericalError("degenerate test set");
    b.infinite = true;
    b.value = std::numeric_limits<double>::infinity();
    return b;
  }
  b.value = b.numerator / den;
  return b;
}

struct GammaCertificate {
  std::string scenario;
  std::string kind;
  std::vector<double> points;
  std::vector<double> numerators;
  std::vector<double> denominators;
  std::vector<double> gammas;
  double threshold = 1e6;
  std::string verdict;  // "divergent" or "inconclusive"
  // Concentration probe: separation |a_{2k+1} - a_{2k+2}| per pair and the Lipschitz
  // constant C with denominator <= C * separation.
  std::vector<double> separations;
  double lipschitz_bound = 0.0;
  double differentiability_integral = 0.0;
};

/// "divergent" when the last lower bound reaches the threshold and the sequence does
/// not decrease over its last ceil(K/2) entries. Evidence, never proof.
inline std::string divergence_verdict(const std::vector<double>& gammas, double threshold) {
  if (gammas.empty()) return "inconclusive";
  if (!(gammas.back() >= threshold)) return "inconclusive";
  const std::size_t tail = (gammas.size() + 1) / 2;
  for (std::size_t i = gammas.size() - tail + 1; i < gammas.size(); ++i) {
    if (gammas[i] < gammas[i - 1]) return "inconclusive";
  }
  return "divergent";
}

struct ConcentrationOptions {
  std::size_t depth = 40;
  double threshold = 1e6;
  double fd_step = 1e-6;
  std::size_t fd_samples = 64;
};

namespace detail {

// Midpoint of the nu-charged half of the annulus eps_{n+1} < |x - x0| <= eps_n.
inline double annulus_representative(const LevyMeasure& nu, double x0, double outer, double inner, std::size_t n) {
  const double right = nu.total_mass({{x0 + inner, x0 + outer}});
  if (right > 0.0) return x0 + 0.5 * (inner + outer);
  const double left = nu.total_mass({{x0 - outer, x0 - inner}});
  if (left > 0.0) return x0 - 0.5 * (inner + outer);
  throw NumericalError("annulus " + std::to_string(n) + " carries no nu-mass");
}

}  // namespace detail

/// Finite-difference surrogate of int_t^{T*} sup_x |d gamma/dx (t, x, s)| ds with x
/// ranging over [x0 - r, x0 + r].
inline double gamma_derivative_integral(const ProbeContext& ctx, double x0, double r, double h = 1e-6,
                                        std::size_t samples = 64) {
  const auto& mc = ctx.ic.coefficients();
  const auto& T = ctx.grid.nodes;
  std::vector<double> sup(T.size(), 0.0);
  for (std::size_t j = 0; j < T.size(); ++j) {
    if (T[j] < ctx.t) continue;
    for (std::size_t i = 0; i <= samples; ++i) {
      const double x = x0 - r + 2.0 * r * static_cast<double>(i) / static_cast<double>(samples);
      const double d = (mc.gamma(ctx.t, x + h, T[j]) - mc.gamma(ctx.t, x - h, T[j])) / (2.0 * h);
      sup[j] = std::max(sup[j], std::abs(d));
    }
  }
  double s = 0.0;
  for (std::size_t j = 1; j < T.size(); ++j) s += 0.5 * (T[j] - T[j - 1]) * (sup[j] + sup[j - 1]);
  if (!std::isfinite(s)) throw NumericalError("gamma is not differentiable in x near the concentration point");
  return s;
}

/// Pair tests beta = (1, -1) at representatives of the annuli 2k+1 and 2k+2, k = 1..K.
/// Without an explicit psi the oscillating construction around x0 is used.
inline GammaCertificate concentration_probe(const LevyMeasure& nu, double x0, const ProbeContext& ctx,
                                            const EpsilonSequence& eps, ConcentrationOptions opts = {},
                                            std::function<double(double)> psi = {}) {
  if (opts.depth == 0) throw std::invalid_argument("concentration_probe: depth must be positive");
  std::vector<double> radii;
  for (std::size_t n = 3; n <= 2 * opts.depth + 3; ++n) radii.push_back(eps(n));
  if (!nu.has_concentration_point(x0, radii))
    throw NumericalError("concentration_probe: x0 is not a concentration point on the probed annuli");
  if (!psi) psi = make_oscillating_psi(x0, eps).fn;

  GammaCertificate c;
  c.scenario = "concentration";
  c.kind = "concentration_point";
  c.threshold = opts.threshold;
  c.differentiability_integral = gamma_derivative_integral(ctx, x0, eps(3), opts.fd_step, opts.fd_samples);

  // C = sup Phat * sup exp|G| * sup |dG/dx| over the probed neighbourhood.
  double sup_exp = 0.0, sup_dG = 0.0;
  const double r = eps(3);
  for (std::size_t i = 0; i <= opts.fd_samples; ++i) {
    const double x = x0 - r + 2.0 * r * static_cast<double>(i) / static_cast<double>(opts.fd_samples);
    const auto G = ctx.G_on_J(x);
    const auto Gp = ctx.G_on_J(x + opts.fd_step);
    const auto Gm = ctx.G_on_J(x - opts.fd_step);
    for (std::size_t j = 0; j < G.size(); ++j) {
      sup_exp = std::max(sup_exp, std::exp(std::abs(G[j])));
      sup_dG = std::max(sup_dG, std::abs(Gp[j] - Gm[j]) / (2.0 * opts.fd_step));
    }
  }
  c.lipschitz_bound = ctx.phat_sup() * sup_exp * sup_dG;

  for (std::size_t k = 1; k <= opts.depth; ++k) {
    const std::size_t n = 2 * k + 1;
    const double a = detail::annulus_representative(nu, x0, eps(n), eps(n + 1), n);
    const double b = detail::annulus_representative(nu, x0, eps(n + 1), eps(n + 2), n + 1);
    const auto ts = MomentTestSet::build(ctx, {a, b}, {1.0, -1.0}, psi);
    const auto gb = gamma_lower_bound(ts);
    c.points.push_back(a);
    c.numerators.push_back(gb.numerator);
    c.denominators.push_back(gb.denominator);
    c.gammas.push_back(gb.value);
    c.separations.push_back(std::abs(a - b));
  }
  c.verdict = divergence_verdict(c.gammas, c.threshold);
  return c;
}

enum class DiscreteKind { GNonpositive, GToZero, GToAlpha, GLinearBounded };

inline const char* to_string(DiscreteKind k) {
  switch (k) {
    case DiscreteKind::GNonpositive: return "G_nonpositive";
    case DiscreteKind::GToZero: return "G_to_zero";
    case DiscreteKind::GToAlpha: return "G_to_alpha";
    case DiscreteKind::GLinearBounded: return "G_linear_bounded";
  }
  return "?";
}

inline std::optional<DiscreteKind> discrete_kind_from_string(const std::string& s) {
  for (auto k : {DiscreteKind::GNonpositive, DiscreteKind::GToZero, DiscreteKind::GToAlpha,
                 DiscreteKind::GLinearBounded}) {
    if (s == to_string(k)) return k;
  }
  return std::nullopt;
}

struct DiscreteProbeOptions {
  std::size_t depth = 0;  // 0: every atom of the truncation
  double threshold = 1e6;
  double g_tilde = 1.0;   // G_linear_bounded
  double epsilon = 0.5;   // G_linear_bounded
};

namespace detail {

inline void check_kind(const ProbeContext& ctx, std::span<const Atom> atoms, DiscreteKind kind,
                       const DiscreteProbeOptions& opts) {
  auto mismatch = [&](const std::string& why) {
    throw NumericalError(std::string("scenario/kind mismatch: ") + to_string(kind) + ": " + why);
  };
  std::vector<double> norms;
  for (const auto& a : atoms) norms.push_back(ctx.G_norm(a.location));
  switch (kind) {
    case DiscreteKind::GNonpositive:
      for (const auto& a : atoms)
        for (double g : ctx.G_on_J(a.location))
          if (g > 0.0) mismatch("G(t, x_i, T) > 0 at x_i = " + std::to_string(a.location));
      return;
    case DiscreteKind::GToZero: {
      const double peak = *std::max_element(norms.begin(), norms.end());
      const double late = *std::min_element(norms.end() - static_cast<long>((norms.size() + 3) / 4), norms.end());
      if (!(late <= 1e-3 * peak)) mismatch("||G(t, x_i)|| does not approach 0 over the truncation");
      return;
    }
    case DiscreteKind::GToAlpha: {
      const auto tail_begin = norms.end() - static_cast<long>((norms.size() + 3) / 4);
      const double lo = *std::min_element(tail_begin, norms.end());
      const double hi = *std::max_element(tail_begin, norms.end());
      if (!(lo > 0.0) || (hi - lo) > 0.05 * hi) mismatch("||G(t, x_i)|| does not settle at a positive level");
      return;
    }
    case DiscreteKind::GLinearBounded: {
      std::optional<std::vector<double>> slope;
      for (const auto& a : atoms) {
        auto G = ctx.G_on_J(a.location);
        for (double& v : G) v /= a.location;
        if (!slope) {
          slope = G;
          continue;
        }
        for (std::size_t j = 0; j < G.size(); ++j)
          if (std::abs(G[j] - (*slope)[j]) > 1e-9 * std::max(1.0, std::abs(G[j]))) mismatch("G is not linear in x");
      }
      for (double v : *slope)
        if (std::abs(v) > opts.g_tilde * (1.0 + 1e-12)) mismatch("||G(t, .)|| exceeds G~");
      return;
    }
  }
}

}  // namespace detail

/// Singleton tests at the atoms carrying psi != 0:
/// gamma_i = |psi(x_i)| / ||Phat(t-) (exp(G(t, x_i)) - 1)||_sup.
inline GammaCertificate discrete_support_probe(const LevyMeasure& nu, const ProbeContext& ctx, DiscreteKind kind,
                                               const PsiConstruction& psi, DiscreteProbeOptions opts = {}) {
  if (nu.is_density()) throw std::invalid_argument("discrete_support_probe: needs an atom measure");
  auto atoms = nu.atoms();
  if (opts.depth > 0 && opts.depth < atoms.size()) atoms = atoms.first(opts.depth);
  detail::check_kind(ctx, atoms, kind, opts);
  GammaCertificate c;
  c.scenario = "discrete";
  c.kind = to_string(kind);
  c.threshold = opts.threshold;
  for (const auto& a : atoms) {
    const double v = psi(a.location);
    if (v == 0.0) continue;
    const auto ts = MomentTestSet::build(ctx, {a.location}, {1.0}, psi.fn);
    const auto gb = gamma_lower_bound(ts);
    c.points.push_back(a.location);
    c.numerators.push_back(gb.numerator);
    c.denominators.push_back(gb.denominator);
    c.gammas.push_back(gb.value);
  }
  c.verdict = divergence_verdict(c.gammas, c.threshold);
  return c;
}

/// sup over beta of |g . beta| / ||H beta||_sup, approached by minimising the smooth
/// p-norm ||H beta||_p under g . beta = 1 (iteratively reweighted least squares). H has
/// one column per test point. The best sup-ratio seen is returned, the warm start
/// included, so nested test sets warm-started from the smaller optimum never lose.
struct OptimizedGamma {
  double gamma = 0.0;
  Eigen::VectorXd beta;
};

inline OptimizedGamma optimized_gamma(const Eigen::MatrixXd& H, const Eigen::VectorXd& g, double p = 16.0,
                                      std::optional<Eigen::VectorXd> warm = std::nullopt, int iterations = 60) {
  OptimizedGamma best;
  auto ratio = [&](const Eigen::VectorXd& b) {
    const double den = (H * b).cwiseAbs().maxCoeff();
    const double num = std::abs(g.dot(b));
    return den > 0.0 ? num / den : (num > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
  };
  auto consider = [&](const Eigen::VectorXd& b) {
    const double r = ratio(b);
    if (std::isfinite(r) && r > best.gamma) {
      best.gamma = r;
      best.beta = b;
    }
  };
  const Eigen::Index n = H.cols();
  if (warm) {
    Eigen::VectorXd w = Eigen::VectorXd::Zero(n);
    w.head(std::min<Eigen::Index>(n, warm->size())) = warm->head(std::min<Eigen::Index>(n, warm->size()));
    consider(w);
  }
  for (Eigen::Index i = 0; i < n; ++i) consider(Eigen::VectorXd::Unit(n, i));

  Eigen::VectorXd weights = Eigen::VectorXd::Ones(H.rows());
  for (int it = 0; it < iterations; ++it) {
    Eigen::MatrixXd A = H.transpose() * weights.asDiagonal() * H;
    A.diagonal().array() += 1e-14 * std::max(1.0, A.trace());
    const Eigen::VectorXd v = A.ldlt().solve(g);
    const double s = g.dot(v);
    if (!(std::abs(s) > 0.0) || !v.allFinite()) break;
    const Eigen::VectorXd beta = v / s;
    consider(beta);
    const Eigen::VectorXd r = (H * beta).cwiseAbs();
    const double scale = r.maxCoeff();
    if (!(scale > 0.0)) break;
    weights = (r / scale).array().pow(p - 2.0).matrix();
    weights.array() += 1e-12;
  }
  return best;
}

/// Complete-case control: random beta over the atoms of a finite measure against the
/// exactly solved jump functional theta (targets psi at the atoms, phi = 0). Every
/// lower bound is at most ||theta||_1.
struct FiniteSupportControl {
  double theta_l1 = 0.0;
  std::vector<double> gammas;
  double max_gamma = 0.0;
  bool bounded = false;
  std::string verdict;
};

inline FiniteSupportControl finite_support_probe(const MarketModel& model, const std::function<double(double)>& psi,
                                                 std::size_t probes = 100, std::uint64_t seed = 7,
                                                 double threshold = 1e6) {
  const Hedger hedger(model);
  const auto cols = hedger.initial_columns();
  const auto& L = model.loadings(0);
  const auto state = model.initial_state();
  const auto atoms = model.levy().atoms();
  std::vector<double> targets(atoms.size() + 1, 0.0);
  for (std::size_t a = 0; a < atoms.size(); ++a) targets[a + 1] = psi(atoms[a].location);
  const auto step = solve_strategy_step(L.S, L.G_atoms, state.Phat, targets, cols);
  FiniteSupportControl out;
  for (double th : step.holdings) out.theta_l1 += std::abs(th);

  MomentTestSet ts;
  for (std::size_t a = 0; a < atoms.size(); ++a) {
    ts.points.push_back(atoms[a].location);
    ts.g.push_back(targets[a + 1]);
    std::vector<double> h;
    for (std::size_t j : model.grid().tradeable) h.push_back(state.Phat[j] * std::expm1(L.G_atoms[a][j]));
    ts.h.push_back(std::move(h));
  }
  Rng rng(derive_seed(seed, stream::kAux));
  std::normal_distribution<double> z;
  for (std::size_t k = 0; k < probes; ++k) {
    ts.beta.assign(atoms.size(), 0.0);
    for (double& b : ts.beta) b = z(rng);
    const auto gb = gamma_lower_bound(ts);
    out.gammas.push_back(gb.value);
    out.max_gamma = std::max(out.max_gamma, gb.value);
  }
  out.bounded = out.max_gamma < 10.0 * out.theta_l1;
  out.verdict = divergence_verdict(out.gammas, threshold);
  return out;
}

/// Relative residual of the least-squares functional over growing prefixes of J:
/// min_y ||H_m y - g||_inf / ||g||_inf, H_m the first m J-columns of the h-vectors.
inline std::vector<double> best_effort_residuals(const MomentTestSet& ts, const std::vector<std::size_t>& prefixes) {
  const auto rows = static_cast<Eigen::Index>(ts.points.size());
  const auto J = static_cast<Eigen::Index>(ts.h.front().size());
  Eigen::MatrixXd H(rows, J);
  Eigen::VectorXd g(rows);
  for (Eigen::Index i = 0; i < rows; ++i) {
    g[i] = ts.g[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < J; ++j) H(i, j) = ts.h[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  }
  const double gn = std::max(g.cwiseAbs().maxCoeff(), kUnderflowFloor);
  std::vector<double> out;
  for (std::size_t m : prefixes) {
    const auto mm = std::min<Eigen::Index>(J, static_cast<Eigen::Index>(m));
    const Eigen::MatrixXd Hm = H.leftCols(mm);
    const Eigen::VectorXd y = Hm.completeOrthogonalDecomposition().solve(g);
    out.push_back((Hm * y - g).cwiseAbs().maxCoeff() / gn);
  }
  return out;
}

struct IncompletenessReport {
  GammaCertificate certificate;
  std::set<ClassTag> claim_tags;
  std::string verdict;
  // Bounded claim (stopping truncation): level k0, worst |X| and stopped fraction.
  std::optional<double> k0;
  std::optional<double> max_abs_claim;
  std::optional<double> stopped_fraction;
  // Square-integrable claim: E[X^2] estimate and its compensator value.
  std::optional<double> second_moment;
  std::optional<double> isometry_value;
  std::vector<double> best_effort;
};

inline IncompletenessReport incompleteness_report(GammaCertificate cert, std::set<ClassTag> tags,
                                                  std::vector<double> best_effort = {}) {
  IncompletenessReport r;
  r.verdict = cert.verdict == "divergent" ? "incompleteness evidence" : "no incompleteness evidence";
  r.certificate = std::move(cert);
  r.claim_tags = std::move(tags);
  r.best_effort = std::move(best_effort);
  return r;
}

}  // namespace bondcomp

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "bondcomp/errors.hpp"
#include "bondcomp/rng.hpp"

namespace bondcomp {

struct Interval {
  double lo;
  double hi;

  bool contains(double x) const { return lo <= x && x <= hi; }
  double length() const { return hi - lo; }
};

// Sorted, disjoint union of the given closed intervals.
inline std::vector<Interval> merge_intervals(std::vector<Interval> region) {
  region.erase(std::remove_if(region.begin(), region.end(), [](const Interval& i) { return i.hi < i.lo; }),
               region.end());
  std::sort(region.begin(), region.end(), [](const Interval& a, const Interval& b) { return a.lo < b.lo; });
  std::vector<Interval> merged;
  for (const auto& iv : region) {
    if (!merged.empty() && iv.lo <= merged.back().hi) {
      merged.back().hi = std::max(merged.back().hi, iv.hi);
    } else {
      merged.push_back(iv);
    }
  }
  return merged;
}

struct Atom {
  double location;
  double mass;
};

struct FiniteAtoms {
  std::vector<Atom> atoms;
};

// Truncation of an infinite atom family with |x_i| -> infinity. `tail_bound` bounds the
// mass of the omitted atoms.
struct DiscreteAtoms {
  std::vector<Atom> atoms;
  double tail_bound = 0.0;
};

struct Density {
  std::function<double(double)> density;
  std::vector<Interval> support;
  double concentration_point = 0.0;
  std::size_t grid_points = 4096;
  double small_jump_floor = 1e-6;
};

struct JumpEvent {
  double time;
  double mark;
};

/// Intensity measure of the Poisson random measure driving the jumps.
///
/// Immutable after construction. Atom variants integrate exactly; the density variant
/// integrates with a composite trapezoid on `grid_points` nodes per support interval
/// and samples marks by inverting the piecewise-linear CDF built on the same nodes.
/// Marks with |x| below `small_jump_floor` are excluded from sampling and compensation.
class LevyMeasure {
 public:
  using Variant = std::variant<FiniteAtoms, DiscreteAtoms, Density>;

  explicit LevyMeasure(Variant v) : v_(std::move(v)) {
    if (auto* f = std::get_if<FiniteAtoms>(&v_)) {
      validate_atoms(f->atoms, false);
    } else if (auto* d = std::get_if<DiscreteAtoms>(&v_)) {
      validate_atoms(d->atoms, true);
      if (!(d->tail_bound >= 0.0) || !std::isfinite(d->tail_bound))
        throw std::invalid_argument("DiscreteAtoms: tail_bound must be a finite nonnegative number");
    } else {
      build_density_quadrature(std::get<Density>(v_));
    }
  }

  static LevyMeasure finite(std::vector<Atom> atoms) { return LevyMeasure(FiniteAtoms{std::move(atoms)}); }
  static LevyMeasure discrete(std::vector<Atom> atoms, double tail_bound) {
    return LevyMeasure(DiscreteAtoms{std::move(atoms), tail_bound});
  }
  static LevyMeasure uniform(double lo, double hi, double intensity, double concentration_point,
                             std::size_t grid_points = 4096) {
    return LevyMeasure(Density{[intensity](double) { return intensity; },
                               {{lo, hi}},
                               concentration_point,
                               grid_points,
                               1e-6});
  }

  const Variant& variant() const { return v_; }
  bool is_density() const { return std::holds_alternative<Density>(v_); }
  bool is_finite_atoms() const { return std::holds_alternative<FiniteAtoms>(v_); }
  bool is_discrete_atoms() const { return std::holds_alternative<DiscreteAtoms>(v_); }

  // Atom list for either atom variant; empty for densities.
  std::span<const Atom> atoms() const {
    if (auto* f = std::get_if<FiniteAtoms>(&v_)) return f->atoms;
    if (auto* d = std::get_if<DiscreteAtoms>(&v_)) return d->atoms;
    return {};
  }

  double tail_bound() const {
    if (auto* d = std::get_if<DiscreteAtoms>(&v_)) return d->tail_bound;
    return 0.0;
  }

  // Quadrature nodes and weights (density already folded into the weights).
  std::span<const double> quadrature_nodes() const { return nodes_; }
  std::span<const double> quadrature_weights() const { return weights_; }

  /// nu(region) for a finite union of closed intervals.
  double total_mass(std::vector<Interval> region) const {
    const auto merged = merge_intervals(std::move(region));
    if (auto* d = std::get_if<Density>(&v_)) {
      double mass = 0.0;
      for (const auto& r : merged) {
        for (const auto& s : d->support) {
          const Interval cut{std::max(r.lo, s.lo), std::min(r.hi, s.hi)};
          if (cut.hi > cut.lo) mass += trapezoid(*d, cut);
        }
      }
      if (!std::isfinite(mass)) throw NumericalError("infinite activity region");
      return mass;
    }
    double mass = 0.0;
    for (const auto& a : atoms()) {
      for (const auto& r : merged) {
        if (r.contains(a.location)) {
          mass += a.mass;
          break;
        }
      }
    }
    return mass;
  }

  // Mass of the whole line (after the small-jump floor for densities).
  double activity() const {
    if (is_density()) return density_mass_;
    double m = 0.0;
    for (const auto& a : atoms()) m += a.mass;
    return m;
  }

  /// nu{ inner < |x - x0| <= outer }, i.e. B(x0, outer) minus B(x0, inner) with closed balls.
  double annulus_mass(double x0, double outer, double inner) const {
    if (!(outer > inner)) return 0.0;
    if (is_density()) return total_mass({{x0 - outer, x0 - inner}, {x0 + inner, x0 + outer}});
    double mass = 0.0;
    for (const auto& a : atoms()) {
      const double dist = std::abs(a.location - x0);
      if (dist > inner && dist <= outer) mass += a.mass;
    }
    return mass;
  }

  /// True iff every annulus B(x0,eps[n]) \ B(x0,eps[n+1]) of the prefix has positive mass.
  bool has_concentration_point(double x0, std::span<const double> eps) const {
    if (eps.size() < 2) throw std::invalid_argument("has_concentration_point: need at least two radii");
    for (std::size_t n = 0; n < eps.size(); ++n) {
      if (!(eps[n] > 0.0)) throw std::invalid_argument("has_concentration_point: radii must be positive");
      if (n > 0 && !(eps[n] < eps[n - 1]))
        throw std::invalid_argument("has_concentration_point: radii must be strictly decreasing");
    }
    for (std::size_t n = 0; n + 1 < eps.size(); ++n) {
      if (!(annulus_mass(x0, eps[n], eps[n + 1]) > 0.0)) return false;
    }
    return true;
  }

  /// One path of the Poisson random measure on [0, horizon], sorted by time.
  std::vector<JumpEvent> sample_jumps(double horizon, Rng& rng) const {
    if (!(horizon > 0.0)) throw std::invalid_argument("sample_jumps: horizon must be positive");
    const double lambda = activity();
    if (!(lambda > 0.0)) return {};
    std::poisson_distribution<long> count_dist(lambda * horizon);
    const long count = count_dist(rng);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<JumpEvent> events(static_cast<std::size_t>(count));
    for (auto& e : events) e.time = horizon * unif(rng);
    std::sort(events.begin(), events.end(), [](const JumpEvent& a, const JumpEvent& b) { return a.time < b.time; });
    if (is_density()) {
      for (auto& e : events) e.mark = inverse_cdf(unif(rng));
    } else {
      const auto at = atoms();
      std::vector<double> masses(at.size());
      for (std::size_t i = 0; i < at.size(); ++i) masses[i] = at[i].mass;
      std::discrete_distribution<std::size_t> pick(masses.begin(), masses.end());
      for (auto& e : events) e.mark = at[pick(rng)].location;
    }
    return events;
  }

  /// Integral of g against nu. Throws when the integral is not finite or, for a
  /// truncated infinite family, when the terms stop decaying over the tail of the
  /// truncation.
  template <class F>
  double compensator_integral(F&& g) const {
    if (is_density()) {
      double s = 0.0;
      for (std::size_t i = 0; i < nodes_.size(); ++i) {
        if (weights_[i] != 0.0) s += weights_[i] * g(nodes_[i]);
      }
      if (!std::isfinite(s)) throw NumericalError("non-integrable against nu");
      return s;
    }
    const auto at = atoms();
    double s = 0.0;
    std::vector<double> terms;
    terms.reserve(at.size());
    for (const auto& a : at) {
      const double term = g(a.location) * a.mass;
      terms.push_back(std::abs(term));
      s += term;
    }
    if (!std::isfinite(s)) throw NumericalError("non-integrable against nu");
    if (is_discrete_atoms() && terms.size() >= 8) {
      // Divergence guard: |term| averages over the last two quarters must decrease.
      const std::size_t q = terms.size() / 4;
      double prev = 0.0;
      double last = 0.0;
      for (std::size_t i = terms.size() - 2 * q; i < terms.size() - q; ++i) prev += terms[i];
      for (std::size_t i = terms.size() - q; i < terms.size(); ++i) last += terms[i];
      if (last > 0.0 && last >= prev) throw NumericalError("non-integrable against nu");
    }
    return s;
  }

  // Partial sums of the atom series sum_i g(x_i) nu({x_i}) in storage order.
  template <class F>
  std::vector<double> compensator_partial_sums(F&& g) const {
    std::vector<double> out;
    double s = 0.0;
    for (const auto& a : atoms()) {
      s += g(a.location) * a.mass;
      out.push_back(s);
    }
    return out;
  }

 private:
  static void validate_atoms(const std::vector<Atom>& atoms, bool sorted_by_modulus) {
    for (std::size_t i = 0; i < atoms.size(); ++i) {
      const auto& a = atoms[i];
      if (!(a.mass > 0.0) || !std::isfinite(a.mass))
        throw std::invalid_argument("Levy atom masses must be strictly positive and finite");
      if (a.location == 0.0 || !std::isfinite(a.location))
        throw std::invalid_argument("Levy atoms must sit at finite nonzero locations");
      for (std::size_t j = 0; j < i; ++j) {
        if (atoms[j].location == a.location) throw std::invalid_argument("Levy atom locations must be distinct");
      }
      if (sorted_by_modulus && i > 0 && std::abs(atoms[i - 1].location) > std::abs(a.location))
        throw std::invalid_argument("DiscreteAtoms must be sorted by |x| ascending");
    }
  }

  static double trapezoid(const Density& d, Interval iv) {
    const std::size_t n = std::max<std::size_t>(d.grid_points, 2) - 1;
    const double h = iv.length() / static_cast<double>(n);
    double s = 0.5 * (d.density(iv.lo) + d.density(iv.hi));
    for (std::size_t i = 1; i < n; ++i) s += d.density(iv.lo + h * static_cast<double>(i));
    return s * h;
  }

  void build_density_quadrature(const Density& d) {
    if (!d.density) throw std::invalid_argument("Density: density function missing");
    if (d.support.empty()) throw std::invalid_argument("Density: support must be nonempty");
    if (d.grid_points < 2) throw std::invalid_argument("Density: need at least two grid points");
    for (const auto& s : d.support) {
      if (!std::isfinite(s.lo) || !std::isfinite(s.hi) || !(s.hi > s.lo))
        throw std::invalid_argument("Density: support intervals must be finite and nondegenerate");
    }
    const auto support = merge_intervals(d.support);
    const std::size_t n = d.grid_points - 1;
    for (const auto& s : support) {
      const double h = s.length() / static_cast<double>(n);
      for (std::size_t i = 0; i <= n; ++i) {
        const double x = (i == n) ? s.hi : s.lo + h * static_cast<double>(i);
        const double rho = d.density(x);
        if (!(rho >= 0.0) || !std::isfinite(rho)) throw NumericalError("infinite activity region");
        const double w = (i == 0 || i == n) ? 0.5 * h : h;
        nodes_.push_back(x);
        weights_.push_back(std::abs(x) < d.small_jump_floor ? 0.0 : w * rho);
      }
    }
    // Cell masses of the piecewise-linear CDF (cells never straddle two intervals).
    cdf_.assign(nodes_.size(), 0.0);
    const std::size_t per = n + 1;
    for (std::size_t k = 0; k < nodes_.size(); ++k) {
      if (k % per == 0) {
        cdf_[k] = (k == 0) ? 0.0 : cdf_[k - 1];
        continue;
      }
      const double a = nodes_[k - 1], b = nodes_[k];
      const double ra = std::abs(a) < d.small_jump_floor ? 0.0 : d.density(a);
      const double rb = std::abs(b) < d.small_jump_floor ? 0.0 : d.density(b);
      cdf_[k] = cdf_[k - 1] + 0.5 * (b - a) * (ra + rb);
    }
    density_mass_ = cdf_.empty() ? 0.0 : cdf_.back();
  }

  double inverse_cdf(double u) const {
    const double target = u * density_mass_;
    auto it = std::lower_bound(cdf_.begin(), cdf_.end(), target);
    if (it == cdf_.begin()) return nodes_.front();
    if (it == cdf_.end()) return nodes_.back();
    const std::size_t k = static_cast<std::size_t>(it - cdf_.begin());
    const double c0 = cdf_[k - 1], c1 = cdf_[k];
    const double frac = (c1 > c0) ? (target - c0) / (c1 - c0) : 0.0;
    return nodes_[k - 1] + frac * (nodes_[k] - nodes_[k - 1]);
  }

  Variant v_;
  std::vector<double> nodes_;
  std::vector<double> weights_;
  std::vector<double> cdf_;
  double density_mass_ = 0.0;
};

}  // namespace bondcomp

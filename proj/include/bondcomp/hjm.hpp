#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <stdexcept>
#include <vector>

#include "bondcomp/errors.hpp"
#include "bondcomp/levy.hpp"

namespace bondcomp {

using CurveFn = std::function<double(double t, double T)>;
using JumpFn = std::function<double(double t, double x, double T)>;

/// Maturity nodes 0 = T_0 < ... < T_m = T* and the tradeable subset J.
///
/// `tradeable` lists node indices in the enumeration order of J. The default dyadic
/// enumeration visits T*, T*/2, T*/4, 3T*/4, T*/8, ... so that every prefix of J is
/// spread over the whole maturity range.
struct MaturityGrid {
  std::vector<double> nodes;
  std::vector<std::size_t> tradeable;

  MaturityGrid() = default;
  MaturityGrid(std::vector<double> n, std::vector<std::size_t> j) : nodes(std::move(n)), tradeable(std::move(j)) {
    validate();
  }

  void validate() const {
    if (nodes.size() < 2) throw std::invalid_argument("MaturityGrid: need at least two nodes");
    if (nodes.front() != 0.0) throw std::invalid_argument("MaturityGrid: first node must be 0");
    for (std::size_t i = 1; i < nodes.size(); ++i) {
      if (!(nodes[i] > nodes[i - 1])) throw std::invalid_argument("MaturityGrid: nodes must be strictly increasing");
    }
    if (tradeable.empty()) throw std::invalid_argument("MaturityGrid: J must be nonempty");
    for (std::size_t j : tradeable) {
      if (j >= nodes.size()) throw std::invalid_argument("MaturityGrid: J index off grid");
    }
  }

  double horizon() const { return nodes.back(); }
  std::size_t size() const { return nodes.size(); }

  // Node index of maturity T, if T is a grid point (relative tolerance 1e-12).
  std::optional<std::size_t> find(double T) const {
    const double tol = 1e-12 * std::max(1.0, horizon());
    auto it = std::lower_bound(nodes.begin(), nodes.end(), T - tol);
    if (it != nodes.end() && std::abs(*it - T) <= tol) return static_cast<std::size_t>(it - nodes.begin());
    return std::nullopt;
  }

  static std::vector<std::size_t> dyadic_order(std::size_t cells) {
    std::vector<std::size_t> order;
    std::vector<char> seen(cells + 1, 0);
    order.push_back(cells);
    seen[cells] = 1;
    for (std::size_t denom = 2; denom <= cells * 2; denom *= 2) {
      for (std::size_t num = 1; num < denom; num += 2) {
        // node index = cells * num / denom when exact
        if ((cells * num) % denom != 0) continue;
        const std::size_t idx = cells * num / denom;
        if (!seen[idx]) {
          seen[idx] = 1;
          order.push_back(idx);
        }
      }
    }
    for (std::size_t i = 1; i < cells; ++i) {
      if (!seen[i]) order.push_back(i);
    }
    return order;
  }

  static MaturityGrid uniform(double horizon, std::size_t cells) {
    if (cells == 0 || !(horizon > 0.0)) throw std::invalid_argument("MaturityGrid::uniform: bad arguments");
    std::vector<double> n(cells + 1);
    for (std::size_t i = 0; i <= cells; ++i) n[i] = horizon * static_cast<double>(i) / static_cast<double>(cells);
    n.back() = horizon;
    return MaturityGrid(std::move(n), dyadic_order(cells));
  }
};

/// Forward-rate coefficients sigma(t,T), gamma(t,x,T) and optionally alpha(t,T).
///
/// Every evaluation goes through the zeroing rule: all three vanish for t > T. Without
/// an explicit alpha the drift is the one that makes discounted bonds martingales.
class ModelCoefficients {
 public:
  ModelCoefficients(CurveFn sigma, JumpFn gamma, std::optional<CurveFn> alpha, double horizon)
      : sigma_(std::move(sigma)), gamma_(std::move(gamma)), alpha_(std::move(alpha)), horizon_(horizon) {
    if (!sigma_ || !gamma_) throw std::invalid_argument("ModelCoefficients: sigma and gamma are required");
    if (!(horizon_ > 0.0)) throw std::invalid_argument("ModelCoefficients: horizon must be positive");
  }

  double sigma(double t, double T) const { return t > T ? 0.0 : sigma_(t, T); }
  double gamma(double t, double x, double T) const { return t > T ? 0.0 : gamma_(t, x, T); }
  double alpha(double t, double T) const {
    if (!alpha_) throw std::logic_error("ModelCoefficients: drift is derived from the martingale condition");
    return t > T ? 0.0 : (*alpha_)(t, T);
  }
  bool martingale_drift() const { return !alpha_.has_value(); }
  double horizon() const { return horizon_; }

  /// Numerical check of int int sigma^2 dT dt < inf and int int int |gamma| nu dT dt < inf on the grid.
  void check_integrability(const LevyMeasure& nu, const MaturityGrid& grid) const {
    double s2 = 0.0;
    double g1 = 0.0;
    for (std::size_t a = 0; a < grid.size(); ++a) {
      for (std::size_t b = 0; b < grid.size(); ++b) {
        const double t = grid.nodes[a], T = grid.nodes[b];
        const double s = sigma(t, T);
        s2 += s * s;
        g1 += nu.compensator_integral([&](double x) { return std::abs(gamma(t, x, T)); });
      }
    }
    if (!std::isfinite(s2)) throw NumericalError("sigma is not square integrable on the grid");
    if (!std::isfinite(g1)) throw NumericalError("gamma is not nu-integrable on the grid");
  }

 private:
  CurveFn sigma_;
  JumpFn gamma_;
  std::optional<CurveFn> alpha_;
  double horizon_;
};

namespace coeff {

inline CurveFn zero() {
  return [](double, double) { return 0.0; };
}
inline CurveFn constant(double c) {
  return [c](double, double) { return c; };
}
// c * exp(-lambda (T - t))
inline CurveFn exp_decay(double c, double lambda) {
  return [c, lambda](double t, double T) { return c * std::exp(-lambda * (T - t)); };
}
inline JumpFn zero_jump() {
  return [](double, double, double) { return 0.0; };
}
// c * exp(-kappa |x|); the integrated loading vanishes as |x| grows.
inline JumpFn mark_decay(double c, double kappa) {
  return [c, kappa](double, double x, double) { return c * std::exp(-kappa * std::abs(x)); };
}
// c * x / (1 + |x|); the integrated loading saturates as |x| grows.
inline JumpFn saturating(double c) {
  return [c](double, double x, double) { return c * x / (1.0 + std::abs(x)); };
}

}  // namespace coeff

/// gamma(t,x,T) = coeff(t,T) * x, zero for t > T.
inline JumpFn make_linear_gamma(CurveFn coeff) {
  return [coeff = std::move(coeff)](double t, double x, double T) { return t > T ? 0.0 : coeff(t, T) * x; };
}

/// S, G and A as negated maturity integrals over [t, T], composite trapezoid with a
/// fixed number of subintervals (exact when the integrand is constant in s).
class IntegratedCoefficients {
 public:
  IntegratedCoefficients(ModelCoefficients mc, std::size_t quad_points)
      : mc_(std::move(mc)), quad_(quad_points) {
    if (quad_ < 2) throw std::invalid_argument("integrate_coefficients: quad_points must be at least 2");
  }

  double S(double t, double T) const {
    return -integrate(t, T, [&](double s) { return mc_.sigma(t, s); });
  }
  double G(double t, double x, double T) const {
    return -integrate(t, T, [&](double s) { return mc_.gamma(t, x, s); });
  }
  double A(double t, double T) const {
    return -integrate(t, T, [&](double s) { return mc_.alpha(t, s); });
  }

  const ModelCoefficients& coefficients() const { return mc_; }
  std::size_t quad_points() const { return quad_; }

 private:
  template <class F>
  double integrate(double t, double T, F&& f) const {
    if (!(T > t)) return 0.0;
    const double h = (T - t) / static_cast<double>(quad_);
    double s = 0.5 * (f(t) + f(T));
    for (std::size_t i = 1; i < quad_; ++i) s += f(t + h * static_cast<double>(i));
    return s * h;
  }

  ModelCoefficients mc_;
  std::size_t quad_;
};

inline IntegratedCoefficients integrate_coefficients(const ModelCoefficients& mc, const MaturityGrid& grid,
                                                     std::size_t quad_points = 64) {
  grid.validate();
  return IntegratedCoefficients(mc, quad_points);
}

/// A(t,T) = -S(t,T)^2 / 2 - int (exp(G(t,x,T)) - 1) nu(dx): the drift term that makes the
/// discounted bond prices local martingales.
inline CurveFn drift_from_martingale_condition(const IntegratedCoefficients& ic, const LevyMeasure& nu) {
  return [ic, nu](double t, double T) {
    const double s = ic.S(t, T);
    const double jump = nu.compensator_integral([&](double x) { return std::expm1(ic.G(t, x, T)); });
    return -0.5 * s * s - jump;
  };
}

/// Forward-rate drift alpha(t,T) = -dA/dT under the martingale condition:
/// alpha = -sigma S - int gamma exp(G) nu(dx).
inline CurveFn martingale_forward_drift(const IntegratedCoefficients& ic, const LevyMeasure& nu) {
  return [ic, nu](double t, double T) {
    if (t > T) return 0.0;
    const auto& mc = ic.coefficients();
    const double jump =
        nu.compensator_integral([&](double x) { return mc.gamma(t, x, T) * std::exp(ic.G(t, x, T)); });
    return -mc.sigma(t, T) * ic.S(t, T) - jump;
  };
}

}  // namespace bondcomp

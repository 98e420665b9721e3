#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "bondcomp/probe.hpp"

using namespace bondcomp;

namespace {

const MaturityGrid kGrid = MaturityGrid::uniform(1.0, 32);

ProbeContext context(CurveFn sigma, JumpFn gamma) {
  ModelCoefficients mc(std::move(sigma), std::move(gamma), std::nullopt, 1.0);
  MarketState s;
  s.f.assign(kGrid.size(), 0.03);
  reprice(s, kGrid);
  return ProbeContext(integrate_coefficients(mc, kGrid, 64), kGrid, s);
}

const ProbeContext& concentration_ctx() {
  static const ProbeContext ctx = context(coeff::constant(0.02), make_linear_gamma(coeff::constant(0.005)));
  return ctx;
}

LevyMeasure unit_uniform() { return LevyMeasure::uniform(0.5, 1.5, 1.0, 1.0); }

// masses 10^{-3(i-1)} at the given locations
LevyMeasure geometric_atoms(std::size_t n, double sign = 1.0) {
  std::vector<Atom> atoms;
  for (std::size_t i = 1; i <= n; ++i) atoms.push_back({sign * static_cast<double>(i), std::pow(10.0, -3.0 * (i - 1.0))});
  return LevyMeasure::discrete(atoms, std::pow(10.0, -3.0 * n) / (1.0 - 1e-3));
}

MomentTestSet manual(std::vector<double> beta, std::vector<double> g, std::vector<std::vector<double>> h) {
  MomentTestSet ts;
  ts.points.resize(g.size());
  ts.beta = std::move(beta);
  ts.g = std::move(g);
  ts.h = std::move(h);
  return ts;
}

}  // namespace

TEST(GammaBound, ZeroNumerator) {
  const auto b = gamma_lower_bound(manual({1.0}, {0.0}, {{0.1, -0.2, 0.05}}));
  EXPECT_EQ(b.value, 0.0);
  EXPECT_FALSE(b.infinite);
}

TEST(GammaBound, CancellingColumnsAreInfinite) {
  const auto b = gamma_lower_bound(manual({1.0, -1.0}, {1.0, -1.0}, {{0.3, 0.1}, {0.3, 0.1}}));
  EXPECT_TRUE(b.infinite);
  EXPECT_DOUBLE_EQ(b.numerator, 2.0);
  EXPECT_EQ(b.denominator, 0.0);
}

TEST(GammaBound, DegenerateTestSet) {
  try {
    gamma_lower_bound(manual({1.0}, {0.0}, {{0.0, 0.0}}));
    FAIL();
  } catch (const NumericalError& e) {
    EXPECT_STREQ(e.what(), "degenerate test set");
  }
}

TEST(GammaBound, ScaleInvariantInBeta) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> z;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> beta(4), g(4);
    std::vector<std::vector<double>> h(4, std::vector<double>(9));
    for (auto& v : beta) v = z(rng);
    for (auto& v : g) v = z(rng);
    for (auto& row : h)
      for (auto& v : row) v = z(rng);
    const double base = gamma_lower_bound(manual(beta, g, h)).value;
    // powers of two scale without rounding, so equality is exact there
    for (double c : {-1.0, 0.125, 64.0, -0.5}) {
      auto scaled = beta;
      for (auto& v : scaled) v *= c;
      EXPECT_EQ(gamma_lower_bound(manual(scaled, g, h)).value, base);
    }
    for (double c : {-3.0, 1e-7, 7.3e5}) {
      auto scaled = beta;
      for (auto& v : scaled) v *= c;
      EXPECT_NEAR(gamma_lower_bound(manual(scaled, g, h)).value, base, 1e-14 * base);
    }
  }
}

TEST(Concentration, DivergesAtDepthForty) {
  const auto cert = concentration_probe(unit_uniform(), 1.0, concentration_ctx(), EpsilonSequence::harmonic());
  ASSERT_EQ(cert.gammas.size(), 40u);
  EXPECT_EQ(cert.verdict, "divergent");
  EXPECT_GT(cert.gammas.back(), 1e6);
  for (std::size_t k = 0; k < cert.gammas.size(); ++k) {
    EXPECT_NEAR(cert.numerators[k], 2.0, 1e-6);
    EXPECT_LE(cert.denominators[k], cert.lipschitz_bound * cert.separations[k] * (1.0 + 1e-9));
  }
  for (std::size_t k = 1; k < cert.gammas.size(); ++k) EXPECT_GT(cert.gammas[k], cert.gammas[k - 1]);
  // separations of annuli 2k+1, 2k+2 shrink like 1/k^2, so gamma grows like k^2
  EXPECT_NEAR(cert.gammas[39] / cert.gammas[19], 4.0, 0.5);
}

TEST(Concentration, VanishingPsiIsInconclusive) {
  const auto cert = concentration_probe(unit_uniform(), 1.0, concentration_ctx(), EpsilonSequence::harmonic(), {},
                                        [](double x) { return x - 1.0; });
  EXPECT_EQ(cert.verdict, "inconclusive");
  EXPECT_LT(cert.numerators.back(), 1e-2);
  EXPECT_LT(cert.gammas.back(), 1e6);
}

TEST(Concentration, ShallowDepthIsInconclusive) {
  const auto cert = concentration_probe(unit_uniform(), 1.0, concentration_ctx(), EpsilonSequence::harmonic(),
                                        {.depth = 2});
  EXPECT_EQ(cert.verdict, "inconclusive");
}

TEST(Concentration, EmptyAnnulusIsNamed) {
  const auto nu = LevyMeasure::finite({{1.25, 1.0}});
  try {
    detail::annulus_representative(nu, 1.0, 1.0 / 7.0, 1.0 / 8.0, 7);
    FAIL();
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("annulus 7"), std::string::npos);
  }
}

TEST(Concentration, RequiresConcentrationPoint) {
  const auto nu = LevyMeasure::uniform(1.0, 2.0, 1.0, 1.5);
  EXPECT_THROW(concentration_probe(nu, 5.0, concentration_ctx(), EpsilonSequence::harmonic()), NumericalError);
}

TEST(Concentration, DerivativeConditionFinite) {
  const double v = gamma_derivative_integral(concentration_ctx(), 1.0, 0.25);
  EXPECT_TRUE(std::isfinite(v));
  // gamma = c x: derivative c over [0, 1]
  EXPECT_NEAR(v, 0.005, 1e-6);
}

TEST(Discrete, NonpositiveLoadingDiverges) {
  const auto ctx = context(coeff::constant(0.01), make_linear_gamma(coeff::constant(0.05)));
  const auto nu = geometric_atoms(20);
  const auto cert = discrete_support_probe(nu, ctx, DiscreteKind::GNonpositive, make_sqrt_psi(nu));
  EXPECT_EQ(cert.verdict, "divergent");
  // |e^G - 1| <= 1 caps each denominator by sup Phat
  for (double d : cert.denominators) EXPECT_LE(d, ctx.phat_sup());
}

TEST(Discrete, KindMismatchDetected) {
  const auto ctx = context(coeff::constant(0.01), make_linear_gamma(coeff::constant(0.05)));
  const auto nu = geometric_atoms(20, -1.0);
  try {
    discrete_support_probe(nu, ctx, DiscreteKind::GNonpositive, make_sqrt_psi(nu));
    FAIL();
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("scenario/kind mismatch"), std::string::npos);
  }
  EXPECT_THROW(discrete_support_probe(nu, ctx, DiscreteKind::GToZero, make_constant_psi(nu)), NumericalError);
}

TEST(Discrete, VanishingLoadingDiverges) {
  const auto ctx = context(coeff::constant(0.01), coeff::mark_decay(0.5, 1.0));
  const auto nu = geometric_atoms(30);
  const auto cert = discrete_support_probe(nu, ctx, DiscreteKind::GToZero, make_constant_psi(nu));
  EXPECT_EQ(cert.verdict, "divergent");
  for (double n : cert.numerators) EXPECT_EQ(n, 1.0);
}

TEST(Discrete, SaturatingLoadingDiverges) {
  const auto ctx = context(coeff::constant(0.01), coeff::saturating(0.3));
  const auto nu = geometric_atoms(20);
  const auto cert = discrete_support_probe(nu, ctx, DiscreteKind::GToAlpha, make_sqrt_psi(nu));
  EXPECT_EQ(cert.verdict, "divergent");
}

TEST(Discrete, LinearBoundedLoadingDiverges) {
  const auto ctx = context(coeff::constant(0.01), make_linear_gamma(coeff::constant(0.5)));
  std::vector<Atom> atoms;
  for (int i = 1; i <= 30; ++i) atoms.push_back({static_cast<double>(i), std::exp(-3.5 * i)});
  const auto nu = LevyMeasure::discrete(atoms, std::exp(-3.5 * 31) / (1.0 - std::exp(-3.5)));
  const auto psi = make_exponential_psi(1.0, 0.5, nu);
  const auto cert = discrete_support_probe(nu, ctx, DiscreteKind::GLinearBounded, psi);
  EXPECT_EQ(cert.verdict, "divergent");
  for (std::size_t i = 0; i < cert.points.size(); ++i) {
    const double x = cert.points[i];
    EXPECT_GE(cert.gammas[i] * (1.0 + 1e-12), std::exp(1.5 * x) / (std::exp(x) - 1.0) / ctx.phat_sup());
  }
}

TEST(DiscreteKind, RoundTrip) {
  for (auto k : {DiscreteKind::GNonpositive, DiscreteKind::GToZero, DiscreteKind::GToAlpha, DiscreteKind::GLinearBounded})
    EXPECT_EQ(discrete_kind_from_string(to_string(k)), std::optional<DiscreteKind>(k));
  EXPECT_FALSE(discrete_kind_from_string("G_sideways").has_value());
}

TEST(Verdict, Rule) {
  EXPECT_EQ(divergence_verdict({1.0, 10.0, 1e7}, 1e6), "divergent");
  EXPECT_EQ(divergence_verdict({1.0, 1e8, 2e7}, 1e6), "inconclusive");
  EXPECT_EQ(divergence_verdict({1.0, 2.0, 3.0}, 1e6), "inconclusive");
}

TEST(Optimized, NestedSetsNeverLose) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> z;
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index J = 12, n = 7;
    Eigen::MatrixXd H(J, n);
    Eigen::VectorXd g(n);
    for (Eigen::Index i = 0; i < H.size(); ++i) H.data()[i] = z(rng);
    for (Eigen::Index i = 0; i < n; ++i) g[i] = z(rng);
    double last = 0.0;
    Eigen::VectorXd warm;
    for (Eigen::Index m = 1; m <= n; ++m) {
      std::optional<Eigen::VectorXd> start;
      if (m > 1) {
        Eigen::VectorXd w = Eigen::VectorXd::Zero(m);
        w.head(m - 1) = warm;
        start = w;
      }
      const auto r = optimized_gamma(H.leftCols(m), g.head(m), 16.0, start);
      EXPECT_GE(r.gamma, last * (1.0 - 1e-12));
      last = r.gamma;
      warm = r.beta;
    }
  }
}

TEST(Optimized, BeatsSingletonTests) {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> z;
  const Eigen::Index J = 10, n = 5;
  Eigen::MatrixXd H(J, n);
  Eigen::VectorXd g(n);
  for (Eigen::Index i = 0; i < H.size(); ++i) H.data()[i] = z(rng);
  for (Eigen::Index i = 0; i < n; ++i) g[i] = z(rng);
  const auto r = optimized_gamma(H, g);
  for (Eigen::Index i = 0; i < n; ++i) EXPECT_GE(r.gamma, std::abs(g[i]) / H.col(i).cwiseAbs().maxCoeff() * 0.999);
}

TEST(Control, FiniteSupportStaysBounded) {
  const auto grid = MaturityGrid::uniform(1.0, 32);
  ModelCoefficients mc(coeff::constant(0.2), make_linear_gamma(coeff::constant(0.5)), std::nullopt, 1.0);
  const MarketModel model(mc, LevyMeasure::finite({{-0.6, 0.1}, {0.5, 0.1}, {0.9, 0.1}}), grid,
                          std::vector<double>(grid.size(), 0.03), 0.5, 8);
  const auto control = finite_support_probe(model, [](double x) { return std::min(std::abs(x), 1.0); }, 100);
  EXPECT_EQ(control.gammas.size(), 100u);
  EXPECT_TRUE(control.bounded);
  EXPECT_NE(control.verdict, "divergent");
  const auto report = incompleteness_report(GammaCertificate{.verdict = control.verdict}, {});
  EXPECT_EQ(report.verdict, "no incompleteness evidence");
}

TEST(BestEffort, VanishesOnceColumnsSuffice) {
  const auto ctx = context(coeff::constant(0.2), make_linear_gamma(coeff::constant(0.5)));
  const auto ts = MomentTestSet::build(ctx, {-0.6, 0.5, 0.9}, {1.0, 1.0, 1.0}, [](double x) { return x * x; });
  const auto res = best_effort_residuals(ts, {1, 2, 3, 8});
  EXPECT_GT(res[0], 1e-3);
  EXPECT_LT(res[2], 1e-9);
  EXPECT_LT(res[3], 1e-9);
}

TEST(Report, DivergentCertificateIsEvidence) {
  const auto cert = concentration_probe(unit_uniform(), 1.0, concentration_ctx(), EpsilonSequence::harmonic());
  const auto r = incompleteness_report(cert, {ClassTag::Psi1, ClassTag::Psi2, ClassTag::Psi12});
  EXPECT_EQ(r.verdict, "incompleteness evidence");
  EXPECT_EQ(r.claim_tags.size(), 3u);
}

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "bondcomp/errors.hpp"
#include "bondcomp/levy.hpp"
#include "bondcomp/rng.hpp"

using namespace bondcomp;

namespace {

LevyMeasure two_atoms() { return LevyMeasure::finite({{1.0, 0.5}, {2.0, 0.25}}); }

std::vector<double> harmonic(std::size_t n) {
  std::vector<double> e(n);
  for (std::size_t i = 0; i < n; ++i) e[i] = 1.0 / static_cast<double>(i + 1);
  return e;
}

}  // namespace

TEST(TotalMass, SingleAtomInside) { EXPECT_DOUBLE_EQ(two_atoms().total_mass({{0.5, 1.5}}), 0.5); }

TEST(TotalMass, FullMass) { EXPECT_DOUBLE_EQ(two_atoms().total_mass({{-10.0, 10.0}}), 0.75); }

TEST(TotalMass, ConstantDensityHalfInterval) {
  const auto nu = LevyMeasure::uniform(1.0, 2.0, 1.0, 1.5);
  EXPECT_NEAR(nu.total_mass({{1.0, 1.5}}), 0.5, 1e-12);
}

TEST(TotalMass, OverlappingPiecesCountedOnce) {
  EXPECT_DOUBLE_EQ(two_atoms().total_mass({{0.0, 1.5}, {0.9, 1.2}}), 0.5);
  const auto nu = LevyMeasure::uniform(0.0, 4.0, 2.0, 1.0);
  EXPECT_NEAR(nu.total_mass({{1.0, 2.0}, {1.5, 3.0}}), 4.0, 1e-10);
}

TEST(TotalMass, PartitionIsAdditiveForAtoms) {
  const auto nu = LevyMeasure::finite({{-1.3, 0.2}, {0.4, 0.7}, {0.9, 0.05}, {2.5, 1.1}, {3.0, 0.3}});
  const std::vector<double> cuts{-2.0, -0.5, 0.5, 1.0, 2.75, 3.5};
  double parts = 0.0;
  // half-open pieces so that cut points are not double counted
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    parts += nu.total_mass({{cuts[i], std::nextafter(cuts[i + 1], -1e300)}});
  }
  EXPECT_NEAR(parts, nu.total_mass({{-2.0, 3.5}}), 1e-12);
}

TEST(TotalMass, PartitionIsAdditiveForDensity) {
  Density d{[](double x) { return std::exp(-x); }, {{0.1, 3.0}}, 0.5, 4096, 1e-6};
  const LevyMeasure nu{d};
  const double whole = nu.total_mass({{0.1, 3.0}});
  const double parts = nu.total_mass({{0.1, 0.7}}) + nu.total_mass({{0.7, 1.9}}) + nu.total_mass({{1.9, 3.0}});
  EXPECT_NEAR(parts, whole, 1e-7);
  EXPECT_NEAR(whole, std::exp(-0.1) - std::exp(-3.0), 1e-6);
}

TEST(TotalMass, InvalidDensityIsRejected) {
  Density d{[](double) { return std::numeric_limits<double>::infinity(); }, {{1.0, 2.0}}, 1.5, 64, 1e-6};
  EXPECT_THROW(LevyMeasure{d}, NumericalError);
}

TEST(Atoms, InvariantsEnforced) {
  EXPECT_THROW(LevyMeasure::finite({{1.0, 0.0}}), std::invalid_argument);
  EXPECT_THROW(LevyMeasure::finite({{0.0, 1.0}}), std::invalid_argument);
  EXPECT_THROW(LevyMeasure::finite({{1.0, 1.0}, {1.0, 2.0}}), std::invalid_argument);
  EXPECT_THROW(LevyMeasure::discrete({{2.0, 1.0}, {1.0, 1.0}}, 0.0), std::invalid_argument);
  EXPECT_THROW(LevyMeasure::discrete({{1.0, 1.0}}, -1.0), std::invalid_argument);
}

TEST(ConcentrationPoint, UniformDensityAroundCentre) {
  const auto nu = LevyMeasure::uniform(0.5, 1.5, 1.0, 1.0);
  const auto eps = harmonic(9);
  // 1/2 < |x - 1| <= 1 meets [0.5, 1.5] in two points only
  EXPECT_FALSE(nu.has_concentration_point(1.0, eps));
  EXPECT_TRUE(nu.has_concentration_point(1.0, std::span<const double>(eps).subspan(1)));
}

TEST(ConcentrationPoint, AtomsHaveNone) { EXPECT_FALSE(two_atoms().has_concentration_point(1.0, harmonic(8))); }

TEST(ConcentrationPoint, FarFromSupport) {
  const auto nu = LevyMeasure::uniform(1.0, 2.0, 1.0, 1.5);
  EXPECT_FALSE(nu.has_concentration_point(5.0, harmonic(8)));
}

TEST(ConcentrationPoint, MonotoneInPrefix) {
  const auto nu = LevyMeasure::uniform(0.5, 1.5, 1.0, 1.0);
  const auto atoms = LevyMeasure::finite({{1.0 + 1.0 / 2.5, 1.0}, {1.0 + 1.0 / 3.5, 1.0}, {1.0 - 1.0 / 4.5, 1.0}});
  for (const auto* m : {&nu, &atoms}) {
    for (std::size_t n = 2; n <= 30; ++n) {
      const auto eps = harmonic(n);
      if (!m->has_concentration_point(1.0, eps)) continue;
      for (std::size_t k = 2; k < n; ++k) {
        EXPECT_TRUE(m->has_concentration_point(1.0, std::span<const double>(eps).first(k)));
      }
    }
  }
}

TEST(ConcentrationPoint, RejectsNonDecreasingRadii) {
  const std::vector<double> eps{0.5, 0.5};
  EXPECT_THROW(two_atoms().has_concentration_point(1.0, eps), std::invalid_argument);
}

TEST(SampleJumps, EmptyMeasureGivesNoEvents) {
  Rng rng(7);
  EXPECT_TRUE(LevyMeasure::finite({}).sample_jumps(1.0, rng).empty());
}

TEST(SampleJumps, ReproducibleFromSeed) {
  const auto nu = LevyMeasure::finite({{1.0, 3.0}, {-0.5, 2.0}});
  Rng a(derive_seed(42, stream::kJumps, 3));
  Rng b(derive_seed(42, stream::kJumps, 3));
  for (int rep = 0; rep < 50; ++rep) {
    const auto ea = nu.sample_jumps(2.0, a);
    const auto eb = nu.sample_jumps(2.0, b);
    ASSERT_EQ(ea.size(), eb.size());
    for (std::size_t i = 0; i < ea.size(); ++i) {
      EXPECT_EQ(ea[i].time, eb[i].time);
      EXPECT_EQ(ea[i].mark, eb[i].mark);
    }
  }
}

TEST(SampleJumps, PoissonCountMean) {
  const auto nu = LevyMeasure::finite({{1.0, 2.0}});
  Rng rng(derive_seed(1, stream::kJumps));
  const int paths = 100000;
  double total = 0.0;
  for (int p = 0; p < paths; ++p) total += static_cast<double>(nu.sample_jumps(1.0, rng).size());
  EXPECT_NEAR(total / paths, 2.0, 3.0 * std::sqrt(2.0 / paths));
}

TEST(SampleJumps, MarkFrequencyFollowsMasses) {
  const auto nu = LevyMeasure::finite({{1.0, 0.5}, {-1.0, 0.5}});
  Rng rng(derive_seed(2, stream::kJumps));
  double count = 0.0, plus = 0.0;
  for (int p = 0; p < 100000; ++p) {
    for (const auto& e : nu.sample_jumps(2.0, rng)) {
      count += 1.0;
      if (e.mark == 1.0) plus += 1.0;
    }
  }
  ASSERT_GT(count, 0.0);
  EXPECT_NEAR(plus / count, 0.5, 3.0 * std::sqrt(0.25 / count));
}

TEST(SampleJumps, TimesIncreaseAndMarksInSupport) {
  const auto nu = LevyMeasure::uniform(0.5, 1.5, 4.0, 1.0);
  Rng rng(derive_seed(3, stream::kJumps));
  double sum = 0.0, count = 0.0;
  for (int p = 0; p < 20000; ++p) {
    const auto ev = nu.sample_jumps(1.0, rng);
    for (std::size_t i = 0; i < ev.size(); ++i) {
      if (i > 0) EXPECT_LT(ev[i - 1].time, ev[i].time);
      EXPECT_GE(ev[i].time, 0.0);
      EXPECT_LE(ev[i].time, 1.0);
      EXPECT_GE(ev[i].mark, 0.5);
      EXPECT_LE(ev[i].mark, 1.5);
      sum += ev[i].mark;
      count += 1.0;
    }
  }
  // uniform marks: mean 1, variance 1/12
  EXPECT_NEAR(sum / count, 1.0, 3.0 * std::sqrt(1.0 / 12.0 / count));
  EXPECT_NEAR(count / 20000.0, 4.0, 3.0 * std::sqrt(4.0 / 20000.0));
}

TEST(Compensator, LinearIntegrand) {
  EXPECT_DOUBLE_EQ(two_atoms().compensator_integral([](double x) { return x; }), 1.0);
}

TEST(Compensator, ZeroIntegrand) {
  const auto nu = LevyMeasure::finite({{1.0, 0.5}});
  EXPECT_EQ(nu.compensator_integral([](double) { return 0.0; }), 0.0);
}

TEST(Compensator, DensityTrapezoid) {
  const auto nu = LevyMeasure::uniform(1.0, 2.0, 3.0, 1.5);
  EXPECT_NEAR(nu.compensator_integral([](double x) { return x * x; }), 3.0 * 7.0 / 3.0, 1e-6);
}

TEST(Compensator, DivergentTailRejected) {
  std::vector<Atom> atoms;
  for (int i = 1; i <= 40; ++i) atoms.push_back({static_cast<double>(i), 1.0 / i});
  const auto nu = LevyMeasure::discrete(atoms, 1.0);
  // x * (1/x) = 1 per term: no decay
  EXPECT_THROW(nu.compensator_integral([](double x) { return x; }), NumericalError);
  EXPECT_NO_THROW(nu.compensator_integral([](double x) { return 1.0 / x; }));
}

TEST(Compensator, PartialSumsEndAtIntegral) {
  const auto nu = LevyMeasure::finite({{1.0, 0.5}, {2.0, 0.25}, {-3.0, 0.125}});
  const auto g = [](double x) { return x * x; };
  const auto ps = nu.compensator_partial_sums(g);
  ASSERT_EQ(ps.size(), 3u);
  EXPECT_DOUBLE_EQ(ps.back(), nu.compensator_integral(g));
}

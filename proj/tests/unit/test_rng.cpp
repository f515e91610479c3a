#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "han/rng.hpp"

namespace {

TEST(Rng, SameSeedSameStream) {
  han::Rng a(42);
  han::Rng b(42);
  for (int i = 0; i < 1000; ++i) ASSERT_EQ(a(), b());
}

TEST(Rng, DifferentSeedsDiverge) {
  han::Rng a(1);
  han::Rng b(2);
  int equal = 0;
  for (int i = 0; i < 100; ++i) equal += a() == b() ? 1 : 0;
  EXPECT_LT(equal, 2);
}

TEST(Rng, UniformStaysInUnitInterval) {
  han::Rng rng(7);
  double total = 0.0;
  for (int i = 0; i < 100000; ++i) {
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    total += u;
  }
  EXPECT_NEAR(total / 100000.0, 0.5, 0.005);
}

TEST(Rng, BernoulliEdges) {
  han::Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    ASSERT_FALSE(rng.bernoulli(0.0));
    ASSERT_TRUE(rng.bernoulli(1.0));
  }
}

// Chi-square goodness of fit of below(7) over 70000 draws; the 0.999
// quantile of chi-square with 6 degrees of freedom is 22.46.
TEST(Rng, BelowIsUniform) {
  han::Rng rng(11);
  std::vector<double> counts(7, 0.0);
  const int draws = 70000;
  for (int i = 0; i < draws; ++i) {
    const auto k = rng.below(7);
    ASSERT_LT(k, 7U);
    counts[k] += 1.0;
  }
  double chi2 = 0.0;
  for (double c : counts) chi2 += (c - draws / 7.0) * (c - draws / 7.0) / (draws / 7.0);
  EXPECT_LT(chi2, 22.46);
}

TEST(Rng, BelowOneIsZero) {
  han::Rng rng(5);
  for (int i = 0; i < 100; ++i) ASSERT_EQ(rng.below(1), 0U);
}

TEST(DeriveSeed, MatchesSplitmixStream) {
  std::uint64_t state = 99;
  for (std::uint64_t i = 0; i < 10; ++i) {
    EXPECT_EQ(han::derive_seed(99, i), han::splitmix64(state));
  }
}

TEST(DeriveSeed, KnownSplitmixValue) {
  // First SplitMix64 output for state 0, from the reference implementation.
  EXPECT_EQ(han::derive_seed(0, 0), 0xe220a8397b1dcdafULL);
}

}  // namespace

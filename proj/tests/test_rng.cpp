#include <gtest/gtest.h>

#include <set>

#include "qpi/rng.hpp"

using namespace qpi;

TEST(Rng, MatchesReferenceStream) {
  Rng rng(derive_seed(11, 22, 33));
  EXPECT_EQ(rng.next_u64(), 11997126976826435576ull);
  EXPECT_EQ(Rng(5).below(100), 42u);
}

TEST(Rng, UniformStaysInRange) {
  Rng rng(1);
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    const auto b = rng.below(7);
    ASSERT_LT(b, 7u);
  }
}

TEST(Rng, NormalHasUnitMoments) {
  Rng rng(3);
  double s = 0, ss = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    s += z;
    ss += z * z;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(ss / n, 1.0, 0.01);
}

TEST(Rng, DerivedSeedsDiffer) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t a = 0; a < 50; ++a)
    for (std::uint64_t b = 0; b < 50; ++b) seen.insert(derive_seed(7, a, b));
  EXPECT_EQ(seen.size(), 2500u);
  EXPECT_NE(derive_seed(1, 2, 3), derive_seed(1, 3, 2));
}

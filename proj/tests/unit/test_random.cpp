#include <gtest/gtest.h>

#include <set>

#include "opve/random.hpp"

using namespace opve;

TEST(Random, SameSeedSameStream) {
  Rng a(7), b(7);
  for (int i = 0; i < 1000; ++i) {
    ASSERT_EQ(a.next_u64(), b.next_u64());
  }
  Rng c(7), d(7);
  for (int i = 0; i < 1000; ++i) ASSERT_EQ(c.normal(), d.normal());
}

TEST(Random, DeriveSeedInjectivePerMaster) {
  for (std::uint64_t master : {0ULL, 1ULL, 42ULL, 0xFFFFFFFFFFFFFFFFULL}) {
    std::set<std::uint64_t> seen;
    for (std::uint64_t trial = 0; trial < 20000; ++trial) seen.insert(derive_seed(master, trial));
    EXPECT_EQ(seen.size(), 20000u);
  }
}

TEST(Random, UniformInUnitInterval) {
  Rng rng(3);
  double total = 0.0;
  for (int i = 0; i < 100000; ++i) {
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    total += u;
  }
  EXPECT_NEAR(total / 100000.0, 0.5, 0.005);
}

TEST(Random, NormalMoments) {
  Rng rng(11);
  const int n = 200000;
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    s += z;
    s2 += z * z;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.015);
}

TEST(Random, CategoricalFrequencies) {
  Rng rng(5);
  const double w[] = {0.2, 0.0, 0.5, 0.3};
  int counts[4] = {0, 0, 0, 0};
  const int n = 100000;
  for (int i = 0; i < n; ++i) ++counts[rng.categorical(w)];
  EXPECT_EQ(counts[1], 0);
  for (int a : {0, 2, 3}) {
    const double se = std::sqrt(w[a] * (1 - w[a]) / n);
    EXPECT_NEAR(counts[a] / double(n), w[a], 4 * se);
  }
}

TEST(Random, ShuffleIsPermutation) {
  Rng rng(9);
  std::vector<int> v(100);
  for (int i = 0; i < 100; ++i) v[i] = i;
  rng.shuffle(v.begin(), v.end());
  std::vector<int> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 100; ++i) EXPECT_EQ(sorted[i], i);
  EXPECT_NE(v, sorted);
}

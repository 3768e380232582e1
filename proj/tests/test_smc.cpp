#include <gtest/gtest.h>

#include "disagg/smc.hpp"
#include "oracles.hpp"

using namespace disagg;

TEST(FixedPoint, EncodeDecode) {
  EXPECT_EQ(FixedPoint::encode(1.0).raw, std::uint64_t{1} << 20);
  EXPECT_EQ(FixedPoint::encode(-1.0).to_integer(), -(std::int64_t{1} << 20));
  EXPECT_DOUBLE_EQ(FixedPoint::encode(-2.5).decode(), -2.5);
  EXPECT_LE(std::abs(FixedPoint::encode(0.3).decode() - 0.3), 0.5 / kScale);
  EXPECT_THROW(FixedPoint::encode(FixedPoint::max_magnitude()), std::overflow_error);
  EXPECT_THROW(FixedPoint::encode(NAN), std::invalid_argument);
}

TEST(FixedPoint, CeilNeverUndershoots) {
  CounterRng rng(51);
  for (int i = 0; i < 1000; ++i) {
    const double v = rng.uniform(-1e3, 1e3);
    const double c = FixedPoint::encode_ceil(v).decode();
    EXPECT_GE(c, v);
    EXPECT_LT(c - v, 1.0 / kScale);
  }
}

TEST(FixedPoint, ModularArithmeticWraps) {
  const FixedPoint a = FixedPoint::from_integer(-3), b = FixedPoint::from_integer(5);
  EXPECT_EQ((a + b).to_integer(), 2);
  EXPECT_EQ((a - b).to_integer(), -8);
  EXPECT_EQ((FixedPoint{kModMask} + FixedPoint{1}).raw, 0u);
}

TEST(Smc, AggregateEqualsQuantizedSumBitExactly) {
  CounterRng rng(52);
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t N = 1 + rng.below(8), T = 1 + rng.below(10);
    Matrix x(N, T);
    std::vector<FixedVector> rows;
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t t = 0; t < T; ++t) x(n, t) = rng.uniform(-50.0, 50.0);
      rows.push_back(quantize(x.row(n)));
    }
    FixedVector plain(T);
    for (const auto& r : rows)
      for (std::size_t t = 0; t < T; ++t) plain[t] += r[t];
    EXPECT_EQ(smc_sum_words(rows, rng.split(rep)), plain);
    EXPECT_EQ(smc_sum(x, rng.split(rep)), dequantize(plain));
  }
}

TEST(Smc, ExplicitExchange) {
  CounterRng rng(53);
  const Matrix x = Matrix::from_rows({{1.5, -2.0}, {0.25, 4.0}, {3.0, 0.0}});
  std::vector<std::vector<ShareBundle>> inbox(3);
  for (std::size_t n = 0; n < 3; ++n)
    for (auto& b : split(n, x.row(n), 3, rng)) inbox[b.receiver].push_back(b);
  std::vector<SigmaVector> sigmas;
  for (std::size_t n = 0; n < 3; ++n) sigmas.push_back(combine(n, inbox[n]));
  EXPECT_EQ(aggregate(sigmas), (Vector{4.75, 2.0}));
  // a single sigma reveals nothing about its owner's row
  EXPECT_NE(sigmas[0].values[0], FixedPoint::encode(1.5));
  std::vector<SigmaVector> dup{sigmas[0], sigmas[0], sigmas[2]};
  EXPECT_THROW(aggregate(dup), std::invalid_argument);
  EXPECT_THROW(combine(1, inbox[0]), std::invalid_argument);
}

TEST(Smc, SingleAgentPassesSecretThrough) {
  CounterRng rng(54);
  const auto b = split(0, Vector{2.0}, 1, rng);
  ASSERT_EQ(b.size(), 1u);
  EXPECT_EQ(b[0].shares[0], FixedPoint::encode(2.0));
}

TEST(Smc, SplitRejectsOverflowForManyAgents) {
  CounterRng rng(55);
  const double big = FixedPoint::max_magnitude() / 2.0;
  EXPECT_NO_THROW(split(0, Vector{big}, 1, rng));
  EXPECT_THROW(split(0, Vector{big}, 4, rng), std::overflow_error);
}

TEST(Smc, ScalarSum) {
  const Vector v{0.5, 1.25, -0.75};
  EXPECT_DOUBLE_EQ(smc_sum_scalar(v, CounterRng(1)), 1.0);
}

TEST(Smc, SharesAreUniform) {
  EXPECT_GT(oracle::share_uniformity_pvalue(100000, 64, 3, 56), 0.001);
  EXPECT_GT(oracle::share_uniformity_pvalue(100000, 64, 2, 57), 0.001);
}

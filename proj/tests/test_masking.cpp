#include "test_util.hpp"

#include <smsr/ssdu_masking.hpp>
#include <smsr/synthdata.hpp>

#include <gtest/gtest.h>

using namespace smsr;
using namespace smsr::testing;

TEST(SplitMasks, DefaultProducesSixValidPairs)
{
  auto omega = make_pattern(64, 64, 4, 8, 0);
  auto split = split_masks(omega, SplitOptions{});
  EXPECT_EQ(split.K(), 6);
  auto report = validate_split(split, omega);
  EXPECT_TRUE(report.all_passed());
  ASSERT_EQ(report.checks.size(), 6u);
}

TEST(SplitMasks, FractionWithinBandOnQuarterSampledGrid)
{
  auto omega = make_pattern(64, 64, 4, 8, 0);
  // 16 regular rows plus 6 ACS rows off the regular grid.
  EXPECT_EQ(omega.count(), 22 * 64);
  SplitOptions opt;
  opt.rho = 0.4;
  opt.seed = 11;
  auto split = split_masks(omega, opt);
  for (auto const &c : validate_split(split, omega).checks) {
    EXPECT_GE(c.lambda_fraction, 0.38);
    EXPECT_LE(c.lambda_fraction, 0.42);
    EXPECT_EQ(c.theta_count + c.lambda_count, omega.count());
  }
}

TEST(SplitMasks, TinyRhoGivesEmptyLambdaAndFullTheta)
{
  auto omega = make_pattern(32, 32, 2, 4, 0);
  SplitOptions opt;
  opt.rho = 1e-6;
  opt.k_masks = 2;
  auto split = split_masks(omega, opt);
  for (auto const &p : split.pairs) {
    EXPECT_EQ(p.theta.mask, omega.mask);
    for (auto v : p.lambda.flat()) { EXPECT_EQ(v, 0); }
  }
  EXPECT_TRUE(validate_split(split, omega).all_passed());
}

TEST(SplitMasks, SameSeedIsIdenticalDifferentSeedDiffers)
{
  auto omega = make_pattern(32, 32, 2, 4, 0);
  SplitOptions opt;
  opt.seed = 5;
  EXPECT_EQ(split_masks(omega, opt), split_masks(omega, opt));
  auto other = opt;
  other.seed = 6;
  EXPECT_NE(split_masks(omega, opt).pairs[0].lambda, split_masks(omega, other).pairs[0].lambda);
}

TEST(SplitMasks, MasksDifferAcrossK)
{
  auto omega = make_pattern(32, 32, 2, 4, 0);
  auto split = split_masks(omega, SplitOptions{});
  for (Index k = 1; k < split.K(); ++k) {
    EXPECT_NE(split.pairs[0].lambda, split.pairs[static_cast<std::size_t>(k)].lambda);
  }
}

TEST(SplitMasks, AcsNeverInLambda)
{
  auto omega = make_pattern(32, 32, 4, 8, 0);
  SplitOptions opt;
  opt.rho = 0.4;
  auto split = split_masks(omega, opt);
  for (auto const &p : split.pairs) {
    for (Index m = omega.acs.row_begin; m < omega.acs.row_end; ++m) {
      for (Index n = 0; n < 32; ++n) { EXPECT_EQ(p.lambda(m, n), 0); }
    }
  }
}

TEST(SplitMasks, LambdaConcentratesNearCentre)
{
  // Gaussian density: the inner half of the rows should hold more lambda points per sample than the outer half.
  auto omega = make_pattern(64, 64, 2, 0, 0);
  SplitOptions opt;
  opt.k_masks = 20;
  auto split = split_masks(omega, opt);
  double inner = 0, outer = 0, innerOmega = 0, outerOmega = 0;
  for (auto const &p : split.pairs) {
    for (Index m = 0; m < 64; ++m) {
      bool const in = std::abs(m - 32) < 16;
      for (Index n = 0; n < 64; ++n) {
        (in ? inner : outer) += p.lambda(m, n);
        (in ? innerOmega : outerOmega) += omega.at(m, n);
      }
    }
  }
  EXPECT_GT(inner / innerOmega, 1.5 * outer / outerOmega);
}

TEST(SplitMasks, RandomAcquisitionSetsAllValid)
{
  std::mt19937_64 rng(21);
  for (int t = 0; t < 20; ++t) {
    auto omega = randomPattern(24, 20, 0.2 + 0.6 * std::uniform_real_distribution<double>(0, 1)(rng), rng);
    SplitOptions opt;
    opt.seed = static_cast<std::uint64_t>(t);
    opt.rho = std::uniform_real_distribution<double>(0.05, 0.9)(rng);
    auto report = validate_split(split_masks(omega, opt), omega);
    EXPECT_TRUE(report.all_passed()) << "draw " << t;
  }
}

TEST(ValidateSplit, DuplicatedSampleFailsOnlyThatPair)
{
  auto omega = make_pattern(32, 32, 2, 4, 0);
  auto split = split_masks(omega, SplitOptions{});
  auto &bad = split.pairs[1];
  Index v = 0;
  while (!bad.lambda[v]) { ++v; }
  bad.theta.mask[v] = 1;
  auto report = validate_split(split, omega);
  EXPECT_FALSE(report.all_passed());
  for (auto const &c : report.checks) {
    EXPECT_EQ(c.passed(), c.k != 1);
    if (c.k == 1) {
      EXPECT_FALSE(c.disjoint_ok);
      EXPECT_TRUE(c.union_ok);
    }
  }
}

TEST(ValidateSplit, MissingSampleBreaksUnion)
{
  auto omega = make_pattern(32, 32, 2, 4, 0);
  auto split = split_masks(omega, SplitOptions{});
  auto &p = split.pairs[0];
  Index v = 0;
  while (!p.lambda[v]) { ++v; }
  p.lambda[v] = 0;
  auto c = validate_split(split, omega).checks[0];
  EXPECT_FALSE(c.union_ok);
}

TEST(SplitMasks, RejectsBadParameters)
{
  auto omega = make_pattern(32, 32, 2, 4, 0);
  SplitOptions opt;
  opt.k_masks = 0;
  EXPECT_THROW(split_masks(omega, opt), ParameterError);
  opt = {};
  opt.rho = 1.0;
  EXPECT_THROW(split_masks(omega, opt), ParameterError);
  opt.rho = 0.0;
  EXPECT_THROW(split_masks(omega, opt), ParameterError);
  // 14 acquired rows, 6 outside ACS: half of omega cannot be held out.
  opt.rho = 0.5;
  EXPECT_THROW(split_masks(make_pattern(32, 32, 4, 8, 0), opt), ParameterError);
  // ACS covering all of omega leaves nothing to hold out.
  auto full = make_pattern(8, 8, 8, 7, 0);
  EXPECT_THROW(split_masks(full, SplitOptions{}), ParameterError);
}

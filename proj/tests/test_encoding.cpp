#include "dense_oracle.hpp"
#include "test_util.hpp"

#include <smsr/cg.hpp>
#include <smsr/synthdata.hpp>

#include <gtest/gtest.h>

using namespace smsr;
using namespace smsr::testing;


TEST(Forward, ZeroImageGivesZeroKSpace)
{
  std::mt19937_64 rng(1);
  auto maps = randomMaps<double>(3, 2, 8, 8, rng);
  auto pat = randomPattern(8, 8, 0.5, rng);
  SliceStack<double> x(2, 8, 8);
  auto y = forward_sms(x, maps, pat, CaipiShiftSchedule::standard(2, 8));
  for (auto v : y.data.flat()) { EXPECT_EQ(v, Cx<double>(0)); }
}

TEST(Forward, SingleSliceMatchesDirectDft)
{
  std::mt19937_64 rng(2);
  auto x = randomStack<double>(1, 8, 8, rng);
  auto y = forward_sms(x, unitMaps<double>(1, 8, 8), fullPattern(8, 8), CaipiShiftSchedule::zeros(1));
  auto ref = directDft(x.slice(0), 8, 8, true);
  EXPECT_LT(relDiff<double>(y.coil(0), ref), 1e-13);
}

TEST(Forward, HalfFovShiftMatchesShiftTheorem)
{
  std::mt19937_64 rng(3);
  auto x = randomStack<double>(2, 8, 8, rng);
  auto y = forward_sms(x, unitMaps<double>(2, 8, 8), fullPattern(8, 8), CaipiShiftSchedule({0.0, 0.5}));
  std::vector<Cx<double>> rolled(64);
  for (Index m = 0; m < 8; ++m) {
    for (Index n = 0; n < 8; ++n) { rolled[((m + 4) % 8) * 8 + n] = x.data(1, m, n); }
  }
  auto a = directDft(x.slice(0), 8, 8, true);
  auto b = directDft(rolled, 8, 8, true);
  for (std::size_t i = 0; i < a.size(); ++i) { a[i] += b[i]; }
  EXPECT_LT(relDiff<double>(y.coil(0), a), 1e-13);
}

TEST(Forward, MatchesDenseDefinitionWithCoilsAndMask)
{
  std::mt19937_64 rng(4);
  auto maps = randomMaps<double>(2, 3, 6, 4, rng);
  auto pat = randomPattern(6, 4, 0.6, rng);
  CaipiShiftSchedule sh({0.0, 1.0 / 3.0, 2.0 / 3.0});
  auto x = randomStack<double>(3, 6, 4, rng);
  auto y = forward_sms(x, maps, pat, sh);
  Eigen::VectorXcd ref = denseEncoding(maps, pat, sh) * asVec(x.data.flat());
  for (Index i = 0; i < ref.size(); ++i) { EXPECT_LT(std::abs(ref[i] - y.data[i]), 1e-12); }
}

TEST(Forward, SupportIsExactlyThePattern)
{
  std::mt19937_64 rng(5);
  auto maps = randomMaps<double>(4, 2, 16, 16, rng);
  auto pat = randomPattern(16, 16, 0.3, rng);
  auto y = forward_sms(randomStack<double>(2, 16, 16, rng), maps, pat, CaipiShiftSchedule::standard(2, 16));
  for (Index c = 0; c < 4; ++c) {
    for (Index v = 0; v < 256; ++v) {
      if (!pat.mask[v]) { EXPECT_EQ(y.coil(c)[v], Cx<double>(0)); }
    }
  }
}

TEST(Forward, IsLinear)
{
  std::mt19937_64 rng(6);
  auto maps = randomMaps<double>(4, 3, 16, 16, rng);
  auto pat = randomPattern(16, 16, 0.4, rng);
  auto sh = CaipiShiftSchedule::standard(3, 16);
  auto x1 = randomStack<double>(3, 16, 16, rng), x2 = randomStack<double>(3, 16, 16, rng);
  Cx<double> const alpha(0.7, -1.3);
  SliceStack<double> comb(3, 16, 16);
  for (Index i = 0; i < comb.data.size(); ++i) { comb.data[i] = alpha * x1.data[i] + x2.data[i]; }
  auto y = forward_sms(comb, maps, pat, sh);
  auto y1 = forward_sms(x1, maps, pat, sh), y2 = forward_sms(x2, maps, pat, sh);
  for (Index i = 0; i < y.data.size(); ++i) { y1.data[i] = alpha * y1.data[i] + y2.data[i]; }
  EXPECT_LT(relDiff<double>(y.data.flat(), y1.data.flat()), 1e-14);
}

TEST(Forward, RejectsMismatchedAndNonFiniteInput)
{
  std::mt19937_64 rng(7);
  auto maps = randomMaps<double>(2, 2, 8, 8, rng);
  auto pat = fullPattern(8, 8);
  EXPECT_THROW(forward_sms(SliceStack<double>(3, 8, 8), maps, pat, CaipiShiftSchedule::zeros(2)), ContractViolation);
  EXPECT_THROW(forward_sms(SliceStack<double>(2, 8, 8), maps, pat, CaipiShiftSchedule::zeros(3)), ContractViolation);
  SliceStack<double> bad(2, 8, 8);
  bad.data[5] = {std::nan(""), 0.0};
  EXPECT_THROW(forward_sms(bad, maps, pat, CaipiShiftSchedule::zeros(2)), DataError);
}

TEST(Pattern, EmptyMaskIsRejected)
{
  EXPECT_THROW(SamplingPattern(Tensor<std::uint8_t, 2>({4, 4}, 0)), ContractViolation);
}

TEST(Adjoint, ZeroKSpaceGivesZeroImage)
{
  std::mt19937_64 rng(8);
  auto maps = randomMaps<double>(2, 2, 8, 8, rng);
  auto x = adjoint_sms(SmsKSpace<double>(2, 8, 8), maps, fullPattern(8, 8), CaipiShiftSchedule::standard(2, 8));
  for (auto v : x.data.flat()) { EXPECT_EQ(v, Cx<double>(0)); }
}

TEST(Adjoint, SingleSliceMatchesDirectInverseDft)
{
  std::mt19937_64 rng(9);
  auto y = randomKSpace<double>(1, 8, 8, rng);
  auto x = adjoint_sms(y, unitMaps<double>(1, 8, 8), fullPattern(8, 8), CaipiShiftSchedule::zeros(1));
  auto ref = directDft(y.coil(0), 8, 8, false);
  EXPECT_LT(relDiff<double>(x.slice(0), ref), 1e-13);
}

TEST(Adjoint, InnerProductIdentityS3C4)
{
  std::mt19937_64 rng(10);
  auto maps = randomMaps<double>(4, 3, 16, 16, rng);
  auto sh = CaipiShiftSchedule::standard(3, 16);
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    auto pat = randomPattern(16, 16, 0.5, rng);
    auto x = randomStack<double>(3, 16, 16, rng);
    auto y = randomKSpace<double>(4, 16, 16, rng);
    auto Ex = forward_sms(x, maps, pat, sh);
    auto EHy = adjoint_sms(y, maps, pat, sh);
    auto lhs = dotC<double>(Ex.data.flat(), y.data.flat());
    auto rhs = dotC<double>(x.data.flat(), EHy.data.flat());
    worst = std::max(worst, std::abs(lhs - rhs) / (norm2<double>(Ex.data.flat()) * norm2<double>(y.data.flat())));
  }
  EXPECT_LT(worst, 1e-5);
}

template <class Real>
double worstAdjointMismatch(int trials, std::uint64_t seed)
{
  std::mt19937_64 rng(seed);
  std::array<Index, 4> const Ss{1, 2, 3, 5}, Cs{1, 2, 4, 8};
  std::uniform_int_distribution<int> pick(0, 3);
  std::uniform_real_distribution<double> frac(0.0, 1.0);
  double worst = 0;
  for (int t = 0; t < trials; ++t) {
    Index const S = Ss[pick(rng)], C = Cs[pick(rng)];
    auto maps = randomMaps<Real>(C, S, 16, 16, rng);
    auto pat = randomPattern(16, 16, 0.2 + 0.6 * frac(rng), rng);
    std::vector<double> shifts(S);
    for (auto &s : shifts) { s = (t % 2) ? frac(rng) : std::floor(frac(rng) * 16) / 16.0; }
    CaipiShiftSchedule sh(shifts);
    auto x = randomStack<Real>(S, 16, 16, rng);
    auto y = randomKSpace<Real>(C, 16, 16, rng);
    auto Ex = forward_sms(x, maps, pat, sh);
    auto EHy = adjoint_sms(y, maps, pat, sh);
    auto lhs = dotC<Real>(Ex.data.flat(), y.data.flat());
    auto rhs = dotC<Real>(x.data.flat(), EHy.data.flat());
    worst = std::max(worst, double(std::abs(lhs - rhs) / (norm2<Real>(Ex.data.flat()) * norm2<Real>(y.data.flat()))));
  }
  return worst;
}

TEST(Adjoint, HoldsAcrossConfigurationsInDouble) { EXPECT_LT(worstAdjointMismatch<double>(60, 11), 1e-10); }

TEST(Adjoint, HoldsAcrossConfigurationsInSingle) { EXPECT_LT(worstAdjointMismatch<float>(60, 12), 1e-5); }

TEST(Caipi, ZeroShiftIsIdentity)
{
  std::mt19937_64 rng(13);
  auto x = randomStack<double>(3, 8, 8, rng);
  EXPECT_EQ(caipi_shift(x, CaipiShiftSchedule::zeros(3), ShiftDirection::Apply), x);
}

TEST(Caipi, ApplyThenRemoveIsBitExactForWholeRows)
{
  std::mt19937_64 rng(14);
  auto x = randomStack<double>(3, 8, 8, rng);
  CaipiShiftSchedule sh({0.0, 3.0 / 8.0, 5.0 / 8.0});
  auto back = caipi_shift(caipi_shift(x, sh, ShiftDirection::Apply), sh, ShiftDirection::Remove);
  EXPECT_EQ(back, x);
}

TEST(Caipi, FractionalShiftRoundTrips)
{
  std::mt19937_64 rng(15);
  auto x = randomStack<double>(2, 8, 8, rng);
  CaipiShiftSchedule sh({0.1, 0.37});
  auto back = caipi_shift(caipi_shift(x, sh, ShiftDirection::Apply), sh, ShiftDirection::Remove);
  EXPECT_LT(relDiff<double>(back.data.flat(), x.data.flat()), 1e-14);
}

TEST(Caipi, HalfShiftRotatesRowsByFour)
{
  std::mt19937_64 rng(16);
  auto x = randomStack<double>(1, 8, 8, rng);
  auto y = caipi_shift(x, CaipiShiftSchedule({0.5}), ShiftDirection::Apply);
  for (Index m = 0; m < 8; ++m) {
    for (Index n = 0; n < 8; ++n) { EXPECT_EQ(y.data(0, (m + 4) % 8, n), x.data(0, m, n)); }
  }
}

TEST(Caipi, RejectsOutOfRangeShift)
{
  EXPECT_THROW(CaipiShiftSchedule({0.0, 1.0}), ContractViolation);
  EXPECT_THROW(CaipiShiftSchedule({-0.1}), ContractViolation);
}

TEST(DcSolve, ConsistentDataIsAFixedPoint)
{
  std::mt19937_64 rng(17);
  auto maps = randomMaps<double>(3, 2, 8, 8, rng);
  auto pat = randomPattern(8, 8, 0.5, rng);
  auto sh = CaipiShiftSchedule::standard(2, 8);
  auto z = randomStack<double>(2, 8, 8, rng);
  auto y = forward_sms(z, maps, pat, sh);
  for (double mu : {0.0, 0.05, 3.0}) {
    auto x = dc_solve_cg<double>(z, y, maps, pat, sh, mu, 10);
    EXPECT_LT(relDiff<double>(x.data.flat(), z.data.flat()), 1e-12) << "mu " << mu;
  }
}

TEST(DcSolve, LargePenaltyReturnsPrior)
{
  std::mt19937_64 rng(18);
  auto maps = randomMaps<double>(3, 2, 8, 8, rng);
  auto pat = randomPattern(8, 8, 0.5, rng);
  auto sh = CaipiShiftSchedule::standard(2, 8);
  auto z = randomStack<double>(2, 8, 8, rng);
  auto y = randomKSpace<double>(3, 8, 8, rng);
  auto x = dc_solve_cg<double>(z, y, maps, pat, sh, 1e8, 10);
  EXPECT_LT(relDiff<double>(x.data.flat(), z.data.flat()), 1e-6);
}

TEST(DcSolve, MatchesDenseNormalEquations)
{
  std::mt19937_64 rng(19);
  auto maps = randomMaps<double>(2, 2, 8, 8, rng);
  auto pat = randomPattern(8, 8, 0.5, rng);
  auto sh = CaipiShiftSchedule::standard(2, 8);
  auto z = randomStack<double>(2, 8, 8, rng);
  auto y = restrict_kspace(randomKSpace<double>(2, 8, 8, rng), pat);
  double const mu = 0.05;
  auto x = dc_solve_cg<double>(z, y, maps, pat, sh, mu, 30);
  auto E = denseEncoding(maps, pat, sh);
  Eigen::MatrixXcd A = E.adjoint() * E + mu * Eigen::MatrixXcd::Identity(E.cols(), E.cols());
  Eigen::VectorXcd b = E.adjoint() * asVec(y.data.flat()) + mu * asVec(z.data.flat());
  Eigen::VectorXcd ref = A.ldlt().solve(b);
  std::vector<Cx<double>> r(ref.data(), ref.data() + ref.size());
  EXPECT_LT(relDiff<double>(x.data.flat(), r), 1e-4);
}

TEST(DcSolve, ErrorInNormalOperatorNormIsMonotone)
{
  // CG minimises the A-norm of the error over growing Krylov spaces, so that norm never increases.
  std::mt19937_64 rng(20);
  for (int trial = 0; trial < 5; ++trial) {
    auto maps = randomMaps<double>(2, 2, 8, 8, rng);
    auto pat = randomPattern(8, 8, 0.5, rng);
    auto sh = CaipiShiftSchedule::standard(2, 8);
    auto z = randomStack<double>(2, 8, 8, rng);
    auto y = restrict_kspace(randomKSpace<double>(2, 8, 8, rng), pat);
    double const mu = 0.05;
    auto E = denseEncoding(maps, pat, sh);
    Eigen::MatrixXcd A = E.adjoint() * E + mu * Eigen::MatrixXcd::Identity(E.cols(), E.cols());
    Eigen::VectorXcd b = E.adjoint() * asVec(y.data.flat()) + mu * asVec(z.data.flat());
    Eigen::VectorXcd xs = A.ldlt().solve(b);
    double prev = std::numeric_limits<double>::infinity();
    for (int it = 1; it <= 20; ++it) {
      auto x = dc_solve_cg<double>(z, y, maps, pat, sh, mu, it);
      Eigen::VectorXcd e = asVec(x.data.flat()) - xs;
      double const anorm = std::sqrt(std::abs(e.dot(A * e)));
      EXPECT_LE(anorm, prev * (1 + 1e-9) + 1e-12);
      prev = anorm;
    }
  }
}

TEST(DcSolve, ResidualNormNonIncreasingOnRandomProblems)
{
  std::mt19937_64 rng(26);
  for (int trial = 0; trial < 50; ++trial) {
    auto maps = randomMaps<double>(2, 2, 8, 8, rng);
    auto pat = randomPattern(8, 8, 0.5, rng);
    std::vector<double> hist;
    dc_solve_cg<double>(randomStack<double>(2, 8, 8, rng), restrict_kspace(randomKSpace<double>(2, 8, 8, rng), pat),
                        maps, pat, CaipiShiftSchedule::standard(2, 8), 0.05, 30, nullptr, &hist);
    for (std::size_t i = 1; i < hist.size(); ++i) { EXPECT_LE(hist[i], hist[i - 1] * (1 + 1e-12)) << trial; }
  }
}

TEST(DcSolve, ResidualNormHistoryIsRecorded)
{
  std::mt19937_64 rng(21);
  auto maps = randomMaps<double>(2, 2, 8, 8, rng);
  auto pat = randomPattern(8, 8, 0.5, rng);
  auto sh = CaipiShiftSchedule::standard(2, 8);
  std::vector<double> hist;
  auto x = dc_solve_cg<double>(randomStack<double>(2, 8, 8, rng), restrict_kspace(randomKSpace<double>(2, 8, 8, rng), pat),
                               maps, pat, sh, 0.05, 12, nullptr, &hist);
  ASSERT_EQ(hist.size(), 13u);
  EXPECT_LT(hist.back(), 1e-2 * hist.front());
}

TEST(DcSolve, RejectsBadParameters)
{
  std::mt19937_64 rng(22);
  auto maps = randomMaps<double>(1, 1, 4, 4, rng);
  auto pat = fullPattern(4, 4);
  SliceStack<double> z(1, 4, 4);
  SmsKSpace<double> y(1, 4, 4);
  EXPECT_THROW(dc_solve_cg<double>(z, y, maps, pat, CaipiShiftSchedule::zeros(1), -1.0, 3), ParameterError);
  EXPECT_THROW(dc_solve_cg<double>(z, y, maps, pat, CaipiShiftSchedule::zeros(1), 0.1, 0), ParameterError);
}

TEST(DcSolve, NanReportsIterationIndex)
{
  std::mt19937_64 rng(23);
  auto maps = randomMaps<double>(1, 1, 4, 4, rng);
  auto pat = fullPattern(4, 4);
  SliceStack<double> z(1, 4, 4);
  z.data[3] = {std::numeric_limits<double>::infinity(), 0};
  SmsKSpace<double> y(1, 4, 4);
  try {
    dc_solve_cg<double>(z, y, maps, pat, CaipiShiftSchedule::zeros(1), 0.1, 3);
    FAIL() << "expected NumericalFailure";
  } catch (NumericalFailure const &e) {
    EXPECT_EQ(e.iteration, 0);
  }
}

TEST(Baseline, FullSamplingUnitMapRecoversImage)
{
  std::mt19937_64 rng(24);
  auto x = randomStack<double>(1, 16, 16, rng);
  auto maps = unitMaps<double>(1, 16, 16);
  auto pat = fullPattern(16, 16);
  auto y = forward_sms(x, maps, pat, CaipiShiftSchedule::zeros(1));
  auto rec = cg_sense_baseline<double>(y, maps, pat, CaipiShiftSchedule::zeros(1), 5);
  EXPECT_LT(relDiff<double>(rec.data.flat(), x.data.flat()), 1e-6);
}

TEST(Baseline, ZeroDataGivesZero)
{
  std::mt19937_64 rng(25);
  auto maps = randomMaps<double>(2, 2, 8, 8, rng);
  auto rec = cg_sense_baseline<double>(SmsKSpace<double>(2, 8, 8), maps, fullPattern(8, 8),
                                       CaipiShiftSchedule::standard(2, 8), 10);
  for (auto v : rec.data.flat()) { EXPECT_EQ(v, Cx<double>(0)); }
}

TEST(Baseline, BeatsZeroFilledAdjointOnPhantom)
{
  Index const S = 2, M = 32, N = 32, C = 4;
  auto phantom = make_phantom(random_phantom_spec(S, M, N, 5));
  auto maps = make_coil_maps(C, S, M, N, 5);
  auto pat = make_pattern(M, N, 2, 6, 5);
  auto sh = CaipiShiftSchedule::standard(S, M);
  auto y = forward_sms(phantom, maps, pat, sh);
  auto cg = cg_sense_baseline<double>(y, maps, pat, sh, 30);
  auto zf = adjoint_sms(y, maps, pat, sh);
  EXPECT_LT(nmse(cg, phantom), nmse(zf, phantom));
}

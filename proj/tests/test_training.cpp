#include "dense_oracle.hpp"
#include "test_util.hpp"

#include <smsr/synthdata.hpp>
#include <smsr/training.hpp>

#include <gtest/gtest.h>

using namespace smsr;
using namespace smsr::testing;

namespace {

RegularizerConfig smallConfig(int blocks, int channels)
{
  RegularizerConfig c;
  c.n_residual_blocks = blocks;
  c.channels = channels;
  return c;
}

TrainingSample makeSample(Index S, Index M, Index C, std::uint64_t seed, SplitOptions opt)
{
  std::mt19937_64 rng(seed);
  TrainingSample s;
  s.maps = make_coil_maps(C, S, M, M, seed);
  s.omega = make_pattern(M, M, 2, 2, seed);
  s.shifts = CaipiShiftSchedule::standard(S, M);
  auto truth = make_phantom(random_phantom_spec(S, M, M, seed));
  s.y_omega = simulate_acquisition(truth, s.maps, s.omega, s.shifts, 0.01, rng);
  s.split = split_masks(s.omega, opt);
  return s;
}

Eigen::MatrixXcd maskRows(Eigen::MatrixXcd E, BinaryMask const &keep, Index C)
{
  Index const V = keep.size();
  for (Index c = 0; c < C; ++c) {
    for (Index v = 0; v < V; ++v) {
      if (!keep[v]) { E.row(c * V + v).setZero(); }
    }
  }
  return E;
}

// Zero-weight network: R is the identity, so every unroll is an exact proximal step.
struct DenseOracle
{
  Eigen::MatrixXcd Etheta, Elambda;
  Eigen::VectorXcd y;
  int unrolls;

  double loss(double mu) const
  {
    Eigen::VectorXcd const b = Etheta.adjoint() * y;
    Eigen::MatrixXcd A = Etheta.adjoint() * Etheta;
    A.diagonal().array() += mu;
    auto const lu = A.partialPivLu();
    Eigen::VectorXcd x = b;
    for (int l = 0; l < unrolls; ++l) { x = lu.solve(b + mu * x); }
    Eigen::VectorXcd const v = Elambda * x;
    double n2 = 0, n1 = 0, d2 = 0, d1 = 0;
    for (Index i = 0; i < y.size(); ++i) {
      if (Elambda.row(i).squaredNorm() == 0.0) { continue; }
      n2 += std::norm(y[i]);
      n1 += std::abs(y[i]);
      d2 += std::norm(y[i] - v[i]);
      d1 += std::abs(y[i] - v[i]);
    }
    return std::sqrt(d2 / n2) + d1 / n1;
  }
};

DenseOracle makeOracle(TrainingSample const &s, int unrolls)
{
  auto const E = denseEncoding(s.maps, s.omega, s.shifts);
  Eigen::VectorXcd y = asVec(s.y_omega.data.flat());
  Eigen::VectorXcd const x0 = E.adjoint() * y;
  y /= x0.cwiseAbs().maxCoeff();
  auto const &pair = s.split.pairs[0];
  return {maskRows(E, pair.theta.mask, s.maps.C()), maskRows(E, pair.lambda, s.maps.C()), y, unrolls};
}

} // namespace

TEST(Loss, IdenticalPredictionIsZero)
{
  std::vector<Cx<double>> u = {{1, 2}, {-3, 0.5}, {0, 1}};
  EXPECT_EQ(ssdu_loss(u, u), 0.0);
}

TEST(Loss, ZeroPredictionIsTwo)
{
  std::vector<Cx<double>> u = {{1, 2}, {-3, 0.5}, {0, 1}};
  std::vector<Cx<double>> v(3);
  EXPECT_NEAR(ssdu_loss(u, v), 2.0, 1e-15);
}

TEST(Loss, OrthogonalUnitVectors)
{
  std::vector<Cx<double>> u = {1.0, 0.0}, v = {0.0, 1.0};
  EXPECT_NEAR(ssdu_loss(u, v), std::sqrt(2.0) + 2.0, 1e-15);
}

TEST(Loss, WeightsScaleTerms)
{
  std::vector<Cx<double>> u = {1.0, 0.0}, v = {0.0, 1.0};
  EXPECT_NEAR(ssdu_loss(u, v, {0.5, 0.0}), 0.5 * std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(ssdu_loss(u, v, {0.0, 3.0}), 6.0, 1e-15);
}

TEST(Loss, ZeroReferenceRejected)
{
  std::vector<Cx<double>> u(3), v = {1.0, 0.0, 0.0};
  EXPECT_THROW(ssdu_loss(u, v), ParameterError);
}

TEST(Loss, GradientMatchesFiniteDifferences)
{
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  std::vector<Cx<double>> u(10), v(10);
  for (auto &z : u) { z = {g(rng), g(rng)}; }
  for (auto &z : v) { z = {g(rng), g(rng)}; }
  auto const grad = ssdu_loss_grad(u, v);
  double const h = 1e-7;
  for (std::size_t i = 0; i < v.size(); ++i) {
    for (auto dir : {Cx<double>(1, 0), Cx<double>(0, 1)}) {
      auto vp = v, vm = v;
      vp[i] += h * dir;
      vm[i] -= h * dir;
      double const fd = (ssdu_loss(u, vp) - ssdu_loss(u, vm)) / (2 * h);
      double const an = dir.real() != 0 ? grad[i].real() : grad[i].imag();
      EXPECT_NEAR(an, fd, 1e-6);
    }
  }
}

TEST(SsduStep, EmptyLossMaskRejected)
{
  SplitOptions opt;
  opt.rho = 1e-6;
  opt.k_masks = 1;
  auto s = makeSample(2, 8, 4, 1, opt);
  UnrollConfig ucfg;
  ucfg.n_unrolls = 1;
  EXPECT_THROW(ssdu_step(s.y_omega, s, 0, zero_params(smallConfig(1, 4)), ucfg), ParameterError);
}

TEST(SsduStep, LossAndPenaltyGradientMatchDenseImplicitSolve)
{
  SplitOptions opt;
  opt.k_masks = 1;
  opt.seed = 4;
  auto s = makeSample(2, 8, 4, 2, opt);
  UnrollConfig ucfg;
  ucfg.n_unrolls = 3;
  ucfg.n_cg = 80;
  double const mu = 0.05;
  auto const oracle = makeOracle(s, ucfg.n_unrolls);
  double const sc = intensity_scale(s.y_omega, s.maps, s.omega, s.shifts);
  auto const step = ssdu_step(scaled(s.y_omega, sc), s, 0, zero_params(smallConfig(1, 4), mu), ucfg);
  EXPECT_NEAR(step.loss, oracle.loss(mu), 1e-9);
  double const h = 1e-6;
  double const g = (oracle.loss(mu + h) - oracle.loss(mu - h)) / (2 * h);
  EXPECT_NEAR(step.grad.mu, g, 1e-6 * std::max(1.0, std::abs(g)));
  // Zero weights block every path into the convolutions.
  for (double w : step.grad.weights) { EXPECT_EQ(w, 0.0); }
}

TEST(Train, FirstAdamStepOnPenaltyMatchesOracle)
{
  SplitOptions opt;
  opt.k_masks = 1;
  opt.seed = 4;
  auto s = makeSample(2, 8, 4, 2, opt);
  UnrollConfig ucfg;
  ucfg.n_unrolls = 3;
  ucfg.n_cg = 80;
  TrainConfig tcfg;
  tcfg.epochs = 1;
  double const mu = 0.05;
  auto const oracle = makeOracle(s, ucfg.n_unrolls);
  double const h = 1e-6;
  double const g = (oracle.loss(mu + h) - oracle.loss(mu - h)) / (2 * h);
  auto const res = train({s}, zero_params(smallConfig(1, 4), mu), ucfg, tcfg);
  // First Adam step with bias correction: m_hat = g, v_hat = g^2.
  double const expected = mu - tcfg.learning_rate * g / (std::abs(g) + tcfg.adam_eps);
  EXPECT_NEAR(res.params.mu, expected, 1e-12);
  for (double w : res.params.weights) { EXPECT_EQ(w, 0.0); }
}

TEST(Train, LossDecreases)
{
  SplitOptions opt;
  opt.k_masks = 2;
  std::vector<TrainingSample> samples;
  for (std::uint64_t i = 0; i < 2; ++i) {
    opt.seed = i;
    samples.push_back(makeSample(2, 16, 4, 10 + i, opt));
  }
  UnrollConfig ucfg;
  ucfg.n_unrolls = 2;
  ucfg.n_cg = 5;
  TrainConfig tcfg;
  tcfg.epochs = 8;
  tcfg.learning_rate = 2e-3;
  auto res = train(samples, init_params(smallConfig(1, 8), 1), ucfg, tcfg);
  ASSERT_EQ(res.history.size(), 8u);
  EXPECT_LT(res.history.back().mean_loss, res.history.front().mean_loss);
  EXPECT_LE(res.best_loss, res.history.back().mean_loss);
}

TEST(Train, SameSeedIsBitExact)
{
  SplitOptions opt;
  opt.k_masks = 2;
  std::vector<TrainingSample> samples = {makeSample(2, 8, 4, 1, opt), makeSample(2, 8, 4, 2, opt)};
  UnrollConfig ucfg;
  ucfg.n_unrolls = 2;
  ucfg.n_cg = 4;
  TrainConfig tcfg;
  tcfg.epochs = 3;
  tcfg.seed = 9;
  auto a = train(samples, init_params(smallConfig(1, 4), 1), ucfg, tcfg);
  auto b = train(samples, init_params(smallConfig(1, 4), 1), ucfg, tcfg);
  EXPECT_EQ(a.params.weights, b.params.weights);
  EXPECT_EQ(a.params.mu, b.params.mu);
}

TEST(Train, CheckpointHookFollowsPeriod)
{
  SplitOptions opt;
  opt.k_masks = 1;
  auto s = makeSample(2, 8, 4, 1, opt);
  UnrollConfig ucfg;
  ucfg.n_unrolls = 1;
  ucfg.n_cg = 3;
  TrainConfig tcfg;
  tcfg.epochs = 12;
  tcfg.checkpoint_every = 5;
  std::vector<int> seen;
  train({s}, zero_params(smallConfig(1, 4)), ucfg, tcfg, [&](int e, NetworkParams const &, bool best) {
    if (!best) { seen.push_back(e); }
  });
  for (int e : seen) { EXPECT_TRUE(e % 5 == 0 || e == 12); }
}

TEST(Train, RejectsInvalidSplit)
{
  SplitOptions opt;
  opt.k_masks = 1;
  auto s = makeSample(2, 8, 4, 1, opt);
  s.split.pairs[0].theta.mask.setZero();
  UnrollConfig ucfg;
  TrainConfig tcfg;
  tcfg.epochs = 1;
  EXPECT_THROW(train({s}, zero_params(smallConfig(1, 4)), ucfg, tcfg), DataError);
}

namespace {

struct Series
{
  std::vector<SmsKSpace<double>> frames;
  CoilSensitivityMaps<double> maps;
  SamplingPattern omega;
  CaipiShiftSchedule shifts;
};

Series makeSeries(int T)
{
  Series s;
  s.maps = make_coil_maps(4, 2, 8, 8, 3);
  s.omega = make_pattern(8, 8, 2, 2, 0);
  s.shifts = CaipiShiftSchedule::standard(2, 8);
  std::mt19937_64 rng(5);
  for (int t = 0; t < T; ++t) {
    auto x = make_phantom(random_phantom_spec(2, 8, 8, static_cast<std::uint64_t>(t)));
    s.frames.push_back(simulate_acquisition(x, s.maps, s.omega, s.shifts, 0.01, rng));
  }
  return s;
}

} // namespace

TEST(ReconstructSeries, IdenticalFramesGiveIdenticalImages)
{
  auto s = makeSeries(1);
  s.frames.assign(3, s.frames[0]);
  UnrollConfig ucfg;
  ucfg.n_unrolls = 2;
  auto out = reconstruct_series(s.frames, s.maps, s.omega, s.shifts, init_params(smallConfig(1, 4), 2), ucfg);
  EXPECT_EQ(out[0], out[1]);
  EXPECT_EQ(out[1], out[2]);
}

TEST(ReconstructSeries, FramesAreIndependentOfOrder)
{
  auto s = makeSeries(20);
  UnrollConfig ucfg;
  ucfg.n_unrolls = 2;
  ucfg.n_cg = 4;
  auto p = init_params(smallConfig(1, 4), 2);
  auto out = reconstruct_series(s.frames, s.maps, s.omega, s.shifts, p, ucfg);
  std::vector<std::size_t> perm(20);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), std::mt19937_64(1));
  std::vector<SmsKSpace<double>> shuffled;
  for (auto i : perm) { shuffled.push_back(s.frames[i]); }
  auto out2 = reconstruct_series(shuffled, s.maps, s.omega, s.shifts, p, ucfg);
  for (std::size_t j = 0; j < 20; ++j) { EXPECT_EQ(out2[j], out[perm[j]]); }
}

TEST(ReconstructSeries, SingleFrameMatchesScaledUnrolledCall)
{
  auto s = makeSeries(1);
  UnrollConfig ucfg;
  ucfg.n_unrolls = 2;
  auto p = init_params(smallConfig(1, 4), 2);
  auto out = reconstruct_series(s.frames, s.maps, s.omega, s.shifts, p, ucfg);
  double const sc = intensity_scale(s.frames[0], s.maps, s.omega, s.shifts);
  auto ref = unrolled_forward(scaled(s.frames[0], sc), s.maps, s.omega, s.shifts, p, ucfg);
  for (auto &v : ref.data.flat()) { v /= sc; }
  EXPECT_EQ(out[0], ref);
}

TEST(ReconstructSeries, ScaleEquivariant)
{
  // No biases and ReLU: the network and DC are positively homogeneous, so scaling data scales the image.
  auto s = makeSeries(1);
  UnrollConfig ucfg;
  ucfg.n_unrolls = 2;
  auto p = init_params(smallConfig(1, 4), 2);
  auto a = reconstruct_series(s.frames, s.maps, s.omega, s.shifts, p, ucfg);
  auto b = reconstruct_series({scaled(s.frames[0], 7.0)}, s.maps, s.omega, s.shifts, p, ucfg);
  for (auto &v : a[0].data.flat()) { v *= 7.0; }
  EXPECT_LT(relDiff<double>(b[0].data.flat(), a[0].data.flat()), 1e-12);
}

TEST(ReconstructSeries, GeometryMismatchRejected)
{
  auto s = makeSeries(2);
  s.frames[1] = SmsKSpace<double>(3, 8, 8);
  UnrollConfig ucfg;
  EXPECT_THROW(reconstruct_series(s.frames, s.maps, s.omega, s.shifts, zero_params(smallConfig(1, 4)), ucfg), DataError);
}

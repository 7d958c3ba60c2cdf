#pragma once

#include "ssdu_masking.hpp"
#include "unrolled.hpp"

#include <algorithm>
#include <chrono>
#include <functional>
#include <optional>

namespace smsr {

struct LossWeights
{
  double l2 = 1.0;
  double l1 = 1.0;
};

/// Normalised l1-l2 k-space loss  w2 ||u - v||_2 / ||u||_2 + w1 ||u - v||_1 / ||u||_1
/// over complex samples (|.| is the complex modulus).
inline double ssdu_loss(std::span<Cx<double> const> u, std::span<Cx<double> const> v, LossWeights w = {})
{
  require(u.size() == v.size(), "ssdu_loss: u and v differ in length");
  double n2u = 0, n1u = 0, n2d = 0, n1d = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    n2u += std::norm(u[i]);
    n1u += std::abs(u[i]);
    auto const d = u[i] - v[i];
    n2d += std::norm(d);
    n1d += std::abs(d);
  }
  if (!(n2u > 0.0) || !(n1u > 0.0)) { throw ParameterError("ssdu_loss: reference has zero norm"); }
  return w.l2 * std::sqrt(n2d) / std::sqrt(n2u) + w.l1 * n1d / n1u;
}

/// Gradient of ssdu_loss w.r.t. v as dL/dRe v + i dL/dIm v. Zero-difference entries take the
/// zero subgradient of the l1 term.
inline std::vector<Cx<double>> ssdu_loss_grad(std::span<Cx<double> const> u, std::span<Cx<double> const> v,
                                              LossWeights w = {})
{
  double n2u = 0, n1u = 0, n2d = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    n2u += std::norm(u[i]);
    n1u += std::abs(u[i]);
    n2d += std::norm(u[i] - v[i]);
  }
  if (!(n2u > 0.0) || !(n1u > 0.0)) { throw ParameterError("ssdu_loss: reference has zero norm"); }
  double const l2d = std::sqrt(n2d), l2u = std::sqrt(n2u);
  std::vector<Cx<double>> g(u.size());
  for (std::size_t i = 0; i < u.size(); ++i) {
    auto const d = v[i] - u[i];
    double const a = std::abs(d);
    if (l2d > 0.0) { g[i] += w.l2 * d / (l2d * l2u); }
    if (a > 0.0) { g[i] += w.l1 * d / (a * n1u); }
  }
  return g;
}

struct TrainConfig
{
  int epochs = 80;
  double learning_rate = 3e-4;
  int k_masks = 6;
  std::uint64_t seed = 0;
  LossWeights loss;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int checkpoint_every = 10;

  void validate() const
  {
    if (epochs < 1 || !(learning_rate > 0.0)) { throw ParameterError("TrainConfig: epochs and learning rate must be positive"); }
    if (k_masks < 1) { throw ParameterError("TrainConfig: k_masks must be >= 1"); }
  }
};

/// One training datum: acquired k-space on Omega, its geometry, and a multi-mask split of Omega.
struct TrainingSample
{
  SmsKSpace<double> y_omega;
  CoilSensitivityMaps<double> maps;
  SamplingPattern omega;
  CaipiShiftSchedule shifts;
  MaskSplit split;
};

struct EpochRecord
{
  int epoch = 0;
  double mean_loss = 0;
  double wall_seconds = 0;
};

struct TrainResult
{
  NetworkParams params;
  NetworkParams best;
  double best_loss = 0;
  std::vector<EpochRecord> history;
};

/// Scale applied to a sample so that max |E^H y| = 1 over its acquired set.
inline double intensity_scale(SmsKSpace<double> const &y, CoilSensitivityMaps<double> const &maps,
                              SamplingPattern const &omega, CaipiShiftSchedule const &shifts)
{
  auto const x = adjoint_sms<double>(y, maps, omega, shifts);
  double peak = 0;
  for (auto const &v : x.data.flat()) { peak = std::max(peak, std::abs(v)); }
  if (!(peak > 0.0)) { throw DataError("intensity_scale: adjoint image is identically zero"); }
  return 1.0 / peak;
}

template <class Real>
SmsKSpace<Real> scaled(SmsKSpace<Real> y, Real s)
{
  for (auto &v : y.data.flat()) { v *= s; }
  return y;
}

struct StepResult
{
  double loss = 0;
  ParamGradients grad;
};

/// Loss and gradient for one (sample, k) term: DC on theta_k, loss on lambda_k.
/// `y` must already carry the intensity normalisation.
inline StepResult ssdu_step(SmsKSpace<double> const &y, TrainingSample const &sample, int k,
                            NetworkParams const &params, UnrollConfig const &ucfg, LossWeights w = {})
{
  auto const &pair = sample.split.pairs.at(static_cast<std::size_t>(k));
  Index const nLambda = [&] {
    Index n = 0;
    for (auto b : pair.lambda.flat()) { n += b != 0; }
    return n;
  }();
  if (nLambda == 0) { throw ParameterError("ssdu_step: empty loss mask for k = " + std::to_string(k)); }
  SamplingPattern const lambda(pair.lambda);
  auto const yTheta = restrict_kspace(y, pair.theta);

  UnrollTape tape;
  auto const x = unrolled_forward(yTheta, sample.maps, pair.theta, sample.shifts, params, ucfg, &tape);
  SmsEncoding<double> const El(sample.maps, lambda, sample.shifts);
  auto const pred = El.forward(x);

  std::vector<Cx<double>> u, v;
  std::vector<Index> where;
  Index const V = y.M() * y.N();
  for (Index c = 0; c < y.C(); ++c) {
    for (Index i = 0; i < V; ++i) {
      if (!pair.lambda[i]) { continue; }
      u.push_back(y.data[c * V + i]);
      v.push_back(pred.data[c * V + i]);
      where.push_back(c * V + i);
    }
  }
  StepResult out;
  out.loss = ssdu_loss(u, v, w);
  auto const gv = ssdu_loss_grad(u, v, w);
  SmsKSpace<double> gk(y.C(), y.M(), y.N());
  for (std::size_t j = 0; j < where.size(); ++j) { gk.data[where[j]] = gv[j]; }
  auto const gx = El.adjoint(gk);
  out.grad = unrolled_backward(sample.maps, pair.theta, sample.shifts, params, tape, gx);
  return out;
}

/// Adam over the flat vector [weights..., mu].
class Adam
{
public:
  Adam(std::size_t n, TrainConfig const &cfg)
    : m_(n, 0.0)
    , v_(n, 0.0)
    , cfg_(cfg)
  {
  }

  void step(NetworkParams &p, ParamGradients const &g)
  {
    ++t_;
    double const b1 = cfg_.adam_beta1, b2 = cfg_.adam_beta2;
    double const c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    double const c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    auto update = [&](std::size_t i, double &param, double grad) {
      m_[i] = b1 * m_[i] + (1.0 - b1) * grad;
      v_[i] = b2 * v_[i] + (1.0 - b2) * grad * grad;
      double const mh = m_[i] / c1, vh = v_[i] / c2;
      param -= cfg_.learning_rate * mh / (std::sqrt(vh) + cfg_.adam_eps);
    };
    for (std::size_t i = 0; i < p.weights.size(); ++i) { update(i, p.weights[i], g.weights[i]); }
    if (p.mu_learnable) {
      update(p.weights.size(), p.mu, g.mu);
      p.mu = std::max(p.mu, 0.0); // the penalty must stay non-negative
    }
  }

private:
  std::vector<double> m_, v_;
  TrainConfig cfg_;
  long t_ = 0;
};

using CheckpointHook = std::function<void(int epoch, NetworkParams const &params, bool is_best)>;

/// Multi-mask self-supervised training. Each epoch shuffles the samples and takes one Adam step per
/// (sample, k) term; the epoch loss is the mean over all N K terms.
inline TrainResult train(std::vector<TrainingSample> const &samples, NetworkParams init, UnrollConfig const &ucfg,
                         TrainConfig const &tcfg, CheckpointHook const &hook = {})
{
  tcfg.validate();
  ucfg.validate();
  if (samples.empty()) { throw ParameterError("train: no training samples"); }
  std::vector<SmsKSpace<double>> ys;
  for (auto const &s : samples) {
    auto const report = validate_split(s.split, s.omega);
    if (!report.all_passed()) { throw DataError("train: mask split is not valid for its acquired set"); }
    if (s.split.K() < 1) { throw ParameterError("train: sample has no masks"); }
    double const sc = intensity_scale(s.y_omega, s.maps, s.omega, s.shifts);
    ys.push_back(scaled(s.y_omega, sc));
  }

  TrainResult result;
  result.params = std::move(init);
  result.best = result.params;
  result.best_loss = std::numeric_limits<double>::infinity();
  Adam opt(result.params.weights.size() + 1, tcfg);
  std::mt19937_64 rng(tcfg.seed);
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= tcfg.epochs; ++epoch) {
    auto const t0 = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0;
    Index terms = 0;
    for (auto const n : order) {
      auto const &s = samples[n];
      for (int k = 0; k < s.split.K(); ++k) {
        auto const step = ssdu_step(ys[n], s, k, result.params, ucfg, tcfg.loss);
        if (!std::isfinite(step.loss)) {
          throw NumericalFailure("train: loss diverged in epoch " + std::to_string(epoch), epoch);
        }
        opt.step(result.params, step.grad);
        total += step.loss;
        ++terms;
      }
    }
    double const mean = total / static_cast<double>(terms);
    double const secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.push_back({epoch, mean, secs});
    bool const best = mean < result.best_loss;
    if (best) {
      result.best_loss = mean;
      result.best = result.params;
    }
    if (hook && (epoch % tcfg.checkpoint_every == 0 || epoch == tcfg.epochs || best)) {
      hook(epoch, result.params, best);
    }
  }
  return result;
}

/// Inference on a time series: every frame independently, data consistency on all of Omega.
inline std::vector<SliceStack<double>> reconstruct_series(std::vector<SmsKSpace<double>> const &frames,
                                                          CoilSensitivityMaps<double> const &maps,
                                                          SamplingPattern const &omega,
                                                          CaipiShiftSchedule const &shifts,
                                                          NetworkParams const &params, UnrollConfig const &ucfg)
{
  std::vector<SliceStack<double>> out;
  out.reserve(frames.size());
  for (std::size_t t = 0; t < frames.size(); ++t) {
    auto const &y = frames[t];
    if (y.C() != maps.C() || y.M() != maps.M() || y.N() != maps.N()) {
      throw DataError("reconstruct_series: frame " + std::to_string(t) + " geometry differs from the coil maps");
    }
    double const sc = intensity_scale(y, maps, omega, shifts);
    auto x = unrolled_forward(scaled(y, sc), maps, omega, shifts, params, ucfg);
    for (auto &v : x.data.flat()) { v /= sc; }
    out.push_back(std::move(x));
  }
  return out;
}

} // namespace smsr

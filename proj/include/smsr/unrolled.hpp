#pragma once

#include "cg.hpp"
#include "regularizer.hpp"

namespace smsr {

struct UnrollConfig
{
  int n_unrolls = 10;
  int n_cg = 10;
  double mu_init = 0.05;
  bool mu_learnable = true;

  void validate() const
  {
    if (n_unrolls < 1 || n_cg < 1) { throw ParameterError("UnrollConfig: n_unrolls and n_cg must be >= 1"); }
    if (!(mu_init > 0.0)) { throw ParameterError("UnrollConfig: mu_init must be positive"); }
  }
};

/// Intermediate state recorded by unrolled_forward for backpropagation.
struct UnrollTape
{
  std::vector<nn::ResNetCache> regularizer;
  std::vector<CgTape<double>> dc;
};

/// Fixed-iteration variable splitting:
///   x0 = E^H y;  for l = 1..L:  z = R(x_{l-1}),  x_l = n_cg CG steps on (E^H E + mu) x = E^H y + mu z.
/// The iterate lives in the slice-centred frame E expects, so R is applied directly; this equals
/// regularizer_apply on the CAIPI-shifted iterate followed by removing the shifts again.
inline SliceStack<double> unrolled_forward(SmsKSpace<double> const &y, CoilSensitivityMaps<double> const &maps,
                                           SamplingPattern const &pattern, CaipiShiftSchedule const &shifts,
                                           NetworkParams const &params, UnrollConfig const &config,
                                           UnrollTape *tape = nullptr)
{
  config.validate();
  if (!(params.mu >= 0.0) || !std::isfinite(params.mu)) { throw ParameterError("unrolled_forward: invalid mu"); }
  SmsEncoding<double> E(maps, pattern, shifts);
  E.checkKSpace(y);
  RegularizerUnit const R(params);
  auto x = E.adjoint(y);
  if (tape) {
    tape->regularizer.assign(static_cast<std::size_t>(config.n_unrolls), {});
    tape->dc.assign(static_cast<std::size_t>(config.n_unrolls), {});
  }
  for (int l = 0; l < config.n_unrolls; ++l) {
    auto z = R.forward(x, tape ? &tape->regularizer[static_cast<std::size_t>(l)] : nullptr);
    if (!allFinite(z.data.flat())) { throw NumericalFailure("unrolled_forward: non-finite regularizer output", l); }
    try {
      x = dc_solve_cg<double>(z, y, maps, pattern, shifts, params.mu, config.n_cg,
                              tape ? &tape->dc[static_cast<std::size_t>(l)] : nullptr);
    } catch (NumericalFailure const &) {
      throw NumericalFailure("unrolled_forward: data consistency diverged", l);
    }
    if (!allFinite(x.data.flat())) { throw NumericalFailure("unrolled_forward: non-finite iterate", l); }
  }
  return x;
}

/// dL/dparams laid out as [weights..., mu] (mu entry present even when not learnable).
struct ParamGradients
{
  std::vector<double> weights;
  double mu = 0;
};

inline ParamGradients unrolled_backward(CoilSensitivityMaps<double> const &maps, SamplingPattern const &pattern,
                                        CaipiShiftSchedule const &shifts, NetworkParams const &params,
                                        UnrollTape const &tape, SliceStack<double> const &gout)
{
  SmsEncoding<double> E(maps, pattern, shifts);
  RegularizerUnit const R(params);
  ParamGradients g;
  g.weights.assign(params.weights.size(), 0.0);
  SliceStack<double> gx = gout;
  for (int l = static_cast<int>(tape.dc.size()) - 1; l >= 0; --l) {
    auto dc = dc_solve_cg_backward<double>(E, tape.dc[static_cast<std::size_t>(l)], gx.data.flat());
    g.mu += dc.dmu;
    SliceStack<double> gz(gx.S(), gx.M(), gx.N());
    std::copy(dc.dz.begin(), dc.dz.end(), gz.data.data());
    gx = R.backward(tape.regularizer[static_cast<std::size_t>(l)], gz, g.weights);
  }
  return g;
}

} // namespace smsr

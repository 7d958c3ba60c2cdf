#pragma once

#include "encoding.hpp"

namespace smsr {

/// Everything a reverse pass through fixed-step CG needs.
template <class Real>
struct CgTape
{
  using Vec = std::vector<Cx<Real>>;
  Vec z;                     // initial iterate
  std::vector<Vec> r, p, q;  // residuals r_0..r_n, directions p_0..p_{n-1}, q_i = A p_i
  std::vector<Real> rs;      // <r_i, r_i>
  std::vector<Real> d;       // <p_i, q_i>
  std::vector<Real> alpha, beta;
  Real mu = 0;
  int iterations() const { return static_cast<int>(alpha.size()); }
};

struct CgOptions
{
  int n_iter = 10;
  std::vector<double> *residual_norms = nullptr; // optional per-iteration history, ||r_0|| first
};

namespace detail {

// CG on (E^H E + mu I) x = b starting from x0. Runs exactly n_iter steps unless the residual
// vanishes, in which case the current iterate is already exact.
template <class Real>
std::vector<Cx<Real>> conjugateGradient(SmsEncoding<Real> const &E, std::span<Cx<Real> const> b,
                                        std::span<Cx<Real> const> x0, Real mu, CgOptions const &opt,
                                        CgTape<Real> *tape)
{
  using Vec = std::vector<Cx<Real>>;
  std::size_t const n = b.size();
  Vec x(x0.begin(), x0.end());
  Vec r(n), q(n);
  E.normal(x, r, mu);
  for (std::size_t i = 0; i < n; ++i) { r[i] = b[i] - r[i]; }
  Vec p = r;
  Real rs = dotRe<Real>(r, r);
  if (opt.residual_norms) { opt.residual_norms->push_back(std::sqrt(static_cast<double>(rs))); }
  if (tape) {
    tape->mu = mu;
    tape->z = x;
    tape->r = {r};
    tape->rs = {rs};
  }
  for (int it = 0; it < opt.n_iter; ++it) {
    if (!std::isfinite(rs)) { throw NumericalFailure("conjugate gradient produced a non-finite residual", it); }
    if (rs == Real(0)) { break; }
    E.normal(p, q, mu);
    Real const d = dotRe<Real>(p, q);
    if (!std::isfinite(d)) { throw NumericalFailure("conjugate gradient produced a non-finite curvature", it); }
    if (d <= Real(0)) { break; }
    Real const alpha = rs / d;
    for (std::size_t i = 0; i < n; ++i) {
      x[i] += alpha * p[i];
      r[i] -= alpha * q[i];
    }
    Real const rsNew = dotRe<Real>(r, r);
    if (!std::isfinite(rsNew)) { throw NumericalFailure("conjugate gradient produced NaN", it + 1); }
    Real const beta = rsNew / rs;
    if (tape) {
      tape->p.push_back(p);
      tape->q.push_back(q);
      tape->d.push_back(d);
      tape->alpha.push_back(alpha);
      tape->beta.push_back(beta);
      tape->r.push_back(r);
      tape->rs.push_back(rsNew);
    }
    for (std::size_t i = 0; i < n; ++i) { p[i] = r[i] + beta * p[i]; }
    rs = rsNew;
    if (opt.residual_norms) { opt.residual_norms->push_back(std::sqrt(static_cast<double>(rs))); }
  }
  return x;
}

} // namespace detail

/// Quadratic-penalty data consistency: n_iter CG steps on
///   (E^H E + mu I) x = E^H y + mu z, started at x = z.
template <class Real>
SliceStack<Real> dc_solve_cg(SliceStack<Real> const &z, SmsKSpace<Real> const &y,
                             CoilSensitivityMaps<Real> const &maps, SamplingPattern const &pattern,
                             CaipiShiftSchedule const &shifts, Real mu, int n_iter,
                             CgTape<Real> *tape = nullptr, std::vector<double> *residual_norms = nullptr)
{
  if (!(mu >= Real(0))) { throw ParameterError("dc_solve_cg: mu must be non-negative"); }
  if (n_iter < 1) { throw ParameterError("dc_solve_cg: n_iter must be at least 1"); }
  SmsEncoding<Real> E(maps, pattern, shifts);
  E.checkImage(z);
  E.checkKSpace(y);
  auto rhs = E.adjoint(y);
  auto rhsFlat = rhs.data.flat();
  auto zFlat = z.data.flat();
  for (std::size_t i = 0; i < rhsFlat.size(); ++i) { rhsFlat[i] += mu * zFlat[i]; }
  CgOptions opt{n_iter, residual_norms};
  auto x = detail::conjugateGradient<Real>(E, rhs.data.flat(), zFlat, mu, opt, tape);
  SliceStack<Real> out(z.S(), z.M(), z.N());
  std::copy(x.begin(), x.end(), out.data.data());
  return out;
}

/// Gradients of a scalar loss w.r.t. the CG inputs, given the gradient w.r.t. its output.
template <class Real>
struct CgGradients
{
  std::vector<Cx<Real>> dz;
  Real dmu = 0;
};

/// Reverse pass through the recorded CG arithmetic (no implicit-function shortcut).
/// Gradients use the real inner product Re<a, b>, so A = E^H E + mu I is self-adjoint.
template <class Real>
CgGradients<Real> dc_solve_cg_backward(SmsEncoding<Real> const &E, CgTape<Real> const &tape,
                                       std::span<Cx<Real> const> dx)
{
  using Vec = std::vector<Cx<Real>>;
  std::size_t const n = dx.size();
  Real const mu = tape.mu;
  Vec gx(dx.begin(), dx.end());
  Vec gr(n), gp(n), gq(n), Agq(n), gpPrev(n);
  Real grs = 0;
  Real gmu = 0;
  for (int i = tape.iterations() - 1; i >= 0; --i) {
    auto const &p = tape.p[i];
    auto const &q = tape.q[i];
    auto const &rNext = tape.r[i + 1];
    Real const rsI = tape.rs[i], rsNext = tape.rs[i + 1];
    Real const alpha = tape.alpha[i], beta = tape.beta[i], d = tape.d[i];

    // p_{i+1} = r_{i+1} + beta p_i
    Real const gbeta = dotRe<Real>(gp, p);
    for (std::size_t j = 0; j < n; ++j) {
      gpPrev[j] = beta * gp[j];
      gr[j] += gp[j];
    }
    // beta = rs_{i+1} / rs_i
    Real grsNext = grs + gbeta / rsI;
    Real grsI = -gbeta * rsNext / (rsI * rsI);
    // rs_{i+1} = <r_{i+1}, r_{i+1}>
    for (std::size_t j = 0; j < n; ++j) { gr[j] += Real(2) * grsNext * rNext[j]; }
    // r_{i+1} = r_i - alpha q_i ; x_{i+1} = x_i + alpha p_i
    Real galpha = -dotRe<Real>(gr, q) + dotRe<Real>(gx, p);
    for (std::size_t j = 0; j < n; ++j) {
      gq[j] = -alpha * gr[j];
      gpPrev[j] += alpha * gx[j];
    }
    // alpha = rs_i / d_i ; d_i = <p_i, q_i>
    grsI += galpha / d;
    Real const gd = -galpha * rsI / (d * d);
    for (std::size_t j = 0; j < n; ++j) {
      gpPrev[j] += gd * q[j];
      gq[j] += gd * p[j];
    }
    // q_i = (E^H E + mu) p_i
    E.normal(gq, Agq, mu);
    gmu += dotRe<Real>(gq, p);
    for (std::size_t j = 0; j < n; ++j) { gpPrev[j] += Agq[j]; }
    std::swap(gp, gpPrev);
    grs = grsI;
  }
  // p_0 = r_0, rs_0 = <r_0, r_0>, r_0 = E^H y + mu z - (E^H E + mu) z = E^H y - E^H E z
  auto const &r0 = tape.r[0];
  for (std::size_t j = 0; j < n; ++j) { gr[j] += gp[j] + Real(2) * grs * r0[j]; }
  E.normal(gr, Agq, Real(0));
  CgGradients<Real> out;
  out.dz.resize(n);
  for (std::size_t j = 0; j < n; ++j) { out.dz[j] = gx[j] - Agq[j]; }
  out.dmu = gmu;
  return out;
}

/// Unregularized CG-SENSE: CG from zero on E^H E x = E^H y. Linear comparator reconstruction.
template <class Real>
SliceStack<Real> cg_sense_baseline(SmsKSpace<Real> const &y, CoilSensitivityMaps<Real> const &maps,
                                   SamplingPattern const &pattern, CaipiShiftSchedule const &shifts,
                                   int n_iter)
{
  SliceStack<Real> zero(maps.S(), maps.M(), maps.N());
  return dc_solve_cg<Real>(zero, y, maps, pattern, shifts, Real(0), n_iter);
}

} // namespace smsr

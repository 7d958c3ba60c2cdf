#pragma once

#include "encoding.hpp"

#include <random>

namespace smsr {

/// Additive ellipse in normalised coordinates: x along readout, y along phase encode, both in [-1, 1].
struct Ellipse
{
  double cx = 0, cy = 0;
  double a = 0.5, b = 0.5; // semi-axes
  double angle = 0;        // radians
  Cx<double> amplitude = 1.0;

  bool contains(double x, double y) const
  {
    double const c = std::cos(angle), s = std::sin(angle);
    double const u = (x - cx) * c + (y - cy) * s;
    double const v = -(x - cx) * s + (y - cy) * c;
    return (u * u) / (a * a) + (v * v) / (b * b) <= 1.0;
  }
};

struct PhantomSpec
{
  Index S = 5, M = 64, N = 64;
  std::vector<std::vector<Ellipse>> ellipses; // one list per slice
  std::uint64_t seed = 0;
  double phase_variation = 0; // peak radians of a smooth seeded background phase; 0 keeps amplitudes exact

  void validate() const
  {
    if (S < 1 || M < 1 || N < 1) { throw ParameterError("PhantomSpec: geometry must be positive"); }
    if (static_cast<Index>(ellipses.size()) != S) { throw ParameterError("PhantomSpec: need one ellipse list per slice"); }
    bool any = false;
    for (auto const &sl : ellipses) {
      for (auto const &e : sl) {
        any = true;
        if (std::abs(e.cx) > 1 || std::abs(e.cy) > 1 || !(e.a > 0) || !(e.b > 0) || e.a > 1 || e.b > 1) {
          throw ParameterError("PhantomSpec: ellipse outside the field of view");
        }
        if (!std::isfinite(e.amplitude.real()) || !std::isfinite(e.amplitude.imag())) {
          throw ParameterError("PhantomSpec: non-finite ellipse amplitude");
        }
      }
    }
    if (!any) { throw ParameterError("PhantomSpec: empty ellipse list"); }
  }
};

inline double normX(Index n, Index N) { return (static_cast<double>(n) - static_cast<double>(N / 2)) / (0.5 * static_cast<double>(N)); }

inline SliceStack<double> make_phantom(PhantomSpec const &spec)
{
  spec.validate();
  SliceStack<double> x(spec.S, spec.M, spec.N);
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (Index s = 0; s < spec.S; ++s) {
    double const p1 = u(rng), p2 = u(rng), p3 = u(rng);
    for (Index m = 0; m < spec.M; ++m) {
      double const y = normX(m, spec.M);
      for (Index n = 0; n < spec.N; ++n) {
        double const xx = normX(n, spec.N);
        Cx<double> v = 0;
        for (auto const &e : spec.ellipses[static_cast<std::size_t>(s)]) {
          if (e.contains(xx, y)) { v += e.amplitude; }
        }
        if (spec.phase_variation != 0.0 && v != Cx<double>(0)) {
          double const ph = spec.phase_variation * (p1 * xx + p2 * y + p3 * xx * y) / 3.0;
          v *= std::polar(1.0, ph);
        }
        x.data(s, m, n) = v;
      }
    }
  }
  return x;
}

/// A head-like phantom: skull rim, brain interior, and a few random internal structures per slice.
inline PhantomSpec random_phantom_spec(Index S, Index M, Index N, std::uint64_t seed)
{
  PhantomSpec spec;
  spec.S = S;
  spec.M = M;
  spec.N = N;
  spec.seed = seed;
  spec.phase_variation = 0.6;
  std::mt19937_64 rng(seed * 7919 + 17);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (Index s = 0; s < S; ++s) {
    std::vector<Ellipse> sl;
    double const ax = 0.66 + 0.08 * u(rng), ay = 0.80 + 0.08 * u(rng);
    double const tilt = 0.15 * (u(rng) - 0.5);
    sl.push_back({0.0, 0.0, ax, ay, tilt, 1.0});
    sl.push_back({0.0, 0.0, ax - 0.06, ay - 0.06, tilt, -0.35});
    int const nInner = 4 + static_cast<int>(u(rng) * 4);
    for (int i = 0; i < nInner; ++i) {
      double const a = 0.06 + 0.16 * u(rng), b = 0.05 + 0.14 * u(rng);
      double const r = 0.5 * u(rng), th = 2 * M_PI * u(rng);
      double const amp = (u(rng) < 0.4 ? -0.3 : 0.25) * (0.5 + u(rng));
      sl.push_back({r * ax * std::cos(th), r * ay * std::sin(th), a, b, M_PI * u(rng), amp});
    }
    spec.ellipses.push_back(std::move(sl));
  }
  return spec;
}

/// Gaussian-profile receive coils on two rings around the head. Slices are spread along z, so the
/// profiles differ between simultaneously excited slices. Normalised to sum_c |map|^2 = 1 on
/// `support` (every voxel when no support is given); zero outside it.
inline CoilSensitivityMaps<double> make_coil_maps(Index C, Index S, Index M, Index N, std::uint64_t seed,
                                                  Tensor<std::uint8_t, 3> const *support = nullptr)
{
  if (C < 1) { throw ParameterError("make_coil_maps: need at least one coil"); }
  CoilSensitivityMaps<double> maps(C, S, M, N);
  std::mt19937_64 rng(seed * 104729 + 3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  struct Coil
  {
    double x, y, z, phase;
  };
  std::vector<Coil> coils;
  for (Index c = 0; c < C; ++c) {
    double const th = 2 * M_PI * (static_cast<double>(c) + 0.15 * u(rng)) / static_cast<double>(C);
    double const z = C == 1 ? 0.0 : (c % 2 ? -0.45 : 0.45);
    coils.push_back({1.25 * std::cos(th), 1.25 * std::sin(th), z, M_PI * u(rng)});
  }
  double const width = 0.9;
  for (Index s = 0; s < S; ++s) {
    double const zs = S == 1 ? 0.0 : -0.8 + 1.6 * static_cast<double>(s) / static_cast<double>(S - 1);
    for (Index m = 0; m < M; ++m) {
      double const y = normX(m, M);
      for (Index n = 0; n < N; ++n) {
        double const x = normX(n, N);
        bool const in = !support || (*support)(s, m, n);
        double acc = 0;
        for (Index c = 0; c < C; ++c) {
          auto const &k = coils[static_cast<std::size_t>(c)];
          double const d2 = (x - k.x) * (x - k.x) + (y - k.y) * (y - k.y) + (zs - k.z) * (zs - k.z);
          double const mag = std::exp(-0.5 * d2 / (width * width));
          double const ph = k.phase + 0.8 * (x * k.x + y * k.y) / 1.25;
          auto const v = in ? std::polar(mag, ph) : Cx<double>(0);
          maps.data(c, s, m, n) = v;
          acc += std::norm(v);
        }
        if (acc > 0) {
          double const inv = 1.0 / std::sqrt(acc);
          for (Index c = 0; c < C; ++c) { maps.data(c, s, m, n) *= inv; }
        }
      }
    }
  }
  return maps;
}

/// Uniform Cartesian undersampling: every R-th phase-encode row (the centre row always sampled) plus
/// a centred block of acs_lines fully sampled rows. Readout is fully sampled.
inline SamplingPattern make_pattern(Index M, Index N, Index in_plane_R, Index acs_lines, std::uint64_t /*seed*/)
{
  if (in_plane_R < 1) { throw ParameterError("make_pattern: acceleration must be >= 1"); }
  if (acs_lines < 0 || acs_lines >= M) { throw ParameterError("make_pattern: ACS lines must be fewer than the phase-encode lines"); }
  Tensor<std::uint8_t, 2> mask({M, N}, 0);
  AcsRegion acs;
  if (acs_lines > 0) {
    acs = {M / 2 - acs_lines / 2, M / 2 - acs_lines / 2 + acs_lines, 0, N};
  }
  for (Index m = 0; m < M; ++m) {
    bool const regular = ((m - M / 2) % in_plane_R + in_plane_R) % in_plane_R == 0;
    bool const inAcs = m >= acs.row_begin && m < acs.row_end;
    if (regular || inAcs) {
      for (Index n = 0; n < N; ++n) { mask(m, n) = 1; }
    }
  }
  return SamplingPattern(std::move(mask), acs);
}

/// Retrospective undersampling: keep the ACS block and every regular row of omega that lies on the
/// coarser R_to grid. The result is a subset of omega.
inline SamplingPattern retrospective_pattern(SamplingPattern const &omega, Index R_to)
{
  if (R_to < 1) { throw ParameterError("retrospective_pattern: acceleration must be >= 1"); }
  Index const M = omega.M(), N = omega.N();
  Tensor<std::uint8_t, 2> mask({M, N}, 0);
  for (Index m = 0; m < M; ++m) {
    bool const regular = ((m - M / 2) % R_to + R_to) % R_to == 0;
    for (Index n = 0; n < N; ++n) {
      if (omega.at(m, n) && (regular || omega.acs.contains(m, n))) { mask(m, n) = 1; }
    }
  }
  return SamplingPattern(std::move(mask), omega.acs);
}

/// Normalised mean squared error ||x - ref||^2 / ||ref||^2.
inline double nmse(SliceStack<double> const &x, SliceStack<double> const &ref)
{
  require(x.data.dims() == ref.data.dims(), "nmse: shape mismatch");
  double num = 0, den = 0;
  for (Index i = 0; i < x.data.size(); ++i) {
    num += std::norm(x.data[i] - ref.data[i]);
    den += std::norm(ref.data[i]);
  }
  return num / den;
}

enum class WedgeDirection { CounterClockwise, Clockwise };

struct FmriSimSpec
{
  double TR = 1.0;
  int n_frames = 256;
  double stim_freq = 0.3125;
  double response_amplitude = 0.03;
  Tensor<std::uint8_t, 3> roi;   // (slice, row, col)
  Tensor<double, 3> phase;       // assigned response phase in [-pi, pi)
  double noise_sigma = 0;        // std of each of the real and imaginary parts
  std::uint64_t seed = 0;
  WedgeDirection direction = WedgeDirection::CounterClockwise;
  int hemo_delay_frames = 0;     // response lag; the analysis undoes it when aligning runs

  void validate() const
  {
    if (!(TR > 0) || n_frames < 2) { throw ParameterError("FmriSimSpec: TR and frame count must be positive"); }
    if (!(stim_freq > 0) || !(stim_freq < 1.0 / (2.0 * TR))) {
      throw ParameterError("FmriSimSpec: stimulus frequency violates the Nyquist limit 1/(2 TR)");
    }
    if (static_cast<double>(n_frames) * TR * stim_freq < 2.0 - 1e-9) {
      throw ParameterError("FmriSimSpec: series must cover at least two stimulus cycles");
    }
    if (roi.dims() != phase.dims()) { throw ParameterError("FmriSimSpec: roi and phase maps differ in shape"); }
    if (noise_sigma < 0) { throw ParameterError("FmriSimSpec: negative noise"); }
  }
};

struct FmriSeries
{
  std::vector<SliceStack<double>> frames;
  Tensor<double, 3> true_phase;
  Tensor<std::uint8_t, 3> roi;
};

/// Modulation factor 1 + a cos(...) of an ROI voxel at frame t. Counter-clockwise runs follow
/// cos(2 pi f (t - d) TR + phi); clockwise runs traverse the cycle backwards so that reversing the
/// run in time and undoing the lag lines both up.
inline double response(FmriSimSpec const &spec, int t, double phi)
{
  double const w = 2 * M_PI * spec.stim_freq * spec.TR;
  double const d = spec.hemo_delay_frames;
  double arg = 0;
  if (spec.direction == WedgeDirection::CounterClockwise) {
    arg = w * (t - d) + phi;
  } else {
    arg = -w * (t - d) + w * (spec.n_frames - 1) + phi;
  }
  return 1.0 + spec.response_amplitude * std::cos(arg);
}

/// Frame t: base(v) (1 + a cos(...) 1[v in roi]) + complex Gaussian noise.
inline FmriSeries simulate_fmri_series(SliceStack<double> const &phantom, FmriSimSpec const &spec)
{
  spec.validate();
  require(spec.roi.dim(0) == phantom.S() && spec.roi.dim(1) == phantom.M() && spec.roi.dim(2) == phantom.N(),
          "simulate_fmri_series: roi geometry differs from the phantom");
  FmriSeries out;
  out.true_phase = spec.phase;
  out.roi = spec.roi;
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int t = 0; t < spec.n_frames; ++t) {
    SliceStack<double> f(phantom.S(), phantom.M(), phantom.N());
    for (Index i = 0; i < f.data.size(); ++i) {
      double const mod = spec.roi[i] ? response(spec, t, spec.phase[i]) : 1.0;
      f.data[i] = phantom.data[i] * mod;
      if (spec.noise_sigma > 0) { f.data[i] += spec.noise_sigma * Cx<double>(g(rng), g(rng)); }
    }
    out.frames.push_back(std::move(f));
  }
  return out;
}

/// A visual-cortex-like ROI near the back of the head on every slice, with the preferred phase
/// given by the polar angle around the ROI centre.
struct RetinotopyLayout
{
  Tensor<std::uint8_t, 3> roi;
  Tensor<double, 3> phase;
};

inline RetinotopyLayout make_retinotopy_layout(SliceStack<double> const &phantom, double semi_x = 0.32,
                                               double semi_y = 0.22, double centre_y = 0.45)
{
  Index const S = phantom.S(), M = phantom.M(), N = phantom.N();
  RetinotopyLayout L{Tensor<std::uint8_t, 3>({S, M, N}, 0), Tensor<double, 3>({S, M, N}, 0.0)};
  for (Index s = 0; s < S; ++s) {
    for (Index m = 0; m < M; ++m) {
      double const y = normX(m, M);
      for (Index n = 0; n < N; ++n) {
        double const x = normX(n, N);
        double const u = x / semi_x, v = (y - centre_y) / semi_y;
        if (u * u + v * v <= 1.0 && std::abs(phantom.data(s, m, n)) > 0.2) {
          L.roi(s, m, n) = 1;
          double ph = std::atan2(v, u);
          if (ph >= M_PI) { ph -= 2 * M_PI; }
          L.phase(s, m, n) = ph;
        }
      }
    }
  }
  return L;
}

/// Noisy acquisition of one frame: E x plus complex Gaussian noise of the given per-component std on
/// the sampled locations only.
inline SmsKSpace<double> simulate_acquisition(SliceStack<double> const &x, CoilSensitivityMaps<double> const &maps,
                                              SamplingPattern const &pattern, CaipiShiftSchedule const &shifts,
                                              double noise_sigma, std::mt19937_64 &rng)
{
  auto y = forward_sms(x, maps, pattern, shifts);
  if (noise_sigma > 0) {
    std::normal_distribution<double> g(0.0, noise_sigma);
    Index const V = y.M() * y.N();
    for (Index c = 0; c < y.C(); ++c) {
      auto k = y.coil(c);
      for (Index v = 0; v < V; ++v) {
        if (pattern.mask[v]) {
          double const re = g(rng);
          double const im = g(rng);
          k[v] += Cx<double>(re, im);
        }
      }
    }
  }
  return y;
}

} // namespace smsr

#pragma once

#include "encoding.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <deque>
#include <optional>
#include <sstream>

namespace smsr {

/// Real magnitude series over a (z, y, x) voxel grid; frames vary fastest.
struct TimeSeriesVolume
{
  Tensor<double, 4> data; // (z, y, x, t)
  double TR = 1.0;

  TimeSeriesVolume() = default;
  TimeSeriesVolume(Index Z, Index Y, Index X, Index T, double tr)
    : data({Z, Y, X, T})
    , TR(tr)
  {
  }

  Index frames() const { return data.dim(3); }
  Index voxels() const { return data.dim(0) * data.dim(1) * data.dim(2); }
  std::array<Index, 3> grid() const { return {data.dim(0), data.dim(1), data.dim(2)}; }
  std::span<double> series(Index v) { return data.flat().subspan(v * frames(), frames()); }
  std::span<double const> series(Index v) const { return data.flat().subspan(v * frames(), frames()); }

  void validate() const
  {
    if (frames() < 2) { throw DataError("TimeSeriesVolume: need at least two frames"); }
    if (!(TR > 0.0)) { throw ParameterError("TimeSeriesVolume: TR must be positive"); }
    if (!allFinite(data.flat())) { throw DataError("TimeSeriesVolume: non-finite samples"); }
  }
};

using VoxelMap = Tensor<double, 3>;
using VoxelMask = Tensor<std::uint8_t, 3>;

struct PhaseMap
{
  VoxelMap phase;     // [-pi, pi)
  VoxelMap amplitude; // one-sided, >= 0
  VoxelMap coherence; // [0, 1]; empty when not computed
};

struct RoiMetrics
{
  std::optional<double> mean_abs_phase_error; // absent for an empty ROI
  double tsnr_mean = 0;
  double tsnr_std = 0;
  Index voxel_count = 0;
};

/// Magnitude images of a reconstructed series as a time-series volume.
inline TimeSeriesVolume magnitude_series(std::vector<SliceStack<double>> const &frames, double TR)
{
  require(!frames.empty(), "magnitude_series: no frames");
  Index const S = frames[0].S(), M = frames[0].M(), N = frames[0].N(), T = static_cast<Index>(frames.size());
  TimeSeriesVolume ts(S, M, N, T, TR);
  Index const V = S * M * N;
  for (Index t = 0; t < T; ++t) {
    auto const &f = frames[static_cast<std::size_t>(t)];
    require(f.S() == S && f.M() == M && f.N() == N, "magnitude_series: frames differ in shape");
    for (Index v = 0; v < V; ++v) { ts.data[v * T + t] = std::abs(f.data[v]); }
  }
  return ts;
}

inline VoxelMap temporal_mean(TimeSeriesVolume const &ts)
{
  auto const g = ts.grid();
  VoxelMap out({g[0], g[1], g[2]});
  for (Index v = 0; v < ts.voxels(); ++v) {
    auto const s = ts.series(v);
    out[v] = std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(s.size());
  }
  return out;
}

/// Every voxel whose temporal mean exceeds `fraction` of the largest one.
inline VoxelMask intensity_mask(TimeSeriesVolume const &ts, double fraction = 0.1)
{
  auto const mean = temporal_mean(ts);
  double const peak = *std::max_element(mean.flat().begin(), mean.flat().end());
  VoxelMask m(mean.dims(), 0);
  for (Index v = 0; v < mean.size(); ++v) { m[v] = peak > 0 && mean[v] > fraction * peak; }
  return m;
}

/// Scale each in-mask voxel to a temporal mean of 100; out-of-mask voxels are zeroed.
/// Without a mask every voxel is in the mask.
inline TimeSeriesVolume scale_mean_100(TimeSeriesVolume ts, VoxelMask const *mask = nullptr)
{
  ts.validate();
  if (mask) { require(mask->dims() == temporal_mean(ts).dims(), "scale_mean_100: mask geometry differs"); }
  std::vector<Index> bad;
  for (Index v = 0; v < ts.voxels(); ++v) {
    auto s = ts.series(v);
    if (mask && !(*mask)[v]) {
      std::fill(s.begin(), s.end(), 0.0);
      continue;
    }
    double const mean = std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(s.size());
    if (!(mean > 0.0)) {
      bad.push_back(v);
      continue;
    }
    for (auto &x : s) { x *= 100.0 / mean; }
  }
  if (!bad.empty()) {
    auto const g = ts.grid();
    std::ostringstream msg;
    msg << "scale_mean_100: non-positive temporal mean at " << bad.size() << " voxel(s):";
    for (std::size_t i = 0; i < std::min<std::size_t>(bad.size(), 10); ++i) {
      Index const v = bad[i];
      msg << " (" << v / (g[1] * g[2]) << "," << (v / g[2]) % g[1] << "," << v % g[2] << ")";
    }
    if (bad.size() > 10) { msg << " ..."; }
    throw DataError(msg.str());
  }
  return ts;
}

struct NuisanceOptions
{
  int poly_order = 3;
  // Fit a cos/sin pair at this frequency (Hz) together with the nuisance regressors and keep it in
  // the processed data. Polynomial trends are not exactly orthogonal to a finite sinusoid.
  std::optional<double> protect_freq;
};

struct NuisanceReport
{
  int n_polynomial = 0;
  int n_motion = 0;
  int dropped_zero_motion = 0;
  int n_protected = 0;
  int n_regressors() const { return n_polynomial + n_motion; }
};

struct NuisanceResult
{
  TimeSeriesVolume processed; // data minus the fitted nuisance part (the mean is kept)
  TimeSeriesVolume residual;  // data minus the complete fit, used for tSNR
  NuisanceReport report;
  Eigen::MatrixXd nuisance;   // T x (1 + regressors): constant, trends, motion
};

namespace detail {

inline Eigen::MatrixXd polynomialTrends(Index T, int order)
{
  Eigen::MatrixXd P(T, order);
  for (Index t = 0; t < T; ++t) {
    double const u = T > 1 ? 2.0 * static_cast<double>(t) / static_cast<double>(T - 1) - 1.0 : 0.0;
    double p = 1.0;
    for (int k = 0; k < order; ++k) {
      p *= u;
      P(t, k) = p;
    }
  }
  return P;
}

} // namespace detail

/// Project the constant, demeaned polynomial trends of orders 1..poly_order and the motion series out of every
/// voxel. Motion series that are identically zero carry no information and are dropped.
inline NuisanceResult nuisance_project(TimeSeriesVolume const &ts, std::vector<std::vector<double>> const &motion,
                                       NuisanceOptions const &opt = {})
{
  ts.validate();
  Index const T = ts.frames();
  if (opt.poly_order < 0) { throw ParameterError("nuisance_project: negative polynomial order"); }
  NuisanceReport rep;
  rep.n_polynomial = opt.poly_order;
  std::vector<Eigen::VectorXd> motionCols;
  for (auto const &m : motion) {
    if (static_cast<Index>(m.size()) != T) { throw DataError("nuisance_project: motion regressor length differs from the series"); }
    if (std::all_of(m.begin(), m.end(), [](double x) { return x == 0.0; })) {
      ++rep.dropped_zero_motion;
      continue;
    }
    motionCols.push_back(Eigen::Map<Eigen::VectorXd const>(m.data(), T));
  }
  rep.n_motion = static_cast<int>(motionCols.size());
  rep.n_protected = opt.protect_freq ? 2 : 0;

  Index const nNuis = 1 + opt.poly_order + rep.n_motion;
  Eigen::MatrixXd X(T, nNuis + rep.n_protected);
  X.col(0).setOnes();
  X.middleCols(1, opt.poly_order) = detail::polynomialTrends(T, opt.poly_order);
  for (int j = 0; j < rep.n_motion; ++j) { X.col(1 + opt.poly_order + j) = motionCols[static_cast<std::size_t>(j)]; }
  // Demeaned regressors span the same space and leave each voxel's temporal mean in `processed`.
  for (Index j = 1; j < nNuis; ++j) { X.col(j).array() -= X.col(j).mean(); }
  if (opt.protect_freq) {
    double const w = 2 * M_PI * *opt.protect_freq * ts.TR;
    for (Index t = 0; t < T; ++t) {
      X(t, nNuis) = std::cos(w * static_cast<double>(t));
      X(t, nNuis + 1) = std::sin(w * static_cast<double>(t));
    }
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  qr.setThreshold(1e-10);
  if (qr.rank() < X.cols()) {
    throw DataError("nuisance_project: design matrix is rank deficient (rank " + std::to_string(qr.rank()) + " of " +
                    std::to_string(X.cols()) + ")");
  }

  Index const V = ts.voxels();
  Eigen::Map<Eigen::MatrixXd const> Y(ts.data.data(), T, V);
  Eigen::MatrixXd const B = qr.solve(Y);
  NuisanceResult out{ts, ts, rep, X.leftCols(nNuis)};
  Eigen::Map<Eigen::MatrixXd> P(out.processed.data.data(), T, V);
  Eigen::Map<Eigen::MatrixXd> R(out.residual.data.data(), T, V);
  // Keep the intercept: subtract only the non-constant nuisance part.
  P.noalias() -= X.middleCols(1, nNuis - 1) * B.middleRows(1, nNuis - 1);
  R.noalias() -= X * B;
  return out;
}

/// Both runs on the counter-clockwise time axis: the clockwise run reversed, both advanced by the lag.
inline std::pair<TimeSeriesVolume, TimeSeriesVolume> align_runs(TimeSeriesVolume const &ccw, TimeSeriesVolume const &cw,
                                                                int hemo_shift_frames)
{
  if (ccw.data.dims() != cw.data.dims()) { throw DataError("align_runs: runs differ in length or geometry"); }
  Index const T = ccw.frames();
  std::pair<TimeSeriesVolume, TimeSeriesVolume> out{ccw, cw};
  Index const d = ((hemo_shift_frames % T) + T) % T;
  for (Index v = 0; v < ccw.voxels(); ++v) {
    auto const a = ccw.series(v), b = cw.series(v);
    auto oa = out.first.series(v), ob = out.second.series(v);
    for (Index t = 0; t < T; ++t) {
      oa[t] = a[(t + d) % T];
      ob[t] = b[(T - 1 - t + d) % T];
    }
  }
  return out;
}

/// Time-reverse the clockwise run, undo the response lag in both, and average framewise:
///   out(t) = (ccw((t + d) mod T) + cw((T - 1 - t + d) mod T)) / 2.
inline TimeSeriesVolume align_and_average(TimeSeriesVolume const &ccw, TimeSeriesVolume const &cw, int hemo_shift_frames)
{
  if (ccw.data.dims() != cw.data.dims()) { throw DataError("align_and_average: runs differ in length or geometry"); }
  auto [a, b] = align_runs(ccw, cw, hemo_shift_frames);
  for (Index i = 0; i < a.data.size(); ++i) { a.data[i] = 0.5 * (a.data[i] + b.data[i]); }
  return a;
}

namespace detail {

inline Index stimulusBin(double f, double TR, Index T, char const *who)
{
  double const k = f * TR * static_cast<double>(T);
  double const r = std::round(k);
  if (std::abs(k - r) > 1e-9 || r < 1 || r > static_cast<double>(T / 2)) {
    Index const lo = static_cast<Index>(std::floor(k)), hi = lo + 1;
    auto hz = [&](Index b) { return static_cast<double>(b) / (TR * static_cast<double>(T)); };
    std::ostringstream msg;
    msg << who << ": frequency " << f << " Hz is not a DFT bin of " << T << " frames at TR " << TR
        << "; nearest bins are " << lo << " (" << hz(lo) << " Hz) and " << hi << " (" << hz(hi) << " Hz)";
    throw ParameterError(msg.str());
  }
  return static_cast<Index>(r);
}

inline double wrapPhase(double p)
{
  double w = std::remainder(p, 2 * M_PI); // [-pi, pi]
  if (w >= M_PI) { w -= 2 * M_PI; }
  return w;
}

} // namespace detail

/// One-sided amplitude 2|X_k|/T and phase arg X_k of each voxel at the stimulus bin k = f TR T,
/// with X_k = sum_t x(t) exp(-2 pi i k t / T). cos(2 pi f t TR + phi) yields (1, phi).
inline PhaseMap phase_at_f(TimeSeriesVolume const &ts, double f)
{
  ts.validate();
  Index const T = ts.frames();
  Index const k = detail::stimulusBin(f, ts.TR, T, "phase_at_f");
  std::vector<Cx<double>> tw(static_cast<std::size_t>(T));
  for (Index t = 0; t < T; ++t) {
    tw[static_cast<std::size_t>(t)] = std::polar(1.0, -2 * M_PI * static_cast<double>((k * t) % T) / static_cast<double>(T));
  }
  auto const g = ts.grid();
  PhaseMap out{VoxelMap({g[0], g[1], g[2]}), VoxelMap({g[0], g[1], g[2]}), {}};
  for (Index v = 0; v < ts.voxels(); ++v) {
    auto const s = ts.series(v);
    Cx<double> X = 0;
    for (Index t = 0; t < T; ++t) { X += s[t] * tw[static_cast<std::size_t>(t)]; }
    out.amplitude[v] = 2.0 * std::abs(X) / static_cast<double>(T);
    out.phase[v] = detail::wrapPhase(std::arg(X));
  }
  return out;
}

struct CoherenceOptions
{
  Index window_frames = 64; // two 32-frame wedge cycles
  double overlap_fraction = 0.5;
};

/// Welch magnitude-squared coherence |S12|^2 / (S11 S22) at the bin nearest f, with a symmetric Hann
/// window. Each voxel's temporal mean is removed first; a voxel with no variance gets 0.
inline VoxelMap coherence_at_f(TimeSeriesVolume const &run1, TimeSeriesVolume const &run2, double f,
                               CoherenceOptions const &opt = {})
{
  if (run1.data.dims() != run2.data.dims()) { throw DataError("coherence_at_f: runs differ in length or geometry"); }
  run1.validate();
  run2.validate();
  Index const T = run1.frames(), L = opt.window_frames;
  if (L < 2 || L > T) { throw ParameterError("coherence_at_f: window must lie in [2, n_frames]"); }
  if (!(opt.overlap_fraction >= 0.0 && opt.overlap_fraction < 1.0)) {
    throw ParameterError("coherence_at_f: overlap fraction must lie in [0, 1)");
  }
  Index const step = std::max<Index>(1, static_cast<Index>(std::llround(static_cast<double>(L) * (1.0 - opt.overlap_fraction))));
  Index const nSeg = (T - L) / step + 1;
  if (nSeg < 2) {
    throw ParameterError("coherence_at_f: need at least 2 segments (got " + std::to_string(nSeg) +
                         "); a single window gives coherence 1 identically");
  }
  Index const bin = static_cast<Index>(std::llround(f * static_cast<double>(L) * run1.TR));
  if (bin < 1 || bin > L / 2) { throw ParameterError("coherence_at_f: frequency falls outside the window's band"); }
  std::vector<Cx<double>> kern(static_cast<std::size_t>(L));
  for (Index n = 0; n < L; ++n) {
    double const w = 0.5 - 0.5 * std::cos(2 * M_PI * static_cast<double>(n) / static_cast<double>(L - 1));
    kern[static_cast<std::size_t>(n)] = w * std::polar(1.0, -2 * M_PI * static_cast<double>((bin * n) % L) / static_cast<double>(L));
  }
  auto const g = run1.grid();
  VoxelMap out({g[0], g[1], g[2]});
  for (Index v = 0; v < run1.voxels(); ++v) {
    auto const a = run1.series(v), b = run2.series(v);
    double const ma = std::accumulate(a.begin(), a.end(), 0.0) / static_cast<double>(T);
    double const mb = std::accumulate(b.begin(), b.end(), 0.0) / static_cast<double>(T);
    Cx<double> s12 = 0;
    double s11 = 0, s22 = 0;
    for (Index j = 0; j < nSeg; ++j) {
      Cx<double> X1 = 0, X2 = 0;
      for (Index n = 0; n < L; ++n) {
        X1 += (a[j * step + n] - ma) * kern[static_cast<std::size_t>(n)];
        X2 += (b[j * step + n] - mb) * kern[static_cast<std::size_t>(n)];
      }
      s12 += X1 * std::conj(X2);
      s11 += std::norm(X1);
      s22 += std::norm(X2);
    }
    double const den = s11 * s22;
    out[v] = den > 0.0 ? std::clamp(std::norm(s12) / den, 0.0, 1.0) : 0.0;
  }
  return out;
}

/// Voxels strictly above `threshold`, restricted to connected components with more than
/// `min_cluster` voxels. Connectivity is 6, 18 or 26.
inline VoxelMask build_roi(VoxelMap const &coherence, double threshold = 0.4, Index min_cluster = 40, int connectivity = 26)
{
  if (!(threshold > 0.0 && threshold < 1.0)) { throw ParameterError("build_roi: threshold must lie in (0, 1)"); }
  if (connectivity != 6 && connectivity != 18 && connectivity != 26) {
    throw ParameterError("build_roi: connectivity must be 6, 18 or 26");
  }
  Index const Z = coherence.dim(0), Y = coherence.dim(1), X = coherence.dim(2);
  std::vector<std::array<Index, 3>> nbrs;
  for (Index dz = -1; dz <= 1; ++dz) {
    for (Index dy = -1; dy <= 1; ++dy) {
      for (Index dx = -1; dx <= 1; ++dx) {
        Index const n = std::abs(dz) + std::abs(dy) + std::abs(dx);
        if (n == 0 || (connectivity == 6 && n > 1) || (connectivity == 18 && n > 2)) { continue; }
        nbrs.push_back({dz, dy, dx});
      }
    }
  }
  VoxelMask roi(coherence.dims(), 0);
  std::vector<std::uint8_t> seen(static_cast<std::size_t>(coherence.size()), 0);
  std::vector<Index> comp;
  std::deque<Index> queue;
  for (Index start = 0; start < coherence.size(); ++start) {
    if (seen[static_cast<std::size_t>(start)] || !(coherence[start] > threshold)) { continue; }
    comp.clear();
    queue.assign(1, start);
    seen[static_cast<std::size_t>(start)] = 1;
    while (!queue.empty()) {
      Index const v = queue.front();
      queue.pop_front();
      comp.push_back(v);
      Index const z = v / (Y * X), y = (v / X) % Y, x = v % X;
      for (auto const &d : nbrs) {
        Index const zz = z + d[0], yy = y + d[1], xx = x + d[2];
        if (zz < 0 || zz >= Z || yy < 0 || yy >= Y || xx < 0 || xx >= X) { continue; }
        Index const u = (zz * Y + yy) * X + xx;
        if (seen[static_cast<std::size_t>(u)] || !(coherence[u] > threshold)) { continue; }
        seen[static_cast<std::size_t>(u)] = 1;
        queue.push_back(u);
      }
    }
    if (static_cast<Index>(comp.size()) > min_cluster) {
      for (Index v : comp) { roi[v] = 1; }
    }
  }
  return roi;
}

/// Temporal mean of the processed series over the unbiased (n - 1) std of the residual.
/// A zero residual std gives +inf (or NaN for a zero mean as well).
inline VoxelMap tsnr_map(TimeSeriesVolume const &scaled, TimeSeriesVolume const &residual)
{
  if (scaled.data.dims() != residual.data.dims()) { throw ContractViolation("tsnr_map: geometry differs"); }
  Index const T = scaled.frames();
  require(T >= 2, "tsnr_map: need at least two frames");
  auto const g = scaled.grid();
  VoxelMap out({g[0], g[1], g[2]});
  for (Index v = 0; v < scaled.voxels(); ++v) {
    auto const s = scaled.series(v), r = residual.series(v);
    double const mean = std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(T);
    double const rm = std::accumulate(r.begin(), r.end(), 0.0) / static_cast<double>(T);
    double ss = 0;
    for (double x : r) { ss += (x - rm) * (x - rm); }
    double const sd = std::sqrt(ss / static_cast<double>(T - 1));
    out[v] = mean / sd;
  }
  return out;
}

/// |arg exp(i (a - b))| in [0, pi].
inline double circular_error(double a, double b)
{
  if (!std::isfinite(a) || !std::isfinite(b)) { throw DataError("circular_error: non-finite phase"); }
  return std::abs(std::arg(std::polar(1.0, a - b)));
}

struct CircularMean
{
  double value = 0;
  double resultant = 0; // |mean of exp(i phi)|
  bool defined = false; // false when the resultant vanishes (e.g. an opposed pair)
};

inline CircularMean circular_mean(std::span<double const> phases)
{
  Cx<double> acc = 0;
  for (double p : phases) {
    if (!std::isfinite(p)) { throw DataError("circular_mean: non-finite phase"); }
    acc += std::polar(1.0, p);
  }
  CircularMean m;
  if (phases.empty()) { return m; }
  m.resultant = std::abs(acc) / static_cast<double>(phases.size());
  m.defined = m.resultant > 1e-12;
  m.value = m.defined ? detail::wrapPhase(std::arg(acc)) : 0.0;
  return m;
}

/// ROI summary: mean absolute circular phase error against the reference and tSNR mean/std
/// (population std over ROI voxels with a finite tSNR).
inline RoiMetrics roi_metrics(VoxelMap const &phase, VoxelMap const &reference_phase, VoxelMap const &tsnr, VoxelMask const &roi)
{
  require(phase.dims() == roi.dims() && reference_phase.dims() == roi.dims() && tsnr.dims() == roi.dims(),
          "roi_metrics: geometry differs");
  RoiMetrics m;
  double err = 0, ts = 0, ts2 = 0;
  Index nts = 0;
  for (Index v = 0; v < roi.size(); ++v) {
    if (!roi[v]) { continue; }
    ++m.voxel_count;
    err += circular_error(phase[v], reference_phase[v]);
    if (std::isfinite(tsnr[v])) {
      ts += tsnr[v];
      ts2 += tsnr[v] * tsnr[v];
      ++nts;
    }
  }
  if (m.voxel_count > 0) { m.mean_abs_phase_error = err / static_cast<double>(m.voxel_count); }
  if (nts > 0) {
    m.tsnr_mean = ts / static_cast<double>(nts);
    m.tsnr_std = std::sqrt(std::max(0.0, ts2 / static_cast<double>(nts) - m.tsnr_mean * m.tsnr_mean));
  }
  return m;
}

struct AnalysisConfig
{
  double stim_freq = 0.3125;
  int hemo_shift_frames = 5;
  CoherenceOptions coherence;
  double roi_threshold = 0.4;
  Index min_cluster = 40;
  int connectivity = 26;
  int poly_order = 3;
  bool protect_stimulus = true;
  double mask_fraction = 0.1;
};

struct AnalysisResult
{
  PhaseMap map;    // phase/amplitude of the aligned average, coherence between aligned runs
  VoxelMap tsnr;   // mean over both runs
  VoxelMask roi;
  VoxelMask brain; // intensity mask used for scaling
};

/// Full chain for one reconstruction: scale to mean 100, project nuisance regressors, align and
/// average the two runs, then phase/amplitude, coherence, tSNR and the coherence ROI.
inline AnalysisResult analyze_runs(TimeSeriesVolume const &ccw, TimeSeriesVolume const &cw,
                                   std::vector<std::vector<double>> const &motion_ccw,
                                   std::vector<std::vector<double>> const &motion_cw, AnalysisConfig const &cfg)
{
  if (ccw.data.dims() != cw.data.dims()) { throw DataError("analyze_runs: runs differ in length or geometry"); }
  AnalysisResult res;
  res.brain = intensity_mask(ccw, cfg.mask_fraction);
  NuisanceOptions nopt;
  nopt.poly_order = cfg.poly_order;
  if (cfg.protect_stimulus) { nopt.protect_freq = cfg.stim_freq; }
  auto const a = nuisance_project(scale_mean_100(ccw, &res.brain), motion_ccw, nopt);
  auto const b = nuisance_project(scale_mean_100(cw, &res.brain), motion_cw, nopt);
  auto const [ra, rb] = align_runs(a.processed, b.processed, cfg.hemo_shift_frames);
  TimeSeriesVolume avg = ra;
  for (Index i = 0; i < avg.data.size(); ++i) { avg.data[i] = 0.5 * (ra.data[i] + rb.data[i]); }
  res.map = phase_at_f(avg, cfg.stim_freq);
  res.map.coherence = coherence_at_f(ra, rb, cfg.stim_freq, cfg.coherence);
  for (Index v = 0; v < res.brain.size(); ++v) {
    if (!res.brain[v]) { res.map.coherence[v] = 0.0; }
  }

  auto const ta = tsnr_map(a.processed, a.residual), tb = tsnr_map(b.processed, b.residual);
  res.tsnr = VoxelMap(ta.dims());
  for (Index v = 0; v < ta.size(); ++v) { res.tsnr[v] = res.brain[v] ? 0.5 * (ta[v] + tb[v]) : 0.0; }
  res.roi = build_roi(res.map.coherence, cfg.roi_threshold, cfg.min_cluster, cfg.connectivity);
  return res;
}

} // namespace smsr

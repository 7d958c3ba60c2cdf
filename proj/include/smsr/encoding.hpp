#pragma once

#include "common.hpp"
#include "fft.hpp"

#include <algorithm>
#include <optional>

namespace smsr {

/// S simultaneously excited slices, each M x N, indexed (slice, row, col).
template <class Real>
struct SliceStack
{
  Tensor<Cx<Real>, 3> data;

  SliceStack() = default;
  SliceStack(Index S, Index M, Index N)
    : data({S, M, N})
  {
    require(S >= 1 && M >= 1 && N >= 1, "SliceStack: dimensions must be positive");
  }
  explicit SliceStack(Tensor<Cx<Real>, 3> t)
    : data(std::move(t))
  {
  }

  Index S() const { return data.dim(0); }
  Index M() const { return data.dim(1); }
  Index N() const { return data.dim(2); }
  std::span<Cx<Real>> slice(Index s) { return data.flat().subspan(s * M() * N(), M() * N()); }
  std::span<Cx<Real> const> slice(Index s) const
  {
    return data.flat().subspan(s * M() * N(), M() * N());
  }
  bool operator==(SliceStack const &) const = default;
};

/// Per-coil, per-slice complex sensitivities, indexed (coil, slice, row, col).
template <class Real>
struct CoilSensitivityMaps
{
  Tensor<Cx<Real>, 4> data;

  CoilSensitivityMaps() = default;
  CoilSensitivityMaps(Index C, Index S, Index M, Index N)
    : data({C, S, M, N})
  {
  }
  explicit CoilSensitivityMaps(Tensor<Cx<Real>, 4> t)
    : data(std::move(t))
  {
  }
  Index C() const { return data.dim(0); }
  Index S() const { return data.dim(1); }
  Index M() const { return data.dim(2); }
  Index N() const { return data.dim(3); }
  std::span<Cx<Real> const> map(Index c, Index s) const
  {
    return data.flat().subspan((c * S() + s) * M() * N(), M() * N());
  }

  /// Largest deviation of sum_c |map|^2 from 1 over voxels with any sensitivity.
  Real normalizationError() const
  {
    Real worst = 0;
    Index const V = M() * N();
    for (Index s = 0; s < S(); ++s) {
      for (Index v = 0; v < V; ++v) {
        Real acc = 0;
        for (Index c = 0; c < C(); ++c) {
          acc += std::norm(data[(c * S() + s) * V + v]);
        }
        if (acc > 0) { worst = std::max(worst, std::abs(acc - Real(1))); }
      }
    }
    return worst;
  }
};

/// Rectangular fully sampled calibration block, half-open ranges.
struct AcsRegion
{
  Index row_begin = 0, row_end = 0, col_begin = 0, col_end = 0;
  bool empty() const { return row_end <= row_begin || col_end <= col_begin; }
  bool contains(Index m, Index n) const
  {
    return m >= row_begin && m < row_end && n >= col_begin && n < col_end;
  }
  bool operator==(AcsRegion const &) const = default;
};

/// Binary acquisition set over (row = phase encode, col = readout), k-space centered at (M/2, N/2).
struct SamplingPattern
{
  Tensor<std::uint8_t, 2> mask;
  AcsRegion acs;

  SamplingPattern() = default;
  SamplingPattern(Tensor<std::uint8_t, 2> m, AcsRegion a = {})
    : mask(std::move(m))
    , acs(a)
  {
    validate();
  }

  Index M() const { return mask.dim(0); }
  Index N() const { return mask.dim(1); }
  Index count() const
  {
    Index n = 0;
    for (auto v : mask.flat()) { n += v ? 1 : 0; }
    return n;
  }
  bool at(Index m, Index n) const { return mask(m, n) != 0; }

  void validate() const
  {
    if (count() == 0) { throw ContractViolation("SamplingPattern: empty mask"); }
    if (!acs.empty()) {
      require(acs.row_begin >= 0 && acs.row_end <= M() && acs.col_begin >= 0 && acs.col_end <= N(),
              "SamplingPattern: ACS outside the grid");
      for (Index m = acs.row_begin; m < acs.row_end; ++m) {
        for (Index n = acs.col_begin; n < acs.col_end; ++n) {
          require(at(m, n), "SamplingPattern: ACS region not contained in mask");
        }
      }
    }
  }
  bool operator==(SamplingPattern const &) const = default;
};

/// Per-slice CAIPI field-of-view shift along the phase-encode axis, each a fraction in [0, 1).
struct CaipiShiftSchedule
{
  std::vector<double> shifts;

  CaipiShiftSchedule() = default;
  explicit CaipiShiftSchedule(std::vector<double> s)
    : shifts(std::move(s))
  {
    for (double f : shifts) {
      if (!(f >= 0.0 && f < 1.0)) {
        throw ContractViolation("CaipiShiftSchedule: shift fraction outside [0, 1)");
      }
    }
  }
  Index size() const { return static_cast<Index>(shifts.size()); }

  /// Slice s moved by round(s M / S) rows, so every shift is an exact circular shift.
  static CaipiShiftSchedule standard(Index S, Index M)
  {
    std::vector<double> s(static_cast<std::size_t>(S));
    for (Index i = 0; i < S; ++i) {
      auto const rows = static_cast<double>((i * M + S / 2) / S) ;
      s[static_cast<std::size_t>(i)] = std::fmod(rows / static_cast<double>(M), 1.0);
    }
    return CaipiShiftSchedule(std::move(s));
  }
  static CaipiShiftSchedule zeros(Index S) { return CaipiShiftSchedule(std::vector<double>(S, 0.0)); }
};

/// Collapsed multi-coil SMS k-space, indexed (coil, row, col); zero off the sampling pattern.
template <class Real>
struct SmsKSpace
{
  Tensor<Cx<Real>, 3> data;

  SmsKSpace() = default;
  SmsKSpace(Index C, Index M, Index N)
    : data({C, M, N})
  {
  }
  explicit SmsKSpace(Tensor<Cx<Real>, 3> t)
    : data(std::move(t))
  {
  }
  Index C() const { return data.dim(0); }
  Index M() const { return data.dim(1); }
  Index N() const { return data.dim(2); }
  std::span<Cx<Real>> coil(Index c) { return data.flat().subspan(c * M() * N(), M() * N()); }
  std::span<Cx<Real> const> coil(Index c) const
  {
    return data.flat().subspan(c * M() * N(), M() * N());
  }
  bool operator==(SmsKSpace const &) const = default;
};

enum class ShiftDirection { Apply, Remove };

namespace detail {

// Rows to move for a fractional shift; empty when the shift is not a whole number of rows.
inline std::optional<Index> integerRows(double fraction, Index M)
{
  double const rows = fraction * static_cast<double>(M);
  double const r = std::round(rows);
  if (std::abs(rows - r) < 1e-9) { return static_cast<Index>(r) % M; }
  return std::nullopt;
}

// Circularly shift an M x N image along rows by `fraction` of the FOV (negated when removing).
template <class Real>
void shiftImage(std::span<Cx<Real> const> in, std::span<Cx<Real>> out, Index M, Index N,
                double fraction, ShiftDirection dir)
{
  if (auto rows = integerRows(fraction, M)) {
    Index d = *rows;
    if (dir == ShiftDirection::Remove) { d = (M - d) % M; }
    for (Index m = 0; m < M; ++m) {
      Index const dst = (m + d) % M;
      std::copy_n(in.begin() + m * N, N, out.begin() + dst * N);
    }
    return;
  }
  // Fractional shift: linear phase exp(-2 pi i (k - M/2) d / M) along the phase-encode axis.
  if (in.data() != out.data()) { std::copy(in.begin(), in.end(), out.begin()); }
  fft::centeredRows<Real>(out, M, N, true);
  double const d = fraction * static_cast<double>(M);
  double const sign = dir == ShiftDirection::Apply ? -1.0 : 1.0;
  Index const cM = M / 2;
  for (Index k = 0; k < M; ++k) {
    double const ang = sign * 2.0 * M_PI * static_cast<double>(k - cM) * d / static_cast<double>(M);
    Cx<Real> const ph(static_cast<Real>(std::cos(ang)), static_cast<Real>(std::sin(ang)));
    for (Index n = 0; n < N; ++n) { out[static_cast<std::size_t>(k * N + n)] *= ph; }
  }
  fft::centeredRows<Real>(out, M, N, false);
}

} // namespace detail

/// Apply or remove the per-slice CAIPI FOV shifts. Remove is the exact inverse of Apply.
template <class Real>
SliceStack<Real> caipi_shift(SliceStack<Real> const &x, CaipiShiftSchedule const &shifts, ShiftDirection dir)
{
  require(shifts.size() == x.S(), "caipi_shift: shift schedule length must equal slice count");
  for (double f : shifts.shifts) {
    require(f >= 0.0 && f < 1.0, "caipi_shift: shift fraction outside [0, 1)");
  }
  SliceStack<Real> out(x.S(), x.M(), x.N());
  for (Index s = 0; s < x.S(); ++s) {
    detail::shiftImage<Real>(x.slice(s), out.slice(s), x.M(), x.N(),
                             shifts.shifts[static_cast<std::size_t>(s)], dir);
  }
  return out;
}

/// The SMS multi-coil encoding operator E and its adjoint for a fixed geometry.
///   (E x)_c = P . F( sum_s Shift_s(map_{c,s} . x_s) )
/// F is the centered unitary 2D DFT and P the sampling mask. The CAIPI shift is applied in
/// image space (a k-space linear phase), which lets all slices share one FFT per coil.
template <class Real>
class SmsEncoding
{
public:
  SmsEncoding(CoilSensitivityMaps<Real> const &maps, SamplingPattern const &pattern,
              CaipiShiftSchedule const &shifts)
    : maps_(&maps)
    , pattern_(&pattern)
    , shifts_(&shifts)
  {
    require(maps.M() == pattern.M() && maps.N() == pattern.N(),
            "SmsEncoding: map and pattern grids differ");
    require(shifts.size() == maps.S(), "SmsEncoding: shift schedule length must equal slice count");
  }

  Index C() const { return maps_->C(); }
  Index S() const { return maps_->S(); }
  Index M() const { return maps_->M(); }
  Index N() const { return maps_->N(); }
  SamplingPattern const &pattern() const { return *pattern_; }

  void checkImage(SliceStack<Real> const &x) const
  {
    require(x.S() == S() && x.M() == M() && x.N() == N(), "encoding: image dimensions do not match maps");
  }
  void checkKSpace(SmsKSpace<Real> const &y) const
  {
    require(y.C() == C() && y.M() == M() && y.N() == N(), "encoding: k-space dimensions do not match maps");
  }

  SmsKSpace<Real> forward(SliceStack<Real> const &x) const
  {
    SmsKSpace<Real> y(C(), M(), N());
    Index const V = M() * N();
    std::vector<Cx<Real>> weighted(static_cast<std::size_t>(V)), shifted(static_cast<std::size_t>(V));
    for (Index c = 0; c < C(); ++c) {
      auto acc = y.coil(c);
      for (Index s = 0; s < S(); ++s) {
        auto const m = maps_->map(c, s);
        auto const xs = x.slice(s);
        for (Index v = 0; v < V; ++v) { weighted[v] = m[v] * xs[v]; }
        detail::shiftImage<Real>(weighted, shifted, M(), N(), shiftOf(s), ShiftDirection::Apply);
        for (Index v = 0; v < V; ++v) { acc[v] += shifted[v]; }
      }
      fft::centered2D<Real>(acc, M(), N(), true);
      applyMask(acc);
    }
    return y;
  }

  SliceStack<Real> adjoint(SmsKSpace<Real> const &y) const
  {
    SliceStack<Real> x(S(), M(), N());
    Index const V = M() * N();
    std::vector<Cx<Real>> img(static_cast<std::size_t>(V)), unshifted(static_cast<std::size_t>(V));
    for (Index c = 0; c < C(); ++c) {
      auto const yc = y.coil(c);
      for (Index v = 0; v < V; ++v) { img[v] = pattern_->mask[v] ? yc[v] : Cx<Real>{}; }
      fft::centered2D<Real>(img, M(), N(), false);
      accumulateAdjoint(c, img, unshifted, x);
    }
    return x;
  }

  /// E^H E x + mu x, without materializing k-space for all coils at once.
  void normal(std::span<Cx<Real> const> x, std::span<Cx<Real>> out, Real mu) const
  {
    Index const V = M() * N();
    std::vector<Cx<Real>> acc(static_cast<std::size_t>(V)), weighted(static_cast<std::size_t>(V)),
      tmp(static_cast<std::size_t>(V));
    for (Index i = 0; i < S() * V; ++i) { out[i] = mu * x[i]; }
    for (Index c = 0; c < C(); ++c) {
      std::fill(acc.begin(), acc.end(), Cx<Real>{});
      for (Index s = 0; s < S(); ++s) {
        auto const m = maps_->map(c, s);
        for (Index v = 0; v < V; ++v) { weighted[v] = m[v] * x[s * V + v]; }
        detail::shiftImage<Real>(weighted, tmp, M(), N(), shiftOf(s), ShiftDirection::Apply);
        for (Index v = 0; v < V; ++v) { acc[v] += tmp[v]; }
      }
      fft::centered2D<Real>(acc, M(), N(), true);
      applyMask(acc);
      fft::centered2D<Real>(acc, M(), N(), false);
      for (Index s = 0; s < S(); ++s) {
        detail::shiftImage<Real>(acc, tmp, M(), N(), shiftOf(s), ShiftDirection::Remove);
        auto const m = maps_->map(c, s);
        for (Index v = 0; v < V; ++v) { out[s * V + v] += std::conj(m[v]) * tmp[v]; }
      }
    }
  }

private:
  double shiftOf(Index s) const { return shifts_->shifts[static_cast<std::size_t>(s)]; }

  void applyMask(std::span<Cx<Real>> k) const
  {
    auto const &mask = pattern_->mask;
    for (Index v = 0; v < static_cast<Index>(k.size()); ++v) {
      if (!mask[v]) { k[v] = Cx<Real>{}; }
    }
  }

  void accumulateAdjoint(Index c, std::span<Cx<Real> const> img, std::vector<Cx<Real>> &tmp,
                         SliceStack<Real> &x) const
  {
    Index const V = M() * N();
    for (Index s = 0; s < S(); ++s) {
      detail::shiftImage<Real>(img, tmp, M(), N(), shiftOf(s), ShiftDirection::Remove);
      auto const m = maps_->map(c, s);
      auto xs = x.slice(s);
      for (Index v = 0; v < V; ++v) { xs[v] += std::conj(m[v]) * tmp[v]; }
    }
  }

  CoilSensitivityMaps<Real> const *maps_;
  SamplingPattern const *pattern_;
  CaipiShiftSchedule const *shifts_;
};

namespace detail {
template <class Real>
void checkFinite(SliceStack<Real> const &x, char const *who)
{
  if (!allFinite(x.data.flat())) { throw DataError(std::string(who) + ": non-finite image input"); }
}
template <class Real>
void checkFinite(SmsKSpace<Real> const &y, char const *who)
{
  if (!allFinite(y.data.flat())) { throw DataError(std::string(who) + ": non-finite k-space input"); }
}
template <class Real>
void checkFinite(CoilSensitivityMaps<Real> const &m, char const *who)
{
  if (!allFinite(m.data.flat())) { throw DataError(std::string(who) + ": non-finite coil maps"); }
}
} // namespace detail

template <class Real>
SmsKSpace<Real> forward_sms(SliceStack<Real> const &x, CoilSensitivityMaps<Real> const &maps,
                            SamplingPattern const &pattern, CaipiShiftSchedule const &shifts)
{
  SmsEncoding<Real> E(maps, pattern, shifts);
  E.checkImage(x);
  detail::checkFinite(x, "forward_sms");
  detail::checkFinite(maps, "forward_sms");
  return E.forward(x);
}

template <class Real>
SliceStack<Real> adjoint_sms(SmsKSpace<Real> const &y, CoilSensitivityMaps<Real> const &maps,
                             SamplingPattern const &pattern, CaipiShiftSchedule const &shifts)
{
  SmsEncoding<Real> E(maps, pattern, shifts);
  E.checkKSpace(y);
  detail::checkFinite(y, "adjoint_sms");
  detail::checkFinite(maps, "adjoint_sms");
  return E.adjoint(y);
}

/// Zero every k-space entry outside `pattern` (used for retrospective undersampling).
template <class Real>
SmsKSpace<Real> restrict_kspace(SmsKSpace<Real> y, SamplingPattern const &pattern)
{
  require(y.M() == pattern.M() && y.N() == pattern.N(), "restrict_kspace: grid mismatch");
  Index const V = y.M() * y.N();
  for (Index c = 0; c < y.C(); ++c) {
    auto k = y.coil(c);
    for (Index v = 0; v < V; ++v) {
      if (!pattern.mask[v]) { k[v] = {}; }
    }
  }
  return y;
}

} // namespace smsr

#pragma once

#include "common.hpp"

#include <fftw3.h>

#include <map>
#include <memory>
#include <mutex>
#include <tuple>

namespace smsr::fft {

namespace detail {

template <class Real>
struct Fftw;

template <>
struct Fftw<double>
{
  using Plan = fftw_plan;
  using Complex = fftw_complex;
  static Complex *alloc(std::size_t n) { return fftw_alloc_complex(n); }
  static void free(void *p) { fftw_free(p); }
  static Plan many(int rank, int const *n, int howmany, Complex *buf, int stride, int dist, int sign)
  {
    return fftw_plan_many_dft(
      rank, n, howmany, buf, nullptr, stride, dist, buf, nullptr, stride, dist, sign, FFTW_ESTIMATE);
  }
  static void execute(Plan p, Complex *buf) { fftw_execute_dft(p, buf, buf); }
};

template <>
struct Fftw<float>
{
  using Plan = fftwf_plan;
  using Complex = fftwf_complex;
  static Complex *alloc(std::size_t n) { return fftwf_alloc_complex(n); }
  static void free(void *p) { fftwf_free(p); }
  static Plan many(int rank, int const *n, int howmany, Complex *buf, int stride, int dist, int sign)
  {
    return fftwf_plan_many_dft(
      rank, n, howmany, buf, nullptr, stride, dist, buf, nullptr, stride, dist, sign, FFTW_ESTIMATE);
  }
  static void execute(Plan p, Complex *buf) { fftwf_execute_dft(p, buf, buf); }
};

// Planning is not thread safe in FFTW; execution on distinct buffers is.
inline std::mutex &planMutex()
{
  static std::mutex m;
  return m;
}

template <class Real>
struct Buffer
{
  using F = Fftw<Real>;
  typename F::Complex *ptr = nullptr;
  std::size_t n = 0;
  void reserve(std::size_t want)
  {
    if (want > n) {
      if (ptr) { F::free(ptr); }
      ptr = F::alloc(want);
      n = want;
    }
  }
  ~Buffer()
  {
    if (ptr) { F::free(ptr); }
  }
  Cx<Real> *data() { return reinterpret_cast<Cx<Real> *>(ptr); }
};

enum class Kind { Full2D, Rows };

template <class Real>
typename Fftw<Real>::Plan plan(Kind kind, Index M, Index N, int sign)
{
  using F = Fftw<Real>;
  using Key = std::tuple<int, Index, Index, int>;
  static std::map<Key, typename F::Plan> cache;
  std::lock_guard lock(planMutex());
  Key key{static_cast<int>(kind), M, N, sign};
  if (auto it = cache.find(key); it != cache.end()) { return it->second; }
  Buffer<Real> tmp;
  tmp.reserve(static_cast<std::size_t>(M * N));
  typename F::Plan p;
  if (kind == Kind::Full2D) {
    int const n[2] = {static_cast<int>(M), static_cast<int>(N)};
    p = F::many(2, n, 1, tmp.ptr, 1, 0, sign);
  } else {
    // M-point transforms down each of the N columns.
    int const n[1] = {static_cast<int>(M)};
    p = F::many(1, n, static_cast<int>(N), tmp.ptr, static_cast<int>(N), 1, sign);
  }
  cache.emplace(key, p);
  return p;
}

template <class Real>
Buffer<Real> &scratch()
{
  thread_local Buffer<Real> buf;
  return buf;
}

} // namespace detail

/// Centered, unitary 2D DFT of an M x N image, in place:
///   X[k,l] = (MN)^{-1/2} sum_{m,n} x[m,n] exp(-2 pi i ((k-cM)(m-cM)/M + (l-cN)(n-cN)/N))
/// with cM = M/2, cN = N/2 (integer division). k-space DC sits at (M/2, N/2).
template <class Real>
void centered2D(std::span<Cx<Real>> img, Index M, Index N, bool forward)
{
  require(static_cast<Index>(img.size()) == M * N, "fft: buffer size mismatch");
  auto &buf = detail::scratch<Real>();
  buf.reserve(static_cast<std::size_t>(M * N));
  Cx<Real> *b = buf.data();
  Index const cM = M / 2, cN = N / 2;
  // ifftshift into scratch
  for (Index m = 0; m < M; ++m) {
    Index const sm = (m + cM) % M;
    for (Index n = 0; n < N; ++n) {
      b[m * N + n] = img[static_cast<std::size_t>(sm * N + (n + cN) % N)];
    }
  }
  auto p = detail::plan<Real>(detail::Kind::Full2D, M, N, forward ? FFTW_FORWARD : FFTW_BACKWARD);
  detail::Fftw<Real>::execute(p, buf.ptr);
  Real const scale = Real(1) / std::sqrt(static_cast<Real>(M * N));
  // fftshift back out
  for (Index m = 0; m < M; ++m) {
    Index const dm = (m + cM) % M;
    for (Index n = 0; n < N; ++n) {
      img[static_cast<std::size_t>(dm * N + (n + cN) % N)] = b[m * N + n] * scale;
    }
  }
}

/// Centered unitary 1D DFT along the row (first) axis of an M x N image, in place.
template <class Real>
void centeredRows(std::span<Cx<Real>> img, Index M, Index N, bool forward)
{
  require(static_cast<Index>(img.size()) == M * N, "fft: buffer size mismatch");
  auto &buf = detail::scratch<Real>();
  buf.reserve(static_cast<std::size_t>(M * N));
  Cx<Real> *b = buf.data();
  Index const cM = M / 2;
  for (Index m = 0; m < M; ++m) {
    Index const sm = (m + cM) % M;
    for (Index n = 0; n < N; ++n) {
      b[m * N + n] = img[static_cast<std::size_t>(sm * N + n)];
    }
  }
  auto p = detail::plan<Real>(detail::Kind::Rows, M, N, forward ? FFTW_FORWARD : FFTW_BACKWARD);
  detail::Fftw<Real>::execute(p, buf.ptr);
  Real const scale = Real(1) / std::sqrt(static_cast<Real>(M));
  for (Index m = 0; m < M; ++m) {
    Index const dm = (m + cM) % M;
    for (Index n = 0; n < N; ++n) {
      img[static_cast<std::size_t>(dm * N + n)] = b[m * N + n] * scale;
    }
  }
}

} // namespace smsr::fft

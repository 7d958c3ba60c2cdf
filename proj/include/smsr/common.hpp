#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace smsr {

using Index = std::ptrdiff_t;

template <class Real>
using Cx = std::complex<Real>;

// Error taxonomy shared by every module.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
// Caller broke a documented precondition (shapes, ranges).
struct ContractViolation : Error {
  using Error::Error;
};
// Input data is malformed (non-finite, rank deficient, mismatched series).
struct DataError : Error {
  using Error::Error;
};
// A configuration value is out of its admissible range.
struct ParameterError : Error {
  using Error::Error;
};
// An iterative method produced NaN/Inf.
struct NumericalFailure : Error {
  NumericalFailure(std::string const &what, int iteration)
    : Error(what + " (iteration " + std::to_string(iteration) + ")")
    , iteration(iteration)
  {
  }
  int iteration;
};

inline void require(bool cond, std::string const &msg)
{
  if (!cond) { throw ContractViolation(msg); }
}

/// Dense row-major array with a fixed rank. The last index varies fastest.
template <class T, std::size_t Rank>
class Tensor
{
public:
  using value_type = T;
  using Dims = std::array<Index, Rank>;

  Tensor() { dims_.fill(0); }
  explicit Tensor(Dims dims, T fill = T{})
    : dims_(dims)
  {
    for (auto d : dims_) {
      if (d < 0) { throw ContractViolation("negative tensor dimension"); }
    }
    data_.assign(static_cast<std::size_t>(product(dims_)), fill);
  }

  Dims const &dims() const { return dims_; }
  Index dim(std::size_t i) const { return dims_[i]; }
  Index size() const { return static_cast<Index>(data_.size()); }
  bool empty() const { return data_.empty(); }

  T *data() { return data_.data(); }
  T const *data() const { return data_.data(); }
  std::span<T> flat() { return data_; }
  std::span<T const> flat() const { return data_; }
  std::vector<T> &storage() { return data_; }
  std::vector<T> const &storage() const { return data_; }

  T &operator[](Index i) { return data_[static_cast<std::size_t>(i)]; }
  T const &operator[](Index i) const { return data_[static_cast<std::size_t>(i)]; }

  template <class... Is>
  T &operator()(Is... idx)
  {
    static_assert(sizeof...(Is) == Rank);
    return data_[static_cast<std::size_t>(offset({static_cast<Index>(idx)...}))];
  }
  template <class... Is>
  T const &operator()(Is... idx) const
  {
    static_assert(sizeof...(Is) == Rank);
    return data_[static_cast<std::size_t>(offset({static_cast<Index>(idx)...}))];
  }

  Index offset(std::array<Index, Rank> const &idx) const
  {
    Index off = 0;
    for (std::size_t i = 0; i < Rank; ++i) {
      off = off * dims_[i] + idx[i];
    }
    return off;
  }

  void setZero() { std::fill(data_.begin(), data_.end(), T{}); }

  bool operator==(Tensor const &o) const { return dims_ == o.dims_ && data_ == o.data_; }

  static Index product(Dims const &d)
  {
    return std::accumulate(d.begin(), d.end(), Index{1}, std::multiplies<>());
  }

private:
  Dims dims_;
  std::vector<T> data_;
};

// Real inner product on C^n viewed as R^{2n}: Re sum conj(a) b.
template <class Real>
Real dotRe(std::span<Cx<Real> const> a, std::span<Cx<Real> const> b)
{
  Real acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    acc += a[i].real() * b[i].real() + a[i].imag() * b[i].imag();
  }
  return acc;
}

template <class Real>
Real norm2(std::span<Cx<Real> const> a)
{
  return std::sqrt(dotRe(a, a));
}

template <class Real>
std::complex<Real> dotC(std::span<Cx<Real> const> a, std::span<Cx<Real> const> b)
{
  std::complex<Real> acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    acc += std::conj(a[i]) * b[i];
  }
  return acc;
}

template <class Range>
bool allFinite(Range const &v)
{
  for (auto const &x : v) {
    if constexpr (std::is_floating_point_v<std::decay_t<decltype(x)>>) {
      if (!std::isfinite(x)) { return false; }
    } else {
      if (!std::isfinite(x.real()) || !std::isfinite(x.imag())) { return false; }
    }
  }
  return true;
}

// 64-bit FNV-1a, used for config hashes stamped into artifacts.
inline std::uint64_t fnv1a(std::string_view s)
{
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

} // namespace smsr

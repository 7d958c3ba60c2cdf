#pragma once

#include "encoding.hpp"

#include <algorithm>
#include <random>

namespace smsr {

using BinaryMask = Tensor<std::uint8_t, 2>;

/// One (theta, lambda) pair: theta drives data consistency, lambda defines the loss.
struct MaskPair
{
  SamplingPattern theta;
  BinaryMask lambda;
  bool operator==(MaskPair const &) const = default;
};

/// K partitions of the acquired set. Lambda sets may overlap across k.
struct MaskSplit
{
  std::vector<MaskPair> pairs;
  double rho = 0.4;
  std::uint64_t seed = 0;
  Index K() const { return static_cast<Index>(pairs.size()); }
  bool operator==(MaskSplit const &) const = default;
};

struct SplitOptions
{
  int k_masks = 6;
  double rho = 0.4;
  std::uint64_t seed = 0;
  // Gaussian selection density width as a fraction of the FOV, per axis.
  double sigma_fraction = 0.25;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x)
{
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline Index lambdaTarget(double rho, Index omegaCount)
{
  return static_cast<Index>(std::floor(rho * static_cast<double>(omegaCount)));
}

} // namespace detail

/// Split the acquired set into K disjoint (theta_k, lambda_k) pairs. Lambda points are drawn without
/// replacement under a Gaussian density centred on the k-space centre; the ACS block always stays in
/// theta. Each k uses an independent stream derived from the seed.
inline MaskSplit split_masks(SamplingPattern const &omega, SplitOptions const &opt)
{
  if (opt.k_masks < 1) { throw ParameterError("split_masks: k_masks must be at least 1"); }
  if (!(opt.rho > 0.0 && opt.rho < 1.0)) { throw ParameterError("split_masks: rho must lie in (0, 1)"); }
  Index const M = omega.M(), N = omega.N();
  Index const total = omega.count();
  std::vector<Index> candidates;
  std::vector<double> weights;
  double const sm = opt.sigma_fraction * static_cast<double>(M);
  double const sn = opt.sigma_fraction * static_cast<double>(N);
  for (Index m = 0; m < M; ++m) {
    for (Index n = 0; n < N; ++n) {
      if (!omega.at(m, n) || omega.acs.contains(m, n)) { continue; }
      double const dm = static_cast<double>(m - M / 2) / sm;
      double const dn = static_cast<double>(n - N / 2) / sn;
      candidates.push_back(m * N + n);
      weights.push_back(std::exp(-0.5 * (dm * dm + dn * dn)));
    }
  }
  if (!omega.acs.empty() && candidates.empty()) {
    throw ParameterError("split_masks: ACS region must be strictly smaller than the acquired set");
  }
  Index const target = detail::lambdaTarget(opt.rho, total);
  if (target > static_cast<Index>(candidates.size())) {
    throw ParameterError("split_masks: rho too large, lambda would have to take ACS samples");
  }

  MaskSplit split;
  split.rho = opt.rho;
  split.seed = opt.seed;
  for (int k = 0; k < opt.k_masks; ++k) {
    std::mt19937_64 rng(detail::splitmix64(opt.seed ^ detail::splitmix64(static_cast<std::uint64_t>(k) + 1)));
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    // Weighted sampling without replacement: keep the `target` largest u^(1/w).
    std::vector<std::pair<double, Index>> keys(candidates.size());
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      double u = unif(rng);
      while (u <= 0.0) { u = unif(rng); }
      keys[i] = {std::log(u) / weights[i], candidates[i]};
    }
    std::partial_sort(keys.begin(), keys.begin() + target, keys.end(),
                      [](auto const &a, auto const &b) { return a.first > b.first || (a.first == b.first && a.second < b.second); });
    BinaryMask lambda({M, N}, 0);
    BinaryMask theta = omega.mask;
    for (Index i = 0; i < target; ++i) {
      Index const v = keys[static_cast<std::size_t>(i)].second;
      lambda[v] = 1;
      theta[v] = 0;
    }
    split.pairs.push_back({SamplingPattern(std::move(theta), omega.acs), std::move(lambda)});
  }
  return split;
}

struct SplitCheck
{
  int k = 0;
  bool union_ok = false;
  bool disjoint_ok = false;
  bool acs_ok = false;
  bool fraction_ok = false;
  Index theta_count = 0;
  Index lambda_count = 0;
  double lambda_fraction = 0.0;
  bool passed() const { return union_ok && disjoint_ok && acs_ok && fraction_ok; }
};

struct SplitReport
{
  std::vector<SplitCheck> checks;
  bool all_passed() const
  {
    return std::all_of(checks.begin(), checks.end(), [](auto const &c) { return c.passed(); });
  }
};

/// Exact set-algebra checks of a split against its acquired set. Never throws; failures are reported.
inline SplitReport validate_split(MaskSplit const &split, SamplingPattern const &omega)
{
  SplitReport report;
  Index const omegaCount = omega.count();
  for (Index k = 0; k < split.K(); ++k) {
    auto const &pair = split.pairs[static_cast<std::size_t>(k)];
    SplitCheck c;
    c.k = static_cast<int>(k);
    auto const &theta = pair.theta.mask;
    auto const &lambda = pair.lambda;
    bool const shapes = theta.dims() == omega.mask.dims() && lambda.dims() == omega.mask.dims();
    if (shapes) {
      c.union_ok = true;
      c.disjoint_ok = true;
      for (Index v = 0; v < omega.mask.size(); ++v) {
        bool const t = theta[v] != 0, l = lambda[v] != 0, o = omega.mask[v] != 0;
        c.theta_count += t;
        c.lambda_count += l;
        if ((t || l) != o) { c.union_ok = false; }
        if (t && l) { c.disjoint_ok = false; }
      }
      c.acs_ok = true;
      auto const &acs = omega.acs;
      for (Index m = acs.row_begin; m < acs.row_end && !acs.empty(); ++m) {
        for (Index n = acs.col_begin; n < acs.col_end; ++n) {
          if (!theta(m, n)) { c.acs_ok = false; }
        }
      }
      c.lambda_fraction = omegaCount ? static_cast<double>(c.lambda_count) / static_cast<double>(omegaCount) : 0.0;
      double const expected = split.rho * static_cast<double>(omegaCount);
      double const slack = std::max(0.05 * expected, 1.0);
      c.fraction_ok = std::abs(static_cast<double>(c.lambda_count) - expected) <= slack;
    }
    report.checks.push_back(c);
  }
  return report;
}

} // namespace smsr

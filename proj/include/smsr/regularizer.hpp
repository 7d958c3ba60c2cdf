#pragma once

#include "encoding.hpp"

#include <Eigen/Dense>

#include <random>

namespace smsr {

/// ResNet regularizer shape. Layers (all k x k, zero 'same' padding, no biases):
///   conv_in 2->F, then B blocks of [conv F->F, ReLU, conv F->F, scale, + skip], then conv_out F->2,
///   with a global skip from the input to the output.
struct RegularizerConfig
{
  int n_residual_blocks = 8;
  int channels = 64;
  int kernel_size = 3;
  double residual_scaling = 0.1;

  void validate() const
  {
    if (n_residual_blocks < 0 || channels < 1 || kernel_size < 1 || !(residual_scaling > 0.0)) {
      throw ParameterError("RegularizerConfig: sizes must be positive");
    }
    if (kernel_size % 2 == 0) { throw ParameterError("RegularizerConfig: kernel size must be odd"); }
  }

  /// Closed form: k^2 (2F + 2 B F^2 + 2F) = 2 k^2 F (2 + B F).
  Index weightCount() const
  {
    Index const k2 = static_cast<Index>(kernel_size) * kernel_size;
    Index const F = channels;
    return 2 * k2 * F * (2 + static_cast<Index>(n_residual_blocks) * F);
  }
};

/// Learnable parameters: one regularizer shared by every unroll, plus the penalty mu.
struct NetworkParams
{
  RegularizerConfig config;
  std::vector<double> weights;
  double mu = 0.05;
  bool mu_learnable = true;

  bool operator==(NetworkParams const &o) const
  {
    return weights == o.weights && mu == o.mu && mu_learnable == o.mu_learnable;
  }
};

/// Exact number of scalar learnable values, mu included when learnable.
inline Index count_params(NetworkParams const &p)
{
  return static_cast<Index>(p.weights.size()) + (p.mu_learnable ? 1 : 0);
}

/// Offsets of each convolution's weights inside NetworkParams::weights.
struct ConvLayout
{
  struct Conv
  {
    Index offset, out, in;
  };
  Conv in;
  std::vector<Conv> blocks; // 2 per residual block
  Conv out;
  Index total = 0;

  explicit ConvLayout(RegularizerConfig const &c)
  {
    Index const k2 = static_cast<Index>(c.kernel_size) * c.kernel_size;
    Index off = 0;
    auto add = [&](Index o, Index i) {
      Conv cv{off, o, i};
      off += o * i * k2;
      return cv;
    };
    in = add(c.channels, 2);
    for (int b = 0; b < 2 * c.n_residual_blocks; ++b) { blocks.push_back(add(c.channels, c.channels)); }
    out = add(2, c.channels);
    total = off;
  }
};

/// Zero weights: the regularizer reduces to its skip connection (identity).
inline NetworkParams zero_params(RegularizerConfig const &cfg, double mu = 0.05, bool mu_learnable = true)
{
  cfg.validate();
  return {cfg, std::vector<double>(static_cast<std::size_t>(cfg.weightCount()), 0.0), mu, mu_learnable};
}

/// He-normal initialisation; the output convolution is further scaled by `out_scale` so the
/// untrained regularizer starts close to the identity.
inline NetworkParams init_params(RegularizerConfig const &cfg, std::uint64_t seed, double mu = 0.05,
                                 bool mu_learnable = true, double out_scale = 0.1)
{
  auto p = zero_params(cfg, mu, mu_learnable);
  ConvLayout const L(cfg);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  double const k2 = static_cast<double>(cfg.kernel_size * cfg.kernel_size);
  auto fill = [&](ConvLayout::Conv const &c, double scale) {
    double const sd = scale * std::sqrt(2.0 / (static_cast<double>(c.in) * k2));
    for (Index i = 0; i < c.out * c.in * static_cast<Index>(k2); ++i) {
      p.weights[static_cast<std::size_t>(c.offset + i)] = sd * g(rng);
    }
  };
  fill(L.in, 1.0);
  for (auto const &c : L.blocks) { fill(c, 1.0); }
  fill(L.out, out_scale);
  return p;
}

namespace nn {

using Act = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>; // (channels, H*W)
using WeightMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> const>;
using WeightGradMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

struct Geometry
{
  Index H, W, k;
  Index pad() const { return k / 2; }
};

// (Cin, H*W) -> (Cin*k*k, H*W), zero padded.
inline Act im2col(Act const &x, Geometry const &g)
{
  Index const Cin = x.rows(), H = g.H, W = g.W, k = g.k, p = g.pad();
  Act col = Act::Zero(Cin * k * k, H * W);
  for (Index c = 0; c < Cin; ++c) {
    for (Index ky = 0; ky < k; ++ky) {
      for (Index kx = 0; kx < k; ++kx) {
        double *dst = col.row((c * k + ky) * k + kx).data();
        double const *src = x.row(c).data();
        for (Index y = 0; y < H; ++y) {
          Index const sy = y + ky - p;
          if (sy < 0 || sy >= H) { continue; }
          Index const x0 = std::max<Index>(0, p - kx);
          Index const x1 = std::min<Index>(W, W + p - kx);
          for (Index xx = x0; xx < x1; ++xx) { dst[y * W + xx] = src[sy * W + xx + kx - p]; }
        }
      }
    }
  }
  return col;
}

// Adjoint of im2col.
inline Act col2im(Act const &col, Index Cin, Geometry const &g)
{
  Index const H = g.H, W = g.W, k = g.k, p = g.pad();
  Act x = Act::Zero(Cin, H * W);
  for (Index c = 0; c < Cin; ++c) {
    for (Index ky = 0; ky < k; ++ky) {
      for (Index kx = 0; kx < k; ++kx) {
        double const *src = col.row((c * k + ky) * k + kx).data();
        double *dst = x.row(c).data();
        for (Index y = 0; y < H; ++y) {
          Index const sy = y + ky - p;
          if (sy < 0 || sy >= H) { continue; }
          Index const x0 = std::max<Index>(0, p - kx);
          Index const x1 = std::min<Index>(W, W + p - kx);
          for (Index xx = x0; xx < x1; ++xx) { dst[sy * W + xx + kx - p] += src[y * W + xx]; }
        }
      }
    }
  }
  return x;
}

inline WeightMap weights(std::vector<double> const &w, ConvLayout::Conv const &c, Index k)
{
  return WeightMap(w.data() + c.offset, c.out, c.in * k * k);
}

inline Act conv(Act const &x, std::vector<double> const &w, ConvLayout::Conv const &c, Geometry const &g)
{
  return weights(w, c, g.k) * im2col(x, g);
}

// Accumulates dW and returns dX for y = conv(x).
inline Act convBackward(Act const &x, Act const &gy, std::vector<double> const &w, std::vector<double> &gw,
                        ConvLayout::Conv const &c, Geometry const &g)
{
  Act const col = im2col(x, g);
  WeightGradMap(gw.data() + c.offset, c.out, c.in * g.k * g.k).noalias() += gy * col.transpose();
  Act const gcol = weights(w, c, g.k).transpose() * gy;
  return col2im(gcol, c.in, g);
}

/// Activations kept for the reverse pass.
struct ResNetCache
{
  Act input;
  std::vector<Act> h; // h[0] after conv_in, h[b+1] after block b
  std::vector<Act> t; // ReLU outputs inside block b
};

inline Act resnetForward(Act const &x, NetworkParams const &p, Geometry const &g, ResNetCache *cache)
{
  ConvLayout const L(p.config);
  double const s = p.config.residual_scaling;
  Act h = conv(x, p.weights, L.in, g);
  if (cache) {
    cache->input = x;
    cache->h = {h};
    cache->t.clear();
  }
  for (int b = 0; b < p.config.n_residual_blocks; ++b) {
    Act t = conv(h, p.weights, L.blocks[2 * b], g).cwiseMax(0.0);
    h.noalias() += s * conv(t, p.weights, L.blocks[2 * b + 1], g);
    if (cache) {
      cache->t.push_back(std::move(t));
      cache->h.push_back(h);
    }
  }
  return x + conv(h, p.weights, L.out, g);
}

/// Given dL/dout, accumulates dL/dweights into gw and returns dL/dinput.
inline Act resnetBackward(ResNetCache const &cache, Act const &gout, NetworkParams const &p, Geometry const &g,
                          std::vector<double> &gw)
{
  ConvLayout const L(p.config);
  double const s = p.config.residual_scaling;
  int const B = p.config.n_residual_blocks;
  Act gx = gout;
  Act gh = convBackward(cache.h[static_cast<std::size_t>(B)], gout, p.weights, gw, L.out, g);
  for (int b = B - 1; b >= 0; --b) {
    auto const &t = cache.t[static_cast<std::size_t>(b)];
    Act gu = s * gh;
    Act gt = convBackward(t, gu, p.weights, gw, L.blocks[2 * b + 1], g);
    gt = (t.array() > 0.0).select(gt, 0.0);
    gh += convBackward(cache.h[static_cast<std::size_t>(b)], gt, p.weights, gw, L.blocks[2 * b], g);
  }
  gx += convBackward(cache.input, gh, p.weights, gw, L.in, g);
  return gx;
}

/// Slices concatenated along the readout axis into one (real, imag) image of size M x (S N).
template <class Real>
Act toChannels(SliceStack<Real> const &x)
{
  Index const S = x.S(), M = x.M(), N = x.N(), W = S * N;
  Act a(2, M * W);
  for (Index s = 0; s < S; ++s) {
    for (Index m = 0; m < M; ++m) {
      for (Index n = 0; n < N; ++n) {
        auto const v = x.data(s, m, n);
        a(0, m * W + s * N + n) = static_cast<double>(v.real());
        a(1, m * W + s * N + n) = static_cast<double>(v.imag());
      }
    }
  }
  return a;
}

template <class Real>
SliceStack<Real> fromChannels(Act const &a, Index S, Index M, Index N)
{
  SliceStack<Real> x(S, M, N);
  Index const W = S * N;
  for (Index s = 0; s < S; ++s) {
    for (Index m = 0; m < M; ++m) {
      for (Index n = 0; n < N; ++n) {
        x.data(s, m, n) = Cx<Real>(static_cast<Real>(a(0, m * W + s * N + n)),
                                   static_cast<Real>(a(1, m * W + s * N + n)));
      }
    }
  }
  return x;
}

inline Geometry geometryFor(Index S, Index M, Index N, RegularizerConfig const &cfg)
{
  return {M, S * N, cfg.kernel_size};
}

} // namespace nn

/// Regularizer unit on slices already positioned in the FOV centre (CAIPI shifts removed).
/// Gradients flow through `backward` when a cache was recorded.
class RegularizerUnit
{
public:
  explicit RegularizerUnit(NetworkParams const &p)
    : params_(&p)
  {
    p.config.validate();
    require(static_cast<Index>(p.weights.size()) == p.config.weightCount(),
            "RegularizerUnit: weight vector does not match the configuration");
  }

  SliceStack<double> forward(SliceStack<double> const &x, nn::ResNetCache *cache = nullptr) const
  {
    auto const g = nn::geometryFor(x.S(), x.M(), x.N(), params_->config);
    auto out = nn::resnetForward(nn::toChannels(x), *params_, g, cache);
    return nn::fromChannels<double>(out, x.S(), x.M(), x.N());
  }

  SliceStack<double> backward(nn::ResNetCache const &cache, SliceStack<double> const &gout,
                              std::vector<double> &gw) const
  {
    auto const g = nn::geometryFor(gout.S(), gout.M(), gout.N(), params_->config);
    auto gin = nn::resnetBackward(cache, nn::toChannels(gout), *params_, g, gw);
    return nn::fromChannels<double>(gin, gout.S(), gout.M(), gout.N());
  }

private:
  NetworkParams const *params_;
};

/// The regularizer as seen from data consistency: x arrives with CAIPI shifts in place; they are
/// removed, slices are concatenated along readout and passed through the ResNet as a 2-channel image,
/// then split and shifted back.
inline SliceStack<double> regularizer_apply(SliceStack<double> const &x, CaipiShiftSchedule const &shifts,
                                            NetworkParams const &params)
{
  require(shifts.size() == x.S(), "regularizer_apply: shift schedule length must equal slice count");
  RegularizerUnit const unit(params);
  auto centred = caipi_shift(x, shifts, ShiftDirection::Remove);
  return caipi_shift(unit.forward(centred), shifts, ShiftDirection::Apply);
}

} // namespace smsr

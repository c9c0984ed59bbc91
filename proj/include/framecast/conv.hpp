#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

#include "framecast/tensor.hpp"

namespace framecast {

enum class Pad { same, valid };

namespace detail {

template <typename Real>
void check_conv_args(const Tensor<Real>& input, const Tensor<Real>& kernels, Pad pad) {
  if (input.rank() != 3)
    throw std::invalid_argument("conv2d: input must be rank-3 (C,H,W)");
  if (kernels.rank() != 4)
    throw std::invalid_argument("conv2d: kernels must be rank-4 (Cout,Cin,K,K)");
  if (kernels.extent(2) != kernels.extent(3))
    throw std::invalid_argument("conv2d: kernel window must be square");
  const std::size_t k = kernels.extent(2);
  if (k % 2 == 0) throw std::invalid_argument("conv2d: kernel size must be odd");
  if (kernels.extent(1) != input.extent(0))
    throw std::invalid_argument("conv2d: kernel input channels do not match input");
  if (pad == Pad::valid && (input.extent(1) < k || input.extent(2) < k))
    throw std::invalid_argument("conv2d: input smaller than kernel under valid padding");
}

}  // namespace detail

/// 2-D cross-correlation over a (C,H,W) input with (Cout,Cin,K,K) kernels.
/// Same padding zero-fills (K-1)/2 on each border; valid shrinks to
/// (H-K+1, W-K+1). No bias term.
template <typename Real>
Tensor<Real> conv2d(const Tensor<Real>& input, const Tensor<Real>& kernels, Pad pad) {
  detail::check_conv_args(input, kernels, pad);
  const std::size_t cin = input.extent(0), h = input.extent(1), w = input.extent(2);
  const std::size_t cout = kernels.extent(0), k = kernels.extent(2);
  const std::size_t p = pad == Pad::same ? (k - 1) / 2 : 0;
  const std::size_t ho = pad == Pad::same ? h : h - k + 1;
  const std::size_t wo = pad == Pad::same ? w : w - k + 1;

  Tensor<Real> out({cout, ho, wo});
  for (std::size_t co = 0; co < cout; ++co) {
    Real* ochan = out.data() + co * ho * wo;
    for (std::size_t ci = 0; ci < cin; ++ci) {
      const Real* ichan = input.data() + ci * h * w;
      const Real* kwin = kernels.data() + (co * cin + ci) * k * k;
      for (std::size_t ky = 0; ky < k; ++ky) {
        // rows where y + ky - p lands inside the input
        const std::size_t y0 = p > ky ? p - ky : 0;
        const std::size_t y1 = std::min(ho, h + p - ky);
        for (std::size_t kx = 0; kx < k; ++kx) {
          const Real kv = kwin[ky * k + kx];
          if (kv == Real(0)) continue;
          const std::size_t x0 = p > kx ? p - kx : 0;
          const std::size_t x1 = std::min(wo, w + p - kx);
          for (std::size_t y = y0; y < y1; ++y) {
            Real* orow = ochan + y * wo;
            const Real* irow = ichan + (y + ky - p) * w + kx - p;
            for (std::size_t x = x0; x < x1; ++x) orow[x] += kv * irow[x];
          }
        }
      }
    }
  }
  return out;
}

/// conv2d plus a per-output-channel bias.
template <typename Real>
Tensor<Real> conv2d(const Tensor<Real>& input, const Tensor<Real>& kernels,
                    const Tensor<Real>& bias, Pad pad) {
  if (bias.rank() != 1 || bias.extent(0) != kernels.extent(0))
    throw std::invalid_argument("conv2d: bias must be rank-1 with one entry per output channel");
  Tensor<Real> out = conv2d(input, kernels, pad);
  const std::size_t plane = out.extent(1) * out.extent(2);
  for (std::size_t co = 0; co < out.extent(0); ++co) {
    Real* ochan = out.data() + co * plane;
    const Real b = bias[co];
    for (std::size_t i = 0; i < plane; ++i) ochan[i] += b;
  }
  return out;
}

template <typename Real>
struct Conv2dGrads {
  Tensor<Real> d_input;
  Tensor<Real> d_kernels;
  Tensor<Real> d_bias;
};

/// Gradients of sum(conv2d(input,kernels,bias) * upstream) w.r.t. every
/// argument. upstream must have the forward output dims.
template <typename Real>
Conv2dGrads<Real> conv2d_grad(const Tensor<Real>& input, const Tensor<Real>& kernels,
                              const Tensor<Real>& upstream, Pad pad) {
  detail::check_conv_args(input, kernels, pad);
  const std::size_t cin = input.extent(0), h = input.extent(1), w = input.extent(2);
  const std::size_t cout = kernels.extent(0), k = kernels.extent(2);
  const std::size_t p = pad == Pad::same ? (k - 1) / 2 : 0;
  const std::size_t ho = pad == Pad::same ? h : h - k + 1;
  const std::size_t wo = pad == Pad::same ? w : w - k + 1;
  if (upstream.rank() != 3 || upstream.extent(0) != cout || upstream.extent(1) != ho ||
      upstream.extent(2) != wo)
    throw std::invalid_argument("conv2d_grad: upstream dims do not match forward output");

  Conv2dGrads<Real> g{Tensor<Real>({cin, h, w}), Tensor<Real>({cout, cin, k, k}),
                      Tensor<Real>({cout})};

  for (std::size_t co = 0; co < cout; ++co) {
    const Real* uchan = upstream.data() + co * ho * wo;
    Real acc = Real(0);
    for (std::size_t i = 0; i < ho * wo; ++i) acc += uchan[i];
    g.d_bias[co] = acc;

    for (std::size_t ci = 0; ci < cin; ++ci) {
      const Real* ichan = input.data() + ci * h * w;
      Real* dichan = g.d_input.data() + ci * h * w;
      const Real* kwin = kernels.data() + (co * cin + ci) * k * k;
      Real* dkwin = g.d_kernels.data() + (co * cin + ci) * k * k;
      for (std::size_t ky = 0; ky < k; ++ky) {
        const std::size_t y0 = p > ky ? p - ky : 0;
        const std::size_t y1 = std::min(ho, h + p - ky);
        for (std::size_t kx = 0; kx < k; ++kx) {
          const std::size_t x0 = p > kx ? p - kx : 0;
          const std::size_t x1 = std::min(wo, w + p - kx);
          const Real kv = kwin[ky * k + kx];
          Real dk = Real(0);
          for (std::size_t y = y0; y < y1; ++y) {
            const Real* urow = uchan + y * wo;
            const Real* irow = ichan + (y + ky - p) * w + kx - p;
            Real* dirow = dichan + (y + ky - p) * w + kx - p;
            for (std::size_t x = x0; x < x1; ++x) {
              dk += urow[x] * irow[x];
              dirow[x] += urow[x] * kv;
            }
          }
          dkwin[ky * k + kx] += dk;
        }
      }
    }
  }
  return g;
}

template <typename Real>
struct MaxPool2d {
  Tensor<Real> output;               // (C, H/2, W/2)
  std::vector<std::size_t> argmax;   // flat input index of each block winner
};

/// 2x2 max pooling with stride 2. H and W must be even.
template <typename Real>
MaxPool2d<Real> maxpool2d(const Tensor<Real>& input) {
  if (input.rank() != 3)
    throw std::invalid_argument("maxpool2d: input must be rank-3 (C,H,W)");
  const std::size_t c = input.extent(0), h = input.extent(1), w = input.extent(2);
  if (h % 2 != 0 || w % 2 != 0)
    throw std::invalid_argument("maxpool2d: H and W must be even");
  const std::size_t ho = h / 2, wo = w / 2;
  MaxPool2d<Real> r{Tensor<Real>({c, ho, wo}), std::vector<std::size_t>(c * ho * wo)};
  for (std::size_t ch = 0; ch < c; ++ch) {
    const Real* ichan = input.data() + ch * h * w;
    for (std::size_t y = 0; y < ho; ++y) {
      for (std::size_t x = 0; x < wo; ++x) {
        const std::size_t base = (2 * y) * w + 2 * x;
        std::size_t best = base;
        Real bv = ichan[base];
        const std::size_t cand[3] = {base + 1, base + w, base + w + 1};
        for (std::size_t j : cand) {
          if (ichan[j] > bv) {
            bv = ichan[j];
            best = j;
          }
        }
        const std::size_t oi = (ch * ho + y) * wo + x;
        r.output[oi] = bv;
        r.argmax[oi] = ch * h * w + best;
      }
    }
  }
  return r;
}

/// Routes upstream gradient to the recorded argmax positions, zero elsewhere.
template <typename Real>
Tensor<Real> maxpool2d_backward(const std::vector<std::size_t>& argmax,
                                const Tensor<Real>& upstream, const Extents& input_dims) {
  Tensor<Real> d_input(input_dims);
  if (argmax.size() != upstream.size())
    throw std::invalid_argument("maxpool2d_backward: argmax/upstream size mismatch");
  for (std::size_t i = 0; i < upstream.size(); ++i) d_input[argmax[i]] += upstream[i];
  return d_input;
}

}  // namespace framecast

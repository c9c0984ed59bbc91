#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>

#include "framecast/rng.hpp"
#include "framecast/tensor.hpp"

namespace framecast {

enum class Mode { train, eval };

enum class Activation { none, relu, sigmoid };

// ---- dense ------------------------------------------------------------------

template <typename Real>
struct DenseParams {
  Tensor<Real> w;   // out x in
  Tensor<Real> b;   // out
  Activation activation = Activation::none;
};

template <typename Real>
struct DenseCache {
  Tensor<Real> x;         // batch x in
  Tensor<Real> preact;    // batch x out
};

/// y = activation(x W^T + b), rowwise over the batch.
template <typename Real>
Tensor<Real> dense(const Tensor<Real>& x, const DenseParams<Real>& p,
                   DenseCache<Real>* cache = nullptr) {
  if (x.rank() != 2 || x.extent(1) != p.w.extent(1))
    throw std::invalid_argument("dense: input extent does not match weights");
  const std::size_t batch = x.extent(0), out = p.w.extent(0);
  Tensor<Real> a = matmul_nt(x, p.w);
  for (std::size_t r = 0; r < batch; ++r)
    for (std::size_t j = 0; j < out; ++j) a[r * out + j] += p.b[j];
  if (cache) {
    cache->x = x;
    cache->preact = a;
  }
  switch (p.activation) {
    case Activation::none: return a;
    case Activation::relu: return relu(a);
    case Activation::sigmoid: return sigmoid(a);
  }
  throw std::invalid_argument("dense: unknown activation");
}

template <typename Real>
struct DenseGrads {
  Tensor<Real> d_w;
  Tensor<Real> d_b;
  Tensor<Real> d_x;
};

template <typename Real>
DenseGrads<Real> dense_backward(const DenseCache<Real>& cache, const DenseParams<Real>& p,
                                const Tensor<Real>& d_y) {
  detail::require_same_dims(d_y, cache.preact, "dense_backward");
  Tensor<Real> da(d_y.dims());
  for (std::size_t k = 0; k < d_y.size(); ++k) {
    Real slope = Real(1);
    if (p.activation == Activation::relu) {
      slope = cache.preact[k] > Real(0) ? Real(1) : Real(0);
    } else if (p.activation == Activation::sigmoid) {
      const Real s = sigmoid_scalar(cache.preact[k]);
      slope = s * (Real(1) - s);
    }
    da[k] = d_y[k] * slope;
  }
  DenseGrads<Real> g;
  g.d_w = matmul_tn(da, cache.x);   // (batch x out)^T . (batch x in)
  g.d_b = Tensor<Real>({p.b.extent(0)});
  const std::size_t batch = da.extent(0), out = da.extent(1);
  for (std::size_t r = 0; r < batch; ++r)
    for (std::size_t j = 0; j < out; ++j) g.d_b[j] += da[r * out + j];
  g.d_x = matmul(da, p.w);
  return g;
}

// ---- batch normalization ------------------------------------------------------

template <typename Real>
struct BatchNormParams {
  Tensor<Real> gamma, beta;                 // per channel
  Tensor<Real> running_mean, running_var;   // per channel
  Real epsilon = Real(1e-3);
  Real momentum = Real(0.99);
};

template <typename Real>
BatchNormParams<Real> make_batchnorm_params(std::size_t channels, Real epsilon = Real(1e-3),
                                            Real momentum = Real(0.99)) {
  BatchNormParams<Real> p;
  p.gamma = Tensor<Real>({channels}, Real(1));
  p.beta = Tensor<Real>({channels});
  p.running_mean = Tensor<Real>({channels});
  p.running_var = Tensor<Real>({channels}, Real(1));
  p.epsilon = epsilon;
  p.momentum = momentum;
  return p;
}

template <typename Real>
struct BatchNormCache {
  Tensor<Real> xhat;        // normalized input
  Tensor<Real> inv_std;     // per channel
};

namespace detail {

// x is treated as (N, C, M): channel axis 1, statistics over N and M.
template <typename Real>
void batchnorm_extents(const Tensor<Real>& x, std::size_t channels, std::size_t& n,
                       std::size_t& m) {
  if (x.rank() < 2) throw std::invalid_argument("batchnorm: input must be at least rank-2");
  if (x.extent(1) != channels)
    throw std::invalid_argument("batchnorm: channel extent does not match params");
  n = x.extent(0);
  m = 1;
  for (std::size_t a = 2; a < x.rank(); ++a) m *= x.extent(a);
}

}  // namespace detail

/// Normalizes per channel: batch statistics in train mode (updating the
/// running estimates), running statistics in eval mode.
template <typename Real>
Tensor<Real> batchnorm(const Tensor<Real>& x, BatchNormParams<Real>& p, Mode mode,
                       BatchNormCache<Real>* cache = nullptr) {
  const std::size_t channels = p.gamma.extent(0);
  std::size_t n = 0, m = 0;
  detail::batchnorm_extents(x, channels, n, m);
  if (mode == Mode::train && n < 2)
    throw std::invalid_argument("batchnorm: train mode needs batch >= 2");

  Tensor<Real> out(x.dims());
  Tensor<Real> xhat(x.dims());
  Tensor<Real> inv_std({channels});
  const double count = double(n) * double(m);

  for (std::size_t c = 0; c < channels; ++c) {
    double mean, var;
    if (mode == Mode::train) {
      double acc = 0.0;
      for (std::size_t r = 0; r < n; ++r) {
        const Real* row = x.data() + (r * channels + c) * m;
        for (std::size_t k = 0; k < m; ++k) acc += double(row[k]);
      }
      mean = acc / count;
      double vacc = 0.0;
      for (std::size_t r = 0; r < n; ++r) {
        const Real* row = x.data() + (r * channels + c) * m;
        for (std::size_t k = 0; k < m; ++k) {
          const double d = double(row[k]) - mean;
          vacc += d * d;
        }
      }
      var = vacc / count;   // population convention
      p.running_mean[c] = p.momentum * p.running_mean[c] + (Real(1) - p.momentum) * Real(mean);
      p.running_var[c] = p.momentum * p.running_var[c] + (Real(1) - p.momentum) * Real(var);
    } else {
      mean = double(p.running_mean[c]);
      var = double(p.running_var[c]);
    }
    const Real istd = Real(1) / std::sqrt(Real(var) + p.epsilon);
    inv_std[c] = istd;
    for (std::size_t r = 0; r < n; ++r) {
      const Real* row = x.data() + (r * channels + c) * m;
      Real* hrow = xhat.data() + (r * channels + c) * m;
      Real* orow = out.data() + (r * channels + c) * m;
      for (std::size_t k = 0; k < m; ++k) {
        hrow[k] = (row[k] - Real(mean)) * istd;
        orow[k] = p.gamma[c] * hrow[k] + p.beta[c];
      }
    }
  }
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return out;
}

template <typename Real>
struct BatchNormGrads {
  Tensor<Real> d_gamma;
  Tensor<Real> d_beta;
  Tensor<Real> d_x;
};

/// Train-mode gradient through the batch statistics.
template <typename Real>
BatchNormGrads<Real> batchnorm_backward(const BatchNormCache<Real>& cache,
                                        const BatchNormParams<Real>& p, const Tensor<Real>& d_y) {
  const std::size_t channels = p.gamma.extent(0);
  std::size_t n = 0, m = 0;
  detail::batchnorm_extents(d_y, channels, n, m);
  detail::require_same_dims(d_y, cache.xhat, "batchnorm_backward");

  BatchNormGrads<Real> g{Tensor<Real>({channels}), Tensor<Real>({channels}),
                         Tensor<Real>(d_y.dims())};
  const double count = double(n) * double(m);
  for (std::size_t c = 0; c < channels; ++c) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      const Real* dyrow = d_y.data() + (r * channels + c) * m;
      const Real* hrow = cache.xhat.data() + (r * channels + c) * m;
      for (std::size_t k = 0; k < m; ++k) {
        sum_dy += double(dyrow[k]);
        sum_dy_xhat += double(dyrow[k]) * double(hrow[k]);
      }
    }
    g.d_beta[c] = Real(sum_dy);
    g.d_gamma[c] = Real(sum_dy_xhat);
    const Real scale = p.gamma[c] * cache.inv_std[c];
    const Real mean_dy = Real(sum_dy / count);
    const Real mean_dy_xhat = Real(sum_dy_xhat / count);
    for (std::size_t r = 0; r < n; ++r) {
      const Real* dyrow = d_y.data() + (r * channels + c) * m;
      const Real* hrow = cache.xhat.data() + (r * channels + c) * m;
      Real* dxrow = g.d_x.data() + (r * channels + c) * m;
      for (std::size_t k = 0; k < m; ++k)
        dxrow[k] = scale * (dyrow[k] - mean_dy - hrow[k] * mean_dy_xhat);
    }
  }
  return g;
}

// ---- dropout ------------------------------------------------------------------

/// Inverted dropout: train mode zeroes elements with probability rate and
/// scales survivors by 1/(1-rate); eval mode is the identity.
template <typename Real>
Tensor<Real> dropout(const Tensor<Real>& x, Real rate, Mode mode, Rng& rng,
                     Tensor<Real>* mask_out = nullptr) {
  if (!(rate >= Real(0) && rate < Real(1)))
    throw std::invalid_argument("dropout: rate must lie in [0,1)");
  if (mode == Mode::eval || rate == Real(0)) {
    if (mask_out) *mask_out = Tensor<Real>(x.dims(), Real(1));
    return x;
  }
  const Real keep_scale = Real(1) / (Real(1) - rate);
  Tensor<Real> mask(x.dims());
  Tensor<Real> out(x.dims());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const Real u = unit_real<Real>(rng);
    mask[i] = u < rate ? Real(0) : keep_scale;
    out[i] = x[i] * mask[i];
  }
  if (mask_out) *mask_out = std::move(mask);
  return out;
}

template <typename Real>
Tensor<Real> dropout_backward(const Tensor<Real>& mask, const Tensor<Real>& d_y) {
  return hadamard(mask, d_y);
}

// ---- initialization -------------------------------------------------------------

/// Glorot uniform: +-sqrt(6 / (fan_in + fan_out)); for kernels the fans
/// include the receptive field.
template <typename Real>
Tensor<Real> glorot_init(const Extents& dims, Rng& rng) {
  if (dims.size() < 2)
    throw std::invalid_argument("glorot_init: rank must be >= 2 to define fan-in/out");
  std::size_t receptive = 1;
  for (std::size_t a = 2; a < dims.size(); ++a) receptive *= dims[a];
  const double fan_in = double(dims[1]) * double(receptive);
  const double fan_out = double(dims[0]) * double(receptive);
  const Real limit = Real(std::sqrt(6.0 / (fan_in + fan_out)));
  Tensor<Real> t(dims);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = uniform_real<Real>(rng, -limit, limit);
  return t;
}

}  // namespace framecast

#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

#include "framecast/conv.hpp"
#include "framecast/tensor.hpp"

namespace framecast {

// LSTM cell, gate order (i, f, g, o):
//   i = sig(W_i x + R_i h' + b_i)     f = sig(W_f x + R_f h' + b_f)
//   g = tanh(W_g x + R_g h' + b_g)    o = sig(W_o x + R_o h' + b_o)
//   c = f . c' + i . g                h = o . tanh(c)
// Sigmoid on gates, tanh on the candidate and the cell squash.

template <typename Real>
struct LstmParams {
  Tensor<Real> w_i, w_f, w_g, w_o;   // hidden x input
  Tensor<Real> r_i, r_f, r_g, r_o;   // hidden x hidden
  Tensor<Real> b_i, b_f, b_g, b_o;   // hidden

  std::size_t hidden() const { return w_i.extent(0); }
  std::size_t input() const { return w_i.extent(1); }
};

template <typename Real>
struct LstmState {
  Tensor<Real> h;
  Tensor<Real> c;
};

template <typename Real>
LstmParams<Real> make_lstm_params(std::size_t hidden, std::size_t input) {
  LstmParams<Real> p;
  p.w_i = p.w_f = p.w_g = p.w_o = Tensor<Real>({hidden, input});
  p.r_i = p.r_f = p.r_g = p.r_o = Tensor<Real>({hidden, hidden});
  p.b_i = p.b_f = p.b_g = p.b_o = Tensor<Real>({hidden});
  return p;
}

template <typename Real>
LstmState<Real> lstm_zero_state(const LstmParams<Real>& p) {
  return LstmState<Real>{Tensor<Real>({p.hidden()}), Tensor<Real>({p.hidden()})};
}

namespace detail {

template <typename Real>
void check_lstm_args(const Tensor<Real>& x, const LstmState<Real>& prev,
                     const LstmParams<Real>& p) {
  if (x.rank() != 1 || x.extent(0) != p.input())
    throw std::invalid_argument("lstm_cell_forward: input extent does not match params");
  if (prev.h.rank() != 1 || prev.h.extent(0) != p.hidden() || prev.c.rank() != 1 ||
      prev.c.extent(0) != p.hidden())
    throw std::invalid_argument("lstm_cell_forward: state extent does not match params");
}

}  // namespace detail

template <typename Real>
struct LstmCache {
  Tensor<Real> x, h_prev, c_prev;
  Tensor<Real> i, f, g, o;   // gate activations
  Tensor<Real> c, tanh_c;
};

template <typename Real>
LstmState<Real> lstm_cell_forward(const Tensor<Real>& x, const LstmState<Real>& prev,
                                  const LstmParams<Real>& p, LstmCache<Real>* cache = nullptr) {
  detail::check_lstm_args(x, prev, p);

  auto gate = [&](const Tensor<Real>& w, const Tensor<Real>& r, const Tensor<Real>& b) {
    Tensor<Real> a = matvec(w, x);
    accumulate(a, b);
    accumulate(a, matvec(r, prev.h));
    return a;
  };
  const Tensor<Real> i = sigmoid(gate(p.w_i, p.r_i, p.b_i));
  const Tensor<Real> f = sigmoid(gate(p.w_f, p.r_f, p.b_f));
  const Tensor<Real> g = tanh(gate(p.w_g, p.r_g, p.b_g));
  const Tensor<Real> o = sigmoid(gate(p.w_o, p.r_o, p.b_o));

  LstmState<Real> next;
  next.c = add(hadamard(f, prev.c), hadamard(i, g));
  const Tensor<Real> tc = tanh(next.c);
  next.h = hadamard(o, tc);

  if (cache) {
    cache->x = x;
    cache->h_prev = prev.h;
    cache->c_prev = prev.c;
    cache->i = i;
    cache->f = f;
    cache->g = g;
    cache->o = o;
    cache->c = next.c;
    cache->tanh_c = tc;
  }
  return next;
}

template <typename Real>
struct LstmGrads {
  LstmParams<Real> d_params;
  Tensor<Real> d_x;
  LstmState<Real> d_prev;
};

/// Gradients of (dh . h_t + dc . c_t) w.r.t. the cell inputs and params.
template <typename Real>
LstmGrads<Real> lstm_cell_backward(const LstmCache<Real>& cache, const LstmParams<Real>& p,
                                   const Tensor<Real>& dh, const Tensor<Real>& dc) {
  if (!dh.same_dims(cache.i) || !dc.same_dims(cache.i))
    throw std::invalid_argument("lstm_cell_backward: upstream extent does not match cache");

  const std::size_t n = cache.i.size();
  Tensor<Real> d_o(dh.dims()), dct(dh.dims());
  for (std::size_t k = 0; k < n; ++k) {
    const Real tc = cache.tanh_c[k];
    d_o[k] = dh[k] * tc;
    dct[k] = dc[k] + dh[k] * cache.o[k] * (Real(1) - tc * tc);
  }

  Tensor<Real> da_i(dh.dims()), da_f(dh.dims()), da_g(dh.dims()), da_o(dh.dims());
  LstmGrads<Real> out;
  out.d_prev.c = Tensor<Real>(dh.dims());
  for (std::size_t k = 0; k < n; ++k) {
    const Real i = cache.i[k], f = cache.f[k], g = cache.g[k], o = cache.o[k];
    da_i[k] = dct[k] * g * i * (Real(1) - i);
    da_f[k] = dct[k] * cache.c_prev[k] * f * (Real(1) - f);
    da_g[k] = dct[k] * i * (Real(1) - g * g);
    da_o[k] = d_o[k] * o * (Real(1) - o);
    out.d_prev.c[k] = dct[k] * f;
  }

  out.d_params.w_i = outer(da_i, cache.x);
  out.d_params.w_f = outer(da_f, cache.x);
  out.d_params.w_g = outer(da_g, cache.x);
  out.d_params.w_o = outer(da_o, cache.x);
  out.d_params.r_i = outer(da_i, cache.h_prev);
  out.d_params.r_f = outer(da_f, cache.h_prev);
  out.d_params.r_g = outer(da_g, cache.h_prev);
  out.d_params.r_o = outer(da_o, cache.h_prev);
  out.d_params.b_i = da_i;
  out.d_params.b_f = da_f;
  out.d_params.b_g = da_g;
  out.d_params.b_o = da_o;

  out.d_x = matvec_t(p.w_i, da_i);
  accumulate(out.d_x, matvec_t(p.w_f, da_f));
  accumulate(out.d_x, matvec_t(p.w_g, da_g));
  accumulate(out.d_x, matvec_t(p.w_o, da_o));

  out.d_prev.h = matvec_t(p.r_i, da_i);
  accumulate(out.d_prev.h, matvec_t(p.r_f, da_f));
  accumulate(out.d_prev.h, matvec_t(p.r_g, da_g));
  accumulate(out.d_prev.h, matvec_t(p.r_o, da_o));
  return out;
}

// ---- convolutional variant ---------------------------------------------------
// Every W x and R h above becomes a same-padded conv2d; gates, candidate and
// state are (channels, H, W) maps.

template <typename Real>
struct ConvLstmParams {
  Tensor<Real> w_i, w_f, w_g, w_o;   // hidden_ch x in_ch x K x K
  Tensor<Real> r_i, r_f, r_g, r_o;   // hidden_ch x hidden_ch x K x K
  Tensor<Real> b_i, b_f, b_g, b_o;   // hidden_ch

  std::size_t hidden_channels() const { return w_i.extent(0); }
  std::size_t in_channels() const { return w_i.extent(1); }
  std::size_t kernel() const { return w_i.extent(2); }
};

template <typename Real>
struct ConvLstmState {
  Tensor<Real> h;   // hidden_ch x H x W
  Tensor<Real> c;
};

template <typename Real>
ConvLstmParams<Real> make_convlstm_params(std::size_t hidden_ch, std::size_t in_ch,
                                          std::size_t kernel) {
  ConvLstmParams<Real> p;
  p.w_i = p.w_f = p.w_g = p.w_o = Tensor<Real>({hidden_ch, in_ch, kernel, kernel});
  p.r_i = p.r_f = p.r_g = p.r_o = Tensor<Real>({hidden_ch, hidden_ch, kernel, kernel});
  p.b_i = p.b_f = p.b_g = p.b_o = Tensor<Real>({hidden_ch});
  return p;
}

template <typename Real>
ConvLstmState<Real> convlstm_zero_state(const ConvLstmParams<Real>& p, std::size_t h,
                                        std::size_t w) {
  return ConvLstmState<Real>{Tensor<Real>({p.hidden_channels(), h, w}),
                             Tensor<Real>({p.hidden_channels(), h, w})};
}

template <typename Real>
struct ConvLstmCache {
  Tensor<Real> x, h_prev, c_prev;
  Tensor<Real> i, f, g, o;
  Tensor<Real> c, tanh_c;
};

template <typename Real>
ConvLstmState<Real> convlstm_cell_forward(const Tensor<Real>& x, const ConvLstmState<Real>& prev,
                                          const ConvLstmParams<Real>& p,
                                          ConvLstmCache<Real>* cache = nullptr) {
  if (x.rank() != 3 || x.extent(0) != p.in_channels())
    throw std::invalid_argument("convlstm_cell_forward: input channels do not match params");
  if (prev.h.rank() != 3 || prev.h.extent(0) != p.hidden_channels() ||
      prev.h.extent(1) != x.extent(1) || prev.h.extent(2) != x.extent(2) ||
      !prev.c.same_dims(prev.h))
    throw std::invalid_argument("convlstm_cell_forward: state extents do not match input");

  auto gate = [&](const Tensor<Real>& w, const Tensor<Real>& r, const Tensor<Real>& b) {
    Tensor<Real> a = conv2d(x, w, b, Pad::same);
    accumulate(a, conv2d(prev.h, r, Pad::same));
    return a;
  };
  const Tensor<Real> i = sigmoid(gate(p.w_i, p.r_i, p.b_i));
  const Tensor<Real> f = sigmoid(gate(p.w_f, p.r_f, p.b_f));
  const Tensor<Real> g = tanh(gate(p.w_g, p.r_g, p.b_g));
  const Tensor<Real> o = sigmoid(gate(p.w_o, p.r_o, p.b_o));

  ConvLstmState<Real> next;
  next.c = add(hadamard(f, prev.c), hadamard(i, g));
  const Tensor<Real> tc = tanh(next.c);
  next.h = hadamard(o, tc);

  if (cache) {
    cache->x = x;
    cache->h_prev = prev.h;
    cache->c_prev = prev.c;
    cache->i = i;
    cache->f = f;
    cache->g = g;
    cache->o = o;
    cache->c = next.c;
    cache->tanh_c = tc;
  }
  return next;
}

template <typename Real>
struct ConvLstmGrads {
  ConvLstmParams<Real> d_params;
  Tensor<Real> d_x;
  ConvLstmState<Real> d_prev;
};

template <typename Real>
ConvLstmGrads<Real> convlstm_cell_backward(const ConvLstmCache<Real>& cache,
                                           const ConvLstmParams<Real>& p, const Tensor<Real>& dh,
                                           const Tensor<Real>& dc) {
  if (!dh.same_dims(cache.i) || !dc.same_dims(cache.i))
    throw std::invalid_argument("convlstm_cell_backward: upstream extent does not match cache");

  const std::size_t n = cache.i.size();
  Tensor<Real> d_o(dh.dims()), dct(dh.dims());
  for (std::size_t k = 0; k < n; ++k) {
    const Real tc = cache.tanh_c[k];
    d_o[k] = dh[k] * tc;
    dct[k] = dc[k] + dh[k] * cache.o[k] * (Real(1) - tc * tc);
  }

  Tensor<Real> da_i(dh.dims()), da_f(dh.dims()), da_g(dh.dims()), da_o(dh.dims());
  ConvLstmGrads<Real> out;
  out.d_prev.c = Tensor<Real>(dh.dims());
  for (std::size_t k = 0; k < n; ++k) {
    const Real i = cache.i[k], f = cache.f[k], g = cache.g[k], o = cache.o[k];
    da_i[k] = dct[k] * g * i * (Real(1) - i);
    da_f[k] = dct[k] * cache.c_prev[k] * f * (Real(1) - f);
    da_g[k] = dct[k] * i * (Real(1) - g * g);
    da_o[k] = d_o[k] * o * (Real(1) - o);
    out.d_prev.c[k] = dct[k] * f;
  }

  out.d_x = Tensor<Real>(cache.x.dims());
  out.d_prev.h = Tensor<Real>(cache.h_prev.dims());

  auto through_gate = [&](const Tensor<Real>& da, const Tensor<Real>& w, const Tensor<Real>& r,
                          Tensor<Real>& dw, Tensor<Real>& dr, Tensor<Real>& db) {
    Conv2dGrads<Real> gx = conv2d_grad(cache.x, w, da, Pad::same);
    accumulate(out.d_x, gx.d_input);
    dw = std::move(gx.d_kernels);
    db = std::move(gx.d_bias);   // bias enters once, on the input conv
    Conv2dGrads<Real> gh = conv2d_grad(cache.h_prev, r, da, Pad::same);
    accumulate(out.d_prev.h, gh.d_input);
    dr = std::move(gh.d_kernels);
  };
  through_gate(da_i, p.w_i, p.r_i, out.d_params.w_i, out.d_params.r_i, out.d_params.b_i);
  through_gate(da_f, p.w_f, p.r_f, out.d_params.w_f, out.d_params.r_f, out.d_params.b_f);
  through_gate(da_g, p.w_g, p.r_g, out.d_params.w_g, out.d_params.r_g, out.d_params.b_g);
  through_gate(da_o, p.w_o, p.r_o, out.d_params.w_o, out.d_params.r_o, out.d_params.b_o);
  return out;
}

// ---- sequence unrolling -------------------------------------------------------

template <typename Real>
struct LstmSequence {
  std::vector<LstmState<Real>> states;   // one per step, last is the summary
  std::vector<LstmCache<Real>> caches;   // populated when keep_caches
};

/// Applies the cell left to right from a zero initial state.
template <typename Real>
LstmSequence<Real> lstm_unroll(const std::vector<Tensor<Real>>& xs, const LstmParams<Real>& p,
                               bool keep_caches = false) {
  if (xs.empty()) throw std::invalid_argument("lstm_unroll: empty sequence");
  LstmSequence<Real> seq;
  seq.states.reserve(xs.size());
  if (keep_caches) seq.caches.resize(xs.size());
  LstmState<Real> state = lstm_zero_state(p);
  for (std::size_t t = 0; t < xs.size(); ++t) {
    state = lstm_cell_forward(xs[t], state, p, keep_caches ? &seq.caches[t] : nullptr);
    seq.states.push_back(state);
  }
  return seq;
}

template <typename Real>
struct LstmSequenceGrads {
  LstmParams<Real> d_params;        // summed over all steps (BPTT)
  std::vector<Tensor<Real>> d_xs;   // one per step
};

/// Backpropagation through time: d_hs holds the upstream gradient on each
/// step's hidden output (zero tensors where a step is unused).
template <typename Real>
LstmSequenceGrads<Real> lstm_unroll_backward(const std::vector<LstmCache<Real>>& caches,
                                             const LstmParams<Real>& p,
                                             const std::vector<Tensor<Real>>& d_hs) {
  if (caches.empty() || caches.size() != d_hs.size())
    throw std::invalid_argument("lstm_unroll_backward: cache/upstream length mismatch");
  const std::size_t steps = caches.size();
  LstmSequenceGrads<Real> out;
  out.d_params = make_lstm_params<Real>(p.hidden(), p.input());
  out.d_xs.resize(steps);

  Tensor<Real> carry_h({p.hidden()}), carry_c({p.hidden()});
  for (std::size_t t = steps; t-- > 0;) {
    Tensor<Real> dh = add(d_hs[t], carry_h);
    LstmGrads<Real> g = lstm_cell_backward(caches[t], p, dh, carry_c);
    out.d_xs[t] = std::move(g.d_x);
    carry_h = std::move(g.d_prev.h);
    carry_c = std::move(g.d_prev.c);
    accumulate_params(out.d_params, g.d_params);
  }
  return out;
}

template <typename Real>
void accumulate_params(LstmParams<Real>& dst, const LstmParams<Real>& src) {
  accumulate(dst.w_i, src.w_i); accumulate(dst.w_f, src.w_f);
  accumulate(dst.w_g, src.w_g); accumulate(dst.w_o, src.w_o);
  accumulate(dst.r_i, src.r_i); accumulate(dst.r_f, src.r_f);
  accumulate(dst.r_g, src.r_g); accumulate(dst.r_o, src.r_o);
  accumulate(dst.b_i, src.b_i); accumulate(dst.b_f, src.b_f);
  accumulate(dst.b_g, src.b_g); accumulate(dst.b_o, src.b_o);
}

template <typename Real>
struct ConvLstmSequence {
  std::vector<ConvLstmState<Real>> states;
  std::vector<ConvLstmCache<Real>> caches;
};

template <typename Real>
ConvLstmSequence<Real> convlstm_unroll(const std::vector<Tensor<Real>>& xs,
                                       const ConvLstmParams<Real>& p, bool keep_caches = false) {
  if (xs.empty()) throw std::invalid_argument("convlstm_unroll: empty sequence");
  ConvLstmSequence<Real> seq;
  seq.states.reserve(xs.size());
  if (keep_caches) seq.caches.resize(xs.size());
  ConvLstmState<Real> state = convlstm_zero_state(p, xs[0].extent(1), xs[0].extent(2));
  for (std::size_t t = 0; t < xs.size(); ++t) {
    state = convlstm_cell_forward(xs[t], state, p, keep_caches ? &seq.caches[t] : nullptr);
    seq.states.push_back(state);
  }
  return seq;
}

template <typename Real>
struct ConvLstmSequenceGrads {
  ConvLstmParams<Real> d_params;
  std::vector<Tensor<Real>> d_xs;
};

template <typename Real>
void accumulate_params(ConvLstmParams<Real>& dst, const ConvLstmParams<Real>& src) {
  accumulate(dst.w_i, src.w_i); accumulate(dst.w_f, src.w_f);
  accumulate(dst.w_g, src.w_g); accumulate(dst.w_o, src.w_o);
  accumulate(dst.r_i, src.r_i); accumulate(dst.r_f, src.r_f);
  accumulate(dst.r_g, src.r_g); accumulate(dst.r_o, src.r_o);
  accumulate(dst.b_i, src.b_i); accumulate(dst.b_f, src.b_f);
  accumulate(dst.b_g, src.b_g); accumulate(dst.b_o, src.b_o);
}

template <typename Real>
ConvLstmSequenceGrads<Real> convlstm_unroll_backward(
    const std::vector<ConvLstmCache<Real>>& caches, const ConvLstmParams<Real>& p,
    const std::vector<Tensor<Real>>& d_hs) {
  if (caches.empty() || caches.size() != d_hs.size())
    throw std::invalid_argument("convlstm_unroll_backward: cache/upstream length mismatch");
  const std::size_t steps = caches.size();
  ConvLstmSequenceGrads<Real> out;
  out.d_params = make_convlstm_params<Real>(p.hidden_channels(), p.in_channels(), p.kernel());
  out.d_xs.resize(steps);

  Tensor<Real> carry_h(caches[0].h_prev.dims()), carry_c(caches[0].c_prev.dims());
  for (std::size_t t = steps; t-- > 0;) {
    Tensor<Real> dh = add(d_hs[t], carry_h);
    ConvLstmGrads<Real> g = convlstm_cell_backward(caches[t], p, dh, carry_c);
    out.d_xs[t] = std::move(g.d_x);
    carry_h = std::move(g.d_prev.h);
    carry_c = std::move(g.d_prev.c);
    accumulate_params(out.d_params, g.d_params);
  }
  return out;
}

}  // namespace framecast

#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

#include "framecast/tensor.hpp"

namespace framecast {

/// Per-parameter Adam state: exponential averages of the gradient and of
/// its square, plus the update counter used for bias correction.
template <typename Real>
struct AdamState {
  Tensor<Real> v;   // first moment
  Tensor<Real> s;   // second moment
  long step = 0;
  Real beta1 = Real(0.9);
  Real beta2 = Real(0.999);
  Real eta = Real(1e-3);
  Real eps = Real(1e-8);
};

template <typename Real>
AdamState<Real> make_adam_state(const Extents& param_dims, Real eta = Real(1e-3),
                                Real beta1 = Real(0.9), Real beta2 = Real(0.999),
                                Real eps = Real(1e-8)) {
  AdamState<Real> st;
  st.v = Tensor<Real>(param_dims);
  st.s = Tensor<Real>(param_dims);
  st.beta1 = beta1;
  st.beta2 = beta2;
  st.eta = eta;
  st.eps = eps;
  return st;
}

/// One Adam update with bias correction:
///   v <- b1 v + (1-b1) g,  s <- b2 s + (1-b2) g^2,
///   w <- w - eta * vhat / (sqrt(shat) + eps).
template <typename Real>
void adam_step(Tensor<Real>& param, const Tensor<Real>& grad, AdamState<Real>& st) {
  detail::require_same_dims(param, grad, "adam_step");
  detail::require_same_dims(param, st.v, "adam_step");
  detail::require_same_dims(param, st.s, "adam_step");
  if (!(st.eta > Real(0))) throw std::invalid_argument("adam_step: learning rate must be > 0");

  st.step += 1;
  const Real c1 = Real(1) - std::pow(st.beta1, Real(st.step));
  const Real c2 = Real(1) - std::pow(st.beta2, Real(st.step));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const Real g = grad[i];
    st.v[i] = st.beta1 * st.v[i] + (Real(1) - st.beta1) * g;
    st.s[i] = st.beta2 * st.s[i] + (Real(1) - st.beta2) * g * g;
    const Real vhat = st.v[i] / c1;
    const Real shat = st.s[i] / c2;
    param[i] -= st.eta * vhat / (std::sqrt(shat) + st.eps);
  }
}

enum class LossKind { mae, rmse };

inline const char* loss_name(LossKind k) { return k == LossKind::mae ? "mae" : "rmse"; }

inline LossKind loss_from_name(const std::string& s) {
  if (s == "mae") return LossKind::mae;
  if (s == "rmse") return LossKind::rmse;
  throw std::invalid_argument("unknown loss kind '" + s + "' (expected mae or rmse)");
}

/// MAE or RMSE between predictions and observations over all elements.
/// Reductions accumulate in double regardless of Real.
template <typename Real>
Real loss(LossKind kind, const Tensor<Real>& p, const Tensor<Real>& o) {
  detail::require_same_dims(p, o, "loss");
  const std::size_t n = p.size();
  if (n == 0) throw std::invalid_argument("loss: empty tensors");
  double acc = 0.0;
  if (kind == LossKind::mae) {
    for (std::size_t i = 0; i < n; ++i) acc += std::abs(double(p[i]) - double(o[i]));
    return static_cast<Real>(acc / double(n));
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double r = double(p[i]) - double(o[i]);
    acc += r * r;
  }
  return static_cast<Real>(std::sqrt(acc / double(n)));
}

/// d loss / d p. For mae, sign(0) = 0; for rmse the gradient is zeroed when
/// the loss itself vanishes (the formula divides by it).
template <typename Real>
Tensor<Real> loss_grad(LossKind kind, const Tensor<Real>& p, const Tensor<Real>& o) {
  detail::require_same_dims(p, o, "loss_grad");
  const std::size_t n = p.size();
  if (n == 0) throw std::invalid_argument("loss_grad: empty tensors");
  Tensor<Real> g(p.dims());
  if (kind == LossKind::mae) {
    for (std::size_t i = 0; i < n; ++i) {
      const Real r = p[i] - o[i];
      g[i] = (r > Real(0) ? Real(1) : (r < Real(0) ? Real(-1) : Real(0))) / Real(n);
    }
    return g;
  }
  const Real value = loss(LossKind::rmse, p, o);
  if (value < Real(1e-12)) return g;  // zeros
  for (std::size_t i = 0; i < n; ++i) g[i] = (p[i] - o[i]) / (Real(n) * value);
  return g;
}

}  // namespace framecast

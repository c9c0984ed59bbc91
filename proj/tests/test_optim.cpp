#include <gtest/gtest.h>

#include <cmath>

#include "framecast/metrics.hpp"
#include "framecast/optim.hpp"
#include "test_util.hpp"

using namespace framecast;
using fctest::rand_tensor;

TEST(Adam, ZeroGradientLeavesParamsUntouched) {
  Tensor<float> w = Tensor<float>::from_data({3}, {0.5f, -1.25f, 2.0f});
  Tensor<float> w0 = w;
  AdamState<float> st = make_adam_state<float>(w.dims());
  Tensor<float> g({3}, 0.0f);
  adam_step(w, g, st);
  for (std::size_t i = 0; i < w.size(); ++i) EXPECT_EQ(w[i], w0[i]);
  EXPECT_EQ(st.step, 1);
}

TEST(Adam, FirstStepMovesByAboutEta) {
  Tensor<float> w({1}, 0.0f);
  AdamState<float> st = make_adam_state<float>(w.dims());
  Tensor<float> g({1}, 0.5f);
  adam_step(w, g, st);
  // bias correction makes vhat = g and sqrt(shat) = |g| on the first step
  EXPECT_NEAR(w[0], -st.eta, 1e-6f);
}

TEST(Adam, MinimizesQuadratic) {
  Tensor<double> w({1}, 0.0);
  AdamState<double> st = make_adam_state<double>(w.dims(), 0.1);
  for (int k = 0; k < 500; ++k) {
    Tensor<double> g({1});
    g[0] = 2.0 * (w[0] - 3.0);
    adam_step(w, g, st);
  }
  EXPECT_LT(std::abs(w[0] - 3.0), 1e-2);
}

TEST(Adam, UpdateBoundAndSign) {
  Rng rng(77);
  Tensor<double> w = rand_tensor<double>({40}, rng);
  AdamState<double> st = make_adam_state<double>(w.dims());
  for (int k = 0; k < 5; ++k) {
    Tensor<double> g = rand_tensor<double>({40}, rng);
    Tensor<double> before = w;
    adam_step(w, g, st);
    const double c1 = 1.0 - std::pow(st.beta1, double(st.step));
    const double c2 = 1.0 - std::pow(st.beta2, double(st.step));
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double dw = w[i] - before[i];
      const double vhat = st.v[i] / c1;
      const double shat = st.s[i] / c2;
      EXPECT_LE(std::abs(dw), st.eta * std::abs(vhat) / (std::sqrt(shat) + st.eps) + 1e-15);
      if (vhat != 0.0) EXPECT_LE(dw * vhat, 0.0);
    }
  }
}

TEST(Adam, Errors) {
  Tensor<float> w({2});
  Tensor<float> g({3});
  AdamState<float> st = make_adam_state<float>(w.dims());
  EXPECT_THROW(adam_step(w, g, st), std::invalid_argument);
  AdamState<float> bad = make_adam_state<float>(w.dims(), 0.0f);
  Tensor<float> g2({2});
  EXPECT_THROW(adam_step(w, g2, bad), std::invalid_argument);
}

TEST(Loss, HandValues) {
  Tensor<float> p = Tensor<float>::from_data({2}, {1.0f, 0.0f});
  Tensor<float> o({2}, 0.0f);
  EXPECT_FLOAT_EQ(loss(LossKind::mae, p, o), 0.5f);
  EXPECT_NEAR(loss(LossKind::rmse, p, o), std::sqrt(0.5f), 1e-6f);
  EXPECT_EQ(loss(LossKind::mae, o, o), 0.0f);
  EXPECT_EQ(loss(LossKind::rmse, p, p), 0.0f);
}

TEST(Loss, SymmetryAndSquareIdentity) {
  Rng rng(19);
  for (int k = 0; k < 10; ++k) {
    Tensor<double> p = rand_tensor<double>({37}, rng);
    Tensor<double> o = rand_tensor<double>({37}, rng);
    EXPECT_DOUBLE_EQ(loss(LossKind::mae, p, o), loss(LossKind::mae, o, p));
    EXPECT_DOUBLE_EQ(loss(LossKind::rmse, p, o), loss(LossKind::rmse, o, p));
    const double r = loss(LossKind::rmse, p, o);
    double ss = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) ss += (p[i] - o[i]) * (p[i] - o[i]);
    EXPECT_NEAR(r * r * double(p.size()), ss, 1e-5 * std::max(1.0, ss));
  }
}

TEST(LossGrad, ConventionsAndHandValue) {
  Tensor<float> o({4}, 0.25f);
  Tensor<float> g = loss_grad(LossKind::mae, o, o);
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_EQ(g[i], 0.0f);

  Tensor<float> p = Tensor<float>::from_data({2}, {1.0f, 0.0f});
  Tensor<float> z({2}, 0.0f);
  Tensor<float> gr = loss_grad(LossKind::rmse, p, z);
  EXPECT_NEAR(gr[0], 1.0f / (2.0f * std::sqrt(0.5f)), 1e-6f);
  EXPECT_NEAR(gr[1], 0.0f, 1e-7f);
  EXPECT_NEAR(gr[0], 0.70710678f, 1e-5f);
}

TEST(LossGrad, FiniteDifferenceAwayFromKinks) {
  Rng rng(29);
  for (int inst = 0; inst < 20; ++inst) {
    Tensor<double> o = rand_tensor<double>({12}, rng);
    Tensor<double> p(o.dims());
    for (std::size_t i = 0; i < p.size(); ++i) {
      // keep |p - o| >= 0.1 so the mae kink is far from the probe
      const double off = uniform_real<double>(rng, 0.1, 0.5);
      p[i] = o[i] + (rng() % 2 ? off : -off);
    }
    for (LossKind kind : {LossKind::mae, LossKind::rmse}) {
      Tensor<double> analytic = loss_grad(kind, p, o);
      auto f = [&](const Tensor<double>& t) { return loss(kind, t, o); };
      EXPECT_LT(finite_diff_check<double>(f, p, analytic, 1e-3), 1e-4);
    }
  }
}

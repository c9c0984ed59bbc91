#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "framecast/optim.hpp"
#include "framecast/tensor.hpp"

namespace framecast {

/// Stabilizers of the structural similarity ratio, (k1*L)^2 and (k2*L)^2
/// with k1 = 0.01, k2 = 0.03 for dynamic range L.
struct SsimConsts {
  double c1 = 1e-4;
  double c2 = 9e-4;

  static SsimConsts for_range(double range) {
    return SsimConsts{(0.01 * range) * (0.01 * range), (0.03 * range) * (0.03 * range)};
  }
};

/// Whole-frame SSIM from global means, population variances and covariance.
/// Not clamped: the value lies in [-1, 1] and goes negative under
/// anticorrelation.
template <typename Real>
double ssim(const Tensor<Real>& x, const Tensor<Real>& y, SsimConsts c = SsimConsts{}) {
  detail::require_same_dims(x, y, "ssim");
  const std::size_t n = x.size();
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += double(x[i]);
    my += double(y[i]);
  }
  mx /= double(n);
  my /= double(n);
  double vx = 0.0, vy = 0.0, cov = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = double(x[i]) - mx;
    const double dy = double(y[i]) - my;
    vx += dx * dx;
    vy += dy * dy;
    cov += dx * dy;
  }
  vx /= double(n);
  vy /= double(n);
  cov /= double(n);
  return ((2.0 * mx * my + c.c1) * (2.0 * cov + c.c2)) /
         ((mx * mx + my * my + c.c1) * (vx + vy + c.c2));
}

/// Mean of whole-window SSIM over all window x window patches at stride 1,
/// uniform weighting. Opt-in alternative to the global form for
/// comparability with common toolkits.
template <typename Real>
double ssim_windowed(const Tensor<Real>& x, const Tensor<Real>& y, SsimConsts c = SsimConsts{},
                     std::size_t window = 8) {
  detail::require_same_dims(x, y, "ssim_windowed");
  if (x.rank() < 2) throw std::invalid_argument("ssim_windowed: frame must be at least rank-2");
  const std::size_t h = x.extent(0), w = x.extent(1);
  std::size_t chan = 1;
  for (std::size_t a = 2; a < x.rank(); ++a) chan *= x.extent(a);
  if (chan != 1) throw std::invalid_argument("ssim_windowed: single-channel frames only");
  if (window == 0 || window > h || window > w)
    throw std::invalid_argument("ssim_windowed: window exceeds frame extents");

  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t y0 = 0; y0 + window <= h; ++y0) {
    for (std::size_t x0 = 0; x0 + window <= w; ++x0) {
      Tensor<Real> px({window, window}), py({window, window});
      for (std::size_t i = 0; i < window; ++i)
        for (std::size_t j = 0; j < window; ++j) {
          px[i * window + j] = x[(y0 + i) * w + (x0 + j)];
          py[i * window + j] = y[(y0 + i) * w + (x0 + j)];
        }
      acc += ssim(px, py, c);
      ++count;
    }
  }
  return acc / double(count);
}

struct FrameEval {
  std::size_t frame_index = 0;
  double rmse = 0.0;
  double mae = 0.0;
  double ssim = 0.0;
};

/// RMSE / MAE / SSIM of a prediction set; aggregates are plain means of the
/// per-frame values.
struct EvalReport {
  std::vector<FrameEval> frames;
  double rmse = 0.0;
  double mae = 0.0;
  double ssim = 0.0;
};

template <typename Real>
EvalReport evaluate(const std::vector<Tensor<Real>>& pred, const std::vector<Tensor<Real>>& truth,
                    SsimConsts c = SsimConsts{}) {
  if (pred.size() != truth.size())
    throw std::invalid_argument("evaluate: prediction/truth counts differ");
  if (pred.empty()) throw std::invalid_argument("evaluate: nothing to evaluate");
  EvalReport rep;
  rep.frames.reserve(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    FrameEval fe;
    fe.frame_index = i;
    fe.rmse = double(loss(LossKind::rmse, pred[i], truth[i]));
    fe.mae = double(loss(LossKind::mae, pred[i], truth[i]));
    fe.ssim = ssim(pred[i], truth[i], c);
    rep.rmse += fe.rmse;
    rep.mae += fe.mae;
    rep.ssim += fe.ssim;
    rep.frames.push_back(fe);
  }
  rep.rmse /= double(rep.frames.size());
  rep.mae /= double(rep.frames.size());
  rep.ssim /= double(rep.frames.size());
  return rep;
}

inline std::string format_metric(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

/// One CSV row per prediction plus an aggregate row.
inline void write_eval_csv(const std::filesystem::path& path, const EvalReport& rep) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("write_eval_csv: cannot open " + path.string());
  f << "frame_index,rmse,mae,ssim\n";
  for (const FrameEval& fe : rep.frames)
    f << fe.frame_index << "," << format_metric(fe.rmse) << "," << format_metric(fe.mae) << ","
      << format_metric(fe.ssim) << "\n";
  f << "mean," << format_metric(rep.rmse) << "," << format_metric(rep.mae) << ","
    << format_metric(rep.ssim) << "\n";
}

/// Central finite differences of a scalar function against an analytic
/// gradient; returns the max over coordinates of
/// |fd - analytic| / max(|fd|, |analytic|, 1e-6).
template <typename Real>
double finite_diff_check(const std::function<Real(const Tensor<Real>&)>& f, const Tensor<Real>& p,
                         const Tensor<Real>& analytic, Real step) {
  detail::require_same_dims(p, analytic, "finite_diff_check");
  if (!(step > Real(0))) throw std::invalid_argument("finite_diff_check: step must be > 0");
  Tensor<Real> probe = p;
  double worst = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const Real saved = probe[i];
    probe[i] = saved + step;
    const double up = double(f(probe));
    probe[i] = saved - step;
    const double dn = double(f(probe));
    probe[i] = saved;
    if (!std::isfinite(up) || !std::isfinite(dn))
      throw std::runtime_error("finite_diff_check: function value is not finite");
    const double fd = (up - dn) / (2.0 * double(step));
    const double err = std::abs(fd - double(analytic[i])) /
                       std::max({std::abs(fd), std::abs(double(analytic[i])), 1e-6});
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace framecast

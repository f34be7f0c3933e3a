#pragma once

#include <functional>

#include "flowdepth/core/tensor.hpp"
#include "flowdepth/geometry.hpp"

namespace testutil {

using flowdepth::Pose;
using flowdepth::Rng;
using flowdepth::Tensor;
using flowdepth::Vec3;

inline Pose random_pose(Rng& rng, double rot_scale = 0.3, double trans_scale = 0.5) {
  Vec3 w{rng.normal(0, rot_scale), rng.normal(0, rot_scale), rng.normal(0, rot_scale)};
  Vec3 t{rng.normal(0, trans_scale), rng.normal(0, trans_scale), rng.normal(0, trans_scale)};
  return flowdepth::pose_from_axisangle(w, t);
}

// Central finite differences of a scalar-valued function against an analytic
// gradient. Returns the max relative error over entries with non-negligible
// magnitude.
inline double fd_check(Tensor& x, const std::function<double()>& eval,
                       const Tensor& analytic_grad, double h = 1e-6) {
  double worst = 0;
  for (long i = 0; i < x.numel(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double fp = eval();
    x[i] = orig - h;
    const double fm = eval();
    x[i] = orig;
    const double fd = (fp - fm) / (2 * h);
    const double an = analytic_grad[i];
    const double scale = std::max({std::fabs(fd), std::fabs(an), 1e-4});
    worst = std::max(worst, std::fabs(fd - an) / scale);
  }
  return worst;
}

inline Tensor random_tensor(std::vector<int> shape, Rng& rng, double lo = 0.0,
                            double hi = 1.0) {
  Tensor t(std::move(shape));
  for (long i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0;
  for (long i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

}  // namespace testutil

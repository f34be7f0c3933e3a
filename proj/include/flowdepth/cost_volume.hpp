#pragma once

#include "flowdepth/geometry.hpp"

namespace flowdepth {

// Plane-sweep cost volume over equally spaced candidate depths, the
// cost-to-probability map, and the entropy / sparsity losses on the
// probability volume.

inline constexpr double kCostVolumeTau = 0.07;

struct CandidateDepths {
  std::vector<double> d;  // strictly increasing, equally spaced

  static CandidateDepths linspace(double d_min, double d_max, int n) {
    if (n < 2) throw std::invalid_argument("CandidateDepths: need n >= 2");
    if (!(d_min > 0 && d_min < d_max))
      throw std::invalid_argument("CandidateDepths: need 0 < d_min < d_max");
    CandidateDepths c;
    c.d.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i)
      c.d[static_cast<size_t>(i)] = d_min + (d_max - d_min) * i / (n - 1);
    return c;
  }

  int n() const { return static_cast<int>(d.size()); }

  void validate() const {
    if (n() < 2) throw std::invalid_argument("CandidateDepths: need n >= 2");
    const double step = d[1] - d[0];
    for (size_t i = 1; i < d.size(); ++i) {
      if (!(d[i] > d[i - 1])) throw std::invalid_argument("CandidateDepths: not increasing");
      if (std::fabs((d[i] - d[i - 1]) - step) > 1e-9)
        throw std::invalid_argument("CandidateDepths: spacing not equal");
    }
  }
};

struct CostVolume {
  ad::Var costs;        // [n,H,W], >= 0, differentiable w.r.t. the features
  CandidateDepths candidates;
  Tensor validity;      // [n,H,W] of 0/1: candidate warp lands in-bounds
};

struct ProbVolume {
  ad::Var probs;        // [n,H,W], rows sum to 1
  double tau = kCostVolumeTau;
  Mask all_invalid;     // [H,W]: pixels where no candidate was valid (uniform fallback)
};

// For each candidate depth d_i, backward-warp the lookup features into frame t
// using the constant-depth rigid flow, and take the per-pixel mean absolute
// feature difference. Pose and intrinsics are treated as constants here (no
// gradient through the warp geometry); gradients flow to both feature maps.
inline CostVolume build_cost_volume(const ad::Var& feat_t, const ad::Var& feat_lookup,
                                    const Pose& pose_t_to_lookup, const Intrinsics& K,
                                    const CandidateDepths& candidates) {
  candidates.validate();
  check_same_shape(feat_t->val, feat_lookup->val, "build_cost_volume");
  const int C = feat_t->val.dim(0), H = feat_t->val.dim(1), W = feat_t->val.dim(2);
  const int n = candidates.n();
  Tensor ones_over_c({C}, 1.0 / C);
  CostVolume cv;
  cv.candidates = candidates;
  cv.validity = Tensor({n, H, W});
  std::vector<ad::Var> layers;
  layers.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    DepthMap constant_depth(H, W, candidates.d[static_cast<size_t>(i)]);
    auto sf = static_flow(constant_depth, pose_t_to_lookup, K);
    auto sampled = ad::grid_sample(feat_lookup, ad::constant(sf.flow.uv));
    auto diff = ad::channel_combine(ad::vabs(ad::sub(sampled.image, feat_t)), ones_over_c);
    layers.push_back(diff);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        cv.validity.at(i, y, x) = (sf.valid.at(y, x) && sampled.valid.at(y, x)) ? 1.0 : 0.0;
  }
  cv.costs = ad::concat0(layers);
  return cv;
}

// probs = softmax over candidates of (-cost/tau), invalid entries excluded.
// Pixels with no valid candidate fall back to uniform and are flagged.
inline ProbVolume cost_to_prob(const CostVolume& cv, double tau = kCostVolumeTau) {
  if (!(tau > 0)) throw std::invalid_argument("cost_to_prob: tau must be > 0");
  const int n = cv.costs->val.dim(0), H = cv.costs->val.dim(1), W = cv.costs->val.dim(2);
  // large negative offset removes invalid entries from the softmax
  Tensor penalty({n, H, W});
  ProbVolume pv;
  pv.tau = tau;
  pv.all_invalid = Mask({H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      bool any = false;
      for (int i = 0; i < n; ++i) any = any || cv.validity.at(i, y, x) > 0;
      if (!any) {
        pv.all_invalid.at(y, x) = 1;
        continue;
      }
      for (int i = 0; i < n; ++i)
        if (!(cv.validity.at(i, y, x) > 0)) penalty.at(i, y, x) = -1e9;
    }
  auto logits = ad::add_const(ad::mul_scalar(cv.costs, -1.0 / tau), penalty);
  pv.probs = ad::softmax0(logits);
  if (pv.all_invalid.count() > 0) {
    // replace fully-invalid pixels with the uniform distribution (and block
    // gradients there)
    Tensor keep({n, H, W}, 1.0), fixed({n, H, W});
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        if (pv.all_invalid.at(y, x))
          for (int i = 0; i < n; ++i) {
            keep.at(i, y, x) = 0.0;
            fixed.at(i, y, x) = 1.0 / n;
          }
    pv.probs = ad::add_const(ad::mul_const(pv.probs, keep), fixed);
  }
  return pv;
}

// helper for tests / direct construction
inline ProbVolume prob_volume_from(const ad::Var& probs, double tau = kCostVolumeTau) {
  ProbVolume pv;
  pv.probs = probs;
  pv.tau = tau;
  pv.all_invalid = Mask({probs->val.dim(1), probs->val.dim(2)});
  return pv;
}

// En(x) = -sum_i P_i ln P_i, natural log, 0 ln 0 := 0; result [H,W]
inline ad::Var pixel_entropy(const ProbVolume& pv) {
  const int n = pv.probs->val.dim(0);
  const int H = pv.probs->val.dim(1), W = pv.probs->val.dim(2);
  Tensor neg_ones({n}, -1.0);
  return ad::reshape(ad::channel_combine(ad::xlogx(pv.probs), neg_ones), {H, W});
}

// (1/HW) * sum_x max(0, En_x - ln k)
inline ad::Var entropy_boundary_loss(const ProbVolume& pv, int k) {
  if (k < 1) throw std::invalid_argument("entropy_boundary_loss: k must be >= 1");
  auto en = pixel_entropy(pv);
  return ad::mean_all(ad::relu(ad::add_scalar(en, -std::log(static_cast<double>(k)))));
}

// per pixel 2*mean(P)*sum_i sqrt(1 + P_i/mean(P)) with mean(P) = 1/n held
// constant (no gradient through the normalizer), averaged over pixels
inline ad::Var sparsity_loss(const ProbVolume& pv) {
  const int n = pv.probs->val.dim(0);
  Tensor w({n}, 2.0 / n);
  auto per_pixel = ad::channel_combine(
      ad::vsqrt(ad::add_scalar(ad::mul_scalar(pv.probs, static_cast<double>(n)), 1.0)), w);
  return ad::mean_all(per_pixel);
}

// L_cv = L_entropy + L_sparsity
inline ad::Var cv_loss(const ProbVolume& pv, int k) {
  return ad::add(entropy_boundary_loss(pv, k), sparsity_loss(pv));
}

}  // namespace flowdepth

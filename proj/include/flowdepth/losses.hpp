#pragma once

#include "flowdepth/dcablur.hpp"
#include "flowdepth/dmfm.hpp"

namespace flowdepth {

// Training losses: photometric SSIM+L1, multi-frame depth loss L_d, flow
// prior loss L_oof, decouple-consistency loss L_dof, mask loss L_m, and the
// learnable-weight combination of all five terms.

inline constexpr double kSsimAlpha = 0.85;
inline constexpr double kDepthSmoothWeight = 1e-3;
inline constexpr double kFlowSmoothWeight = 1e-2;
inline constexpr double kMaskLabelThreshold = 1.0;  // px of |F_d|
inline constexpr double kMaskSparsityWeight = 0.01;

namespace loss_detail {

// 3x3 box mean per channel, reflected borders
inline ad::Var box3(const ad::Var& x) {
  const int C = x->val.dim(0);
  Tensor w({C, C, 3, 3});
  for (int c = 0; c < C; ++c)
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) w.at(c, c, i, j) = 1.0 / 9.0;
  return ad::conv2d(ad::pad_reflect(x, 1), ad::constant(w), ad::constant(Tensor({C})),
                    1, 0);
}

inline ad::Var channel_mean(const ad::Var& x) {
  const int C = x->val.dim(0);
  Tensor w({C});
  for (int c = 0; c < C; ++c) w[c] = 1.0 / C;
  return ad::channel_combine(x, w);
}

inline ad::Var clamp01(const ad::Var& x) {
  auto zero = ad::constant_scalar(0.0), one = ad::constant_scalar(1.0);
  return ad::maximum(ad::minimum(x, one), zero);
}

// masked mean of a [1,H,W] map; mask must have at least one set pixel
inline ad::Var masked_mean(const ad::Var& map, const Mask& mask) {
  const int H = map->val.dim(1), W = map->val.dim(2);
  Tensor sel({1, H, W});
  long n = 0;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      if (mask.at(y, x)) {
        sel.at(0, y, x) = 1.0;
        ++n;
      }
  return ad::mul_scalar(ad::sum_all(ad::mul_const(map, sel)),
                        1.0 / static_cast<double>(n));
}

// mean |first difference| of a [C,H,W] field in both directions
inline ad::Var first_order_smoothness(const ad::Var& f) {
  return ad::add(ad::mean_all(ad::vabs(ad::grad_x(f))),
                 ad::mean_all(ad::vabs(ad::grad_y(f))));
}

}  // namespace loss_detail

// per-pixel alpha*(1-SSIM)/2 + (1-alpha)*L1, SSIM over 3x3 windows; [1,H,W]
inline ad::Var photometric(const ad::Var& pred, const ad::Var& target,
                           double alpha = kSsimAlpha) {
  check_same_shape(pred->val, target->val, "photometric");
  using namespace loss_detail;
  const double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
  auto mu_x = box3(pred), mu_y = box3(target);
  auto sig_x = ad::sub(box3(ad::square(pred)), ad::square(mu_x));
  auto sig_y = ad::sub(box3(ad::square(target)), ad::square(mu_y));
  auto sig_xy = ad::sub(box3(ad::mul(pred, target)), ad::mul(mu_x, mu_y));
  auto num = ad::mul(ad::add_scalar(ad::mul_scalar(ad::mul(mu_x, mu_y), 2.0), C1),
                     ad::add_scalar(ad::mul_scalar(sig_xy, 2.0), C2));
  auto den = ad::mul(ad::add_scalar(ad::add(ad::square(mu_x), ad::square(mu_y)), C1),
                     ad::add_scalar(ad::add(sig_x, sig_y), C2));
  auto dssim = clamp01(ad::mul_scalar(
      ad::sub(ad::constant_scalar(1.0), ad::div(num, den)), 0.5));
  auto l1 = ad::vabs(ad::sub(pred, target));
  return ad::add(ad::mul_scalar(channel_mean(dssim), alpha),
                 ad::mul_scalar(channel_mean(l1), 1.0 - alpha));
}

inline ad::Var photometric(const ImageFrame& pred, const ImageFrame& target,
                           double alpha = kSsimAlpha) {
  return photometric(ad::constant(pred), ad::constant(target), alpha);
}

// edge-aware smoothness of mean-normalized depth (gradients weighted down
// across image edges)
inline ad::Var edge_aware_smoothness(const ad::Var& depth_1hw, const ad::Var& img) {
  using namespace loss_detail;
  auto d = ad::div(depth_1hw, ad::add_scalar(ad::mean_all(depth_1hw), 1e-7));
  auto wx = ad::vexp(ad::neg(channel_mean(ad::vabs(ad::grad_x(img)))));
  auto wy = ad::vexp(ad::neg(channel_mean(ad::vabs(ad::grad_y(img)))));
  return ad::add(ad::mean_all(ad::mul(ad::vabs(ad::grad_x(d)), wx)),
                 ad::mean_all(ad::mul(ad::vabs(ad::grad_y(d)), wy)));
}

// ---- L_d: multi-frame depth loss ----
// Target is I_t. Each source (the DMFM lookup frame, which lives in the t-1
// camera, and I_next) is backward-warped into the t view by reprojection
// with the predicted depth, both frames are DCABlurred with the target's
// frequency map and cue mask, and each pixel takes the minimum photometric
// error over the sources (per-pixel min handles occlusion like Monodepth2).
struct DepthLossInputs {
  ad::Var I_t;
  ad::Var lookup;                    // source in the t-1 camera
  ad::Var I_next;                    // source at t+1
  ad::Var depth_t;                   // [H,W], positive
  ad::Var rt_t_to_prev, rt_t_to_next;  // [12] row-major R then T
  Intrinsics K;
  FrequencyMap fmap;                 // of I_t
  DepthCueMask cue;
};

inline ad::Var depth_loss(const DepthLossInputs& in,
                          double smooth_weight = kDepthSmoothWeight) {
  auto target = apply_dcablur(in.I_t, in.fmap, in.cue);
  ad::Var per_pixel;
  for (const auto& [src, rt] : {std::pair{in.lookup, in.rt_t_to_prev},
                                std::pair{in.I_next, in.rt_t_to_next}}) {
    auto flow = rigid_flow(in.depth_t, rt, in.K).flow;
    auto warped = apply_dcablur(ad::grid_sample(src, flow).image, in.fmap, in.cue);
    auto pe = photometric(warped, target);
    per_pixel = per_pixel ? ad::minimum(per_pixel, pe) : pe;
  }
  const int H = in.depth_t->val.dim(0), W = in.depth_t->val.dim(1);
  auto smooth = edge_aware_smoothness(ad::reshape(in.depth_t, {1, H, W}), in.I_t);
  return ad::add(ad::mean_all(per_pixel), ad::mul_scalar(smooth, smooth_weight));
}

// ---- L_oof: origin optical flow loss ----
// the full-flow prior must reconstruct I_prev from I_t, with first-order
// flow smoothness
inline ad::Var oof_loss(const ad::Var& F_all, const ad::Var& I_prev,
                        const ad::Var& I_t,
                        double smooth_weight = kFlowSmoothWeight) {
  auto warped = ad::grid_sample(I_t, F_all).image;
  auto pe = ad::mean_all(photometric(warped, I_prev));
  return ad::add(pe, ad::mul_scalar(loss_detail::first_order_smoothness(F_all),
                                    smooth_weight));
}

// ---- L_dof: decouple-consistency loss ----
// the two decoupled frames show the scene in the same state, so they must
// agree photometrically wherever both branches produced a value
struct DofLoss {
  ad::Var value;
  bool no_valid_pixels = false;  // loss is 0 because the domains were disjoint
};

inline DofLoss dof_loss(const DecoupleResult& r) {
  Mask both(r.holes_prev.shape);
  for (long i = 0; i < both.numel(); ++i)
    both[i] = (!r.holes_prev[i] && !r.holes_t[i]) ? 1 : 0;
  if (both.count() == 0) return {ad::constant_scalar(0.0), true};
  auto pe = photometric(r.I_dec_prev, r.I_dec_t);
  return {loss_detail::masked_mean(pe, both), false};
}

// ---- L_m: mask loss ----
// BCE against the pseudo-label [|F_d| > threshold px] plus a sparsity term
inline ad::Var mask_loss(const ad::Var& soft_mask, const FlowField& F_d,
                         double threshold = kMaskLabelThreshold,
                         double sparsity_weight = kMaskSparsityWeight) {
  const int H = F_d.height(), W = F_d.width();
  if (soft_mask->val.dim(1) != H || soft_mask->val.dim(2) != W)
    throw std::invalid_argument("mask_loss: mask/flow shape mismatch");
  Tensor label({1, H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      label.at(0, y, x) = std::hypot(F_d.u(y, x), F_d.v(y, x)) > threshold ? 1.0 : 0.0;
  const double eps = 1e-6;  // clamp the mask away from {0,1} for the logs
  auto m = ad::add_scalar(ad::mul_scalar(soft_mask, 1.0 - 2.0 * eps), eps);
  auto bce = ad::neg(ad::add(
      ad::mul_const(ad::vlog(m), label),
      ad::mul(ad::sub(ad::constant_scalar(1.0), ad::constant(label)),
              ad::vlog(ad::sub(ad::constant_scalar(1.0), m)))));
  return ad::add(ad::mean_all(bce),
                 ad::mul_scalar(ad::mean_all(soft_mask), sparsity_weight));
}

// ---- Eq. 10: learnable loss combination ----

enum class LossTerm { cv = 0, d = 1, oof = 2, dof = 3, m = 4 };
inline const char* loss_term_name(int i) {
  static const char* names[5] = {"L_cv", "L_d", "L_oof", "L_dof", "L_m"};
  return names[i];
}

// positive weights via softplus of free parameters; initialized to the
// configured lambdas exactly
struct LossWeights {
  ad::Var raw;  // [5] free parameters

  explicit LossWeights(std::array<double, 5> init = {0.2, 1.0, 1.0, 10.0, 1.0}) {
    Tensor t({5});
    for (int i = 0; i < 5; ++i) {
      if (!(init[i] > 0))
        throw std::invalid_argument("LossWeights: initial weights must be positive");
      t[i] = std::log(std::expm1(init[i]));  // inverse softplus
    }
    raw = ad::leaf(std::move(t));
  }

  ad::Var lambdas() const { return ad::softplus(raw); }
  std::array<double, 5> values() const {
    std::array<double, 5> out;
    for (int i = 0; i < 5; ++i) out[i] = std::log1p(std::exp(raw->val[i]));
    return out;
  }
};

struct LossBreakdown {
  std::array<double, 5> terms;    // raw term values, order of LossTerm
  std::array<double, 5> lambdas;  // weights at evaluation time
  double total = 0;
  ad::Var total_var;              // differentiable; backprop reaches the weights
};

inline LossBreakdown combine(const std::array<ad::Var, 5>& terms,
                             const LossWeights& weights) {
  LossBreakdown out;
  auto lam = weights.lambdas();
  ad::Var total;
  for (int i = 0; i < 5; ++i) {
    if (terms[i]->val.numel() != 1)
      throw std::invalid_argument(std::string("combine: ") + loss_term_name(i) +
                                  " is not a scalar");
    if (!std::isfinite(terms[i]->val[0]))
      throw std::runtime_error(std::string("combine: non-finite loss term ") +
                               loss_term_name(i));
    out.terms[i] = terms[i]->val[0];
    auto w = ad::index1d(lam, i);
    out.lambdas[i] = w->val[0];
    auto contrib = ad::mul(w, terms[i]);
    total = total ? ad::add(total, contrib) : contrib;
  }
  out.total_var = total;
  out.total = total->val[0];
  return out;
}

}  // namespace flowdepth

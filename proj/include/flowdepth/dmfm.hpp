#pragma once

#include <functional>

#include "flowdepth/networks.hpp"
#include "flowdepth/synth.hpp"

namespace flowdepth {

// Dynamic Motion Flow Module: split the full flow into rigid and dynamic
// parts, forward-warp the dynamic content of I_{t-1} to its frame-t position,
// rebuild the disoccluded background from I_t, and composite the lookup frame.

struct DecoupleResult {
  ad::Var F_s, F_d;          // [2,H,W], t-1 -> t; F_d = F_all - F_s exactly
  Mask rigid_valid;          // pixels where the rigid reprojection was valid
  ad::Var soft_mask;         // [1,H,W] in (0,1)
  Mask M_d;                  // soft_mask > threshold
  ad::Var I_dec_prev;        // dynamic content of I_prev moved to frame-t pose
  ad::Var I_dec_t;           // I_t background splatted into the t-1 view
  ad::Var lookup;            // hole-filled composite (the cost-volume partner)
  Mask holes_prev, holes_t;
  Mask lookup_valid;
};

// plain (non-differentiable) decomposition, Eq. 3
inline std::pair<FlowField, FlowField> decouple_flow(const FlowField& F_all,
                                                     const DepthMap& depth_prev,
                                                     const Pose& pose_prev_to_t,
                                                     const Intrinsics& K) {
  auto sf = static_flow(depth_prev, pose_prev_to_t, K);
  FlowField F_d(F_all.height(), F_all.width());
  for (long i = 0; i < F_all.uv.numel(); ++i) F_d.uv[i] = F_all.uv[i] - sf.flow.uv[i];
  return {sf.flow, F_d};
}

using MaskFn = std::function<ad::Var(const ad::Var& F_d, const ad::Var& I_prev)>;

// Core DMFM composition. The soft mask is produced by `mask_fn`; pixels with
// M_d = 0 contribute identity (zero displacement) to the splat. With
// straight_through the splat uses the hard mask values but routes gradients
// through the soft mask.
inline DecoupleResult build_decoupled_frames(
    const ad::Var& I_prev, const ad::Var& I_t, const ad::Var& F_all,
    const ad::Var& depth_prev, const ad::Var& depth_t, const ad::Var& rt_prev_to_t,
    const ad::Var& rt_t_to_prev, const Intrinsics& K, const MaskFn& mask_fn,
    double threshold = 0.6, bool straight_through = true) {
  const int H = I_prev->val.dim(1), W = I_prev->val.dim(2);
  DecoupleResult r;

  auto rigid = rigid_flow(depth_prev, rt_prev_to_t, K);
  r.F_s = rigid.flow;
  r.rigid_valid = rigid.valid;
  r.F_d = ad::sub(F_all, r.F_s);

  r.soft_mask = mask_fn(r.F_d, I_prev);
  r.M_d = Mask({H, W});
  Tensor hard01({1, H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const bool on = r.soft_mask->val.at(0, y, x) > threshold;
      r.M_d.at(y, x) = on ? 1 : 0;
      hard01.at(0, y, x) = on ? 1.0 : 0.0;
    }
  ad::Var m = straight_through
                  ? ad::add_const(ad::sub(r.soft_mask, ad::detach(r.soft_mask)), hard01)
                  : ad::constant(hard01);
  ad::Var masked_flow = ad::mul(r.F_d, ad::concat0({m, m}));

  DepthMap dp(H, W);
  dp.values = depth_prev->val;
  auto sp_prev = ad::softmax_splat(I_prev, masked_flow,
                                   ad::constant(splat_importance(dp)), kCoverageEps);
  r.I_dec_prev = sp_prev.image;
  r.holes_prev = sp_prev.holes;

  auto rigid_rev = rigid_flow(depth_t, rt_t_to_prev, K);
  DepthMap dt(H, W);
  dt.values = depth_t->val;
  auto sp_t = ad::softmax_splat(I_t, rigid_rev.flow, ad::constant(splat_importance(dt)),
                                kCoverageEps);
  r.I_dec_t = sp_t.image;
  r.holes_t = sp_t.holes;

  r.lookup = fill_holes_ad(sp_prev, sp_t);
  r.lookup_valid = Mask({H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      r.lookup_valid.at(y, x) = (!sp_prev.holes.at(y, x) || !sp_t.holes.at(y, x)) ? 1 : 0;
  return r;
}

inline DecoupleResult build_decoupled_frames(
    const ad::Var& I_prev, const ad::Var& I_t, const ad::Var& F_all,
    const ad::Var& depth_prev, const ad::Var& depth_t, const ad::Var& rt_prev_to_t,
    const ad::Var& rt_t_to_prev, const Intrinsics& K, const MaskUNet& mask_net,
    bool straight_through = true) {
  return build_decoupled_frames(
      I_prev, I_t, F_all, depth_prev, depth_t, rt_prev_to_t, rt_t_to_prev, K,
      [&](const ad::Var& fd, const ad::Var& ip) { return mask_net.forward(fd, ip).soft; },
      mask_net.cfg.sigmoid_threshold, straight_through);
}

// DMFM with every prior replaced by ground truth (oracle path for tests,
// evaluation baselines, and visualization)
inline DecoupleResult dmfm_from_gt(const SceneSample& s) {
  const int H = s.prev.dim(1), W = s.prev.dim(2);
  Tensor soft({1, H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) soft.at(0, y, x) = s.dyn_mask_prev.at(y, x) ? 1.0 : 0.0;
  return build_decoupled_frames(
      ad::constant(s.prev), ad::constant(s.curr), ad::constant(s.flow_all_p2c.uv),
      ad::constant(s.depth_prev.values), ad::constant(s.depth_curr.values),
      rt_constant(s.pose_prev_to_curr), rt_constant(invert(s.pose_prev_to_curr)),
      s.K, [&](const ad::Var&, const ad::Var&) { return ad::constant(soft); },
      0.6, false);
}

// per-region error report against the renderer's ground truth
struct StaticizationReport {
  bool has_dynamic = false;
  long dynamic_pixels = 0;
  double mean_fd_outside = 0;        // px, mean |F_d| outside the GT mask
  double epe_inside = 0;             // px, endpoint error vs GT dynamic flow
  double rmse_lookup_vs_staticized = 0;
  double rmse_lookup_interior = 0;   // same, minus the 1-px silhouette AA ring
  double rmse_dynamic_region = 0;    // same, restricted to the moved-object region
  double rmse_dec_branches = 0;      // I_dec_prev vs I_dec_t, mutually valid pixels
  double rmse_raw_frames = 0;        // I_prev vs I_t on the same pixels
};

inline StaticizationReport staticization_check(const SceneSample& s,
                                               const DecoupleResult& r) {
  const int H = s.prev.dim(1), W = s.prev.dim(2);
  StaticizationReport rep;
  rep.has_dynamic = s.dyn_mask_prev.count() > 0;
  rep.dynamic_pixels = s.dyn_mask_prev.count();

  double fd_sum = 0, epe_sum = 0;
  long n_out = 0;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const double fdu = r.F_d->val.at(0, y, x), fdv = r.F_d->val.at(1, y, x);
      if (s.dyn_mask_prev.at(y, x)) {
        const double du = fdu - s.flow_dyn_p2c.u(y, x);
        const double dv = fdv - s.flow_dyn_p2c.v(y, x);
        epe_sum += std::hypot(du, dv);
      } else if (r.rigid_valid.at(y, x)) {
        fd_sum += std::hypot(fdu, fdv);
        ++n_out;
      }
    }
  rep.mean_fd_outside = n_out ? fd_sum / n_out : 0;
  rep.epe_inside = rep.dynamic_pixels ? epe_sum / rep.dynamic_pixels : 0;

  rep.rmse_lookup_vs_staticized = rmse(r.lookup->val, s.staticized, &r.lookup_valid);

  // moved-object region: GT footprint in the previous frame plus where it
  // lands after the dynamic displacement
  Mask region({H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      if (s.dyn_mask_prev.at(y, x)) {
        region.at(y, x) = 1;
        const int tx = x + static_cast<int>(std::lround(s.flow_dyn_p2c.u(y, x)));
        const int ty = y + static_cast<int>(std::lround(s.flow_dyn_p2c.v(y, x)));
        if (tx >= 0 && tx < W && ty >= 0 && ty < H) region.at(ty, tx) = 1;
      }
  // exclude a 1-px ring around the object silhouette in either frame:
  // anti-aliased edge pixels mix the object with *different* background
  // patches at the two positions, which no per-pixel relocation can
  // reconcile; the region metric measures the relocation itself
  auto near_edge = [&](const Mask& m, int y, int x) {
    const bool v = m.at(y, x) != 0;
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const int yy = y + dy, xx = x + dx;
        // off-image counts as background: a silhouette clipped by the frame
        // border still leaves anti-aliased pixels along that border
        const bool nb =
            yy >= 0 && yy < H && xx >= 0 && xx < W && m.at(yy, xx) != 0;
        if (nb != v) return true;
      }
    return false;
  };
  Mask eval({H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      eval.at(y, x) = (region.at(y, x) && r.lookup_valid.at(y, x) &&
                       !near_edge(s.dyn_mask_prev, y, x) &&
                       !near_edge(s.dyn_mask_curr, y, x))
                          ? 1
                          : 0;
  rep.rmse_dynamic_region = eval.count() ? rmse(r.lookup->val, s.staticized, &eval) : 0;

  Mask interior({H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      interior.at(y, x) = (r.lookup_valid.at(y, x) && !near_edge(s.dyn_mask_prev, y, x) &&
                           !near_edge(s.dyn_mask_curr, y, x))
                              ? 1
                              : 0;
  rep.rmse_lookup_interior =
      interior.count() ? rmse(r.lookup->val, s.staticized, &interior) : 0;

  Mask both({H, W});
  for (long i = 0; i < both.numel(); ++i)
    both[i] = (!r.holes_prev[i] && !r.holes_t[i]) ? 1 : 0;
  rep.rmse_dec_branches = rmse(r.I_dec_prev->val, r.I_dec_t->val, &both);
  rep.rmse_raw_frames = rmse(s.prev, s.curr, &both);
  return rep;
}

}  // namespace flowdepth

#pragma once

#include "flowdepth/core/image.hpp"
#include "flowdepth/geometry.hpp"

namespace flowdepth {

inline constexpr double kCoverageEps = 1e-3;   // splat weight below this is a hole
inline constexpr double kSplatBeta = 100.0;     // importance scale for depth-based splatting

struct WarpResult {
  ImageFrame image;
  Tensor coverage;  // [H,W] accumulated raw splat weight
  Mask holes;       // coverage < kCoverageEps
};

// Backward bilinear warp: dst(x) = src(x + flow(x)). Returns the warped image
// and a validity mask (sample fully inside bounds).
inline std::pair<ImageFrame, Mask> backward_warp(const ImageFrame& src,
                                                 const FlowField& flow_dst_to_src) {
  auto r = ad::grid_sample(ad::constant(src), ad::constant(flow_dst_to_src.uv));
  return {r.image->val, r.valid};
}

// Forward softmax splat of src by flow_src_to_dst; importance [H,W] biases
// occlusion contests (higher wins).
inline WarpResult softmax_splat(const ImageFrame& src, const FlowField& flow_src_to_dst,
                                const Tensor& importance, double eps_cov = kCoverageEps) {
  auto r = ad::softmax_splat(ad::constant(src), ad::constant(flow_src_to_dst.uv),
                             ad::constant(importance), eps_cov);
  return {r.image->val, r.coverage, r.holes};
}

// importance field from a prior depth map: nearer pixels win. Depth is
// normalised by its max so the exponentials stay in range.
inline Tensor splat_importance(const DepthMap& depth, double beta = kSplatBeta) {
  Tensor imp(depth.values.shape);
  const double dmax = std::max(1e-9, depth.values.max());
  for (long i = 0; i < imp.numel(); ++i) imp[i] = -beta * depth.values[i] / dmax;
  return imp;
}

// Composite: primary where it has coverage, filler where only the filler
// does, and a per-channel mean background constant where both are holes.
inline std::pair<ImageFrame, Mask> fill_holes(const WarpResult& primary,
                                              const WarpResult& filler) {
  check_same_shape(primary.image, filler.image, "fill_holes");
  const int C = primary.image.dim(0), H = primary.image.dim(1), W = primary.image.dim(2);
  std::vector<double> bg(C, 0.0);
  long nvalid = 0;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      if (!filler.holes.at(y, x)) {
        for (int c = 0; c < C; ++c) bg[c] += filler.image.at(c, y, x);
        ++nvalid;
      }
  for (int c = 0; c < C; ++c) bg[c] = nvalid ? bg[c] / nvalid : 0.0;

  ImageFrame out(primary.image.shape);
  Mask valid({H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      if (!primary.holes.at(y, x)) {
        for (int c = 0; c < C; ++c) out.at(c, y, x) = primary.image.at(c, y, x);
        valid.at(y, x) = 1;
      } else if (!filler.holes.at(y, x)) {
        for (int c = 0; c < C; ++c) out.at(c, y, x) = filler.image.at(c, y, x);
        valid.at(y, x) = 1;
      } else {
        for (int c = 0; c < C; ++c) out.at(c, y, x) = bg[c];
      }
    }
  return {out, valid};
}

// Differentiable composite used during training; masks and the background
// constant are treated as constants of the composition.
inline ad::Var fill_holes_ad(const ad::SplatResult& primary, const ad::SplatResult& filler) {
  const int C = primary.image->val.dim(0);
  const int H = primary.image->val.dim(1), W = primary.image->val.dim(2);
  Tensor m1({C, H, W}), m2({C, H, W}), bgt({C, H, W});
  std::vector<double> bg(C, 0.0);
  long nvalid = 0;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      if (!filler.holes.at(y, x)) {
        for (int c = 0; c < C; ++c) bg[c] += filler.image->val.at(c, y, x);
        ++nvalid;
      }
  for (int c = 0; c < C; ++c) bg[c] = nvalid ? bg[c] / nvalid : 0.0;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < C; ++c) {
        m1.at(c, y, x) = primary.holes.at(y, x) ? 0.0 : 1.0;
        m2.at(c, y, x) = filler.holes.at(y, x) ? 0.0 : 1.0;
        bgt.at(c, y, x) = bg[c];
      }
  using namespace ad;
  Var rest = add(mul_const(filler.image, m2),
                 mul(constant(bgt), sub(constant_scalar(1.0), constant(m2))));
  return add(mul_const(primary.image, m1),
             mul(rest, sub(constant_scalar(1.0), constant(m1))));
}

}  // namespace flowdepth

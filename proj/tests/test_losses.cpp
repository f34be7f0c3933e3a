#include <catch2/catch_amalgamated.hpp>

#include "flowdepth/losses.hpp"
#include "helpers.hpp"

using namespace flowdepth;
using testutil::fd_check;
using testutil::max_abs_diff;
using testutil::random_tensor;

namespace {

SceneSample make_sample(bool dynamic, uint64_t seed, bool integer_motion = false,
                        int W = 64, int H = 48) {
  SceneConfig cfg;
  cfg.width = W;
  cfg.height = H;
  cfg.integer_motion = integer_motion;
  SceneSpec spec = make_scene_spec(cfg, TextureProfile::Mixed, dynamic, seed);
  return render(spec, seed);
}

// sample with the camera step scaled up so reprojection mismatch dominates
// the bilinear-resampling blur that SSIM also penalizes
SceneSample make_fast_camera_sample(bool dynamic, uint64_t seed) {
  SceneConfig cfg;
  cfg.width = 64;
  cfg.height = 48;
  SceneSpec spec = make_scene_spec(cfg, TextureProfile::Mixed, dynamic, seed);
  for (auto& t : spec.camera_step.T) t *= 5;
  return render(spec, seed);
}

// cue mask of ones: every pixel protected, DCABlur is the identity
DepthCueMask protect_all(int H, int W) {
  DepthCueMask cue;
  cue.values = Tensor({H, W}, 1.0);
  return cue;
}

DepthLossInputs gt_depth_loss_inputs(const SceneSample& s, const ad::Var& lookup) {
  const int H = s.curr.dim(1), W = s.curr.dim(2);
  DepthLossInputs in;
  in.I_t = ad::constant(s.curr);
  in.lookup = lookup;
  in.I_next = ad::constant(s.next);
  in.depth_t = ad::constant(s.depth_curr.values);
  in.rt_t_to_prev = rt_constant(invert(s.pose_prev_to_curr));
  in.rt_t_to_next = rt_constant(s.pose_curr_to_next);
  in.K = s.K;
  in.fmap = frequency_map(s.curr);
  in.cue = protect_all(H, W);
  return in;
}

}  // namespace

TEST_CASE("photometric: closed forms and bounds") {
  SECTION("identical images give zero everywhere") {
    Rng rng(1);
    auto img = ad::constant(random_tensor({3, 10, 12}, rng));
    CHECK(photometric(img, img)->val.max() < 1e-12);
  }

  SECTION("constant offset on a flat image") {
    const double a = 0.4, c = 0.2, alpha = 0.85;
    auto pred = ad::constant(Tensor({3, 8, 9}, a + c));
    auto target = ad::constant(Tensor({3, 8, 9}, a));
    // flat images: all variances vanish, SSIM reduces to the luminance term
    const double C1 = 1e-4;
    const double ssim = (2 * a * (a + c) + C1) / (a * a + (a + c) * (a + c) + C1);
    const double want = alpha * (1 - ssim) / 2 + (1 - alpha) * c;
    auto pe = photometric(pred, target);
    CHECK(pe->val.min() == Catch::Approx(want).margin(1e-9));
    CHECK(pe->val.max() == Catch::Approx(want).margin(1e-9));
  }

  SECTION("bounded in [0,1] for inputs in [0,1]") {
    Rng rng(2);
    auto pe = photometric(ad::constant(random_tensor({3, 12, 14}, rng)),
                          ad::constant(random_tensor({3, 12, 14}, rng)));
    CHECK(pe->val.min() >= 0.0);
    CHECK(pe->val.max() <= 1.0);
  }

  SECTION("gradient matches finite differences") {
    Rng rng(3);
    Tensor p0 = random_tensor({3, 6, 7}, rng, 0.1, 0.9);
    auto pred = ad::leaf(p0);
    auto target = ad::constant(random_tensor({3, 6, 7}, rng, 0.1, 0.9));
    auto loss = ad::mean_all(photometric(pred, target));
    ad::backward(loss);
    Tensor analytic = pred->grad;
    double rel = fd_check(
        pred->val,
        [&] { return ad::mean_all(photometric(pred, target))->val[0]; }, analytic);
    CHECK(rel < 1e-3);
  }
}

TEST_CASE("depth_loss: GT depth beats a wrong depth on a static scene") {
  SceneSample s = make_fast_camera_sample(false, 70);
  auto r = dmfm_from_gt(s);
  auto in = gt_depth_loss_inputs(s, r.lookup);
  const double at_gt = depth_loss(in)->val[0];

  Tensor wrong = s.depth_curr.values;
  for (long i = 0; i < wrong.numel(); ++i) wrong[i] *= 2.0;
  in.depth_t = ad::constant(wrong);
  const double at_2x = depth_loss(in)->val[0];
  INFO("loss at GT " << at_gt << " at 2x " << at_2x);
  CHECK(at_gt < at_2x);
}

TEST_CASE("depth_loss: per-pixel min ignores the worse source") {
  // identity poses and flat depth: warping is exact, so with one source equal
  // to the target the photometric part is zero no matter the other source
  const int H = 10, W = 12;
  Rng rng(4);
  Tensor img = random_tensor({3, H, W}, rng);
  DepthLossInputs in;
  in.I_t = ad::constant(img);
  in.lookup = in.I_t;
  in.I_next = ad::constant(random_tensor({3, H, W}, rng));
  in.depth_t = ad::constant(Tensor({H, W}, 5.0));
  in.rt_t_to_prev = rt_constant(Pose{});
  in.rt_t_to_next = rt_constant(Pose{});
  in.K = SceneSpec::default_intrinsics(W, H);
  in.fmap = frequency_map(img);
  in.cue = protect_all(H, W);

  auto total = depth_loss(in)->val[0];
  auto smooth =
      edge_aware_smoothness(ad::reshape(in.depth_t, {1, H, W}), in.I_t)->val[0];
  CHECK(total == Catch::Approx(kDepthSmoothWeight * smooth).margin(1e-12));
}

TEST_CASE("depth_loss: gradient w.r.t. depth matches finite differences") {
  SceneSample s = make_sample(false, 71, false, 8, 8);
  auto r = dmfm_from_gt(s);
  auto in = gt_depth_loss_inputs(s, r.lookup);
  auto depth = ad::leaf(s.depth_curr.values);
  in.depth_t = depth;
  auto loss = depth_loss(in);
  ad::backward(loss);
  Tensor analytic = depth->grad;
  double rel = fd_check(
      depth->val, [&] { return depth_loss(in)->val[0]; }, analytic, 1e-5);
  CHECK(rel < 1e-3);
}

TEST_CASE("oof_loss: closed forms and GT-flow reconstruction") {
  SECTION("zero flow on identical frames is zero") {
    Rng rng(5);
    auto img = ad::constant(random_tensor({3, 10, 12}, rng));
    auto flow = ad::constant(Tensor({2, 10, 12}));
    CHECK(oof_loss(flow, img, img)->val[0] < 1e-12);
  }

  SECTION("constant flow has zero smoothness term") {
    Rng rng(6);
    auto a = ad::constant(random_tensor({3, 10, 12}, rng));
    auto b = ad::constant(random_tensor({3, 10, 12}, rng));
    auto flow = ad::constant(Tensor({2, 10, 12}, 1.5));
    CHECK(oof_loss(flow, a, b)->val[0] ==
          Catch::Approx(oof_loss(flow, a, b, 0.0)->val[0]).margin(1e-15));
  }

  SECTION("GT flow reconstructs I_prev away from occlusions") {
    SceneSample s = make_fast_camera_sample(true, 72);
    auto warped =
        ad::grid_sample(ad::constant(s.curr), ad::constant(s.flow_all_p2c.uv));
    double sum = 0;
    long n = 0;
    const int H = s.prev.dim(1), W = s.prev.dim(2);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        if (!s.occ_p2c.at(y, x) && warped.valid.at(y, x)) {
          for (int c = 0; c < 3; ++c)
            sum += std::fabs(warped.image->val.at(c, y, x) - s.prev.at(c, y, x));
          n += 3;
        }
    REQUIRE(n > 0);
    CHECK(sum / n < 2.0 / 255.0);  // intensity reconstruction error
    // and the GT flow scores better than no flow at all
    CHECK(oof_loss(ad::constant(s.flow_all_p2c.uv), ad::constant(s.prev),
                   ad::constant(s.curr))->val[0] <
          oof_loss(ad::constant(Tensor({2, H, W})), ad::constant(s.prev),
                   ad::constant(s.curr))->val[0]);
    CHECK(oof_loss(ad::constant(s.flow_all_p2c.uv), ad::constant(s.prev),
                   ad::constant(s.curr))->val[0] >= 0.0);
  }
}

TEST_CASE("dof_loss: agreement of the decoupled branches") {
  SECTION("static integer-motion scene with GT priors is zero") {
    // static camera + static scene: both branches are the very same frame
    SceneSample s = make_sample(false, 73, true);
    auto r = dmfm_from_gt(s);
    auto l = dof_loss(r);
    CHECK_FALSE(l.no_valid_pixels);
    CHECK(l.value->val[0] < 1e-3);
  }

  SECTION("moving camera, static scene: branches agree far better than raw frames") {
    SceneSample s = make_fast_camera_sample(false, 73);
    auto r = dmfm_from_gt(s);
    auto l = dof_loss(r);
    CHECK_FALSE(l.no_valid_pixels);
    // residual is bilinear-resampling blur only; the raw frames differ by the
    // actual camera motion
    const double raw =
        ad::mean_all(photometric(ad::constant(s.prev), ad::constant(s.curr)))->val[0];
    INFO("dof " << l.value->val[0] << " raw " << raw);
    CHECK(l.value->val[0] < 0.5 * raw);
  }

  SECTION("identical branches give exactly zero; disjoint domains flag") {
    SceneSample s = make_sample(true, 74);
    auto r = dmfm_from_gt(s);
    DecoupleResult same = r;
    same.I_dec_t = same.I_dec_prev;
    same.holes_t = same.holes_prev;
    CHECK(dof_loss(same).value->val[0] < 1e-12);

    DecoupleResult disjoint = r;
    for (long i = 0; i < disjoint.holes_prev.numel(); ++i) disjoint.holes_prev[i] = 1;
    auto l = dof_loss(disjoint);
    CHECK(l.no_valid_pixels);
    CHECK(l.value->val[0] == 0.0);
  }

  SECTION("descent on dof_loss pulls the branches together") {
    SceneSample s = make_sample(true, 75, false, 48, 36);
    const int H = 36, W = 48;
    // trainable full-flow prior, started from the rigid flow only (the branch
    // mismatch the loss is meant to remove)
    auto sf = static_flow(s.depth_prev, s.pose_prev_to_curr, s.K);
    ParamSet ps;
    auto F_all = ps.make("flow", sf.flow.uv);
    Tensor soft({1, H, W});
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        soft.at(0, y, x) = s.dyn_mask_prev.at(y, x) ? 1.0 : 0.0;
    auto run = [&] {
      return build_decoupled_frames(
          ad::constant(s.prev), ad::constant(s.curr), F_all,
          ad::constant(s.depth_prev.values), ad::constant(s.depth_curr.values),
          rt_constant(s.pose_prev_to_curr), rt_constant(invert(s.pose_prev_to_curr)),
          s.K, [&](const ad::Var&, const ad::Var&) { return ad::constant(soft); },
          0.6, false);
    };
    auto branch_rmse = [](const DecoupleResult& r) {
      double acc = 0;
      long n = 0;
      for (long i = 0; i < r.holes_prev.numel(); ++i)
        if (!r.holes_prev[i] && !r.holes_t[i]) {
          for (int c = 0; c < 3; ++c) {
            const long j = c * r.holes_prev.numel() + i;
            const double d = r.I_dec_prev->val[j] - r.I_dec_t->val[j];
            acc += d * d;
          }
          n += 3;
        }
      return std::sqrt(acc / n);
    };
    const double before = branch_rmse(run());
    Adam opt(0.05);
    for (int step = 0; step < 200; ++step) {
      Adam::zero_grad(ps.params);
      auto l = dof_loss(run());
      REQUIRE_FALSE(l.no_valid_pixels);
      ad::backward(l.value);
      opt.step(ps.params);
    }
    const double after = branch_rmse(run());
    INFO("branch RMSE " << before << " -> " << after);
    CHECK(after < before);
  }
}

TEST_CASE("mask_loss: pseudo-label endpoints") {
  SceneSample s = make_sample(true, 76);
  const int H = s.prev.dim(1), W = s.prev.dim(2);
  const FlowField& fd = s.flow_dyn_p2c;

  SECTION("mask equal to the pseudo-label: only the sparsity term remains") {
    Tensor label({1, H, W});
    long dyn = 0;
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        if (std::hypot(fd.u(y, x), fd.v(y, x)) > kMaskLabelThreshold) {
          label.at(0, y, x) = 1.0;
          ++dyn;
        }
    REQUIRE(dyn > 0);
    const double want = kMaskSparsityWeight * dyn / double(H * W);
    CHECK(mask_loss(ad::constant(label), fd)->val[0] ==
          Catch::Approx(want).margin(1e-4));
  }

  SECTION("zero dynamic flow: gradient pushes every mask value down") {
    FlowField zero(H, W);
    auto m = ad::leaf(Tensor({1, H, W}, 0.3));
    auto l = mask_loss(m, zero);
    ad::backward(l);
    CHECK(m->grad.min() > 0.0);  // descent direction is toward the zero mask
  }
}

TEST_CASE("mask_loss: trained mask recovers the moving object") {
  SceneSample s = make_sample(true, 77, true);  // integer motion, static camera
  const int H = s.prev.dim(1), W = s.prev.dim(2);
  const FlowField& fd = s.flow_dyn_p2c;
  REQUIRE(s.dyn_mask_prev.count() > 0);

  ParamSet ps;
  Rng rng(7);
  Conv c0(ps, "m.c0", 2, 8, 3, rng);
  Conv c1(ps, "m.c1", 8, 1, 3, rng);
  auto predict = [&] {
    return ad::sigmoid(c1(ad::elu(c0(ad::constant(fd.uv)))));
  };
  Adam opt(1e-2);
  for (int step = 0; step < 150; ++step) {
    Adam::zero_grad(ps.params);
    auto l = mask_loss(predict(), fd);
    ad::backward(l);
    opt.step(ps.params);
  }
  auto m = predict()->val;
  long inter = 0, uni = 0;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const bool pred = m.at(0, y, x) > 0.5, gt = s.dyn_mask_prev.at(y, x) != 0;
      inter += pred && gt;
      uni += pred || gt;
    }
  REQUIRE(uni > 0);
  INFO("IoU " << double(inter) / uni);
  CHECK(double(inter) / uni > 0.7);
}

TEST_CASE("combine: Eq. 10 arithmetic and weight gradients") {
  LossWeights w;
  auto vals = w.values();
  CHECK(vals[0] == Catch::Approx(0.2).margin(1e-12));
  CHECK(vals[1] == Catch::Approx(1.0).margin(1e-12));
  CHECK(vals[3] == Catch::Approx(10.0).margin(1e-12));

  auto scalars = [](std::array<double, 5> xs) {
    std::array<ad::Var, 5> out;
    for (int i = 0; i < 5; ++i) out[i] = ad::constant_scalar(xs[i]);
    return out;
  };

  SECTION("all-zero terms give zero; unit terms give 13.2") {
    CHECK(combine(scalars({0, 0, 0, 0, 0}), w).total == 0.0);
    CHECK(combine(scalars({1, 1, 1, 1, 1}), w).total ==
          Catch::Approx(13.2).margin(1e-9));
  }

  SECTION("linear in the terms at fixed weights") {
    Rng rng(8);
    std::array<double, 5> t;
    for (auto& v : t) v = rng.uniform(0.0, 2.0);
    auto once = combine(scalars(t), w).total;
    for (auto& v : t) v *= 2.0;
    CHECK(combine(scalars(t), w).total == Catch::Approx(2 * once).epsilon(1e-12));
  }

  SECTION("each free weight parameter gets a gradient from its nonzero term") {
    auto b = combine(scalars({1, 2, 3, 4, 5}), w);
    ad::backward(b.total_var);
    for (int i = 0; i < 5; ++i) CHECK(w.raw->grad[i] != 0.0);
  }

  SECTION("non-finite term aborts naming the offender") {
    auto t = scalars({1, 1, 1, 1, 1});
    t[3] = ad::constant_scalar(std::nan(""));
    CHECK_THROWS_WITH(combine(t, w), Catch::Matchers::ContainsSubstring("L_dof"));
  }
}

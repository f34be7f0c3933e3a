#include <catch2/catch_amalgamated.hpp>

#include "flowdepth/dmfm.hpp"
#include "helpers.hpp"

using namespace flowdepth;
using testutil::max_abs_diff;

namespace {

SceneSample make_sample(bool dynamic, uint64_t seed, bool integer_motion,
                        TextureProfile profile = TextureProfile::Mixed) {
  SceneConfig cfg;
  cfg.width = 64;
  cfg.height = 48;
  cfg.integer_motion = integer_motion;
  SceneSpec spec = make_scene_spec(cfg, profile, dynamic, seed);
  return render(spec, seed);
}

}  // namespace

TEST_CASE("decouple_flow: static scene with GT priors gives zero dynamic flow") {
  SceneSample s = make_sample(false, 21, false);
  auto [F_s, F_d] = decouple_flow(s.flow_all_p2c, s.depth_prev, s.pose_prev_to_curr, s.K);
  double worst = 0;
  for (long i = 0; i < F_d.uv.numel(); ++i) worst = std::max(worst, std::fabs(F_d.uv[i]));
  CHECK(worst < 1e-4);  // float32-quantized GT depth bounds the residual
  double mean = 0;
  for (long i = 0; i < F_d.uv.numel(); ++i) mean += std::fabs(F_d.uv[i]);
  CHECK(mean / F_d.uv.numel() < 1e-6);
}

TEST_CASE("decoupled components re-sum to F_all exactly") {
  SceneSample s = make_sample(true, 22, false);
  auto r = dmfm_from_gt(s);
  Tensor resum = r.F_s->val;
  for (long i = 0; i < resum.numel(); ++i) resum[i] += r.F_d->val[i];
  CHECK(max_abs_diff(resum, s.flow_all_p2c.uv) < 1e-12);
}

TEST_CASE("GT priors on dynamic scenes: residuals localized to the moving object") {
  for (uint64_t seed : {23ull, 24ull, 25ull}) {
    SceneSample s = make_sample(true, seed, false);
    auto r = dmfm_from_gt(s);
    auto rep = staticization_check(s, r);
    REQUIRE(rep.has_dynamic);
    CHECK(rep.mean_fd_outside < 1e-6);
    CHECK(rep.epe_inside < 0.5);
  }
}

TEST_CASE("static scene: lookup reproduces I_prev to machine precision") {
  SceneSample s = make_sample(false, 26, false);
  auto r = dmfm_from_gt(s);
  CHECK(r.M_d.count() == 0);
  CHECK(r.holes_prev.count() == 0);
  // identity splat normalizes by its own weight, (w*s)/w, so allow 1 ulp
  CHECK(max_abs_diff(r.lookup->val, s.prev) < 1e-15);
  auto rep = staticization_check(s, r);
  CHECK_FALSE(rep.has_dynamic);
  CHECK(rep.dynamic_pixels == 0);
  CHECK(std::isfinite(rep.rmse_dec_branches));
}

TEST_CASE("integer-motion scenes: staticization quality and branch consistency") {
  for (uint64_t seed : {27ull, 28ull, 29ull, 30ull}) {
    SceneSample s = make_sample(true, seed, true);
    auto r = dmfm_from_gt(s);
    auto rep = staticization_check(s, r);
    REQUIRE(rep.has_dynamic);
    CHECK(rep.rmse_lookup_vs_staticized < 3.0 / 255.0);
    CHECK(rep.rmse_dynamic_region < 3.0 / 255.0);
    CHECK(rep.rmse_dec_branches < rep.rmse_raw_frames);
  }
}

TEST_CASE("perturbed depth prior: background residual grows with camera translation") {
  const int H = 32, W = 48;
  Intrinsics K{60, 60, (W - 1) / 2.0, (H - 1) / 2.0, W, H};
  DepthMap d_true(H, W);
  Rng rng(31);
  for (long i = 0; i < d_true.values.numel(); ++i) d_true.values[i] = rng.uniform(4.0, 12.0);
  DepthMap d_pert = d_true;
  for (long i = 0; i < d_pert.values.numel(); ++i) d_pert.values[i] *= 1.05;

  auto residual = [&](double tx) {
    Pose p;
    p.T = {tx, 0, 0};
    FlowField F_all = static_flow(d_true, p, K).flow;
    auto [F_s, F_d] = decouple_flow(F_all, d_pert, p, K);
    double mean = 0;
    for (long i = 0; i < F_d.uv.numel(); ++i) mean += std::fabs(F_d.uv[i]);
    return mean / F_d.uv.numel();
  };
  const double r1 = residual(0.1), r2 = residual(0.2);
  CHECK(r1 > 1e-3);        // 5% depth error already leaves visible residual
  CHECK(r2 > 1.8 * r1);    // and it scales with the translation magnitude
}

TEST_CASE("straight-through mask: gradients reach the soft mask") {
  SceneSample s = make_sample(true, 32, true);
  const int H = s.prev.dim(1), W = s.prev.dim(2);
  Tensor soft_init({1, H, W}, 0.5);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      if (s.dyn_mask_prev.at(y, x)) soft_init.at(0, y, x) = 0.9;
  auto soft = ad::leaf(soft_init);

  auto r = build_decoupled_frames(
      ad::constant(s.prev), ad::constant(s.curr), ad::constant(s.flow_all_p2c.uv),
      ad::constant(s.depth_prev.values), ad::constant(s.depth_curr.values),
      rt_constant(s.pose_prev_to_curr), rt_constant(invert(s.pose_prev_to_curr)), s.K,
      [&](const ad::Var&, const ad::Var&) { return soft; }, 0.6, true);

  // hard-mask values, soft-mask gradients
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      CHECK(r.M_d.at(y, x) == (s.dyn_mask_prev.at(y, x) ? 1 : 0));

  ad::backward(ad::mean_all(r.lookup));
  double g = 0;
  for (long i = 0; i < soft->grad.numel(); ++i) g += std::fabs(soft->grad[i]);
  CHECK(g > 0.0);
}

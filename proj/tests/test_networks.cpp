#include <catch2/catch_amalgamated.hpp>
#include <filesystem>

#include "flowdepth/networks.hpp"
#include "helpers.hpp"

using namespace flowdepth;
using testutil::max_abs_diff;
using testutil::random_tensor;
namespace fs = std::filesystem;

namespace {
const int W = 32, H = 24;

NetworkConfig small_cfg() {
  NetworkConfig c;
  c.base_channels = 4;
  c.depth_min = 1.0;
  c.depth_max = 20.0;
  return c;
}

double logit(double p) { return std::log(p / (1 - p)); }
}  // namespace

TEST_CASE("config validation rejects bad ranges") {
  NetworkConfig c = small_cfg();
  CHECK_NOTHROW(c.validate());
  c.depth_min = -1;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = small_cfg();
  c.sigmoid_threshold = 1.5;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = small_cfg();
  c.mask_unet_depth = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("sigmoid-to-depth mapping endpoints") {
  NetworkConfig c = small_cfg();
  auto s1 = ad::constant(Tensor::full({1, 2, 2}, 1.0));
  auto s0 = ad::constant(Tensor::full({1, 2, 2}, 0.0));
  CHECK(sigmoid_to_depth(s1, c)->val[0] == Catch::Approx(c.depth_min).margin(1e-12));
  CHECK(sigmoid_to_depth(s0, c)->val[0] == Catch::Approx(c.depth_max).margin(1e-12));
}

TEST_CASE("depth prior forward: shapes, range, determinism") {
  Rng data_rng(1);
  ImageFrame img = random_tensor({3, H, W}, data_rng);
  auto run = [&](uint64_t seed) {
    Rng rng(seed);
    ParamSet ps;
    DepthPriorNet net(ps, "depth_prior", small_cfg(), rng);
    return net.forward(ad::constant(img));
  };
  auto a = run(7);
  REQUIRE(a.depth.size() == 2);
  CHECK(a.depth[0]->val.shape == std::vector<int>{1, H, W});
  CHECK(a.depth[1]->val.shape == std::vector<int>{1, H / 2, W / 2});
  for (const auto& d : a.depth) {
    CHECK(d->val.all_finite());
    CHECK(d->val.min() >= small_cfg().depth_min - 1e-9);
    CHECK(d->val.max() <= small_cfg().depth_max + 1e-9);
  }
  auto b = run(7);
  CHECK(max_abs_diff(a.depth[0]->val, b.depth[0]->val) == 0.0);
  auto other = run(8);
  CHECK(max_abs_diff(a.depth[0]->val, other.depth[0]->val) > 0.0);
}

TEST_CASE("pose net: zero head gives the identity, outputs are rotations") {
  Rng rng(2);
  ParamSet ps;
  PoseNet net(ps, "pose", small_cfg(), rng);
  Rng data_rng(3);
  ImageFrame a = random_tensor({3, H, W}, data_rng);
  ImageFrame b = random_tensor({3, H, W}, data_rng);

  Pose p = net.pose(a, b);
  CHECK_NOTHROW(p.validate(1e-6));

  // zero the head: axis-angle 0 -> identity transform
  ps.at("pose.fw")->val = Tensor({6, 8});
  ps.at("pose.fb")->val = Tensor({6});
  Pose id = net.pose(a, b);
  for (int i = 0; i < 3; ++i) {
    CHECK(std::fabs(id.T[i]) < 1e-12);
    for (int j = 0; j < 3; ++j) CHECK(std::fabs(id.R[i][j] - (i == j ? 1 : 0)) < 1e-7);
  }
}

TEST_CASE("flow prior: untrained output is zero, finite, right shape") {
  Rng rng(4);
  ParamSet ps;
  FlowPriorNet net(ps, "flow", small_cfg(), rng);
  Rng data_rng(5);
  ImageFrame a = random_tensor({3, H, W}, data_rng);
  ImageFrame b = random_tensor({3, H, W}, data_rng);
  auto f = net.forward(ad::constant(a), ad::constant(b));
  CHECK(f->val.shape == std::vector<int>{2, H, W});
  CHECK(f->val.all_finite());
  // delta heads are zero-initialized, so the first forward is exactly zero
  CHECK(f->val.max() == 0.0);
  CHECK(f->val.min() == 0.0);
}

TEST_CASE("mask net threshold semantics at 0.6") {
  Rng rng(6);
  ParamSet ps;
  MaskUNet net(ps, "mask", small_cfg(), rng);
  Rng data_rng(7);
  ImageFrame img = random_tensor({3, H, W}, data_rng);
  Tensor fd({2, H, W});

  // zero everything but the head bias so soft is spatially constant
  for (auto& [name, var] : ps.params)
    for (long i = 0; i < var->val.numel(); ++i) var->val[i] = 0;
  ps.at("mask.head.b")->val[0] = logit(0.61);
  auto above = net.forward(ad::constant(fd), ad::constant(img));
  CHECK(above.hard.count() == static_cast<long>(H) * W);
  CHECK(above.soft->val[0] == Catch::Approx(0.61));

  ps.at("mask.head.b")->val[0] = logit(0.59);
  auto below = net.forward(ad::constant(fd), ad::constant(img));
  CHECK(below.hard.count() == 0);
}

TEST_CASE("multi-frame depth net: cost-volume consumption and gradients") {
  Rng rng(8);
  ParamSet ps;
  const int n = 8;
  MultiFrameDepthNet net(ps, "mf", small_cfg(), n, rng);
  Rng data_rng(9);
  ImageFrame img = random_tensor({3, H, W}, data_rng);
  Tensor probs_raw = random_tensor({n, H / 4, W / 4}, data_rng, 0.01, 1.0);
  // normalize per pixel
  for (int y = 0; y < H / 4; ++y)
    for (int x = 0; x < W / 4; ++x) {
      double s = 0;
      for (int i = 0; i < n; ++i) s += probs_raw.at(i, y, x);
      for (int i = 0; i < n; ++i) probs_raw.at(i, y, x) /= s;
    }
  std::vector<double> cands(n);
  for (int i = 0; i < n; ++i) cands[static_cast<size_t>(i)] = 2.0 + 2.0 * i;

  auto vi = ad::leaf(img);
  auto vp = ad::leaf(probs_raw);
  auto out = net.forward(vi, vp, cands);
  CHECK(out.depth[0]->val.shape == std::vector<int>{1, H, W});
  CHECK(out.depth[0]->val.all_finite());

  ad::backward(ad::mean_all(out.depth[0]));
  double gi = 0, gp = 0;
  for (long i = 0; i < vi->grad.numel(); ++i) gi += std::fabs(vi->grad[i]);
  for (long i = 0; i < vp->grad.numel(); ++i) gp += std::fabs(vp->grad[i]);
  CHECK(gi > 0.0);
  CHECK(gp > 0.0);

  // wrong cost-volume resolution is rejected
  Tensor bad({n, H / 2, W / 2});
  CHECK_THROWS_AS(net.forward(vi, ad::constant(bad), cands), std::invalid_argument);
}

TEST_CASE("checkpoint round trip reproduces forwards bit-identically") {
  auto build = [](ParamSet& ps, uint64_t seed) {
    Rng rng(seed);
    NetworkConfig c = small_cfg();
    return std::make_tuple(DepthPriorNet(ps, "depth_prior", c, rng),
                           PoseNet(ps, "pose", c, rng), MaskUNet(ps, "mask", c, rng));
  };
  ParamSet ps;
  auto [dnet, pnet, mnet] = build(ps, 11);
  Rng data_rng(12);
  ImageFrame img = random_tensor({3, H, W}, data_rng);

  fs::path dir = fs::temp_directory_path() / "flowdepth_tests" / "ckpt";
  fs::create_directories(dir);
  const std::string path = (dir / "model.ckpt").string();
  save_checkpoint(path, ps, {{"note", "test"}});
  // save quantized the live parameters; this forward is the reference
  Tensor ref = dnet.forward(ad::constant(img)).depth[0]->val;

  ParamSet ps2;
  auto [dnet2, pnet2, mnet2] = build(ps2, 999);  // different init, then overwritten
  Snapshot snap = load_checkpoint(path);
  CHECK(snap.config.at("note") == "test");
  apply_checkpoint(ps2, snap);
  Tensor back = dnet2.forward(ad::constant(img)).depth[0]->val;
  CHECK(max_abs_diff(ref, back) == 0.0);
}

TEST_CASE("checkpoint loader rejects corrupt files and mismatches") {
  fs::path dir = fs::temp_directory_path() / "flowdepth_tests" / "ckpt_bad";
  fs::create_directories(dir);
  io_detail::write_file((dir / "junk.ckpt").string(), "junk bytes");
  CHECK_THROWS_AS(load_checkpoint((dir / "junk.ckpt").string()), IoError);

  ParamSet ps;
  Rng rng(13);
  DepthPriorNet net(ps, "depth_prior", small_cfg(), rng);
  const std::string path = (dir / "ok.ckpt").string();
  save_checkpoint(path, ps);

  std::string bytes = io_detail::read_file(path);
  io_detail::write_file((dir / "trunc.ckpt").string(), bytes.substr(0, bytes.size() - 17));
  CHECK_THROWS_AS(load_checkpoint((dir / "trunc.ckpt").string()), IoError);

  // applying to a param set with an extra parameter fails
  ParamSet ps2;
  Rng rng2(13);
  DepthPriorNet net2(ps2, "depth_prior", small_cfg(), rng2);
  ps2.make("extra.p", Tensor({3}));
  CHECK_THROWS_AS(apply_checkpoint(ps2, load_checkpoint(path)), IoError);
}

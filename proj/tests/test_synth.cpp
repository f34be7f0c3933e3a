#include <catch2/catch_amalgamated.hpp>
#include <filesystem>
#include <fstream>

#include "flowdepth/synth.hpp"
#include "helpers.hpp"

using namespace flowdepth;
namespace fs = std::filesystem;

namespace {

fs::path tmp_dir(const char* name) {
  fs::path p = fs::temp_directory_path() / "flowdepth_tests" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Mask dilate(const Mask& m, int r = 1) {
  const int H = m.shape[0], W = m.shape[1];
  Mask out({H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      uint8_t v = 0;
      for (int dy = -r; dy <= r && !v; ++dy)
        for (int dx = -r; dx <= r && !v; ++dx) {
          const int yy = y + dy, xx = x + dx;
          if (yy >= 0 && yy < H && xx >= 0 && xx < W && m.at(yy, xx)) v = 1;
        }
      out.at(y, x) = v;
    }
  return out;
}

std::string slurp(const fs::path& p) { return io_detail::read_file(p.string()); }

SceneSpec small_spec(TextureProfile profile, bool dynamic, uint64_t seed,
                     bool integer_motion = false) {
  SceneConfig cfg;
  cfg.width = 64;
  cfg.height = 48;
  cfg.integer_motion = integer_motion;
  return make_scene_spec(cfg, profile, dynamic, seed);
}

}  // namespace

TEST_CASE("png round trip preserves 8-bit images exactly") {
  Rng rng(1);
  ImageFrame img({3, 13, 17});
  for (long i = 0; i < img.numel(); ++i)
    img[i] = std::lround(rng.uniform() * 255.0) / 255.0;
  auto dir = tmp_dir("png");
  save_png((dir / "a.png").string(), img);
  ImageFrame back = load_png((dir / "a.png").string());
  CHECK(testutil::max_abs_diff(img, back) == 0.0);

  // grayscale path
  ImageFrame g({1, 5, 9});
  for (long i = 0; i < g.numel(); ++i) g[i] = std::lround(rng.uniform() * 255.0) / 255.0;
  save_png((dir / "g.png").string(), g);
  CHECK(testutil::max_abs_diff(g, load_png((dir / "g.png").string())) == 0.0);
}

TEST_CASE("png loader rejects garbage") {
  auto dir = tmp_dir("png_bad");
  io_detail::write_file((dir / "bad.png").string(), "not a png at all");
  CHECK_THROWS_AS(load_png((dir / "bad.png").string()), IoError);
  CHECK_THROWS_AS(load_png((dir / "missing.png").string()), IoError);
}

TEST_CASE("pfm round trip is bit-exact for float32 data") {
  Rng rng(2);
  Tensor d({11, 7});
  for (long i = 0; i < d.numel(); ++i)
    d[i] = static_cast<float>(rng.uniform(0.1, 30.0));
  auto dir = tmp_dir("pfm");
  save_pfm((dir / "d.pfm").string(), d);
  Tensor back = load_pfm((dir / "d.pfm").string());
  REQUIRE(back.shape == d.shape);
  CHECK(testutil::max_abs_diff(d, back) == 0.0);
}

TEST_CASE("pfm loader rejects malformed headers and truncation") {
  auto dir = tmp_dir("pfm_bad");
  io_detail::write_file((dir / "color.pfm").string(), "PF\n4 4\n-1.0\n");
  CHECK_THROWS_AS(load_pfm((dir / "color.pfm").string()), IoError);
  io_detail::write_file((dir / "be.pfm").string(), "Pf\n2 2\n1.0\n0123456789abcdef");
  CHECK_THROWS_AS(load_pfm((dir / "be.pfm").string()), IoError);
  io_detail::write_file((dir / "short.pfm").string(), "Pf\n4 4\n-1.0\nxx");
  CHECK_THROWS_AS(load_pfm((dir / "short.pfm").string()), IoError);
}

TEST_CASE("flo round trip is bit-exact for float32 flows") {
  Rng rng(3);
  FlowField f(9, 6);
  for (long i = 0; i < f.uv.numel(); ++i)
    f.uv[i] = static_cast<float>(rng.uniform(-20.0, 20.0));
  auto dir = tmp_dir("flo");
  save_flo((dir / "f.flo").string(), f);
  FlowField back = load_flo((dir / "f.flo").string());
  CHECK(testutil::max_abs_diff(f.uv, back.uv) == 0.0);
}

TEST_CASE("flo loader rejects bad magic and truncated files") {
  auto dir = tmp_dir("flo_bad");
  Rng rng(4);
  FlowField f(5, 5);
  save_flo((dir / "f.flo").string(), f);
  std::string bytes = slurp(dir / "f.flo");

  std::string bad_magic = bytes;
  bad_magic[0] = 'x';
  io_detail::write_file((dir / "bad_magic.flo").string(), bad_magic);
  CHECK_THROWS_AS(load_flo((dir / "bad_magic.flo").string()), IoError);

  io_detail::write_file((dir / "trunc.flo").string(), bytes.substr(0, bytes.size() / 2));
  CHECK_THROWS_AS(load_flo((dir / "trunc.flo").string()), IoError);

  io_detail::write_file((dir / "tiny.flo").string(), bytes.substr(0, 6));
  CHECK_THROWS_AS(load_flo((dir / "tiny.flo").string()), IoError);
}

TEST_CASE("render is deterministic for identical spec and seed") {
  SceneSpec spec = small_spec(TextureProfile::Mixed, true, 99);
  SceneSample a = render(spec, 99);
  SceneSample b = render(spec, 99);
  CHECK(testutil::max_abs_diff(a.prev, b.prev) == 0.0);
  CHECK(testutil::max_abs_diff(a.curr, b.curr) == 0.0);
  CHECK(testutil::max_abs_diff(a.depth_curr.values, b.depth_curr.values) == 0.0);
  CHECK(testutil::max_abs_diff(a.flow_all_p2c.uv, b.flow_all_p2c.uv) == 0.0);

  auto d1 = tmp_dir("det1"), d2 = tmp_dir("det2");
  save_sample(d1.string(), a);
  save_sample(d2.string(), b);
  for (const auto& entry : fs::directory_iterator(d1)) {
    const auto name = entry.path().filename();
    CHECK(slurp(entry.path()) == slurp(d2 / name));
  }
}

TEST_CASE("ground-truth flow decomposition is exact") {
  for (uint64_t seed : {5ull, 6ull, 7ull}) {
    SceneSpec spec = small_spec(TextureProfile::Mixed, true, seed);
    SceneSample s = render(spec, seed);
    const int H = spec.height, W = spec.width;
    double worst = 0;
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        worst = std::max(worst, std::fabs(s.flow_all_p2c.u(y, x) - s.flow_static_p2c.u(y, x) -
                                          s.flow_dyn_p2c.u(y, x)));
        worst = std::max(worst, std::fabs(s.flow_all_p2c.v(y, x) - s.flow_static_p2c.v(y, x) -
                                          s.flow_dyn_p2c.v(y, x)));
      }
    CHECK(worst < 1e-6);
  }
}

TEST_CASE("dynamic flow is exactly zero outside the dynamic mask") {
  SceneSpec spec = small_spec(TextureProfile::HighFreq, true, 8);
  SceneSample s = render(spec, 8);
  for (int y = 0; y < spec.height; ++y)
    for (int x = 0; x < spec.width; ++x)
      if (!s.dyn_mask_prev.at(y, x)) {
        CHECK(s.flow_dyn_p2c.u(y, x) == 0.0);
        CHECK(s.flow_dyn_p2c.v(y, x) == 0.0);
      }
}

TEST_CASE("static scenes have no dynamic pixels and zero dynamic flow") {
  SceneSpec spec = small_spec(TextureProfile::LowTexture, false, 9);
  SceneSample s = render(spec, 9);
  CHECK_FALSE(s.dynamic);
  CHECK(s.dyn_mask_prev.count() == 0);
  CHECK(s.flow_dyn_p2c.uv.max() == 0.0);
  CHECK(s.flow_dyn_p2c.uv.min() == 0.0);
}

TEST_CASE("stored static flow matches static_flow from stored depth and pose") {
  SceneSpec spec = small_spec(TextureProfile::Mixed, true, 10);
  SceneSample s = render(spec, 10);
  auto r = static_flow(s.depth_prev, s.pose_prev_to_curr, s.K);
  double worst = 0;
  for (int y = 0; y < spec.height; ++y)
    for (int x = 0; x < spec.width; ++x) {
      if (!r.valid.at(y, x) || s.occ_p2c.at(y, x)) continue;
      worst = std::max({worst, std::fabs(r.flow.u(y, x) - s.flow_static_p2c.u(y, x)),
                        std::fabs(r.flow.v(y, x) - s.flow_static_p2c.v(y, x))});
    }
  CHECK(worst < 1e-3);  // depth is float32-quantized
}

TEST_CASE("backward warp by gt flow reconstructs the source away from occlusions") {
  for (auto profile : {TextureProfile::Mixed, TextureProfile::LowTexture,
                       TextureProfile::HighFreq}) {
    SceneSpec spec = small_spec(profile, true, 11 + static_cast<int>(profile));
    SceneSample s = render(spec, 11);
    auto [warped, valid] = backward_warp(s.curr, s.flow_all_p2c);
    // exclude occlusions and sharp edges: bilinear resampling cannot represent
    // a step edge at sub-pixel offsets, so the constancy check is only
    // meaningful on locally smooth pixels
    const int H = spec.height, W = spec.width;
    Mask edges({H, W});
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        for (int c = 0; c < 3 && !edges.at(y, x); ++c) {
          const double gx = x + 1 < W ? std::fabs(s.prev.at(c, y, x + 1) - s.prev.at(c, y, x)) : 0;
          const double gy = y + 1 < H ? std::fabs(s.prev.at(c, y + 1, x) - s.prev.at(c, y, x)) : 0;
          if (std::max(gx, gy) > 0.08) edges.at(y, x) = 1;
        }
    Mask occ_bad = dilate(s.occ_p2c, 2), edge_bad = dilate(edges, 1);
    Mask region({H, W});
    for (long i = 0; i < region.numel(); ++i)
      region[i] = (!occ_bad[i] && !edge_bad[i] && valid[i]) ? 1 : 0;
    REQUIRE(region.count() > region.numel() / 3);
    const double err = rmse(warped, s.prev, &region);
    INFO("profile " << to_string(profile));
    CHECK(err < 2.0 / 255.0);
  }
}

TEST_CASE("integer-motion scenes: staticized render equals the current frame") {
  SceneSpec spec = small_spec(TextureProfile::Mixed, true, 12, /*integer_motion=*/true);
  SceneSample s = render(spec, 12);
  // static camera, so freezing the objects at their frame-t positions and
  // rendering from the t-1 camera reproduces frame t exactly
  CHECK(testutil::max_abs_diff(s.staticized, s.curr) == 0.0);
  // and the static flow vanishes (up to projection round-off)
  CHECK(s.flow_static_p2c.uv.max() < 1e-9);
  CHECK(s.flow_static_p2c.uv.min() > -1e-9);
}

TEST_CASE("profile textures behave as labelled") {
  SceneSpec hi = small_spec(TextureProfile::HighFreq, false, 13);
  SceneSpec lo = small_spec(TextureProfile::LowTexture, false, 13);
  SceneSample sh = render(hi, 13);
  SceneSample sl = render(lo, 13);
  auto mean_grad = [](const ImageFrame& img) {
    const int C = img.dim(0), H = img.dim(1), W = img.dim(2);
    double acc = 0;
    long n = 0;
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x + 1 < W; ++x) {
          acc += std::fabs(img.at(c, y, x + 1) - img.at(c, y, x));
          ++n;
        }
    return acc / n;
  };
  CHECK(mean_grad(sh.curr) > 5.0 * mean_grad(sl.curr));
  CHECK(mean_grad(sl.curr) < 0.01);
}

TEST_CASE("sample save/load round trip") {
  SceneSpec spec = small_spec(TextureProfile::Mixed, true, 14);
  SceneSample s = render(spec, 14);
  auto dir = tmp_dir("sample_rt");
  save_sample(dir.string(), s);
  SceneSample b = load_sample(dir.string());
  CHECK(testutil::max_abs_diff(s.prev, b.prev) == 0.0);
  CHECK(testutil::max_abs_diff(s.curr, b.curr) == 0.0);
  CHECK(testutil::max_abs_diff(s.next, b.next) == 0.0);
  CHECK(testutil::max_abs_diff(s.staticized, b.staticized) == 0.0);
  CHECK(testutil::max_abs_diff(s.depth_prev.values, b.depth_prev.values) == 0.0);
  CHECK(testutil::max_abs_diff(s.flow_all_p2c.uv, b.flow_all_p2c.uv) == 0.0);
  CHECK(testutil::max_abs_diff(s.flow_static_c2p.uv, b.flow_static_c2p.uv) == 0.0);
  CHECK(testutil::max_abs_diff(s.flow_dyn_p2c.uv, b.flow_dyn_p2c.uv) == 0.0);
  for (long i = 0; i < s.dyn_mask_curr.numel(); ++i)
    CHECK(s.dyn_mask_curr[i] == b.dyn_mask_curr[i]);
  CHECK(b.dynamic == s.dynamic);
  CHECK(b.seed == s.seed);
  CHECK(b.profile == s.profile);
  for (int i = 0; i < 3; ++i) {
    CHECK(b.pose_prev_to_curr.T[i] == s.pose_prev_to_curr.T[i]);
    for (int j = 0; j < 3; ++j)
      CHECK(b.pose_prev_to_curr.R[i][j] == s.pose_prev_to_curr.R[i][j]);
  }
}

TEST_CASE("load_sample reports missing and malformed inputs") {
  auto dir = tmp_dir("sample_bad");
  CHECK_THROWS_AS(load_sample(dir.string()), IoError);

  SceneSpec spec = small_spec(TextureProfile::Mixed, false, 15);
  save_sample(dir.string(), render(spec, 15));
  io_detail::write_file((dir / "meta.json").string(), "{ not json");
  CHECK_THROWS_AS(load_sample(dir.string()), IoError);
  io_detail::write_file((dir / "meta.json").string(), "{\"schema_version\": 1}");
  CHECK_THROWS_MATCHES(load_sample(dir.string()), IoError,
                       Catch::Matchers::MessageMatches(
                           Catch::Matchers::ContainsSubstring("intrinsics")));
}

TEST_CASE("make_dataset writes a balanced manifest that loads back") {
  DatasetConfig cfg;
  auto dir = tmp_dir("dataset");
  cfg.out_dir = dir.string();
  cfg.count = 12;
  cfg.seed = 77;
  cfg.scene.width = 48;
  cfg.scene.height = 36;
  Manifest man = make_dataset(cfg);
  CHECK(man.samples.size() == 12);

  Manifest back = load_manifest(cfg.out_dir);
  CHECK(back.width == 48);
  CHECK(back.samples.size() == 12);
  int dyn = 0, prof[3] = {0, 0, 0};
  for (const auto& e : back.samples) {
    dyn += e.dynamic ? 1 : 0;
    prof[static_cast<int>(e.profile)]++;
  }
  CHECK(dyn == 6);
  CHECK(prof[0] == 4);
  CHECK(prof[1] == 4);
  CHECK(prof[2] == 4);

  SceneSample s = load_sample((dir / back.samples[0].dir).string());
  CHECK(s.curr.shape == std::vector<int>{3, 36, 48});
  CHECK(s.dynamic == back.samples[0].dynamic);
}

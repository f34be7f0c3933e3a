#pragma once

#include <filesystem>
#include <optional>

#include <nlohmann/json.hpp>

#include "flowdepth/core/image_io.hpp"
#include "flowdepth/warping.hpp"

namespace flowdepth {

// Procedural triplet scenes: a background plane plus fronto-parallel textured
// rectangles moving rigidly in world space, viewed by a moving camera. All
// ground truth (depth, poses, decomposed flows, masks) comes from the same
// analytic surfaces, so the flow decomposition is exact by construction.

enum class TextureProfile { HighFreq, LowTexture, Mixed };

inline const char* to_string(TextureProfile p) {
  switch (p) {
    case TextureProfile::HighFreq: return "high-freq";
    case TextureProfile::LowTexture: return "low-texture";
    case TextureProfile::Mixed: return "mixed";
  }
  return "?";
}

inline TextureProfile profile_from_string(const std::string& s) {
  if (s == "high-freq") return TextureProfile::HighFreq;
  if (s == "low-texture") return TextureProfile::LowTexture;
  if (s == "mixed") return TextureProfile::Mixed;
  throw IoError("unknown texture profile: " + s);
}

// Smooth procedural color field: per-channel base plus a few sinusoids.
// Frequencies are in rad per scene unit; the projected pixel frequency is
// roughly omega * Z / fx.
struct Texture {
  std::array<double, 3> base{0.5, 0.5, 0.5};
  struct Wave {
    double amp, wx, wy, phase;
    int channel;  // -1 = all channels
  };
  std::vector<Wave> waves;
  // optional sharp stripes (texture edges for DCABlur): color toggles by
  // stripe index along x
  double stripe_period = 0;  // scene units; 0 = off
  double stripe_contrast = 0;

  std::array<double, 3> sample(double s, double t) const {
    std::array<double, 3> c = base;
    for (const auto& w : waves) {
      const double v = w.amp * std::sin(w.wx * s + w.phase) * std::cos(w.wy * t + 0.7 * w.phase);
      if (w.channel < 0)
        for (int k = 0; k < 3; ++k) c[k] += v;
      else
        c[w.channel] += v;
    }
    if (stripe_period > 0) {
      const long idx = static_cast<long>(std::floor(s / stripe_period));
      if (idx % 2 == 0)
        for (int k = 0; k < 3; ++k) c[k] += stripe_contrast;
    }
    for (int k = 0; k < 3; ++k) c[k] = clamp01(c[k]);
    return c;
  }

  static Texture random_smooth(Rng& rng, double freq_lo, double freq_hi, double amp,
                               std::array<double, 3> base) {
    Texture t;
    t.base = base;
    for (int i = 0; i < 3; ++i)
      t.waves.push_back({amp * rng.uniform(0.5, 1.0), rng.uniform(freq_lo, freq_hi),
                         rng.uniform(freq_lo, freq_hi), rng.uniform(0, 6.28), i});
    return t;
  }
};

struct ObjectSpec {
  Vec3 center;          // world position of the rectangle centre at frame t-1
  double half_w = 0.5;  // scene units
  double half_h = 0.5;
  Vec3 velocity;        // world displacement per frame
  Texture texture;
};

struct SceneSpec {
  int width = 128, height = 96;
  Intrinsics K;
  TextureProfile profile = TextureProfile::Mixed;
  // background plane n.X = plane_d in world coordinates (world = camera frame
  // at t-1); default is a wall with depth increasing to the right
  Vec3 plane_normal{0.15, 0.0, 1.0};
  double plane_d = 12.0;
  Texture bg_texture;
  std::vector<ObjectSpec> objects;
  Pose camera_step;  // pose cam_f -> cam_{f+1}; cam at t-1 is the identity
  double max_speed_px = 8.0;

  static Intrinsics default_intrinsics(int W, int H) {
    return {0.9 * W, 0.9 * W, (W - 1) / 2.0, (H - 1) / 2.0, W, H};
  }
};

struct SceneSample {
  ImageFrame prev, curr, next;
  DepthMap depth_prev, depth_curr, depth_next;
  Pose pose_prev_to_curr, pose_curr_to_next;
  FlowField flow_all_p2c, flow_static_p2c, flow_dyn_p2c;
  FlowField flow_all_c2p, flow_static_c2p, flow_dyn_c2p;
  Mask dyn_mask_prev, dyn_mask_curr;
  Mask occ_p2c, occ_c2p;  // source pixel occluded or out of view in the target
  ImageFrame staticized;  // objects at frame-t world positions, camera at t-1
  Intrinsics K;
  TextureProfile profile = TextureProfile::Mixed;
  bool dynamic = false;
  uint64_t seed = 0;
};

namespace synth_detail {

inline float f32(double v) { return static_cast<float>(v); }
inline double q32(double v) { return static_cast<double>(static_cast<float>(v)); }
inline double q8(double v) { return std::lround(clamp01(v) * 255.0) / 255.0; }

struct Hit {
  double depth = 0;        // camera-space z
  Vec3 world;              // surface point in world coordinates
  int object = -1;         // -1 = background
  bool valid = false;
};

// cast the ray of continuous pixel (u,v) in camera with pose world->cam,
// against background plane and objects displaced by `frame` steps of velocity
inline Hit raycast(const SceneSpec& spec, const Pose& cam, double u, double v,
                   double frame_offset) {
  const Intrinsics& K = spec.K;
  const Vec3 r{(u - K.cx) / K.fx, (v - K.cy) / K.fy, 1.0};
  const Pose inv = invert(cam);
  // X_w(s) = R^T (s r - T) = s * (R^T r) + C
  const Vec3 rw = {inv.R[0][0] * r.x + inv.R[0][1] * r.y + inv.R[0][2] * r.z,
                   inv.R[1][0] * r.x + inv.R[1][1] * r.y + inv.R[1][2] * r.z,
                   inv.R[2][0] * r.x + inv.R[2][1] * r.y + inv.R[2][2] * r.z};
  const Vec3 C{inv.T[0], inv.T[1], inv.T[2]};

  Hit best;
  // background plane: n . X = d
  const Vec3 n = spec.plane_normal;
  const double denom = n.x * rw.x + n.y * rw.y + n.z * rw.z;
  if (std::fabs(denom) > 1e-12) {
    const double s = (spec.plane_d - (n.x * C.x + n.y * C.y + n.z * C.z)) / denom;
    if (s > 1e-6) {
      best.depth = s;  // r.z == 1, so the parameter is the camera depth
      best.world = C + s * rw;
      best.object = -1;
      best.valid = true;
    }
  }
  for (size_t i = 0; i < spec.objects.size(); ++i) {
    const ObjectSpec& o = spec.objects[i];
    const Vec3 c = o.center + frame_offset * o.velocity;
    if (std::fabs(rw.z) < 1e-12) continue;
    const double s = (c.z - C.z) / rw.z;  // fronto-parallel plane z = c.z
    if (s <= 1e-6) continue;
    const Vec3 X = C + s * rw;
    if (std::fabs(X.x - c.x) > o.half_w || std::fabs(X.y - c.y) > o.half_h) continue;
    if (!best.valid || s < best.depth) {
      best = {s, X, static_cast<int>(i), true};
    }
  }
  return best;
}

inline std::array<double, 3> shade(const SceneSpec& spec, const Hit& h,
                                   double frame_offset) {
  if (h.object < 0) return spec.bg_texture.sample(h.world.x, h.world.y);
  const ObjectSpec& o = spec.objects[static_cast<size_t>(h.object)];
  const Vec3 c = o.center + frame_offset * o.velocity;
  return o.texture.sample(h.world.x - c.x, h.world.y - c.y);
}

// 2x supersampled render with box downsample; subsample offsets +-0.25 px
inline ImageFrame render_image(const SceneSpec& spec, const Pose& cam,
                               double frame_offset) {
  const int W = spec.width, H = spec.height;
  ImageFrame img({3, H, W});
  static const double offs[2] = {-0.25, 0.25};
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double acc[3] = {0, 0, 0};
      for (double dy : offs)
        for (double dx : offs) {
          Hit h = raycast(spec, cam, x + dx, y + dy, frame_offset);
          if (h.valid) {
            auto c = shade(spec, h, frame_offset);
            for (int k = 0; k < 3; ++k) acc[k] += c[k];
          }
        }
      for (int k = 0; k < 3; ++k) img.at(k, y, x) = q8(acc[k] / 4.0);
    }
  return img;
}

}  // namespace synth_detail

inline Pose camera_pose(const SceneSpec& spec, int frame) {
  // frame 0 = t-1, 1 = t, 2 = t+1; world = camera frame at t-1
  Pose p = Pose::identity();
  for (int i = 0; i < frame; ++i) p = compose(spec.camera_step, p);
  return p;
}

// Render one triplet with full ground truth. Deterministic given the spec
// (the seed is only recorded in the sample; texture randomness is drawn when
// the spec is built).
inline SceneSample render(const SceneSpec& spec, uint64_t seed = 0) {
  using namespace synth_detail;
  const int W = spec.width, H = spec.height;
  spec.K.validate();
  SceneSample s;
  s.K = spec.K;
  s.profile = spec.profile;
  s.seed = seed;
  for (const auto& o : spec.objects)
    if (std::fabs(o.velocity.x) + std::fabs(o.velocity.y) + std::fabs(o.velocity.z) > 0)
      s.dynamic = true;

  const Pose cam[3] = {camera_pose(spec, 0), camera_pose(spec, 1), camera_pose(spec, 2)};
  for (int f = 0; f < 3; ++f) {
    // all objects must be in front of the camera in every frame
    for (const auto& o : spec.objects) {
      const Vec3 c = o.center + static_cast<double>(f) * o.velocity;
      if (!(cam[f].apply(c).z > 0.1))
        throw std::runtime_error("render: object behind camera in frame " + std::to_string(f));
    }
  }

  s.prev = render_image(spec, cam[0], 0.0);
  s.curr = render_image(spec, cam[1], 1.0);
  s.next = render_image(spec, cam[2], 2.0);
  // staticized: camera at t-1, objects at their frame-t world positions
  s.staticized = render_image(spec, cam[0], 1.0);

  s.pose_prev_to_curr = compose(cam[1], invert(cam[0]));
  s.pose_curr_to_next = compose(cam[2], invert(cam[1]));

  auto make_depth = [&](int f) {
    DepthMap d(H, W);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        Hit h = raycast(spec, cam[f], x, y, static_cast<double>(f));
        if (h.valid) {
          d.values.at(y, x) = q32(h.depth);
        } else {
          d.values.at(y, x) = 0;
          d.valid.at(y, x) = 0;
        }
      }
    return d;
  };
  s.depth_prev = make_depth(0);
  s.depth_curr = make_depth(1);
  s.depth_next = make_depth(2);

  // flows between frame a (offset fa) and frame b: per source pixel, project
  // the surface point with and without the object displacement
  auto make_flows = [&](int fa, int fb, FlowField& all, FlowField& stat, FlowField& dyn,
                        Mask& dyn_mask, Mask& occ) {
    all = FlowField(H, W);
    stat = FlowField(H, W);
    dyn = FlowField(H, W);
    dyn_mask = Mask({H, W});
    occ = Mask({H, W});
    const double da = fa, db = fb;
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        Hit h = raycast(spec, cam[fa], x, y, da);
        if (!h.valid) {
          occ.at(y, x) = 1;
          continue;
        }
        Vec3 moved = h.world;
        if (h.object >= 0) {
          const Vec3 v = spec.objects[static_cast<size_t>(h.object)].velocity;
          moved = h.world + (db - da) * v;
          if (std::fabs(v.x) + std::fabs(v.y) + std::fabs(v.z) > 0) dyn_mask.at(y, x) = 1;
        }
        double su = 0, sv = 0, au = 0, av = 0;
        bool ok = true;
        try {
          auto ps = project(cam[fb].apply(h.world), spec.K);
          su = ps.u - x;
          sv = ps.v - y;
          auto pa = project(cam[fb].apply(moved), spec.K);
          au = pa.u - x;
          av = pa.v - y;
          // occluded in target? compare against the target-frame surface
          Hit ht = raycast(spec, cam[fb], pa.u, pa.v, db);
          const double dz = cam[fb].apply(moved).z;
          if (!ht.valid || ht.depth < dz - 1e-4) occ.at(y, x) = 1;
          if (pa.u < 0 || pa.u > W - 1 || pa.v < 0 || pa.v > H - 1) occ.at(y, x) = 1;
        } catch (const BehindCameraError&) {
          ok = false;
        }
        if (!ok) {
          occ.at(y, x) = 1;
          continue;
        }
        // quantize static and dynamic to float32, then define "all" as their
        // rounded sum so every stored field survives .flo round trips
        stat.u(y, x) = q32(su);
        stat.v(y, x) = q32(sv);
        dyn.u(y, x) = q32(au - su);
        dyn.v(y, x) = q32(av - sv);
        all.u(y, x) = q32(stat.u(y, x) + dyn.u(y, x));
        all.v(y, x) = q32(stat.v(y, x) + dyn.v(y, x));
      }
  };
  make_flows(0, 1, s.flow_all_p2c, s.flow_static_p2c, s.flow_dyn_p2c, s.dyn_mask_prev,
             s.occ_p2c);
  make_flows(1, 0, s.flow_all_c2p, s.flow_static_c2p, s.flow_dyn_c2p, s.dyn_mask_curr,
             s.occ_c2p);
  return s;
}

// ---- procedural scene specs ----

struct SceneConfig {
  int width = 128, height = 96;
  double bg_depth = 12.0;      // nominal background plane distance
  double obj_depth_min = 3.0;
  double obj_depth_max = 7.0;
  int objects_min = 1, objects_max = 2;
  double max_speed_px = 8.0;
  double cam_trans = 0.12;     // per-frame camera translation scale (units)
  double cam_rot = 0.004;      // per-frame rotation scale (radians)
  bool integer_motion = false; // snap object motion to whole pixels, static camera
};

inline SceneSpec make_scene_spec(const SceneConfig& cfg, TextureProfile profile,
                                 bool dynamic, uint64_t seed) {
  Rng rng(seed);
  SceneSpec spec;
  spec.width = cfg.width;
  spec.height = cfg.height;
  spec.K = SceneSpec::default_intrinsics(cfg.width, cfg.height);
  spec.profile = profile;
  spec.max_speed_px = cfg.max_speed_px;
  spec.plane_normal = {rng.uniform(-0.12, 0.12), rng.uniform(-0.08, 0.08), 1.0};
  spec.plane_d = cfg.bg_depth * rng.uniform(0.85, 1.15);

  // background texture per profile; frequencies in rad/unit are chosen so the
  // projected pixel frequency stays below ~0.5 rad/px (projection scale is
  // about fx/Z px per unit)
  const double px_per_unit = spec.K.fx / spec.plane_d;
  std::array<double, 3> base{rng.uniform(0.35, 0.55), rng.uniform(0.35, 0.55),
                             rng.uniform(0.35, 0.55)};
  switch (profile) {
    case TextureProfile::HighFreq:
      spec.bg_texture = Texture::random_smooth(rng, 0.25 * px_per_unit, 0.45 * px_per_unit,
                                               0.16, base);
      spec.bg_texture.stripe_period = 6.0 / px_per_unit;
      spec.bg_texture.stripe_contrast = 0.22;
      break;
    case TextureProfile::LowTexture:
      spec.bg_texture = Texture::random_smooth(rng, 0.02 * px_per_unit, 0.05 * px_per_unit,
                                               0.015, base);
      break;
    case TextureProfile::Mixed:
      spec.bg_texture = Texture::random_smooth(rng, 0.1 * px_per_unit, 0.3 * px_per_unit,
                                               0.10, base);
      spec.bg_texture.stripe_period = 10.0 / px_per_unit;
      spec.bg_texture.stripe_contrast = 0.14;
      break;
  }

  if (!cfg.integer_motion) {
    Vec3 w{rng.normal(0, cfg.cam_rot), rng.normal(0, cfg.cam_rot), rng.normal(0, cfg.cam_rot)};
    Vec3 t{rng.normal(0, cfg.cam_trans), rng.normal(0, 0.4 * cfg.cam_trans),
           rng.normal(0, 0.8 * cfg.cam_trans)};
    spec.camera_step = pose_from_axisangle(w, t);
  }

  const int nobj = static_cast<int>(rng.randint(cfg.objects_min, cfg.objects_max));
  for (int i = 0; i < nobj; ++i) {
    ObjectSpec o;
    const double z = rng.uniform(cfg.obj_depth_min, cfg.obj_depth_max);
    const double view_x = (cfg.width * 0.34) * z / spec.K.fx;
    const double view_y = (cfg.height * 0.30) * z / spec.K.fy;
    o.center = {rng.uniform(-view_x, view_x), rng.uniform(-view_y, view_y), z};
    o.half_w = rng.uniform(0.09, 0.17) * z;
    o.half_h = rng.uniform(0.09, 0.17) * z;
    std::array<double, 3> ob{rng.uniform(0.15, 0.85), rng.uniform(0.15, 0.85),
                             rng.uniform(0.15, 0.85)};
    o.texture = Texture::random_smooth(rng, 0.15 * spec.K.fx / z, 0.4 * spec.K.fx / z, 0.12, ob);
    if (dynamic) {
      double vx = rng.uniform(-1.0, 1.0), vy = rng.uniform(-0.5, 0.5);
      const double px_speed = spec.K.fx * std::hypot(vx, vy) / z;
      const double target = rng.uniform(0.4, 1.0) * cfg.max_speed_px;
      if (px_speed > 1e-9) {
        const double scale = target / px_speed;
        vx *= scale;
        vy *= scale;
      }
      if (cfg.integer_motion) {
        // whole-pixel displacement per frame at the object's depth
        vx = std::round(spec.K.fx * vx / z) * z / spec.K.fx;
        vy = std::round(spec.K.fy * vy / z) * z / spec.K.fy;
      }
      o.velocity = {vx, vy, 0};
    }
    spec.objects.push_back(o);
  }
  return spec;
}

// ---- serialization ----

inline constexpr int kSchemaVersion = 1;

namespace synth_detail {

inline nlohmann::json pose_json(const Pose& p) {
  nlohmann::json rows = nlohmann::json::array();
  for (int i = 0; i < 3; ++i)
    rows.insert(rows.end(), {p.R[i][0], p.R[i][1], p.R[i][2], p.T[i]});
  return rows;  // row-major 3x4
}

inline Pose pose_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 12) throw IoError("meta.json: pose must be 12 numbers");
  Pose p;
  for (int i = 0; i < 3; ++i) {
    for (int k = 0; k < 3; ++k) p.R[i][k] = j[static_cast<size_t>(4 * i + k)].get<double>();
    p.T[i] = j[static_cast<size_t>(4 * i + 3)].get<double>();
  }
  return p;
}

}  // namespace synth_detail

inline void save_sample(const std::string& dir, const SceneSample& s) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  auto p = [&](const char* name) { return (fs::path(dir) / name).string(); };
  save_png(p("prev.png"), s.prev);
  save_png(p("curr.png"), s.curr);
  save_png(p("next.png"), s.next);
  save_png(p("staticized.png"), s.staticized);
  save_pfm(p("depth_prev.pfm"), s.depth_prev.values);
  save_pfm(p("depth_curr.pfm"), s.depth_curr.values);
  save_pfm(p("depth_next.pfm"), s.depth_next.values);
  save_flo(p("flow_all_p2c.flo"), s.flow_all_p2c);
  save_flo(p("flow_static_p2c.flo"), s.flow_static_p2c);
  save_flo(p("flow_dyn_p2c.flo"), s.flow_dyn_p2c);
  save_flo(p("flow_all_c2p.flo"), s.flow_all_c2p);
  save_flo(p("flow_static_c2p.flo"), s.flow_static_c2p);
  save_flo(p("flow_dyn_c2p.flo"), s.flow_dyn_c2p);
  save_mask_png(p("dyn_mask_prev.png"), s.dyn_mask_prev);
  save_mask_png(p("dyn_mask_curr.png"), s.dyn_mask_curr);
  save_mask_png(p("occ_p2c.png"), s.occ_p2c);
  save_mask_png(p("occ_c2p.png"), s.occ_c2p);

  nlohmann::json meta;
  meta["schema_version"] = kSchemaVersion;
  meta["intrinsics"] = {{"fx", s.K.fx}, {"fy", s.K.fy}, {"cx", s.K.cx},
                        {"cy", s.K.cy}, {"width", s.K.width}, {"height", s.K.height}};
  meta["pose_prev_to_curr"] = synth_detail::pose_json(s.pose_prev_to_curr);
  meta["pose_curr_to_next"] = synth_detail::pose_json(s.pose_curr_to_next);
  meta["profile"] = to_string(s.profile);
  meta["dynamic"] = s.dynamic;
  meta["seed"] = s.seed;
  io_detail::write_file(p("meta.json"), meta.dump(2) + "\n");
}

inline SceneSample load_sample(const std::string& dir) {
  namespace fs = std::filesystem;
  auto p = [&](const char* name) {
    auto path = fs::path(dir) / name;
    if (!fs::exists(path)) throw IoError("sample file missing: " + path.string());
    return path.string();
  };
  SceneSample s;
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(io_detail::read_file(p("meta.json")));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("meta.json: parse error: ") + e.what());
  }
  auto need = [&](const char* field) -> const nlohmann::json& {
    if (!meta.contains(field)) throw IoError(std::string("meta.json: missing field ") + field);
    return meta[field];
  };
  if (need("schema_version").get<int>() != kSchemaVersion)
    throw IoError("meta.json: unsupported schema_version");
  const auto& kj = need("intrinsics");
  s.K = {kj.at("fx").get<double>(), kj.at("fy").get<double>(), kj.at("cx").get<double>(),
         kj.at("cy").get<double>(), kj.at("width").get<int>(), kj.at("height").get<int>()};
  s.pose_prev_to_curr = synth_detail::pose_from_json(need("pose_prev_to_curr"));
  s.pose_curr_to_next = synth_detail::pose_from_json(need("pose_curr_to_next"));
  s.profile = profile_from_string(need("profile").get<std::string>());
  s.dynamic = need("dynamic").get<bool>();
  s.seed = need("seed").get<uint64_t>();

  s.prev = load_png(p("prev.png"));
  s.curr = load_png(p("curr.png"));
  s.next = load_png(p("next.png"));
  s.staticized = load_png(p("staticized.png"));
  auto load_depth = [&](const char* name) {
    DepthMap d;
    d.values = load_pfm(p(name));
    d.valid = Mask({d.values.dim(0), d.values.dim(1)});
    for (long i = 0; i < d.values.numel(); ++i) d.valid[i] = d.values[i] > 0 ? 1 : 0;
    return d;
  };
  s.depth_prev = load_depth("depth_prev.pfm");
  s.depth_curr = load_depth("depth_curr.pfm");
  s.depth_next = load_depth("depth_next.pfm");
  s.flow_all_p2c = load_flo(p("flow_all_p2c.flo"));
  s.flow_static_p2c = load_flo(p("flow_static_p2c.flo"));
  s.flow_dyn_p2c = load_flo(p("flow_dyn_p2c.flo"));
  s.flow_all_c2p = load_flo(p("flow_all_c2p.flo"));
  s.flow_static_c2p = load_flo(p("flow_static_c2p.flo"));
  s.flow_dyn_c2p = load_flo(p("flow_dyn_c2p.flo"));
  s.dyn_mask_prev = load_mask_png(p("dyn_mask_prev.png"));
  s.dyn_mask_curr = load_mask_png(p("dyn_mask_curr.png"));
  s.occ_p2c = load_mask_png(p("occ_p2c.png"));
  s.occ_c2p = load_mask_png(p("occ_c2p.png"));
  return s;
}

// ---- dataset generation ----

struct DatasetConfig {
  std::string out_dir;
  int count = 12;
  uint64_t seed = 0;
  SceneConfig scene;
};

struct ManifestEntry {
  std::string dir;
  TextureProfile profile;
  bool dynamic;
  uint64_t seed;
};

struct Manifest {
  int schema_version = kSchemaVersion;
  int width = 0, height = 0;
  uint64_t seed = 0;
  std::vector<ManifestEntry> samples;
};

// Balanced over {dynamic, static} x {high-freq, low-texture, mixed}.
inline Manifest make_dataset(const DatasetConfig& cfg) {
  if (cfg.count < 1) throw std::invalid_argument("make_dataset: count must be >= 1");
  namespace fs = std::filesystem;
  fs::create_directories(cfg.out_dir);
  Rng rng(cfg.seed);
  Manifest man;
  man.width = cfg.scene.width;
  man.height = cfg.scene.height;
  man.seed = cfg.seed;
  static const TextureProfile profiles[3] = {TextureProfile::HighFreq,
                                             TextureProfile::LowTexture,
                                             TextureProfile::Mixed};
  for (int i = 0; i < cfg.count; ++i) {
    const bool dynamic = (i % 2) == 0;
    const TextureProfile profile = profiles[(i / 2) % 3];
    const uint64_t sample_seed = rng.derive(static_cast<uint64_t>(i));
    SceneSpec spec = make_scene_spec(cfg.scene, profile, dynamic, sample_seed);
    SceneSample sample = render(spec, sample_seed);
    char name[32];
    std::snprintf(name, sizeof(name), "sample_%04d", i);
    save_sample((fs::path(cfg.out_dir) / name).string(), sample);
    man.samples.push_back({name, profile, dynamic, sample_seed});
  }
  nlohmann::json j;
  j["schema_version"] = man.schema_version;
  j["width"] = man.width;
  j["height"] = man.height;
  j["seed"] = man.seed;
  j["samples"] = nlohmann::json::array();
  for (const auto& e : man.samples)
    j["samples"].push_back({{"dir", e.dir}, {"profile", to_string(e.profile)},
                            {"dynamic", e.dynamic}, {"seed", e.seed}});
  io_detail::write_file((fs::path(cfg.out_dir) / "manifest.json").string(), j.dump(2) + "\n");
  return man;
}

inline Manifest load_manifest(const std::string& dataset_dir) {
  namespace fs = std::filesystem;
  const auto path = fs::path(dataset_dir) / "manifest.json";
  if (!fs::exists(path)) throw IoError("manifest missing: " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io_detail::read_file(path.string()));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("manifest.json: parse error: ") + e.what());
  }
  Manifest man;
  man.schema_version = j.at("schema_version").get<int>();
  if (man.schema_version != kSchemaVersion)
    throw IoError("manifest.json: unsupported schema_version");
  man.width = j.at("width").get<int>();
  man.height = j.at("height").get<int>();
  man.seed = j.at("seed").get<uint64_t>();
  for (const auto& e : j.at("samples"))
    man.samples.push_back({e.at("dir").get<std::string>(),
                           profile_from_string(e.at("profile").get<std::string>()),
                           e.at("dynamic").get<bool>(), e.at("seed").get<uint64_t>()});
  return man;
}

}  // namespace flowdepth

#pragma once

#include <map>

#include <nlohmann/json.hpp>

#include "flowdepth/core/image_io.hpp"
#include "flowdepth/warping.hpp"

namespace flowdepth {

// Small differentiable networks: depth prior, pose, flow prior (coarse-to-fine
// correlation net), mask U-Net, and the cost-volume multi-frame depth net.
// All parameters live in a ParamSet so checkpointing and the optimizer can
// treat every network uniformly.

struct NetworkConfig {
  int base_channels = 16;
  int num_scales = 2;
  double depth_min = 1.0;   // disparity endpoints are 1/depth_max .. 1/depth_min
  double depth_max = 25.0;
  int mask_unet_depth = 3;
  double sigmoid_threshold = 0.6;

  void validate() const {
    if (!(depth_min > 0 && depth_min < depth_max))
      throw std::invalid_argument("NetworkConfig: need 0 < depth_min < depth_max");
    if (mask_unet_depth < 1)
      throw std::invalid_argument("NetworkConfig: mask_unet_depth must be >= 1");
    if (!(sigmoid_threshold > 0 && sigmoid_threshold < 1))
      throw std::invalid_argument("NetworkConfig: sigmoid_threshold must be in (0,1)");
    if (base_channels < 1) throw std::invalid_argument("NetworkConfig: base_channels >= 1");
    if (num_scales < 1 || num_scales > 3)
      throw std::invalid_argument("NetworkConfig: num_scales must be 1..3");
  }
};

// Ordered named parameter container (std::map keeps iteration deterministic).
struct ParamSet {
  std::map<std::string, ad::Var> params;

  ad::Var make(const std::string& name, Tensor init) {
    if (params.count(name)) throw std::invalid_argument("duplicate parameter: " + name);
    auto v = ad::leaf(std::move(init));
    params.emplace(name, v);
    return v;
  }

  ad::Var at(const std::string& name) const {
    auto it = params.find(name);
    if (it == params.end()) throw std::invalid_argument("unknown parameter: " + name);
    return it->second;
  }
};

namespace net_detail {

inline Tensor he_init(std::vector<int> shape, Rng& rng, double gain = 1.0) {
  Tensor t(shape);
  long fan_in = 1;
  for (size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
  const double std = gain * std::sqrt(2.0 / static_cast<double>(fan_in));
  for (long i = 0; i < t.numel(); ++i) t[i] = rng.normal(0, std);
  return t;
}

}  // namespace net_detail

struct Conv {
  ad::Var w, b;
  int dil = 1;
  Conv() = default;
  Conv(ParamSet& ps, const std::string& name, int ci, int co, int k, Rng& rng,
       double gain = 1.0, int dilation = 1)
      : dil(dilation) {
    w = ps.make(name + ".w", gain == 0.0 ? Tensor({co, ci, k, k})
                                         : net_detail::he_init({co, ci, k, k}, rng, gain));
    b = ps.make(name + ".b", Tensor({co}));
  }
  ad::Var operator()(const ad::Var& x, int stride = 1) const {
    return ad::conv2d(x, w, b, stride, -1, dil);
  }
};

// d = 1 / (s*(1/d_min - 1/d_max) + 1/d_max); s=1 -> d_min, s=0 -> d_max
inline ad::Var sigmoid_to_depth(const ad::Var& s, const NetworkConfig& cfg) {
  const double span = 1.0 / cfg.depth_min - 1.0 / cfg.depth_max;
  return ad::reciprocal(ad::add_scalar(ad::mul_scalar(s, span), 1.0 / cfg.depth_max));
}

// three-stage feature encoder: [bc,H,W], [2bc,H/2,W/2], [2bc,H/4,W/4]
struct Encoder {
  Conv c0, c1, c2;
  Encoder() = default;
  Encoder(ParamSet& ps, const std::string& p, int in_ch, int bc, Rng& rng)
      : c0(ps, p + ".c0", in_ch, bc, 3, rng),
        c1(ps, p + ".c1", bc, 2 * bc, 3, rng),
        c2(ps, p + ".c2", 2 * bc, 2 * bc, 3, rng) {}

  std::array<ad::Var, 3> forward(const ad::Var& x) const {
    auto e0 = ad::elu(c0(x));
    auto e1 = ad::elu(c1(e0, 2));
    auto e2 = ad::elu(c2(e1, 2));
    return {e0, e1, e2};
  }
};

struct DepthPrediction {
  std::vector<ad::Var> depth;    // coarse-to-fine order: index 0 = full res
  std::vector<ad::Var> sig;      // matching sigmoid outputs
};

struct DepthPriorNet {
  NetworkConfig cfg;
  Encoder enc;
  Conv u1, u0, head0, head1, head2;

  DepthPriorNet() = default;
  DepthPriorNet(ParamSet& ps, const std::string& p, const NetworkConfig& c, Rng& rng)
      : cfg(c), enc(ps, p + ".enc", 3, c.base_channels, rng) {
    const int bc = c.base_channels;
    u1 = Conv(ps, p + ".u1", 2 * bc + 2 * bc, 2 * bc, 3, rng);
    u0 = Conv(ps, p + ".u0", 2 * bc + bc, bc, 3, rng);
    head0 = Conv(ps, p + ".head0", bc, 1, 3, rng);
    head1 = Conv(ps, p + ".head1", 2 * bc, 1, 3, rng);
    head2 = Conv(ps, p + ".head2", 2 * bc, 1, 3, rng);
  }

  DepthPrediction forward(const ad::Var& img) const {
    const int H = img->val.dim(1), W = img->val.dim(2);
    auto [e0, e1, e2] = enc.forward(img);
    auto d1 = ad::elu(u1(ad::concat0({ad::upsample_nearest(e2, e1->val.dim(1), e1->val.dim(2)), e1})));
    auto d0 = ad::elu(u0(ad::concat0({ad::upsample_nearest(d1, H, W), e0})));
    DepthPrediction out;
    std::vector<ad::Var> sigs = {ad::sigmoid(head0(d0)), ad::sigmoid(head1(d1)),
                                 ad::sigmoid(head2(e2))};
    for (int s = 0; s < cfg.num_scales; ++s) {
      out.sig.push_back(sigs[static_cast<size_t>(s)]);
      out.depth.push_back(sigmoid_to_depth(sigs[static_cast<size_t>(s)], cfg));
    }
    return out;
  }
};

struct PoseNet {
  Conv c0, c1, c2;
  ad::Var fw, fb;  // final linear head

  PoseNet() = default;
  PoseNet(ParamSet& ps, const std::string& p, const NetworkConfig& c, Rng& rng) {
    const int bc = c.base_channels;
    c0 = Conv(ps, p + ".c0", 6, bc, 3, rng);
    c1 = Conv(ps, p + ".c1", bc, 2 * bc, 3, rng);
    c2 = Conv(ps, p + ".c2", 2 * bc, 2 * bc, 3, rng);
    fw = ps.make(p + ".fw", net_detail::he_init({6, 2 * bc}, rng, 0.1));
    fb = ps.make(p + ".fb", Tensor({6}));
  }

  // rt [12]: row-major rotation then translation (see geometry.hpp)
  ad::Var forward(const ad::Var& img_a, const ad::Var& img_b) const {
    auto x = ad::concat0({img_a, img_b});
    auto h = ad::elu(c2(ad::elu(c1(ad::elu(c0(x, 2)), 2)), 2));
    auto v = ad::mean_hw(h);
    auto aa = ad::mul_scalar(ad::linear(v, fw, fb), 0.01);
    return rt_from_axisangle(aa);
  }

  Pose pose(const ImageFrame& a, const ImageFrame& b) const {
    return pose_from_rt(forward(ad::constant(a), ad::constant(b))->val);
  }
};

// coarse-to-fine correlation flow net: estimate at 1/4 resolution, refine at
// 1/2 and full resolution with feature warping (RAFT-small stand-in)
struct FlowPriorNet {
  static constexpr int kCorrRadius = 4;
  Encoder enc;
  std::array<Conv, 3> mix;    // per level: corr+feat+flow -> hidden
  std::array<Conv, 3> delta;  // hidden -> 2-channel flow update (zero init)

  FlowPriorNet() = default;
  FlowPriorNet(ParamSet& ps, const std::string& p, const NetworkConfig& c, Rng& rng)
      : enc(ps, p + ".enc", 3, c.base_channels, rng) {
    const int bc = c.base_channels;
    const int corr = (2 * kCorrRadius + 1) * (2 * kCorrRadius + 1);
    const int feat[3] = {bc, 2 * bc, 2 * bc};  // per level, fine-to-coarse
    for (int l = 0; l < 3; ++l) {
      mix[l] = Conv(ps, p + ".mix" + std::to_string(l), corr + feat[l] + 2, 2 * bc, 3, rng);
      delta[l] = Conv(ps, p + ".delta" + std::to_string(l), 2 * bc, 2, 3, rng, 0.0);
    }
  }

  ad::Var forward(const ad::Var& img_a, const ad::Var& img_b) const {
    auto fa = enc.forward(img_a);
    auto fb = enc.forward(img_b);
    ad::Var flow;  // [2,h,w] at the current level
    for (int l = 2; l >= 0; --l) {
      const auto& a = fa[static_cast<size_t>(l)];
      const auto& b = fb[static_cast<size_t>(l)];
      const int h = a->val.dim(1), w = a->val.dim(2);
      if (!flow) {
        flow = ad::constant(Tensor({2, h, w}));
      } else {
        flow = ad::mul_scalar(ad::upsample_nearest(flow, h, w), 2.0);
      }
      auto bw = ad::grid_sample(b, flow).image;
      auto corr = ad::correlation(a, bw, kCorrRadius);
      auto hmix = ad::elu(mix[l](ad::concat0({corr, a, flow})));
      flow = ad::add(flow, delta[l](hmix));
    }
    return flow;  // full resolution
  }
};

struct MaskOutput {
  ad::Var soft;  // [1,H,W] in (0,1)
  Mask hard;     // soft > threshold
};

// 3-stage U-Net over (dynamic flow, image) -> dynamic-region mask
struct MaskUNet {
  NetworkConfig cfg;
  Conv d0, d1, d2, u1, u0, head;

  MaskUNet() = default;
  MaskUNet(ParamSet& ps, const std::string& p, const NetworkConfig& c, Rng& rng) : cfg(c) {
    const int bc = c.base_channels;
    d0 = Conv(ps, p + ".d0", 5, bc, 3, rng);
    d1 = Conv(ps, p + ".d1", bc, 2 * bc, 3, rng);
    d2 = Conv(ps, p + ".d2", 2 * bc, 2 * bc, 3, rng);
    u1 = Conv(ps, p + ".u1", 2 * bc + 2 * bc, bc, 3, rng);
    u0 = Conv(ps, p + ".u0", bc + bc, bc, 3, rng);
    head = Conv(ps, p + ".head", bc, 1, 3, rng, 0.0);
  }

  MaskOutput forward(const ad::Var& flow_d, const ad::Var& img) const {
    const int H = img->val.dim(1), W = img->val.dim(2);
    auto x = ad::concat0({flow_d, img});
    auto e0 = ad::elu(d0(x));
    auto e1 = ad::elu(d1(e0, 2));
    auto e2 = ad::elu(d2(e1, 2));
    auto m1 = ad::elu(u1(ad::concat0({ad::upsample_nearest(e2, e1->val.dim(1), e1->val.dim(2)), e1})));
    auto m0 = ad::elu(u0(ad::concat0({ad::upsample_nearest(m1, H, W), e0})));
    auto soft = ad::sigmoid(head(m0));
    Mask hard({H, W});
    for (int y = 0; y < H; ++y)
      for (int xx = 0; xx < W; ++xx)
        hard.at(y, xx) = soft->val.at(0, y, xx) > cfg.sigmoid_threshold ? 1 : 0;
    return {soft, hard};
  }
};

// cost-volume depth net: image features + probability volume (plus its
// soft-argmin expected depth) -> full-resolution depth
struct MultiFrameDepthNet {
  NetworkConfig cfg;
  int n_candidates = 0;
  Encoder enc;
  Conv cvp, fuse, u1, u0, head;

  MultiFrameDepthNet() = default;
  MultiFrameDepthNet(ParamSet& ps, const std::string& p, const NetworkConfig& c,
                     int n_cand, Rng& rng)
      : cfg(c), n_candidates(n_cand), enc(ps, p + ".enc", 3, c.base_channels, rng) {
    const int bc = c.base_channels;
    cvp = Conv(ps, p + ".cvp", n_cand, 2 * bc, 3, rng);
    fuse = Conv(ps, p + ".fuse", 2 * bc + 2 * bc + 1, 2 * bc, 3, rng);
    u1 = Conv(ps, p + ".u1", 2 * bc + 2 * bc, bc, 3, rng);
    u0 = Conv(ps, p + ".u0", bc + bc + 1, bc, 3, rng);
    head = Conv(ps, p + ".head", bc, 1, 3, rng);
  }

  // probs: [n, H/4, W/4] probability volume; candidates: the n depths
  DepthPrediction forward(const ad::Var& img, const ad::Var& probs,
                          const std::vector<double>& candidates) const {
    const int H = img->val.dim(1), W = img->val.dim(2);
    if (probs->val.ndim() != 3 || probs->val.dim(0) != n_candidates ||
        probs->val.dim(1) != H / 4 || probs->val.dim(2) != W / 4)
      throw std::invalid_argument("MultiFrameDepthNet: cost volume shape " +
                                  shape_str(probs->val.shape) + " does not match image " +
                                  shape_str(img->val.shape));
    if (static_cast<int>(candidates.size()) != n_candidates)
      throw std::invalid_argument("MultiFrameDepthNet: candidate count mismatch");
    auto [e0, e1, e2] = enc.forward(img);
    // expected candidate depth, normalized to [0,1]
    Tensor dn({n_candidates});
    for (int i = 0; i < n_candidates; ++i)
      dn[i] = (candidates[static_cast<size_t>(i)] - cfg.depth_min) /
              (cfg.depth_max - cfg.depth_min);
    auto d_exp = ad::channel_combine(probs, dn);
    auto cv = ad::elu(cvp(probs));
    auto x2 = ad::elu(fuse(ad::concat0({e2, cv, d_exp})));
    auto m1 = ad::elu(u1(ad::concat0({ad::upsample_nearest(x2, e1->val.dim(1), e1->val.dim(2)), e1})));
    auto m0 = ad::elu(u0(ad::concat0({ad::upsample_nearest(m1, H, W), e0,
                                      ad::upsample_nearest(d_exp, H, W)})));
    auto s = ad::sigmoid(head(m0));
    DepthPrediction out;
    out.sig.push_back(s);
    out.depth.push_back(sigmoid_to_depth(s, cfg));
    return out;
  }
};

// ---- checkpointing ----
// Single-file archive: magic, LE uint64 header length, JSON header (schema
// version, config echo, tensor table), float32 data in header order.

inline constexpr char kSnapshotMagic[] = "FDSNAP1\n";
inline constexpr int kSnapshotSchema = 1;

// Saving quantizes the in-memory parameters through float32 so that a reload
// reproduces the exact same forward passes as the process that saved.
inline void save_checkpoint(const std::string& path, ParamSet& ps,
                            const nlohmann::json& config_echo = {}) {
  nlohmann::json header;
  header["schema_version"] = kSnapshotSchema;
  header["config"] = config_echo;
  header["tensors"] = nlohmann::json::array();
  std::string blob;
  for (auto& [name, var] : ps.params) {
    Tensor& t = var->val;
    if (!t.all_finite()) throw IoError("save_checkpoint: non-finite parameter " + name);
    header["tensors"].push_back({{"name", name}, {"shape", t.shape}});
    for (long i = 0; i < t.numel(); ++i) {
      const float f = static_cast<float>(t[i]);
      t[i] = f;
      blob.append(reinterpret_cast<const char*>(&f), 4);
    }
  }
  const std::string hs = header.dump();
  std::string out(kSnapshotMagic, 8);
  const uint64_t hlen = hs.size();
  out.append(reinterpret_cast<const char*>(&hlen), 8);
  out += hs;
  out += blob;
  io_detail::write_file(path, out);
}

struct Snapshot {
  nlohmann::json config;
  std::map<std::string, Tensor> tensors;
};

inline Snapshot load_checkpoint(const std::string& path) {
  const std::string buf = io_detail::read_file(path);
  if (buf.size() < 16 || std::memcmp(buf.data(), kSnapshotMagic, 8) != 0)
    throw IoError("checkpoint: bad magic in " + path);
  uint64_t hlen = 0;
  std::memcpy(&hlen, buf.data() + 8, 8);
  if (buf.size() < 16 + hlen) throw IoError("checkpoint: truncated header in " + path);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(buf.substr(16, hlen));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("checkpoint: header parse error: ") + e.what());
  }
  if (header.at("schema_version").get<int>() != kSnapshotSchema)
    throw IoError("checkpoint: unsupported schema version in " + path);
  Snapshot snap;
  snap.config = header.value("config", nlohmann::json{});
  size_t pos = 16 + hlen;
  for (const auto& e : header.at("tensors")) {
    const std::string name = e.at("name").get<std::string>();
    Tensor t(e.at("shape").get<std::vector<int>>());
    if (pos + static_cast<size_t>(t.numel()) * 4 > buf.size())
      throw IoError("checkpoint: truncated tensor data in " + path);
    for (long i = 0; i < t.numel(); ++i) {
      float f;
      std::memcpy(&f, buf.data() + pos, 4);
      pos += 4;
      t[i] = f;
    }
    if (snap.tensors.count(name)) throw IoError("checkpoint: duplicate tensor " + name);
    snap.tensors.emplace(name, std::move(t));
  }
  return snap;
}

inline void apply_checkpoint(ParamSet& ps, const Snapshot& snap) {
  for (auto& [name, var] : ps.params) {
    auto it = snap.tensors.find(name);
    if (it == snap.tensors.end()) throw IoError("checkpoint: missing tensor " + name);
    if (it->second.shape != var->val.shape)
      throw IoError("checkpoint: shape mismatch for " + name + ": " +
                    shape_str(it->second.shape) + " vs " + shape_str(var->val.shape));
    var->val = it->second;
  }
}

}  // namespace flowdepth

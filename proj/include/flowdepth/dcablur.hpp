#pragma once

#include "flowdepth/core/optim.hpp"
#include "flowdepth/networks.hpp"
#include "flowdepth/synth.hpp"

namespace flowdepth {

// Depth-cue-aware blur: find high-frequency pixels from color differences,
// learn a mask that marks which of them are depth edges, and blur only the
// remaining texture edges before photometric losses.

inline constexpr double kFreqThreshold = 0.1;      // tau_f on the frequency map
inline constexpr double kDepthCueThreshold = 0.5;  // tau_dc on the cue mask
inline constexpr double kBlurSigma = 1.0;          // 5x5 Gaussian

struct FrequencyMap {
  Tensor values;  // [H,W], >= 0
  double threshold = kFreqThreshold;
};

struct DepthCueMask {
  Tensor values;  // [H,W] in [0,1]; 1 = depth edge, protect from blur
};

// per pixel: max over the 4-neighbors and channels of |color difference|
inline FrequencyMap frequency_map(const ImageFrame& img, double tau_f = kFreqThreshold) {
  const int C = img.dim(0), H = img.dim(1), W = img.dim(2);
  FrequencyMap f;
  f.threshold = tau_f;
  f.values = Tensor({H, W});
  static constexpr int dy[4] = {-1, 1, 0, 0}, dx[4] = {0, 0, -1, 1};
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double m = 0;
      for (int k = 0; k < 4; ++k) {
        const int ny = y + dy[k], nx = x + dx[k];
        if (ny < 0 || ny >= H || nx < 0 || nx >= W) continue;
        for (int c = 0; c < C; ++c)
          m = std::max(m, std::fabs(img.at(c, y, x) - img.at(c, ny, nx)));
      }
      f.values.at(y, x) = m;
    }
  return f;
}

namespace dcab_detail {

// normalized 5x5 Gaussian as a depthwise conv weight [C,C,5,5]
inline Tensor gaussian_weight(int C, double sigma = kBlurSigma) {
  double g[5], total = 0;
  for (int k = -2; k <= 2; ++k) {
    g[k + 2] = std::exp(-0.5 * k * k / (sigma * sigma));
  }
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) total += g[i] * g[j];
  Tensor w({C, C, 5, 5});
  for (int c = 0; c < C; ++c)
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 5; ++j) w.at(c, c, i, j) = g[i] * g[j] / total;
  return w;
}

}  // namespace dcab_detail

// full-image Gaussian blur with reflected borders (mean-preserving up to
// boundary effects)
inline ad::Var gaussian_blur(const ad::Var& img) {
  const int C = img->val.dim(0);
  auto w = ad::constant(dcab_detail::gaussian_weight(C));
  auto b = ad::constant(Tensor({C}));
  return ad::conv2d(ad::pad_reflect(img, 2), w, b, 1, 0);
}

// blend the blur in only where fmap > tau_f and the cue mask is below tau_dc;
// everywhere else the output equals the input exactly
inline ad::Var apply_dcablur(const ad::Var& img, const FrequencyMap& fmap,
                             const DepthCueMask& cue,
                             double tau_dc = kDepthCueThreshold) {
  const int C = img->val.dim(0), H = img->val.dim(1), W = img->val.dim(2);
  check_same_shape(fmap.values, cue.values, "apply_dcablur");
  if (fmap.values.dim(0) != H || fmap.values.dim(1) != W)
    throw std::invalid_argument("apply_dcablur: map size does not match image");
  Tensor sel({C, H, W}), keep({C, H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const bool blur =
          fmap.values.at(y, x) > fmap.threshold && cue.values.at(y, x) < tau_dc;
      for (int c = 0; c < C; ++c) {
        sel.at(c, y, x) = blur ? 1.0 : 0.0;
        keep.at(c, y, x) = blur ? 0.0 : 1.0;
      }
    }
  // kept pixels compute img*1 + blurred*0, which is exact for values in [0,1]
  return ad::add(ad::mul_const(img, keep), ad::mul_const(gaussian_blur(img), sel));
}

inline ImageFrame apply_dcablur(const ImageFrame& img, const FrequencyMap& fmap,
                                const DepthCueMask& cue,
                                double tau_dc = kDepthCueThreshold) {
  return apply_dcablur(ad::constant(img), fmap, cue, tau_dc)->val;
}

// ---- depth-cue mask learning ----
// A small depth backbone (encoder + decoder) is pretrained supervised on the
// synthetic ground truth and frozen. The cue decoder is then trained so that
// gating the image by the mask preserves the backbone's depth prediction
// while the mask stays sparse:
//   L = mean |N(M (.) I) - D_prior| + sigma * mean(M)
// Pixels the backbone needs to see to reproduce its own depth (depth edges)
// get high M; texture the backbone ignores can be masked away cheaply.

// Full-resolution dilated-conv backbone. Dilations widen the receptive field
// without any down/upsampling, so the predicted depth keeps sharp object
// silhouettes — the signal the cue decoder has to pick up.
struct DepthCueModel {
  NetworkConfig cfg;
  ParamSet params;
  Conv e0, e1, e2;         // encoder E, dilations 1/2/4
  Conv n0, n1, nhead;      // depth head N, dilations 8/4/1
  Conv c0, chead;          // cue decoder over E's features

  DepthCueModel() = default;
  DepthCueModel(const NetworkConfig& c, uint64_t seed) : cfg(c) {
    cfg.validate();
    Rng rng(seed);
    const int bc = cfg.base_channels;
    e0 = Conv(params, "depth.e0", 3, bc, 3, rng, 1.0, 1);
    e1 = Conv(params, "depth.e1", bc, bc, 3, rng, 1.0, 2);
    e2 = Conv(params, "depth.e2", bc, bc, 3, rng, 1.0, 4);
    n0 = Conv(params, "depth.n0", bc, bc, 3, rng, 1.0, 8);
    n1 = Conv(params, "depth.n1", bc, bc, 3, rng, 1.0, 4);
    nhead = Conv(params, "depth.head", bc, 1, 3, rng, 1.0, 1);
    c0 = Conv(params, "cue.c0", bc, bc, 3, rng, 1.0, 4);
    chead = Conv(params, "cue.head", bc, 1, 3, rng, 0.0);  // start at M = 0.5
  }

  ad::Var encode(const ad::Var& img) const {
    return ad::elu(e2(ad::elu(e1(ad::elu(e0(img))))));
  }

  // normalized disparity in (0,1), full resolution
  ad::Var predict_sig(const ad::Var& img) const {
    auto f = encode(img);
    return ad::sigmoid(nhead(ad::elu(n1(ad::elu(n0(f))))));
  }

  ad::Var cue(const ad::Var& img) const {
    return ad::sigmoid(chead(ad::elu(c0(encode(img)))));  // [1,H,W]
  }

  DepthCueMask cue_mask(const ImageFrame& img) const {
    auto m = cue(ad::constant(img))->val;
    DepthCueMask out;
    out.values = Tensor({m.dim(1), m.dim(2)});
    for (long i = 0; i < out.values.numel(); ++i) out.values[i] = m[i];
    return out;
  }

  std::map<std::string, ad::Var> subset(const std::string& prefix) const {
    std::map<std::string, ad::Var> out;
    for (const auto& [name, var] : params.params)
      if (name.rfind(prefix, 0) == 0) out.emplace(name, var);
    return out;
  }

  void freeze_backbone() {
    for (auto& [name, var] : subset("depth.")) var->requires_grad = false;
  }
};

namespace dcab_detail {

// normalized disparity in [0,1]; the training losses live in these units so
// the fit and sparsity terms of the cue loss are commensurate
inline Tensor disparity_target(const DepthMap& d, const NetworkConfig& cfg) {
  Tensor t({1, d.height(), d.width()});
  const double span = 1.0 / cfg.depth_min - 1.0 / cfg.depth_max;
  for (long i = 0; i < d.values.numel(); ++i)
    t[i] = (1.0 / d.values[i] - 1.0 / cfg.depth_max) / span;
  return t;
}

inline double halved_lr(double base, int epoch, int halve_every = 10) {
  return base * std::pow(0.5, epoch / halve_every);
}

// random multiplicative gain field: smooth low-frequency attenuation, sparse
// per-pixel attenuation, and a few near-zero erased patches, applied
// identically to all channels
inline Tensor random_gain(int H, int W, Rng& rng) {
  Tensor g({3, H, W});
  const double amp = rng.uniform(0.0, 0.7);
  const double wx = rng.uniform(0.02, 0.2), wy = rng.uniform(0.02, 0.2);
  const double ph = rng.uniform(0.0, 6.28318);
  const double drop_p = rng.uniform(0.0, 0.15);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double v = 1.0 - amp * (0.5 + 0.5 * std::sin(wx * x + wy * y + ph));
      if (rng.uniform(0.0, 1.0) < drop_p) v *= rng.uniform(0.1, 1.0);
      for (int c = 0; c < 3; ++c) g.at(c, y, x) = v;
    }
  const int patches = rng.randint(0, 4);
  for (int p = 0; p < patches; ++p) {
    const int ph_ = rng.randint(3, 9), pw = rng.randint(3, 9);
    const int py = rng.randint(0, std::max(0, H - ph_));
    const int px = rng.randint(0, std::max(0, W - pw));
    const double v = rng.uniform(0.0, 0.2);
    for (int y = py; y < std::min(H, py + ph_); ++y)
      for (int x = px; x < std::min(W, px + pw); ++x)
        for (int c = 0; c < 3; ++c) g.at(c, y, x) = v;
  }
  return g;
}

// same scene geometry rendered under a fresh texture draw: keep the plane,
// objects, and camera path, take only the textures from a new spec
inline SceneSpec retexture(const SceneSpec& geo, const SceneConfig& cfg,
                           TextureProfile profile, bool dynamic,
                           uint64_t tex_seed) {
  SceneSpec s = make_scene_spec(cfg, profile, dynamic, tex_seed);
  s.plane_normal = geo.plane_normal;
  s.plane_d = geo.plane_d;
  s.camera_step = geo.camera_step;
  auto textures = s.objects;
  s.objects = geo.objects;
  for (size_t i = 0; i < s.objects.size(); ++i)
    s.objects[i].texture = textures[i % textures.size()].texture;
  return s;
}

// scale object albedo down so figure/ground contrast survives any texture
// draw; otherwise some draws blend objects into the background and the
// backbone falls back to predicting the plane everywhere
inline void darken_objects(SceneSpec& s, double factor = 0.45) {
  for (auto& o : s.objects) {
    for (auto& b : o.texture.base) b *= factor;
    for (auto& w : o.texture.waves) w.amp *= factor;
    o.texture.stripe_contrast *= factor;
  }
}

}  // namespace dcab_detail

// Training corpus for the depth-cue mask. Each training geometry appears
// under several independent texture draws so the pretrained backbone learns
// to key on silhouettes rather than on any particular texture.
struct DepthCueDataset {
  std::vector<SceneSample> train;  // geometries x texture variants
  std::vector<SceneSample> base;   // one canonical render per train geometry
  std::vector<SceneSample> val;    // held-out geometries
};

inline DepthCueDataset make_depth_cue_dataset(const SceneConfig& cfg,
                                              int geometries,
                                              int textures_per_geometry,
                                              int val_scenes, uint64_t seed) {
  DepthCueDataset d;
  for (int g = 0; g < geometries + val_scenes; ++g) {
    const uint64_t gseed = seed + static_cast<uint64_t>(g);
    SceneSpec spec = make_scene_spec(cfg, TextureProfile::Mixed, true, gseed);
    dcab_detail::darken_objects(spec);
    if (g >= geometries) {
      d.val.push_back(render(spec, gseed));
      continue;
    }
    d.base.push_back(render(spec, gseed));
    d.train.push_back(d.base.back());
    for (int t = 1; t < textures_per_geometry; ++t) {
      const uint64_t tseed = seed + 1000 + static_cast<uint64_t>(g) * 97 + t;
      SceneSpec v =
          dcab_detail::retexture(spec, cfg, TextureProfile::Mixed, true, tseed);
      dcab_detail::darken_objects(v);
      d.train.push_back(render(v, tseed));
    }
  }
  return d;
}

// Supervised pretraining of the depth backbone on ground-truth depth;
// returns the mean L1 loss per epoch. Inputs are augmented with random gain
// fields (the same perturbation family the cue mask later applies) so the
// backbone only stays sensitive to pixels whose structure it actually needs.
inline std::vector<double> pretrain_depth_cue_backbone(
    DepthCueModel& model, const std::vector<SceneSample>& train, int epochs,
    double base_lr = 2e-4, double augment_prob = 0.7, uint64_t augment_seed = 1234,
    int halve_every = 10) {
  auto trainable = model.subset("depth.");
  Adam opt(base_lr);
  Rng rng(augment_seed);
  std::vector<double> history;
  for (int e = 0; e < epochs; ++e) {
    opt.lr = dcab_detail::halved_lr(base_lr, e, halve_every);
    double total = 0;
    for (const auto& s : train) {
      Adam::zero_grad(trainable);
      auto input = ad::constant(s.curr);
      if (rng.uniform(0.0, 1.0) < augment_prob)
        input = ad::mul_const(
            input, dcab_detail::random_gain(s.curr.dim(1), s.curr.dim(2), rng));
      auto pred = model.predict_sig(input);
      auto loss = ad::mean_all(ad::vabs(ad::sub(
          pred, ad::constant(dcab_detail::disparity_target(s.depth_curr, model.cfg)))));
      if (!std::isfinite(loss->val[0]))
        throw std::runtime_error("pretrain_depth_cue_backbone: loss diverged at epoch " +
                                 std::to_string(e));
      ad::backward(loss);
      opt.step(trainable);
      total += loss->val[0];
    }
    history.push_back(total / static_cast<double>(train.size()));
  }
  return history;
}

// cue-decoder training with the backbone frozen; D_prior is the frozen
// backbone's own prediction on the ungated image
inline std::vector<double> train_depth_cue(DepthCueModel& model,
                                           const std::vector<SceneSample>& train,
                                           int epochs, double sigma = 0.1,
                                           double base_lr = 2e-4, int halve_every = 10) {
  model.freeze_backbone();
  auto trainable = model.subset("cue.");
  Adam opt(base_lr);

  std::vector<Tensor> priors;  // frozen N(I) in disparity units, fixed for the run
  priors.reserve(train.size());
  for (const auto& s : train)
    priors.push_back(model.predict_sig(ad::constant(s.curr))->val);

  std::vector<double> history;
  for (int e = 0; e < epochs; ++e) {
    opt.lr = dcab_detail::halved_lr(base_lr, e, halve_every);
    double total = 0;
    for (size_t i = 0; i < train.size(); ++i) {
      Adam::zero_grad(trainable);
      auto img = ad::constant(train[i].curr);
      auto m = model.cue(img);
      auto gated = ad::mul(img, ad::concat0({m, m, m}));
      auto pred = model.predict_sig(gated);
      auto fit = ad::mean_all(ad::vabs(ad::sub(pred, ad::constant(priors[i]))));
      auto loss = ad::add(fit, ad::mul_scalar(ad::mean_all(m), sigma));
      if (!std::isfinite(loss->val[0]))
        throw std::runtime_error("train_depth_cue: loss diverged at epoch " +
                                 std::to_string(e) + ", sample " + std::to_string(i));
      ad::backward(loss);
      opt.step(trainable);
      total += loss->val[0];
    }
    history.push_back(total / static_cast<double>(train.size()));
  }
  return history;
}

// ---- edge classification against ground truth (tests and evaluation) ----

struct EdgePixels {
  Mask depth_edges;    // 4-neighbor depth jump above the threshold
  Mask texture_edges;  // high-frequency pixels at least 2 px from any depth edge
};

inline EdgePixels classify_edges(const DepthMap& depth, const ImageFrame& img,
                                 double depth_jump = 1.0,
                                 double tau_f = kFreqThreshold) {
  const int H = depth.height(), W = depth.width();
  EdgePixels out;
  out.depth_edges = Mask({H, W});
  out.texture_edges = Mask({H, W});
  static constexpr int dy[4] = {-1, 1, 0, 0}, dx[4] = {0, 0, -1, 1};
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int k = 0; k < 4; ++k) {
        const int ny = y + dy[k], nx = x + dx[k];
        if (ny < 0 || ny >= H || nx < 0 || nx >= W) continue;
        if (std::fabs(depth.values.at(y, x) - depth.values.at(ny, nx)) > depth_jump) {
          out.depth_edges.at(y, x) = 1;
          break;
        }
      }
  auto f = frequency_map(img, tau_f);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      if (f.values.at(y, x) <= tau_f) continue;
      bool near_depth_edge = false;
      for (int ny = y - 2; ny <= y + 2 && !near_depth_edge; ++ny)
        for (int nx = x - 2; nx <= x + 2 && !near_depth_edge; ++nx)
          if (ny >= 0 && ny < H && nx >= 0 && nx < W && out.depth_edges.at(ny, nx))
            near_depth_edge = true;
      if (!near_depth_edge) out.texture_edges.at(y, x) = 1;
    }
  return out;
}

struct CueSeparation {
  double mean_depth_edge = 0;    // mean M on GT depth-discontinuity pixels
  double mean_texture_edge = 0;  // mean M on pure-texture-edge pixels
  long depth_edge_pixels = 0, texture_edge_pixels = 0;
  double ratio() const {
    return mean_depth_edge / std::max(mean_texture_edge, 1e-12);
  }
};

inline CueSeparation cue_separation(const DepthCueModel& model,
                                    const std::vector<SceneSample>& val) {
  CueSeparation out;
  double sd = 0, st = 0;
  for (const auto& s : val) {
    auto edges = classify_edges(s.depth_curr, s.curr);
    auto m = model.cue_mask(s.curr);
    const int H = s.depth_curr.height(), W = s.depth_curr.width();
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        if (edges.depth_edges.at(y, x)) {
          sd += m.values.at(y, x);
          ++out.depth_edge_pixels;
        } else if (edges.texture_edges.at(y, x)) {
          st += m.values.at(y, x);
          ++out.texture_edge_pixels;
        }
      }
  }
  if (out.depth_edge_pixels) out.mean_depth_edge = sd / out.depth_edge_pixels;
  if (out.texture_edge_pixels) out.mean_texture_edge = st / out.texture_edge_pixels;
  return out;
}

}  // namespace flowdepth

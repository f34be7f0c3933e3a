#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "flowdepth/cost_volume.hpp"
#include "flowdepth/losses.hpp"
#include "flowdepth/metrics.hpp"

namespace flowdepth {

// Orchestration: run configuration, the training stages, evaluation,
// visualization, and the ablation grid.

// ---- configuration ----

enum class DmfmMode { Off, NoMask, WithMask };

inline const char* to_string(DmfmMode m) {
  switch (m) {
    case DmfmMode::Off: return "off";
    case DmfmMode::NoMask: return "no-mask";
    default: return "with-mask";
  }
}

inline DmfmMode dmfm_mode_from_string(const std::string& s) {
  if (s == "off") return DmfmMode::Off;
  if (s == "no-mask") return DmfmMode::NoMask;
  if (s == "with-mask") return DmfmMode::WithMask;
  throw std::invalid_argument("dmfm mode must be off | no-mask | with-mask, got " + s);
}

struct StageSchedule {
  int epochs = 4;
  double lr = 1e-5;
};

struct RunConfig {
  std::string dataset_dir = "data";
  std::string out_dir = "run";
  uint64_t seed = 0;

  // dataset generation
  int dataset_count = 24;
  SceneConfig scene;
  double val_fraction = 0.25;  // trailing fraction of the manifest held out

  // model
  NetworkConfig net;
  int n_candidates = 90;
  int entropy_k = 3;
  double tau = kCostVolumeTau;

  // ablation toggles
  DmfmMode dmfm = DmfmMode::WithMask;
  bool dcablur_on = true;
  bool cvloss_on = true;

  // depth-cue stage (geometries x texture variants, rendered on the fly)
  int cue_geometries = 6;
  int cue_textures = 3;
  int cue_val_scenes = 2;
  int cue_base_channels = 16;
  int cue_pretrain_epochs = 40;
  int cue_epochs = 40;
  double cue_lr = 2e-4;
  int cue_halve_every = 10;
  double cue_sigma = 0.1;
  double cue_augment_prob = 0.7;

  StageSchedule stage1{4, 1e-5};
  StageSchedule stage2{8, 1e-6};

  void validate() const {
    net.validate();
    if (dataset_count < 1) throw std::invalid_argument("config: dataset_count >= 1");
    if (n_candidates < 2) throw std::invalid_argument("config: n_candidates >= 2");
    if (entropy_k < 1) throw std::invalid_argument("config: entropy_k >= 1");
    if (!(tau > 0)) throw std::invalid_argument("config: tau > 0");
    if (stage1.epochs < 1 || stage2.epochs < 1 || cue_epochs < 1 ||
        cue_pretrain_epochs < 1)
      throw std::invalid_argument("config: stage epochs must be positive");
    if (!(stage1.lr > 0 && stage2.lr > 0 && cue_lr > 0))
      throw std::invalid_argument("config: learning rates must be positive");
    if (!(val_fraction > 0 && val_fraction < 1))
      throw std::invalid_argument("config: val_fraction in (0,1)");
  }

  // output root can be redirected by the environment
  std::string resolved_out_dir() const {
    const char* root = std::getenv("FLOWDEPTH_OUT_ROOT");
    if (root && *root && std::filesystem::path(out_dir).is_relative())
      return (std::filesystem::path(root) / out_dir).string();
    return out_dir;
  }
};

inline nlohmann::json to_json(const RunConfig& c) {
  return {
      {"dataset_dir", c.dataset_dir},
      {"out_dir", c.out_dir},
      {"seed", c.seed},
      {"dataset_count", c.dataset_count},
      {"val_fraction", c.val_fraction},
      {"scene",
       {{"width", c.scene.width},
        {"height", c.scene.height},
        {"bg_depth", c.scene.bg_depth},
        {"obj_depth_min", c.scene.obj_depth_min},
        {"obj_depth_max", c.scene.obj_depth_max},
        {"objects_min", c.scene.objects_min},
        {"objects_max", c.scene.objects_max},
        {"max_speed_px", c.scene.max_speed_px},
        {"cam_trans", c.scene.cam_trans},
        {"cam_rot", c.scene.cam_rot},
        {"integer_motion", c.scene.integer_motion}}},
      {"net",
       {{"base_channels", c.net.base_channels},
        {"num_scales", c.net.num_scales},
        {"depth_min", c.net.depth_min},
        {"depth_max", c.net.depth_max},
        {"mask_unet_depth", c.net.mask_unet_depth},
        {"sigmoid_threshold", c.net.sigmoid_threshold}}},
      {"n_candidates", c.n_candidates},
      {"entropy_k", c.entropy_k},
      {"tau", c.tau},
      {"dmfm", to_string(c.dmfm)},
      {"dcablur", c.dcablur_on},
      {"cvloss", c.cvloss_on},
      {"cue",
       {{"geometries", c.cue_geometries},
        {"textures", c.cue_textures},
        {"val_scenes", c.cue_val_scenes},
        {"base_channels", c.cue_base_channels},
        {"pretrain_epochs", c.cue_pretrain_epochs},
        {"epochs", c.cue_epochs},
        {"lr", c.cue_lr},
        {"halve_every", c.cue_halve_every},
        {"sigma", c.cue_sigma},
        {"augment_prob", c.cue_augment_prob}}},
      {"stage1", {{"epochs", c.stage1.epochs}, {"lr", c.stage1.lr}}},
      {"stage2", {{"epochs", c.stage2.epochs}, {"lr", c.stage2.lr}}},
  };
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  nlohmann::json d = to_json(c);  // defaults
  d.merge_patch(j);
  c.dataset_dir = d.at("dataset_dir").get<std::string>();
  c.out_dir = d.at("out_dir").get<std::string>();
  c.seed = d.at("seed").get<uint64_t>();
  c.dataset_count = d.at("dataset_count").get<int>();
  c.val_fraction = d.at("val_fraction").get<double>();
  const auto& s = d.at("scene");
  c.scene.width = s.at("width").get<int>();
  c.scene.height = s.at("height").get<int>();
  c.scene.bg_depth = s.at("bg_depth").get<double>();
  c.scene.obj_depth_min = s.at("obj_depth_min").get<double>();
  c.scene.obj_depth_max = s.at("obj_depth_max").get<double>();
  c.scene.objects_min = s.at("objects_min").get<int>();
  c.scene.objects_max = s.at("objects_max").get<int>();
  c.scene.max_speed_px = s.at("max_speed_px").get<double>();
  c.scene.cam_trans = s.at("cam_trans").get<double>();
  c.scene.cam_rot = s.at("cam_rot").get<double>();
  c.scene.integer_motion = s.at("integer_motion").get<bool>();
  const auto& n = d.at("net");
  c.net.base_channels = n.at("base_channels").get<int>();
  c.net.num_scales = n.at("num_scales").get<int>();
  c.net.depth_min = n.at("depth_min").get<double>();
  c.net.depth_max = n.at("depth_max").get<double>();
  c.net.mask_unet_depth = n.at("mask_unet_depth").get<int>();
  c.net.sigmoid_threshold = n.at("sigmoid_threshold").get<double>();
  c.n_candidates = d.at("n_candidates").get<int>();
  c.entropy_k = d.at("entropy_k").get<int>();
  c.tau = d.at("tau").get<double>();
  c.dmfm = dmfm_mode_from_string(d.at("dmfm").get<std::string>());
  c.dcablur_on = d.at("dcablur").get<bool>();
  c.cvloss_on = d.at("cvloss").get<bool>();
  const auto& q = d.at("cue");
  c.cue_geometries = q.at("geometries").get<int>();
  c.cue_textures = q.at("textures").get<int>();
  c.cue_val_scenes = q.at("val_scenes").get<int>();
  c.cue_base_channels = q.at("base_channels").get<int>();
  c.cue_pretrain_epochs = q.at("pretrain_epochs").get<int>();
  c.cue_epochs = q.at("epochs").get<int>();
  c.cue_lr = q.at("lr").get<double>();
  c.cue_halve_every = q.at("halve_every").get<int>();
  c.cue_sigma = q.at("sigma").get<double>();
  c.cue_augment_prob = q.at("augment_prob").get<double>();
  c.stage1.epochs = d.at("stage1").at("epochs").get<int>();
  c.stage1.lr = d.at("stage1").at("lr").get<double>();
  c.stage2.epochs = d.at("stage2").at("epochs").get<int>();
  c.stage2.lr = d.at("stage2").at("lr").get<double>();
  c.validate();
  return c;
}

// "a.b.c=value" override; value is parsed as JSON when possible, else kept
// as a string
inline void apply_override(nlohmann::json& j, const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos || eq == 0)
    throw std::invalid_argument("override must be key=value, got " + kv);
  std::string key = kv.substr(0, eq), value = kv.substr(eq + 1);
  std::string ptr = "/";
  for (char ch : key) ptr += ch == '.' ? '/' : ch;
  nlohmann::json v;
  try {
    v = nlohmann::json::parse(value);
  } catch (const nlohmann::json::exception&) {
    v = value;
  }
  j[nlohmann::json::json_pointer(ptr)] = v;
}

inline RunConfig load_run_config(const std::string& path,
                                 const std::vector<std::string>& overrides) {
  nlohmann::json j = nlohmann::json::object();
  if (!path.empty()) {
    try {
      j = nlohmann::json::parse(io_detail::read_file(path));
    } catch (const nlohmann::json::exception& e) {
      throw IoError("config " + path + ": parse error: " + e.what());
    }
  }
  for (const auto& kv : overrides) apply_override(j, kv);
  return run_config_from_json(j);
}

// ---- JSON-lines logging ----

struct JsonlLogger {
  std::ofstream f;

  explicit JsonlLogger(const std::string& path) : f(path) {
    if (!f) throw IoError("cannot open log file " + path);
  }
  void log(const nlohmann::json& j) { f << j.dump() << "\n"; }
};

// ---- model bundle ----

struct FlowDepthModel {
  NetworkConfig net;
  CandidateDepths candidates;
  int entropy_k = 3;
  double tau = kCostVolumeTau;
  ParamSet params;
  DepthPriorNet depth_prior;
  PoseNet pose_net;
  FlowPriorNet flow_net;
  MaskUNet mask_net;
  MultiFrameDepthNet mf;
  LossWeights weights;

  explicit FlowDepthModel(const RunConfig& cfg)
      : net(cfg.net),
        candidates(CandidateDepths::linspace(cfg.net.depth_min, cfg.net.depth_max,
                                             cfg.n_candidates)),
        entropy_k(cfg.entropy_k),
        tau(cfg.tau) {
    Rng rng(Rng(cfg.seed).derive(0x6d6f64656cull));  // "model"
    depth_prior = DepthPriorNet(params, "prior.depth", net, rng);
    pose_net = PoseNet(params, "prior.pose", net, rng);
    flow_net = FlowPriorNet(params, "prior.flow", net, rng);
    mask_net = MaskUNet(params, "mask", net, rng);
    mf = MultiFrameDepthNet(params, "mf", net, cfg.n_candidates, rng);
    params.params.emplace("lambda.raw", weights.raw);
  }

  std::map<std::string, ad::Var> subset(const std::vector<std::string>& prefixes) const {
    std::map<std::string, ad::Var> out;
    for (const auto& [name, var] : params.params)
      for (const auto& p : prefixes)
        if (name.rfind(p, 0) == 0) out.emplace(name, var);
    return out;
  }

  void set_trainable(const std::vector<std::string>& prefixes) {
    for (auto& [name, var] : params.params) {
      bool on = false;
      for (const auto& p : prefixes) on = on || name.rfind(p, 0) == 0;
      var->requires_grad = on;
    }
  }
};

// ---- forward pass for one triplet ----

struct TripletForward {
  ad::Var I_prev, I_t, I_next;
  DepthPrediction prior_prev, prior_t;
  ad::Var rt_prev_to_t, rt_t_to_prev, rt_t_to_next;
  ad::Var F_all;             // prev -> t
  bool has_dec = false;
  DecoupleResult dec;        // when dmfm != off
  ad::Var lookup;            // cost-volume partner (I_prev when dmfm is off)
  ProbVolume pv;
  DepthPrediction mf_depth;  // final multi-frame prediction
};

inline Intrinsics quarter(const Intrinsics& K) {
  return {K.fx / 4.0, K.fy / 4.0, K.cx / 4.0, K.cy / 4.0, K.width / 4, K.height / 4};
}

inline ad::Var as_hw(const ad::Var& d_1hw) {
  return ad::reshape(d_1hw, {d_1hw->val.dim(1), d_1hw->val.dim(2)});
}

inline TripletForward forward_triplet(const FlowDepthModel& m, const SceneSample& s,
                                      DmfmMode mode) {
  const int H = s.curr.dim(1), W = s.curr.dim(2);
  TripletForward f;
  f.I_prev = ad::constant(s.prev);
  f.I_t = ad::constant(s.curr);
  f.I_next = ad::constant(s.next);
  f.prior_prev = m.depth_prior.forward(f.I_prev);
  f.prior_t = m.depth_prior.forward(f.I_t);
  f.rt_prev_to_t = m.pose_net.forward(f.I_prev, f.I_t);
  f.rt_t_to_prev = m.pose_net.forward(f.I_t, f.I_prev);
  f.rt_t_to_next = m.pose_net.forward(f.I_t, f.I_next);
  f.F_all = m.flow_net.forward(f.I_prev, f.I_t);

  if (mode == DmfmMode::Off) {
    f.lookup = f.I_prev;  // ManyDepth-style baseline: raw previous frame
  } else {
    MaskFn mask_fn;
    if (mode == DmfmMode::WithMask)
      mask_fn = [&m](const ad::Var& fd, const ad::Var& img) {
        return m.mask_net.forward(fd, img).soft;
      };
    else
      mask_fn = [H, W](const ad::Var&, const ad::Var&) {
        return ad::constant(Tensor({1, H, W}, 1.0));  // everything moves with F_d
      };
    f.dec = build_decoupled_frames(
        f.I_prev, f.I_t, f.F_all, as_hw(f.prior_prev.depth[0]),
        as_hw(f.prior_t.depth[0]), f.rt_prev_to_t, f.rt_t_to_prev, s.K, mask_fn,
        m.net.sigmoid_threshold);
    f.has_dec = true;
    f.lookup = f.dec.lookup;
  }

  // plane-sweep cost volume on quarter-resolution features; the warp geometry
  // uses the predicted pose as a constant
  auto feat_t = m.mf.enc.forward(f.I_t)[2];
  auto feat_l = m.mf.enc.forward(f.lookup)[2];
  auto cv = build_cost_volume(feat_t, feat_l, pose_from_rt(f.rt_t_to_prev->val),
                              quarter(s.K), m.candidates);
  f.pv = cost_to_prob(cv, m.tau);
  f.mf_depth = m.mf.forward(f.I_t, f.pv.probs, m.candidates.d);
  return f;
}

// ---- per-step losses (Eq. 10 terms) ----

struct StepLosses {
  std::array<ad::Var, 5> terms;  // order of LossTerm: cv, d, oof, dof, m
  bool dof_no_valid = false;
};

inline StepLosses triplet_losses(const FlowDepthModel& m, const RunConfig& cfg,
                                 const SceneSample& s, const TripletForward& f,
                                 const DepthCueModel* cue) {
  const int H = s.curr.dim(1), W = s.curr.dim(2);
  StepLosses out;
  auto zero = ad::constant_scalar(0.0);

  out.terms[int(LossTerm::cv)] =
      cfg.cvloss_on ? cv_loss(f.pv, m.entropy_k) : zero;

  DepthLossInputs in;
  in.I_t = f.I_t;
  in.lookup = f.lookup;
  in.I_next = f.I_next;
  in.depth_t = as_hw(f.mf_depth.depth[0]);
  in.rt_t_to_prev = f.rt_t_to_prev;
  in.rt_t_to_next = f.rt_t_to_next;
  in.K = s.K;
  in.fmap = frequency_map(s.curr);
  if (cfg.dcablur_on) {
    if (!cue) throw std::invalid_argument("dcablur enabled but no depth-cue model");
    in.cue = cue->cue_mask(s.curr);
  } else {
    in.cue.values = Tensor({H, W}, 1.0);  // everything protected: blur disabled
  }
  out.terms[int(LossTerm::d)] = depth_loss(in);

  out.terms[int(LossTerm::oof)] = oof_loss(f.F_all, f.I_prev, f.I_t);

  if (f.has_dec) {
    auto dof = dof_loss(f.dec);
    out.terms[int(LossTerm::dof)] = dof.value;
    out.dof_no_valid = dof.no_valid_pixels;
  } else {
    out.terms[int(LossTerm::dof)] = zero;
  }

  if (f.has_dec && cfg.dmfm == DmfmMode::WithMask) {
    FlowField fd(H, W);
    fd.uv = f.dec.F_d->val;  // pseudo-label from the current prior, detached
    out.terms[int(LossTerm::m)] = mask_loss(f.dec.soft_mask, fd);
  } else {
    out.terms[int(LossTerm::m)] = zero;
  }
  return out;
}

// ---- datasets ----

struct LoadedDataset {
  std::vector<SceneSample> train, val;
  std::vector<TextureProfile> val_profiles;
};

inline LoadedDataset load_dataset(const RunConfig& cfg) {
  namespace fs = std::filesystem;
  Manifest man = load_manifest(cfg.dataset_dir);
  LoadedDataset d;
  const size_t total = man.samples.size();
  const size_t n_val = std::max<size_t>(1, static_cast<size_t>(total * cfg.val_fraction));
  for (size_t i = 0; i < total; ++i) {
    auto s = load_sample((fs::path(cfg.dataset_dir) / man.samples[i].dir).string());
    if (i + n_val < total) {
      d.train.push_back(std::move(s));
    } else {
      d.val.push_back(std::move(s));
      d.val_profiles.push_back(man.samples[i].profile);
    }
  }
  if (d.train.empty()) throw std::invalid_argument("dataset too small for a train split");
  return d;
}

// ---- depth-cue stage ----

inline std::string cue_checkpoint_path(const RunConfig& cfg) {
  return (std::filesystem::path(cfg.resolved_out_dir()) / "depth_cue.ckpt").string();
}

inline DepthCueModel make_cue_model(const RunConfig& cfg) {
  NetworkConfig nc = cfg.net;
  nc.base_channels = cfg.cue_base_channels;
  return DepthCueModel(nc, Rng(cfg.seed).derive(0x637565ull));  // "cue"
}

inline DepthCueModel load_cue_model(const RunConfig& cfg) {
  DepthCueModel m = make_cue_model(cfg);
  apply_checkpoint(m.params, load_checkpoint(cue_checkpoint_path(cfg)));
  return m;
}

// trains the cue backbone and decoder on procedurally generated scenes and
// writes the checkpoint plus a loss-curve log; returns the final separation
inline CueSeparation train_depth_cue_stage(const RunConfig& cfg) {
  namespace fs = std::filesystem;
  const fs::path out = cfg.resolved_out_dir();
  fs::create_directories(out);
  JsonlLogger log((out / "train_depth_cue.jsonl").string());

  SceneConfig sc = cfg.scene;
  auto data = make_depth_cue_dataset(sc, cfg.cue_geometries, cfg.cue_textures,
                                     cfg.cue_val_scenes, Rng(cfg.seed).derive(1));
  DepthCueModel model = make_cue_model(cfg);

  auto pre = pretrain_depth_cue_backbone(model, data.train, cfg.cue_pretrain_epochs,
                                         cfg.cue_lr, cfg.cue_augment_prob,
                                         Rng(cfg.seed).derive(2), cfg.cue_halve_every);
  for (size_t e = 0; e < pre.size(); ++e)
    log.log({{"stage", "cue-pretrain"}, {"epoch", e}, {"loss", pre[e]}});

  auto cue = train_depth_cue(model, data.train, cfg.cue_epochs, cfg.cue_sigma,
                             cfg.cue_lr, cfg.cue_halve_every);
  for (size_t e = 0; e < cue.size(); ++e)
    log.log({{"stage", "cue-train"}, {"epoch", e}, {"loss", cue[e]}});

  auto sep = cue_separation(model, data.val);
  log.log({{"stage", "cue-final"},
           {"pretrain_first", pre.front()},
           {"pretrain_last", pre.back()},
           {"cue_first", cue.front()},
           {"cue_last", cue.back()},
           {"mean_depth_edge", sep.mean_depth_edge},
           {"mean_texture_edge", sep.mean_texture_edge},
           {"ratio", sep.ratio()}});
  save_checkpoint(cue_checkpoint_path(cfg), model.params, to_json(cfg));
  return sep;
}

// ---- main training stages ----

inline std::string stage_checkpoint_path(const RunConfig& cfg, int stage) {
  return (std::filesystem::path(cfg.resolved_out_dir()) /
          ("stage" + std::to_string(stage) + ".ckpt")).string();
}

inline nlohmann::json breakdown_json(const LossBreakdown& b) {
  nlohmann::json j;
  for (int i = 0; i < 5; ++i) {
    j[loss_term_name(i)] = b.terms[i];
    j[std::string("lambda_") + loss_term_name(i)] = b.lambdas[i];
  }
  j["total"] = b.total;
  return j;
}

// one optimizer pass over the train split; returns the mean total loss
inline double run_epoch(FlowDepthModel& m, const RunConfig& cfg,
                        const std::vector<SceneSample>& train,
                        const DepthCueModel* cue, Adam& opt,
                        const std::map<std::string, ad::Var>& trainable,
                        JsonlLogger& log, const std::string& stage, int epoch) {
  double total = 0;
  for (size_t i = 0; i < train.size(); ++i) {
    Adam::zero_grad(m.params.params);
    auto f = forward_triplet(m, train[i], cfg.dmfm);
    auto ls = triplet_losses(m, cfg, train[i], f, cue);
    LossBreakdown b;
    try {
      b = combine(ls.terms, m.weights);
    } catch (const std::runtime_error& e) {
      log.log({{"stage", stage}, {"epoch", epoch}, {"sample", i}, {"error", e.what()}});
      throw;
    }
    ad::backward(b.total_var);
    opt.step(trainable);
    auto j = breakdown_json(b);
    j["stage"] = stage;
    j["epoch"] = epoch;
    j["sample"] = i;
    if (ls.dof_no_valid) j["dof_no_valid"] = true;
    log.log(j);
    total += b.total;
  }
  return total / static_cast<double>(train.size());
}

// joint training of priors, mask, multi-frame net, and lambdas
inline std::vector<double> train_stage1(FlowDepthModel& m, const RunConfig& cfg,
                                        const std::vector<SceneSample>& train,
                                        const DepthCueModel* cue) {
  namespace fs = std::filesystem;
  const fs::path out = cfg.resolved_out_dir();
  fs::create_directories(out);
  JsonlLogger log((out / "train_stage1.jsonl").string());
  m.set_trainable({""});  // everything
  auto trainable = m.params.params;
  Adam opt(cfg.stage1.lr);
  std::vector<double> history;
  for (int e = 0; e < cfg.stage1.epochs; ++e)
    history.push_back(run_epoch(m, cfg, train, cue, opt, trainable, log, "stage1", e));
  save_checkpoint(stage_checkpoint_path(cfg, 1), m.params, to_json(cfg));
  return history;
}

// priors and mask frozen; only the multi-frame net and lambdas move
inline std::vector<double> train_stage2(FlowDepthModel& m, const RunConfig& cfg,
                                        const std::vector<SceneSample>& train,
                                        const DepthCueModel* cue) {
  namespace fs = std::filesystem;
  apply_checkpoint(m.params, load_checkpoint(stage_checkpoint_path(cfg, 1)));
  const fs::path out = cfg.resolved_out_dir();
  JsonlLogger log((out / "train_stage2.jsonl").string());
  m.set_trainable({"mf.", "lambda."});
  auto trainable = m.subset({"mf.", "lambda."});
  Adam opt(cfg.stage2.lr);
  std::vector<double> history;
  for (int e = 0; e < cfg.stage2.epochs; ++e)
    history.push_back(run_epoch(m, cfg, train, cue, opt, trainable, log, "stage2", e));
  m.set_trainable({""});
  save_checkpoint(stage_checkpoint_path(cfg, 2), m.params, to_json(cfg));
  return history;
}

// ---- evaluation ----

inline DepthMap prediction_to_depthmap(const Tensor& d_1hw) {
  DepthMap out(d_1hw.dim(1), d_1hw.dim(2));
  for (long i = 0; i < out.values.numel(); ++i) out.values[i] = d_1hw[i];
  return out;
}

// 4x box-downsampled image for quarter-resolution frequency statistics
inline ImageFrame downsample4(const ImageFrame& img) {
  const int C = img.dim(0), H = img.dim(1) / 4, W = img.dim(2) / 4;
  ImageFrame out({C, H, W});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        double acc = 0;
        for (int i = 0; i < 4; ++i)
          for (int j = 0; j < 4; ++j) acc += img.at(c, 4 * y + i, 4 * x + j);
        out.at(c, y, x) = acc / 16.0;
      }
  return out;
}

struct EvalResult {
  nlohmann::json json;
  std::string table;
};

inline EvalResult evaluate_run(const RunConfig& cfg, FlowDepthModel& m,
                               const LoadedDataset& data) {
  struct Acc {
    DepthMetrics sum;
    long n = 0;
    void add(const DepthMetrics& x) {
      if (x.empty) return;
      sum.abs_rel += x.abs_rel;
      sum.sq_rel += x.sq_rel;
      sum.rmse += x.rmse;
      sum.rmse_log += x.rmse_log;
      sum.delta1 += x.delta1;
      sum.delta2 += x.delta2;
      sum.delta3 += x.delta3;
      sum.pixels += x.pixels;
      ++n;
    }
    DepthMetrics mean() const {
      DepthMetrics r = sum;
      if (!n) {
        r.empty = true;
        return r;
      }
      r.abs_rel /= n;
      r.sq_rel /= n;
      r.rmse /= n;
      r.rmse_log /= n;
      r.delta1 /= n;
      r.delta2 /= n;
      r.delta3 /= n;
      return r;
    }
  };
  Acc overall, dynamic;
  std::map<std::string, Acc> per_profile;
  double en_low = 0, en_tex = 0;
  long en_low_n = 0, en_tex_n = 0;
  nlohmann::json per_sample = nlohmann::json::array();

  for (size_t i = 0; i < data.val.size(); ++i) {
    const SceneSample& s = data.val[i];
    auto f = forward_triplet(m, s, cfg.dmfm);  // testing uses {I_prev, I_t}
    DepthMap pred = prediction_to_depthmap(f.mf_depth.depth[0]->val);
    auto om = evaluate(pred, s.depth_curr);
    auto dm = dynamic_region_evaluate(pred, s.depth_curr, s.dyn_mask_curr);
    overall.add(om);
    dynamic.add(dm);
    per_profile[to_string(data.val_profiles[i])].add(om);

    auto en = pixel_entropy(f.pv)->val;
    auto re = entropy_by_texture(en, frequency_map(downsample4(s.curr)));
    en_low += re.mean_low_texture * re.low_texture_pixels;
    en_tex += re.mean_textured * re.textured_pixels;
    en_low_n += re.low_texture_pixels;
    en_tex_n += re.textured_pixels;

    per_sample.push_back({{"index", i},
                          {"overall", to_json(om)},
                          {"dynamic", to_json(dm)}});
  }

  EvalResult r;
  r.json["config"] = to_json(cfg);
  r.json["overall"] = to_json(overall.mean());
  r.json["dynamic"] = to_json(dynamic.mean());
  for (auto& [prof, acc] : per_profile) r.json["per_profile"][prof] = to_json(acc.mean());
  r.json["entropy"] = {{"low_texture", en_low_n ? en_low / en_low_n : 0.0},
                       {"textured", en_tex_n ? en_tex / en_tex_n : 0.0},
                       {"low_texture_pixels", en_low_n},
                       {"textured_pixels", en_tex_n}};
  r.json["per_sample"] = per_sample;

  std::vector<std::pair<std::string, DepthMetrics>> rows = {
      {"overall", overall.mean()}, {"dynamic", dynamic.mean()}};
  for (auto& [prof, acc] : per_profile) rows.push_back({prof, acc.mean()});
  r.table = metrics_table(rows);
  return r;
}

// ---- visualization ----

// normalize an [H,W] tensor into a grayscale image
inline ImageFrame gray_image(const Tensor& t) {
  double lo = t[0], hi = t[0];
  for (long i = 0; i < t.numel(); ++i) {
    lo = std::min(lo, t[i]);
    hi = std::max(hi, t[i]);
  }
  const double span = hi - lo > 1e-12 ? hi - lo : 1.0;
  ImageFrame out({1, t.dim(0), t.dim(1)});
  for (long i = 0; i < t.numel(); ++i) out[i] = (t[i] - lo) / span;
  return out;
}

// standard flow color wheel: hue from direction, saturation from magnitude
inline ImageFrame flow_color(const Tensor& uv) {
  const int H = uv.dim(1), W = uv.dim(2);
  double max_mag = 1e-9;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      max_mag = std::max(max_mag, std::hypot(uv.at(0, y, x), uv.at(1, y, x)));
  ImageFrame out({3, H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const double u = uv.at(0, y, x), v = uv.at(1, y, x);
      const double mag = std::hypot(u, v) / max_mag;
      const double hue = (std::atan2(-v, -u) / 3.14159265358979 + 1.0) * 3.0;  // [0,6)
      const int k = static_cast<int>(hue) % 6;
      const double f = hue - std::floor(hue);
      // hsv -> rgb with s = mag, v = 1
      const double p = 1.0 - mag, q = 1.0 - mag * f, t = 1.0 - mag * (1.0 - f);
      double r, g, b;
      switch (k) {
        case 0: r = 1; g = t; b = p; break;
        case 1: r = q; g = 1; b = p; break;
        case 2: r = p; g = 1; b = t; break;
        case 3: r = p; g = q; b = 1; break;
        case 4: r = t; g = p; b = 1; break;
        default: r = 1; g = p; b = q; break;
      }
      out.at(0, y, x) = r;
      out.at(1, y, x) = g;
      out.at(2, y, x) = b;
    }
  return out;
}

// bar chart of a probability vector, tallest bar normalized to full height
inline ImageFrame bar_chart_image(const std::vector<double>& p, int H = 120,
                                  int bar_w = 3) {
  const int n = static_cast<int>(p.size());
  const int W = n * bar_w;
  double pmax = 1e-12;
  for (double v : p) pmax = std::max(pmax, v);
  ImageFrame out({3, H, W});
  for (int i = 0; i < n; ++i) {
    const int h = static_cast<int>(std::lround(p[i] / pmax * (H - 1)));
    for (int y = H - 1; y >= H - 1 - h; --y)
      for (int x = i * bar_w; x < (i + 1) * bar_w - 1; ++x) {
        out.at(0, y, x) = 0.2;
        out.at(1, y, x) = 0.45;
        out.at(2, y, x) = 0.85;
      }
  }
  return out;
}

// emits the figure set for one sample; file names are stable so re-runs are
// byte-identical
inline std::vector<std::string> visualize(const RunConfig& cfg, FlowDepthModel& m,
                                          const SceneSample& s, const std::string& kind,
                                          const std::string& out_dir,
                                          const DepthCueModel* cue) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  auto path = [&](const std::string& name) {
    return (fs::path(out_dir) / (kind + "_" + name + ".png")).string();
  };
  std::vector<std::string> files;
  auto emit = [&](const std::string& name, const ImageFrame& img) {
    save_png(path(name), img);
    files.push_back(path(name));
  };

  if (kind == "dmfm") {
    DmfmMode mode = cfg.dmfm == DmfmMode::Off ? DmfmMode::WithMask : cfg.dmfm;
    auto f = forward_triplet(m, s, mode);
    emit("prev", s.prev);
    emit("flow_static", flow_color(f.dec.F_s->val));
    emit("flow_dynamic", flow_color(f.dec.F_d->val));
    Tensor hard({s.curr.dim(1), s.curr.dim(2)});
    for (long i = 0; i < hard.numel(); ++i) hard[i] = f.dec.M_d.data[i];
    emit("mask", gray_image(hard));
    emit("lookup", f.dec.lookup->val);
  } else if (kind == "dcablur") {
    if (!cue) throw std::invalid_argument("visualize dcablur: depth-cue model required");
    auto fmap = frequency_map(s.curr);
    auto mask = cue->cue_mask(s.curr);
    emit("input", s.curr);
    emit("cue_mask", gray_image(mask.values));
    emit("blurred", apply_dcablur(s.curr, fmap, mask));
  } else if (kind == "entropy") {
    auto f = forward_triplet(m, s, cfg.dmfm);
    Tensor en = pixel_entropy(f.pv)->val;
    emit("heat", gray_image(en));
    // bar chart at the most ambiguous pixel
    int by = 0, bx = 0;
    for (int y = 0; y < en.dim(0); ++y)
      for (int x = 0; x < en.dim(1); ++x)
        if (en.at(y, x) > en.at(by, bx)) { by = y; bx = x; }
    std::vector<double> p(f.pv.probs->val.dim(0));
    for (size_t i = 0; i < p.size(); ++i)
      p[i] = f.pv.probs->val.at(static_cast<int>(i), by, bx);
    emit("bars", bar_chart_image(p));
  } else if (kind == "depth") {
    auto f = forward_triplet(m, s, cfg.dmfm);
    Tensor d({s.curr.dim(1), s.curr.dim(2)});
    for (long i = 0; i < d.numel(); ++i) d[i] = 1.0 / f.mf_depth.depth[0]->val[i];
    // shown as disparity so near structure is bright
    emit("pred", gray_image(d));
    Tensor g = s.depth_curr.values;
    for (long i = 0; i < g.numel(); ++i) g[i] = 1.0 / g[i];
    emit("gt", gray_image(g));
  } else {
    throw std::invalid_argument("visualize: unknown kind " + kind +
                                " (expected dmfm | dcablur | entropy | depth)");
  }
  return files;
}

// ---- ablation grid (Table 4 axes) ----

struct AblationVariant {
  std::string name;
  DmfmMode dmfm;
  bool dcablur, cvloss;
};

inline std::vector<AblationVariant> ablation_grid() {
  return {{"baseline", DmfmMode::Off, false, false},
          {"dmfm-no-mask", DmfmMode::NoMask, false, false},
          {"dmfm-with-mask", DmfmMode::WithMask, false, false},
          {"dcablur", DmfmMode::Off, true, false},
          {"cvloss", DmfmMode::Off, false, true},
          {"full", DmfmMode::WithMask, true, true}};
}

// trains + evaluates one toggle combination from scratch
inline nlohmann::json run_variant(RunConfig cfg, const AblationVariant& v,
                                  uint64_t seed, const LoadedDataset& data,
                                  const DepthCueModel* cue) {
  cfg.dmfm = v.dmfm;
  cfg.dcablur_on = v.dcablur;
  cfg.cvloss_on = v.cvloss;
  cfg.seed = seed;
  cfg.out_dir = (std::filesystem::path(cfg.out_dir) /
                 (v.name + "_seed" + std::to_string(seed))).string();
  std::filesystem::create_directories(cfg.resolved_out_dir());
  FlowDepthModel m(cfg);
  auto h1 = train_stage1(m, cfg, data.train, cue);
  auto h2 = train_stage2(m, cfg, data.train, cue);
  auto ev = evaluate_run(cfg, m, data);
  nlohmann::json j;
  j["variant"] = v.name;
  j["seed"] = seed;
  j["dmfm"] = to_string(v.dmfm);
  j["dcablur"] = v.dcablur;
  j["cvloss"] = v.cvloss;
  j["stage1_loss"] = h1;
  j["stage2_loss"] = h2;
  j["overall"] = ev.json["overall"];
  j["dynamic"] = ev.json["dynamic"];
  j["entropy"] = ev.json["entropy"];
  return j;
}

}  // namespace flowdepth

#include <CLI11.hpp>

#include "flowdepth/pipeline.hpp"

using namespace flowdepth;

namespace {

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonOpts& c) {
  cmd->add_option("--config", c.config_path, "JSON config file");
  cmd->add_option("--set", c.overrides,
                  "override a config key, e.g. --set stage1.epochs=2");
}

RunConfig make_config(const CommonOpts& c) {
  return load_run_config(c.config_path, c.overrides);
}

std::unique_ptr<DepthCueModel> maybe_cue(const RunConfig& cfg) {
  if (!cfg.dcablur_on) return nullptr;
  return std::make_unique<DepthCueModel>(load_cue_model(cfg));
}

int cmd_gen_data(const CommonOpts& c) {
  RunConfig cfg = make_config(c);
  DatasetConfig dc;
  dc.out_dir = cfg.dataset_dir;
  dc.count = cfg.dataset_count;
  dc.seed = cfg.seed;
  dc.scene = cfg.scene;
  Manifest man = make_dataset(dc);
  std::printf("wrote %zu samples (%dx%d) to %s\n", man.samples.size(), man.width,
              man.height, dc.out_dir.c_str());
  return 0;
}

int cmd_train_depth_cue(const CommonOpts& c) {
  RunConfig cfg = make_config(c);
  auto sep = train_depth_cue_stage(cfg);
  std::printf("depth-cue checkpoint: %s\n", cue_checkpoint_path(cfg).c_str());
  std::printf("separation: depth-edge %.4f texture-edge %.4f ratio %.3f\n",
              sep.mean_depth_edge, sep.mean_texture_edge, sep.ratio());
  return 0;
}

int cmd_train(const CommonOpts& c, int stage) {
  RunConfig cfg = make_config(c);
  auto data = load_dataset(cfg);
  FlowDepthModel m(cfg);
  auto cue = maybe_cue(cfg);
  std::vector<double> history = stage == 1
                                    ? train_stage1(m, cfg, data.train, cue.get())
                                    : train_stage2(m, cfg, data.train, cue.get());
  std::printf("stage %d: %d epochs, loss %.6f -> %.6f\n", stage,
              static_cast<int>(history.size()), history.front(), history.back());
  std::printf("checkpoint: %s\n", stage_checkpoint_path(cfg, stage).c_str());
  return 0;
}

FlowDepthModel load_model(const RunConfig& cfg, std::string ckpt) {
  namespace fs = std::filesystem;
  if (ckpt.empty()) {
    ckpt = stage_checkpoint_path(cfg, 2);
    if (!fs::exists(ckpt)) ckpt = stage_checkpoint_path(cfg, 1);
  }
  if (!fs::exists(ckpt)) throw IoError("checkpoint not found: " + ckpt);
  FlowDepthModel m(cfg);
  apply_checkpoint(m.params, load_checkpoint(ckpt));
  return m;
}

int cmd_eval(const CommonOpts& c, const std::string& ckpt) {
  RunConfig cfg = make_config(c);
  auto data = load_dataset(cfg);
  FlowDepthModel m = load_model(cfg, ckpt);
  auto r = evaluate_run(cfg, m, data);
  namespace fs = std::filesystem;
  const fs::path out = cfg.resolved_out_dir();
  fs::create_directories(out);
  io_detail::write_file((out / "metrics.json").string(), r.json.dump(2) + "\n");
  std::printf("%s\n", r.table.c_str());
  std::printf("metrics: %s\n", (out / "metrics.json").string().c_str());
  return 0;
}

int cmd_visualize(const CommonOpts& c, const std::string& ckpt, int sample_index,
                  const std::string& kind) {
  RunConfig cfg = make_config(c);
  auto data = load_dataset(cfg);
  const auto& pool = data.val.empty() ? data.train : data.val;
  if (sample_index < 0 || sample_index >= static_cast<int>(pool.size()))
    throw std::invalid_argument("visualize: sample index out of range");
  FlowDepthModel m = load_model(cfg, ckpt);
  auto cue = kind == "dcablur" ? std::make_unique<DepthCueModel>(load_cue_model(cfg))
                               : maybe_cue(cfg);
  auto files =
      visualize(cfg, m, pool[sample_index], kind,
                (std::filesystem::path(cfg.resolved_out_dir()) / "figures").string(),
                cue.get());
  for (const auto& f : files) std::printf("%s\n", f.c_str());
  return 0;
}

int cmd_ablate(const CommonOpts& c, int n_seeds) {
  RunConfig cfg = make_config(c);
  auto data = load_dataset(cfg);
  auto cue = std::make_unique<DepthCueModel>(load_cue_model(cfg));
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& v : ablation_grid())
    for (int s = 0; s < n_seeds; ++s) {
      auto row = run_variant(cfg, v, cfg.seed + static_cast<uint64_t>(s), data,
                             v.dcablur ? cue.get() : nullptr);
      std::printf("%-16s seed %llu  AbsRel %.4f  dyn AbsRel %.4f\n", v.name.c_str(),
                  static_cast<unsigned long long>(cfg.seed + s),
                  row["overall"]["abs_rel"].get<double>(),
                  row["dynamic"]["abs_rel"].get<double>());
      rows.push_back(std::move(row));
    }
  namespace fs = std::filesystem;
  const fs::path out = cfg.resolved_out_dir();
  fs::create_directories(out);
  io_detail::write_file((out / "ablation.json").string(), rows.dump(2) + "\n");
  std::printf("ablation table: %s\n", (out / "ablation.json").string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FlowDepth: self-supervised multi-frame depth on synthetic scenes"};
  app.require_subcommand(1);

  CommonOpts c;
  int stage = 1, sample_index = 0, n_seeds = 3;
  std::string ckpt, kind = "depth";

  add_common(app.add_subcommand("gen-data", "generate a synthetic dataset"), c);
  add_common(app.add_subcommand("train-depth-cue", "train the depth-cue mask"), c);
  auto* train = app.add_subcommand("train", "run a training stage");
  add_common(train, c);
  train->add_option("--stage", stage, "training stage")
      ->check(CLI::IsMember({1, 2}))
      ->required();
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(ev, c);
  ev->add_option("--checkpoint", ckpt, "checkpoint path (default: latest stage)");
  auto* vis = app.add_subcommand("visualize", "emit figures for one sample");
  add_common(vis, c);
  vis->add_option("--checkpoint", ckpt, "checkpoint path (default: latest stage)");
  vis->add_option("--sample", sample_index, "validation sample index");
  vis->add_option("--kind", kind, "figure kind")
      ->check(CLI::IsMember({"dmfm", "dcablur", "entropy", "depth"}));
  auto* abl = app.add_subcommand("ablate", "run the ablation grid");
  add_common(abl, c);
  abl->add_option("--seeds", n_seeds, "seeds per variant");

  CLI11_PARSE(app, argc, argv);

  try {
    const std::string sub = app.get_subcommands().front()->get_name();
    if (sub == "gen-data") return cmd_gen_data(c);
    if (sub == "train-depth-cue") return cmd_train_depth_cue(c);
    if (sub == "train") return cmd_train(c, stage);
    if (sub == "eval") return cmd_eval(c, ckpt);
    if (sub == "visualize") return cmd_visualize(c, ckpt, sample_index, kind);
    if (sub == "ablate") return cmd_ablate(c, n_seeds);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}

#include "multidepth/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>

#include "multidepth/config.hpp"
#include "multidepth/errors.hpp"
#include "multidepth/harness.hpp"

namespace multidepth {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class UsageError : public Error {
 public:
  using Error::Error;
};

// Output directory must be fresh unless --force.
void prepare_out(const std::string& dir, bool force) {
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw UsageError("output path '" + dir + "' is not a directory");
    if (!fs::is_empty(dir) && !force)
      throw UsageError("output directory '" + dir + "' is not empty; pass --force to overwrite");
  }
  fs::create_directories(dir);
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot write " + path.string());
  return os;
}

void write_json(const fs::path& path, const json& j) { open_out(path) << j.dump(2) << '\n'; }

std::string frame_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06zu.png", i);
  return buf;
}

// Flags shared by the commands that build an ExperimentConfig. Values start
// at the config defaults so --help shows them; only flags actually given
// override the config file.
struct RunFlags {
  ExperimentConfig defaults;
  std::string config_path;
  std::uint64_t seed = defaults.seed;
  std::size_t iters = defaults.total_iters;
  double lr = defaults.base_lr;
  std::string weighting = to_string(defaults.weighting.mode);
  std::vector<double> manual_weights{defaults.weighting.manual_reg, defaults.weighting.manual_cls};
  std::size_t n_cls = defaults.model.n_cls;
  bool reg_only = false;
  std::size_t crop = defaults.augment.crop_height;
  std::size_t batch = defaults.batch_size;
  std::size_t val_interval = defaults.validation_interval;
  std::vector<double> bounds{defaults.d_min, defaults.d_max};
  std::size_t prefetch = defaults.prefetch;
  std::map<std::string, CLI::Option*> opts;

  void add(CLI::App* cmd) {
    opts["config"] = cmd->add_option("--config", config_path, "JSON experiment config; flags override it")
                         ->check(CLI::ExistingFile);
    opts["seed"] = cmd->add_option("--seed", seed, "Run seed")->capture_default_str();
    opts["iters"] = cmd->add_option("--iters", iters, "Training iterations")->capture_default_str();
    opts["lr"] = cmd->add_option("--lr", lr, "Base learning rate alpha0")->capture_default_str();
    opts["weighting"] = cmd->add_option("--weighting", weighting, "Task weighting")
                            ->check(CLI::IsMember({"equal", "manual", "learned"}))
                            ->capture_default_str();
    opts["manual"] = cmd->add_option("--manual-weights", manual_weights, "w_reg,w_cls for manual weighting")
                         ->delimiter(',')
                         ->expected(2)
                         ->capture_default_str();
    opts["n_cls"] = cmd->add_option("--n-cls", n_cls, "Depth intervals of the classification head")
                        ->check(CLI::PositiveNumber)
                        ->capture_default_str();
    opts["reg_only"] = cmd->add_flag("--reg-only", reg_only, "Single-task regression baseline");
    opts["crop"] = cmd->add_option("--crop", crop, "Square training crop size")->capture_default_str();
    opts["batch"] = cmd->add_option("--batch", batch, "Batch size")->capture_default_str();
    opts["val_interval"] =
        cmd->add_option("--val-interval", val_interval, "Iterations between validations")->capture_default_str();
    opts["bounds"] = cmd->add_option("--bounds", bounds, "d_min,d_max normalization bounds in meters")
                         ->delimiter(',')
                         ->expected(2)
                         ->capture_default_str();
    opts["prefetch"] = cmd->add_option("--prefetch", prefetch, "Batches prepared ahead")->capture_default_str();
  }

  bool given(const char* name) const { return opts.at(name)->count() > 0; }

  ExperimentConfig resolve() const {
    ExperimentConfig c = config_path.empty() ? ExperimentConfig{} : load_config(config_path);
    if (given("seed")) c.seed = seed;
    if (given("iters")) c.total_iters = iters;
    if (given("lr")) c.base_lr = lr;
    if (given("weighting")) c.weighting.mode = weighting_from_string(weighting);
    if (given("n_cls")) c.model.n_cls = n_cls;
    if (given("reg_only")) c.model.classification_head = false;
    if (given("crop")) c.augment.crop_height = c.augment.crop_width = crop;
    if (given("batch")) c.batch_size = batch;
    if (given("val_interval")) c.validation_interval = val_interval;
    if (given("bounds")) {
      c.d_min = bounds[0];
      c.d_max = bounds[1];
    }
    if (given("prefetch")) c.prefetch = prefetch;
    if (given("manual")) {
      if (c.weighting.mode != WeightingMode::manual)
        throw UsageError("--manual-weights conflicts with --weighting " + to_string(c.weighting.mode));
      c.weighting.manual_reg = manual_weights[0];
      c.weighting.manual_cls = manual_weights[1];
    }
    if (given("reg_only") && (given("weighting") || given("n_cls")))
      throw UsageError("--reg-only conflicts with --weighting and --n-cls");
    c.validate();
    return c;
  }
};

json run_summary(const RunLog& log) {
  json j;
  j["iterations"] = log.train.empty() ? 0 : log.train.back().iter;
  j["validations"] = log.val.size();
  if (!log.val.empty()) {
    j["best_silog_reg_scaled"] = log.best_silog_reg();
    if (log.multi_task) j["best_silog_cls_scaled"] = log.best_silog_cls();
  }
  return j;
}

void write_run_logs(const fs::path& dir, const RunLog& log) {
  auto train_os = open_out(dir / "train.csv");
  log.write_train_csv(train_os);
  auto val_os = open_out(dir / "val.csv");
  log.write_val_csv(val_os);
  write_json(dir / "summary.json", run_summary(log));
}

Model model_from_checkpoint(const Checkpoint& ckpt) {
  Model model = Model::build(ckpt.config.model, 0);
  model.set_flat_parameters(ckpt.parameters);
  return model;
}

// Sorted *.png names in a directory.
std::vector<std::string> png_names(const std::string& dir) {
  if (!fs::is_directory(dir)) throw UsageError("'" + dir + "' is not a directory");
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png") names.push_back(e.path().filename().string());
  std::sort(names.begin(), names.end());
  return names;
}

}  // namespace

int dispatch(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-task single-image depth estimation toolkit"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every command");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Write a synthetic dataset as RGB and KITTI depth PNGs");
  std::string gen_out, gen_config;
  bool gen_force = false;
  DatasetSpec gen_spec;
  std::size_t gen_count = gen_spec.count;
  std::uint64_t gen_seed = gen_spec.seed;
  gen->add_option("--out", gen_out, "Output directory")->required();
  auto* gen_config_opt =
      gen->add_option("--config", gen_config, "Experiment config; its train_data spec is used")->check(CLI::ExistingFile);
  auto* gen_count_opt = gen->add_option("--count", gen_count, "Number of frames")->capture_default_str();
  auto* gen_seed_opt = gen->add_option("--seed", gen_seed, "Dataset seed")->capture_default_str();
  gen->add_flag("--force", gen_force, "Overwrite a non-empty output directory");

  // lr-find
  auto* lrf = app.add_subcommand("lr-find", "Learning-rate range test");
  RunFlags lrf_flags;
  lrf_flags.add(lrf);
  std::string lrf_out;
  bool lrf_force = false;
  LrSweepOptions sweep_opts;
  double alpha_start = 1e-7, alpha_end = 1.0;
  lrf->add_option("--out", lrf_out, "Output directory")->required();
  lrf->add_option("--steps", sweep_opts.steps, "Sweep steps")->check(CLI::Range(2, 1000000))->capture_default_str();
  lrf->add_option("--alpha-start", alpha_start, "First learning rate")->check(CLI::PositiveNumber)->capture_default_str();
  lrf->add_option("--alpha-end", alpha_end, "Last learning rate")->check(CLI::PositiveNumber)->capture_default_str();
  lrf->add_flag("--force", lrf_force, "Overwrite a non-empty output directory");

  // train
  auto* trn = app.add_subcommand("train", "Train one configuration");
  RunFlags trn_flags;
  trn_flags.add(trn);
  std::string trn_out, trn_resume;
  bool trn_force = false;
  trn->add_option("--out", trn_out, "Output directory")->required();
  trn->add_option("--resume", trn_resume, "Checkpoint to continue from")->check(CLI::ExistingFile);
  trn->add_flag("--force", trn_force, "Overwrite a non-empty output directory");

  // ablate
  auto* abl = app.add_subcommand("ablate", "Run an ablation axis over several seeds");
  RunFlags abl_flags;
  abl_flags.add(abl);
  std::string abl_out, abl_axis;
  std::vector<std::uint64_t> abl_seeds{1, 2, 3};
  std::size_t abl_jobs = 1;
  bool abl_force = false;
  abl->add_option("--out", abl_out, "Output directory")->required();
  abl->add_option("--axis", abl_axis, "Ablation axis")
      ->required()
      ->check(CLI::IsMember({"n_cls", "weighting", "bounds", "patch"}));
  abl->add_option("--seeds", abl_seeds, "Seeds per cell")->delimiter(',')->capture_default_str();
  abl->add_option("--jobs", abl_jobs, "Parallel runs")->check(CLI::PositiveNumber)->capture_default_str();
  abl->add_flag("--force", abl_force, "Overwrite a non-empty output directory");

  // eval
  auto* evl = app.add_subcommand("eval", "Score KITTI depth PNG predictions against ground truth");
  std::string eval_pred, eval_gt, eval_out;
  evl->add_option("--pred", eval_pred, "Directory of predicted depth PNGs")->required();
  evl->add_option("--gt", eval_gt, "Directory of ground-truth depth PNGs with matching names")->required();
  evl->add_option("--out", eval_out, "Result JSON file")->required();

  // predict
  auto* prd = app.add_subcommand("predict", "Predict depth PNGs for a directory of RGB PNGs");
  std::string prd_ckpt, prd_in, prd_out, prd_head = "regression";
  bool prd_force = false;
  prd->add_option("--checkpoint", prd_ckpt, "Model checkpoint")->required()->check(CLI::ExistingFile);
  prd->add_option("--input", prd_in, "Directory of RGB PNGs")->required();
  prd->add_option("--out", prd_out, "Output directory")->required();
  prd->add_option("--head", prd_head, "Output head")
      ->check(CLI::IsMember({"regression", "classification"}))
      ->capture_default_str();
  prd->add_flag("--force", prd_force, "Overwrite a non-empty output directory");

  std::vector<const char*> raw;
  raw.reserve(argv.size());
  for (const auto& a : argv) raw.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(raw.size()), raw.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (gen->parsed()) {
      ExperimentConfig c = gen_config_opt->count() ? load_config(gen_config) : ExperimentConfig{};
      DatasetSpec spec = c.train_data;
      if (gen_count_opt->count()) spec.count = gen_count;
      if (gen_seed_opt->count()) spec.seed = gen_seed;
      spec.scene.validate();
      spec.sparsity.validate();
      prepare_out(gen_out, gen_force);
      const fs::path dir(gen_out);
      fs::create_directories(dir / "image");
      fs::create_directories(dir / "depth");
      const IntervalScheme scheme = c.scheme();
      for (std::size_t i = 0; i < spec.count; ++i) {
        Sample s = make_sample(spec, i, scheme);
        write_rgb_png({s.height(), s.width(), s.rgb}, (dir / "image" / frame_name(i)).string());
        write_kitti_png(s.gt, (dir / "depth" / frame_name(i)).string());
      }
      write_json(dir / "manifest.json", json{{"seed", spec.seed}, {"count", spec.count}, {"spec", to_json(spec)}});
    } else if (lrf->parsed()) {
      ExperimentConfig c = lrf_flags.resolve();
      if (!(alpha_start < alpha_end)) throw UsageError("--alpha-start must be below --alpha-end");
      prepare_out(lrf_out, lrf_force);
      const fs::path dir(lrf_out);
      save_config(c, (dir / "config.json").string());
      LrSweepRecord rec = find_learning_rate(c, alpha_start, alpha_end, sweep_opts);
      auto os = open_out(dir / "sweep.csv");
      rec.write_csv(os);
      json intervals = json::array();
      for (const auto& iv : rec.intervals)
        intervals.push_back({{"region", to_string(iv.region)},
                             {"first_step", iv.first},
                             {"last_step", iv.last},
                             {"alpha_lo", iv.alpha_lo},
                             {"alpha_hi", iv.alpha_hi}});
      write_json(dir / "summary.json", json{{"selected_alpha", rec.selected_alpha},
                                            {"fallback", rec.fallback},
                                            {"diverged", rec.diverged},
                                            {"requested_steps", rec.requested_steps},
                                            {"recorded_steps", rec.alpha.size()},
                                            {"intervals", intervals},
                                            {"warnings", rec.warnings}});
      for (const auto& w : rec.warnings) err << "warning: " << w << '\n';
    } else if (trn->parsed()) {
      ExperimentConfig c = trn_flags.resolve();
      prepare_out(trn_out, trn_force);
      const fs::path dir(trn_out);
      save_config(c, (dir / "config.json").string());
      Trainer trainer(c);
      trainer.set_failure_checkpoint((dir / "failure.ckpt").string());
      if (!trn_resume.empty()) trainer.restore_checkpoint(trn_resume);
      try {
        trainer.run();
      } catch (const NonFiniteError&) {
        write_run_logs(dir, trainer.log());
        throw;
      }
      write_run_logs(dir, trainer.log());
      trainer.save_checkpoint((dir / "final.ckpt").string());
    } else if (abl->parsed()) {
      ExperimentConfig c = abl_flags.resolve();
      if (abl_seeds.empty()) throw UsageError("--seeds must list at least one seed");
      prepare_out(abl_out, abl_force);
      const fs::path dir(abl_out);
      save_config(c, (dir / "config.json").string());
      AblationTable table = run_ablation(axis_from_string(abl_axis), c, abl_seeds, abl_jobs);
      auto os = open_out(dir / "ablation.csv");
      table.write_csv(os);
      write_json(dir / "ablation.json", table.to_json());
    } else if (evl->parsed()) {
      const auto names = png_names(eval_gt);
      if (names.empty()) throw UsageError("no PNG files in '" + eval_gt + "'");
      std::vector<DepthMap> pred, gt;
      for (const auto& n : names) {
        const fs::path p = fs::path(eval_pred) / n;
        if (!fs::exists(p)) throw UsageError("missing prediction " + p.string());
        pred.push_back(read_kitti_png(p.string()));
        gt.push_back(read_kitti_png((fs::path(eval_gt) / n).string()));
      }
      const double silog = mean_scaled_silog(pred, gt);
      const fs::path target(eval_out);
      if (target.has_parent_path()) fs::create_directories(target.parent_path());
      write_json(target, json{{"silog_scaled", silog}, {"images", names.size()}});
    } else if (prd->parsed()) {
      const Checkpoint ckpt = read_checkpoint(prd_ckpt);
      const Model model = model_from_checkpoint(ckpt);
      const bool cls = prd_head == "classification";
      if (cls && !ckpt.config.multi_task()) throw UsageError("checkpoint has no classification head");
      const auto names = png_names(prd_in);
      prepare_out(prd_out, prd_force);
      for (const auto& n : names) {
        const RgbImage img = read_rgb_png((fs::path(prd_in) / n).string());
        if (img.height % kEncoderStride || img.width % kEncoderStride)
          throw UsageError(n + ": frame size must be divisible by " + std::to_string(kEncoderStride));
        Tensor x = Tensor::from({1, 3, img.height, img.width}, img.planes);
        const auto maps = cls ? predict_class_depth(model, x, ckpt.config.scheme())
                              : predict_depth(model, x, ckpt.config.bounds());
        write_kitti_png(maps.front(), (fs::path(prd_out) / n).string());
      }
    }
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitOk;
}

int dispatch(int argc, const char* const* argv) {
  return dispatch(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}

}  // namespace multidepth

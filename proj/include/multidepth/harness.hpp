#pragma once

// Training loop, validation, checkpoints and ablation presets.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "multidepth/config.hpp"
#include "multidepth/data.hpp"
#include "multidepth/losses.hpp"
#include "multidepth/model.hpp"
#include "multidepth/optim.hpp"

namespace multidepth {

struct TrainRow {
  std::size_t iter = 0;  // completed iterations after this step
  double l_reg = 0, l_cls = 0, l_mt = 0;
  double w_reg = 0, w_cls = 0;
  double s_reg = 0, s_cls = 0;
  double alpha = 0;
  std::size_t skipped_batches = 0;  // cumulative

  bool operator==(const TrainRow&) const = default;
};

struct ValRow {
  std::size_t iter = 0;
  double silog_reg_scaled = 0;
  double silog_cls_scaled = 0;  // NaN without a classification head

  bool operator==(const ValRow&) const = default;
};

struct RunLog {
  WeightingMode mode = WeightingMode::learned;
  bool multi_task = true;
  std::vector<TrainRow> train;
  std::vector<ValRow> val;
  /// Free-form "key: value" lines written as '#' comments atop the CSVs.
  std::vector<std::string> header;

  void write_train_csv(std::ostream& os) const;
  void write_val_csv(std::ostream& os) const;
  double best_silog_reg() const;
  double best_silog_cls() const;
  /// w_reg*l_reg + r_reg + w_cls*l_cls + r_cls recomputed from a row.
  double recomposed_loss(const TrainRow& row) const;
};

struct ValidationResult {
  double silog_reg = 0.0;
  double silog_cls = 0.0;  // NaN without a classification head
  std::size_t images = 0;
};

/// Mean per-image scaled SILog over images with at least one jointly valid
/// pixel. Throws EmptyReductionError if no image qualifies.
double mean_scaled_silog(std::span<const DepthMap> pred, std::span<const DepthMap> gt);

/// Regression head scored via predict_depth, classification head via
/// argmax -> dequantize. Evaluation mode: no dropout, no parameter change.
ValidationResult validate(const Model& model, const Dataset& val_set, const IntervalScheme& scheme);

/// Per-sample depth maps built from the true interval labels (dequantized),
/// valid where the ground truth is valid.
std::vector<DepthMap> label_oracle_depth(const Dataset& set, const IntervalScheme& scheme);

class Trainer {
 public:
  explicit Trainer(ExperimentConfig config);
  ~Trainer();

  /// One iteration; returns false if the batch had no ground truth and was skipped.
  bool step();
  /// Runs until `total_iters` iterations have completed.
  void run();
  void run_until(std::size_t iteration);

  std::size_t iteration() const { return iter_; }
  const ExperimentConfig& config() const { return config_; }
  const Model& model() const { return model_; }
  Model& model() { return model_; }
  const TaskWeights& weights() const { return weights_; }
  TaskWeights& weights() { return weights_; }
  const AdamState& optimizer() const { return adam_; }
  const RunLog& log() const { return log_; }
  const Dataset& train_set() const { return *train_; }
  const Dataset& val_set() const { return *val_; }
  const IntervalScheme& scheme() const { return scheme_; }

  /// Writes the last state before a non-finite loss here, if set.
  void set_failure_checkpoint(std::string path) { failure_path_ = std::move(path); }

  void save_checkpoint(const std::string& path) const;
  /// Restores model, task weights, optimizer and iteration. The file's config
  /// must describe the same run; a differing n_cls or architecture raises
  /// ConfigError.
  void restore_checkpoint(const std::string& path);

  /// One update at `alpha`, ignoring the schedule; returns that step's
  /// training loss. Used by the LR range test on a copy.
  double sweep_step(double alpha);

  /// Independent deep copy (model, weights, optimizer, position).
  std::unique_ptr<Trainer> fork() const;

 private:
  std::vector<OptimParam> optim_params();
  void validate_now();

  ExperimentConfig config_;
  IntervalScheme scheme_;
  DepthBounds bounds_;
  std::unique_ptr<Dataset> train_;
  std::unique_ptr<Dataset> val_;
  Model model_;
  TaskWeights weights_;
  AdamState adam_;
  std::size_t iter_ = 0;
  std::size_t skipped_ = 0;
  bool pending_validation_ = false;
  RunLog log_;
  std::unique_ptr<BatchIterator> batches_;
  std::string failure_path_;
};

struct TrainResult {
  Model model;
  TaskWeights weights;
  RunLog log;
};

TrainResult train(const ExperimentConfig& config);

/// Learning-rate range test on a fresh copy of a freshly initialized run.
LrSweepRecord find_learning_rate(const ExperimentConfig& config, double alpha_start, double alpha_end,
                                 const LrSweepOptions& options = {});

// Checkpoint file: magic, version, config JSON, iteration, skipped count,
// model parameters, task log-variances, Adam state, FNV-1a checksum.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ExperimentConfig config;
  std::size_t iteration = 0;
  std::size_t skipped = 0;
  std::vector<double> parameters;
  double s_reg = 0.0, s_cls = 0.0;
  AdamState adam;
};

void write_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint read_checkpoint(const std::string& path);

enum class AblationAxis { n_cls, weighting, bounds, patch };

std::string to_string(AblationAxis axis);
AblationAxis axis_from_string(const std::string& name);

struct AblationCell {
  std::string label;
  ExperimentConfig config;
};

/// Preset grid for an axis, derived from `base`:
///   n_cls     regression-only baseline, then n_cls in {2, 4, 32, 64} (learned)
///   weighting equal, manual, learned
///   bounds    (2, 125) and (0, 256) meters
///   patch     32 and 64 pixel crops; the larger crop halves the batch
std::vector<AblationCell> ablation_grid(AblationAxis axis, const ExperimentConfig& base);

struct AblationRow {
  std::string label;
  std::vector<std::uint64_t> seeds;
  std::vector<double> best_reg;  // best validation scaled SILog per seed
  std::vector<double> best_cls;
  double median_reg = 0, median_cls = 0;
  double spread_reg = 0;  // sample standard deviation over seeds
};

struct AblationTable {
  std::string axis;
  std::vector<AblationRow> rows;

  void write_csv(std::ostream& os) const;
  nlohmann::json to_json() const;
  const AblationRow& row(const std::string& label) const;
};

/// Best validation SILog of one (cell, seed) run.
AblationRow run_cell(const AblationCell& cell, std::span<const std::uint64_t> seeds, std::size_t jobs = 1);

AblationTable run_ablation(AblationAxis axis, const ExperimentConfig& base, std::span<const std::uint64_t> seeds,
                           std::size_t jobs = 1);

double median(std::vector<double> values);
double sample_stddev(std::span<const double> values);

}  // namespace multidepth

#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "multidepth/data.hpp"
#include "multidepth/depth_space.hpp"
#include "multidepth/losses.hpp"
#include "multidepth/model.hpp"
#include "multidepth/optim.hpp"

namespace multidepth {

struct WeightingConfig {
  WeightingMode mode = WeightingMode::learned;
  /// Used only in manual mode.
  double manual_reg = 5.0;
  double manual_cls = 1.0;
  /// Initial log-variances for learned mode.
  double s_reg_init = 1.0;
  double s_cls_init = 1.0;

  bool operator==(const WeightingConfig&) const = default;
};

/// One training run, fully declared.
struct ExperimentConfig {
  ModelConfig model;
  WeightingConfig weighting;
  double d_min = 2.0;
  double d_max = 125.0;
  double d_cmin = 2.5;
  double d_cmax = 80.0;
  AugmentSpec augment{32, 32, 0.5, false};
  std::size_t batch_size = 16;
  std::size_t total_iters = 2000;
  double base_lr = 3e-3;
  double lr_power = 0.9;
  AdamHyper adam;
  std::uint64_t seed = 1;
  std::size_t validation_interval = 100;
  DatasetSpec train_data;
  DatasetSpec val_data{SceneSpec{}, SparsityModel{}, 32, 1001};
  std::size_t prefetch = 0;

  /// Throws ConfigError when fields are inconsistent.
  void validate() const;
  DepthBounds bounds() const { return {d_min, d_max}; }
  IntervalScheme scheme() const;
  /// Scheme for labeling data; uses 2 classes when the model has no
  /// classification head.
  bool multi_task() const { return model.classification_head; }
  PolySchedule schedule() const { return {base_lr, lr_power, total_iters}; }

  bool operator==(const ExperimentConfig&) const = default;
};

nlohmann::json to_json(const ExperimentConfig& config);

/// Strict parse: unknown keys and wrongly typed values raise ConfigError.
/// Missing keys keep the values of `base`.
ExperimentConfig config_from_json(const nlohmann::json& j, const ExperimentConfig& base = {});

ExperimentConfig load_config(const std::string& path, const ExperimentConfig& base = {});
void save_config(const ExperimentConfig& config, const std::string& path);

nlohmann::json to_json(const DatasetSpec& spec);
DatasetSpec dataset_from_json(const nlohmann::json& j, const DatasetSpec& base = {});

}  // namespace multidepth

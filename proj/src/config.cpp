#include "multidepth/config.hpp"

#include <fstream>
#include <set>

namespace multidepth {

using nlohmann::json;

void ExperimentConfig::validate() const {
  model.validate();
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (!(base_lr >= 0.0) || !(lr_power > 0.0)) throw ConfigError("learning rate settings invalid");
  if (validation_interval == 0) throw ConfigError("validation_interval must be >= 1");
  augment.validate();
  if (augment.crop_height % kEncoderStride || augment.crop_width % kEncoderStride)
    throw ConfigError("crop size must be divisible by the encoder stride");
  if (augment.crop_height > train_data.scene.height || augment.crop_width > train_data.scene.width)
    throw ConfigError("crop larger than the training frames");
  if (val_data.scene.height % kEncoderStride || val_data.scene.width % kEncoderStride)
    throw ConfigError("validation frames must be divisible by the encoder stride");
  if (train_data.count < batch_size) throw ConfigError("training set smaller than one batch");
  if (val_data.count == 0) throw ConfigError("validation set must not be empty");
  if (weighting.mode == WeightingMode::manual && !(weighting.manual_reg > 0.0 && weighting.manual_cls > 0.0))
    throw ConfigError("manual weights must be positive");
  train_data.scene.validate();
  val_data.scene.validate();
  train_data.sparsity.validate();
  val_data.sparsity.validate();
  (void)scheme();
  if (train_data.scene.near_depth_min < d_min || val_data.scene.near_depth_min < d_min)
    throw ConfigError("generated depths must not fall below d_min");
}

IntervalScheme ExperimentConfig::scheme() const {
  const std::size_t n = model.classification_head ? model.n_cls : std::max<std::size_t>(model.n_cls, 1);
  return IntervalScheme(n, ClipPlanes{d_cmin, d_cmax}, DepthBounds(d_min, d_max));
}

namespace {

// Reads keys of a JSON object, rejecting any key not consumed.
class Fields {
 public:
  Fields(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j.is_object()) throw ConfigError(where_ + ": expected an object");
  }
  ~Fields() noexcept(false) {
    if (std::uncaught_exceptions()) return;
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError(where_ + ": unknown key '" + it.key() + "'");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!it->is_boolean()) throw ConfigError("");
      } else if constexpr (std::is_integral_v<T>) {
        if (!it->is_number_integer() || (it->is_number_integer() && it->template get<long long>() < 0))
          throw ConfigError("");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!it->is_number()) throw ConfigError("");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!it->is_string()) throw ConfigError("");
      }
      out = it->template get<T>();
    } catch (const std::exception&) {
      throw ConfigError(where_ + "." + key + ": wrong type or value");
    }
  }

  const json* sub(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

json scene_json(const SceneSpec& s) {
  return {{"height", s.height},
          {"width", s.width},
          {"sky_fraction", s.sky_fraction},
          {"near_depth_min", s.near_depth_min},
          {"near_depth_max", s.near_depth_max},
          {"camera_height", s.camera_height},
          {"object_count_min", s.object_count_min},
          {"object_count_max", s.object_count_max},
          {"object_depth_min", s.object_depth_min},
          {"object_depth_max", s.object_depth_max},
          {"max_depth", s.max_depth},
          {"haze_distance", s.haze_distance},
          {"noise_amplitude", s.noise_amplitude}};
}

SceneSpec scene_from(const json& j, SceneSpec s, const std::string& where) {
  Fields f(j, where);
  f.get("height", s.height);
  f.get("width", s.width);
  f.get("sky_fraction", s.sky_fraction);
  f.get("near_depth_min", s.near_depth_min);
  f.get("near_depth_max", s.near_depth_max);
  f.get("camera_height", s.camera_height);
  f.get("object_count_min", s.object_count_min);
  f.get("object_count_max", s.object_count_max);
  f.get("object_depth_min", s.object_depth_min);
  f.get("object_depth_max", s.object_depth_max);
  f.get("max_depth", s.max_depth);
  f.get("haze_distance", s.haze_distance);
  f.get("noise_amplitude", s.noise_amplitude);
  return s;
}

json sparsity_json(const SparsityModel& s) {
  return {{"coverage", s.coverage},
          {"coverage_jitter", s.coverage_jitter},
          {"coverage_floor", s.coverage_floor},
          {"scanline_jitter", s.scanline_jitter}};
}

SparsityModel sparsity_from(const json& j, SparsityModel s, const std::string& where) {
  Fields f(j, where);
  f.get("coverage", s.coverage);
  f.get("coverage_jitter", s.coverage_jitter);
  f.get("coverage_floor", s.coverage_floor);
  f.get("scanline_jitter", s.scanline_jitter);
  return s;
}

DatasetSpec dataset_from(const json& j, DatasetSpec d, const std::string& where) {
  Fields f(j, where);
  if (auto* s = f.sub("scene")) d.scene = scene_from(*s, d.scene, where + ".scene");
  if (auto* s = f.sub("sparsity")) d.sparsity = sparsity_from(*s, d.sparsity, where + ".sparsity");
  f.get("count", d.count);
  f.get("seed", d.seed);
  return d;
}

}  // namespace

json to_json(const DatasetSpec& d) {
  return {{"scene", scene_json(d.scene)}, {"sparsity", sparsity_json(d.sparsity)}, {"count", d.count}, {"seed", d.seed}};
}

DatasetSpec dataset_from_json(const json& j, const DatasetSpec& base) { return dataset_from(j, base, "dataset"); }

json to_json(const ExperimentConfig& c) {
  const auto& m = c.model;
  json model = {{"input_channels", m.input_channels},
                {"stem_channels", m.stem_channels},
                {"block_a_channels", m.block_a_channels},
                {"block_b_channels", m.block_b_channels},
                {"dilation_of_last_block", m.dilation_of_last_block},
                {"pyramid_channels", m.pyramid_channels},
                {"head_hidden", m.head_hidden},
                {"pyramid_levels", m.pyramid_levels},
                {"use_skip", m.use_skip},
                {"dropout_p", m.dropout_p},
                {"classification_head", m.classification_head},
                {"n_cls", m.n_cls}};
  json weighting = {{"mode", to_string(c.weighting.mode)},
                    {"manual_reg", c.weighting.manual_reg},
                    {"manual_cls", c.weighting.manual_cls},
                    {"s_reg_init", c.weighting.s_reg_init},
                    {"s_cls_init", c.weighting.s_cls_init}};
  json augment = {{"crop_height", c.augment.crop_height},
                  {"crop_width", c.augment.crop_width},
                  {"flip_probability", c.augment.flip_probability},
                  {"scaling", c.augment.scaling}};
  json adam = {{"beta1", c.adam.beta1},
               {"beta2", c.adam.beta2},
               {"eps", c.adam.eps},
               {"weight_decay", c.adam.weight_decay}};
  return {{"model", model},
          {"weighting", weighting},
          {"depth", {{"d_min", c.d_min}, {"d_max", c.d_max}, {"d_cmin", c.d_cmin}, {"d_cmax", c.d_cmax}}},
          {"augment", augment},
          {"batch_size", c.batch_size},
          {"total_iters", c.total_iters},
          {"base_lr", c.base_lr},
          {"lr_power", c.lr_power},
          {"adam", adam},
          {"seed", c.seed},
          {"validation_interval", c.validation_interval},
          {"train_data", to_json(c.train_data)},
          {"val_data", to_json(c.val_data)},
          {"prefetch", c.prefetch}};
}

ExperimentConfig config_from_json(const json& j, const ExperimentConfig& base) {
  ExperimentConfig c = base;
  {
    Fields f(j, "config");
    if (auto* s = f.sub("model")) {
      Fields m(*s, "config.model");
      m.get("input_channels", c.model.input_channels);
      m.get("stem_channels", c.model.stem_channels);
      m.get("block_a_channels", c.model.block_a_channels);
      m.get("block_b_channels", c.model.block_b_channels);
      m.get("dilation_of_last_block", c.model.dilation_of_last_block);
      m.get("pyramid_channels", c.model.pyramid_channels);
      m.get("head_hidden", c.model.head_hidden);
      m.get("pyramid_levels", c.model.pyramid_levels);
      m.get("use_skip", c.model.use_skip);
      m.get("dropout_p", c.model.dropout_p);
      m.get("classification_head", c.model.classification_head);
      m.get("n_cls", c.model.n_cls);
    }
    if (auto* s = f.sub("weighting")) {
      Fields w(*s, "config.weighting");
      std::string mode = to_string(c.weighting.mode);
      w.get("mode", mode);
      c.weighting.mode = weighting_from_string(mode);
      w.get("manual_reg", c.weighting.manual_reg);
      w.get("manual_cls", c.weighting.manual_cls);
      w.get("s_reg_init", c.weighting.s_reg_init);
      w.get("s_cls_init", c.weighting.s_cls_init);
    }
    if (auto* s = f.sub("depth")) {
      Fields d(*s, "config.depth");
      d.get("d_min", c.d_min);
      d.get("d_max", c.d_max);
      d.get("d_cmin", c.d_cmin);
      d.get("d_cmax", c.d_cmax);
    }
    if (auto* s = f.sub("augment")) {
      Fields a(*s, "config.augment");
      a.get("crop_height", c.augment.crop_height);
      a.get("crop_width", c.augment.crop_width);
      a.get("flip_probability", c.augment.flip_probability);
      a.get("scaling", c.augment.scaling);
    }
    f.get("batch_size", c.batch_size);
    f.get("total_iters", c.total_iters);
    f.get("base_lr", c.base_lr);
    f.get("lr_power", c.lr_power);
    if (auto* s = f.sub("adam")) {
      Fields a(*s, "config.adam");
      a.get("beta1", c.adam.beta1);
      a.get("beta2", c.adam.beta2);
      a.get("eps", c.adam.eps);
      a.get("weight_decay", c.adam.weight_decay);
    }
    f.get("seed", c.seed);
    f.get("validation_interval", c.validation_interval);
    if (auto* s = f.sub("train_data")) c.train_data = dataset_from(*s, c.train_data, "config.train_data");
    if (auto* s = f.sub("val_data")) c.val_data = dataset_from(*s, c.val_data, "config.val_data");
    f.get("prefetch", c.prefetch);
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::string& path, const ExperimentConfig& base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  return config_from_json(j, base);
}

void save_config(const ExperimentConfig& config, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  out << to_json(config).dump(2) << '\n';
}

}  // namespace multidepth

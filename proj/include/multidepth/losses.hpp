#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>

#include "multidepth/depth_space.hpp"
#include "multidepth/tensor.hpp"

namespace multidepth {

/// Mean of squared differences over the masked positions of pred. target is
/// indexed like pred. Throws EmptyReductionError when the mask is empty.
Tensor sparse_mse(const Tensor& pred, std::span<const double> target, const Mask& mask);

/// Mean over masked pixels of -log softmax(logits)[label]. logits are
/// N x C x H x W; labels and mask are N x H x W flattened (mask shape N,1,H,W).
Tensor sparse_softmax_ce(const Tensor& logits, std::span<const std::int32_t> labels, const Mask& mask);

struct SilogResult {
  double raw = 0.0;     // (1/n) sum g^2 - (1/n^2) (sum g)^2, g = log d - log d*
  double scaled = 0.0;  // 100 * sqrt(raw)
  std::size_t count = 0;
};

/// Scale-invariant log error over pixels valid in both maps.
SilogResult silog(const DepthMap& pred, const DepthMap& gt);

enum class WeightingMode { equal, manual, learned };

std::string to_string(WeightingMode mode);
WeightingMode weighting_from_string(const std::string& name);

/// Task weighting. In learned mode s_reg and s_cls are log-variances optimized
/// with the network: w_reg = 0.5 exp(-s_reg), w_cls = exp(-s_cls), and each
/// task adds the regularizer 0.5 s_task.
class TaskWeights {
 public:
  static TaskWeights equal();
  static TaskWeights manual(double w_reg, double w_cls);
  static TaskWeights learned(double s_reg_init = 1.0, double s_cls_init = 1.0);

  WeightingMode mode() const { return mode_; }
  Tensor& s_reg() { return s_reg_; }
  Tensor& s_cls() { return s_cls_; }
  const Tensor& s_reg() const { return s_reg_; }
  const Tensor& s_cls() const { return s_cls_; }
  double s_reg_value() const { return s_reg_.item(); }
  double s_cls_value() const { return s_cls_.item(); }
  double w_reg() const;
  double w_cls() const;
  double r_reg() const;
  double r_cls() const;
  /// sigma^2 = exp(s)
  double variance_reg() const;
  double variance_cls() const;

 private:
  WeightingMode mode_ = WeightingMode::equal;
  double manual_reg_ = 1.0, manual_cls_ = 1.0;
  Tensor s_reg_, s_cls_;
};

struct LossBreakdown {
  Tensor l_mt;
  double l_reg = 0, l_cls = 0;
  double w_reg = 0, w_cls = 0;
  double r_reg = 0, r_cls = 0;
  double total = 0;
  std::size_t valid_pixel_count = 0;
};

/// l_mt = w_reg l_reg + r_reg + w_cls l_cls + r_cls.
LossBreakdown combine(const Tensor& l_reg, const Tensor& l_cls, const TaskWeights& weights);

/// Single-task regression objective (l_mt = l_reg, w_reg = 1, no classification).
LossBreakdown regression_only(const Tensor& l_reg);

}  // namespace multidepth

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "multidepth/tensor.hpp"

namespace multidepth {

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;

  bool operator==(const AdamHyper&) const = default;
};

/// A parameter handed to the optimizer. Decay-exempt parameters (the task
/// log-variances) skip the L2 term.
struct OptimParam {
  Tensor tensor;
  bool decay = true;
};

struct AdamState {
  AdamHyper hyper;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;

  bool operator==(const AdamState&) const = default;
};

/// One Adam update with coupled L2 decay (g' = g + lambda * theta), using the
/// gradients currently stored on the parameters. Parameters without a
/// gradient are treated as having a zero gradient. Throws NonFiniteError on a
/// non-finite gradient without touching any state.
void adam_step(std::span<OptimParam> params, AdamState& state, double lr);

/// alpha(t) = alpha0 * (1 - t / total)^power
struct PolySchedule {
  double base_lr = 1e-3;
  double power = 0.9;
  std::size_t total_iters = 2000;
};

double lr_at(const PolySchedule& schedule, std::size_t t);

enum class SweepRegion { stagnation, decrease, increase, divergence };

std::string to_string(SweepRegion region);

struct SweepInterval {
  SweepRegion region;
  std::size_t first;  // inclusive step index
  std::size_t last;   // inclusive step index
  double alpha_lo;
  double alpha_hi;
};

struct LrSweepRecord {
  std::vector<double> alpha;
  std::vector<double> loss_raw;
  std::vector<double> loss_smoothed;
  std::vector<SweepInterval> intervals;
  double selected_alpha = 0.0;
  bool fallback = false;      // no decrease region found; selected = geometric midpoint
  bool diverged = false;      // loss became non-finite and the record was truncated
  std::size_t requested_steps = 0;
  std::vector<std::string> warnings;

  void write_csv(std::ostream& os) const;
};

struct LrSweepOptions {
  std::size_t steps = 250;
  double smoothing = 0.9;
  /// Window (in steps) of the slope estimate on the smoothed loss.
  std::size_t slope_window = 10;
  /// Relative slope per decade of alpha below which a step counts as decreasing.
  double decrease_threshold = 0.05;
  /// Divergence starts where the smoothed loss rises above its best value by
  /// this multiple of the initial-to-best drop.
  double divergence_factor = 1.0;
};

/// Exponential learning-rate range test. train_step performs one optimization
/// step at the given rate and returns the loss observed after it.
LrSweepRecord lr_range_test(const std::function<double(double)>& train_step, double alpha_start,
                            double alpha_end, const LrSweepOptions& options = {});

}  // namespace multidepth

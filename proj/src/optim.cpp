#include "multidepth/optim.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>

#include "multidepth/errors.hpp"

namespace multidepth {

void adam_step(std::span<OptimParam> params, AdamState& state, double lr) {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw DomainError("learning rate must be finite and >= 0");
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.tensor.numel(), 0.0);
      state.v.emplace_back(p.tensor.numel(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("optimizer state does not match parameter list");
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (state.m[k].size() != params[k].tensor.numel()) throw ShapeError("moment shape mismatch");
    if (params[k].tensor.has_grad())
      for (double g : params[k].tensor.grad())
        if (!std::isfinite(g)) throw NonFiniteError("non-finite gradient in parameter " + std::to_string(k));
  }

  const auto& h = state.hyper;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(h.beta1, t);
  const double c2 = 1.0 - std::pow(h.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k];
    auto theta = p.tensor.mutable_values();
    const bool has = p.tensor.has_grad();
    auto grad = p.tensor.grad();
    const double decay = p.decay ? h.weight_decay : 0.0;
    auto& m = state.m[k];
    auto& v = state.v[k];
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double g = (has ? grad[i] : 0.0) + decay * theta[i];
      m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g;
      v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g * g;
      const double mh = m[i] / c1;
      const double vh = v[i] / c2;
      theta[i] -= lr * mh / (std::sqrt(vh) + h.eps);
    }
  }
}

double lr_at(const PolySchedule& schedule, std::size_t t) {
  if (schedule.total_iters == 0) throw ConfigError("schedule needs total_iters > 0");
  if (t > schedule.total_iters) throw DomainError("iteration beyond the schedule");
  const double frac = 1.0 - static_cast<double>(t) / static_cast<double>(schedule.total_iters);
  return schedule.base_lr * std::pow(frac, schedule.power);
}

std::string to_string(SweepRegion region) {
  switch (region) {
    case SweepRegion::stagnation: return "stagnation";
    case SweepRegion::decrease: return "decrease";
    case SweepRegion::increase: return "increase";
    case SweepRegion::divergence: return "divergence";
  }
  return "?";
}

void LrSweepRecord::write_csv(std::ostream& os) const {
  os << "step,alpha,loss_raw,loss_smoothed\n";
  os << std::setprecision(17);
  for (std::size_t i = 0; i < alpha.size(); ++i)
    os << i << ',' << alpha[i] << ',' << loss_raw[i] << ',' << loss_smoothed[i] << '\n';
}

namespace {

// Short runs are absorbed by the preceding interval so noise does not split
// a region into fragments.
std::vector<SweepInterval> segment(const std::vector<SweepRegion>& labels, const std::vector<double>& alpha,
                                   std::size_t min_run) {
  std::vector<SweepInterval> runs;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!runs.empty() && runs.back().region == labels[i]) {
      runs.back().last = i;
    } else {
      runs.push_back({labels[i], i, i, 0, 0});
    }
  }
  std::vector<SweepInterval> merged;
  for (const auto& r : runs) {
    const bool short_run = r.last - r.first + 1 < min_run && r.region != SweepRegion::divergence;
    if (!merged.empty() && (short_run || merged.back().region == r.region)) {
      merged.back().last = r.last;
    } else {
      merged.push_back(r);
    }
  }
  // A short leading run takes the label of its successor.
  if (merged.size() > 1 && merged[0].last - merged[0].first + 1 < min_run &&
      merged[1].region != SweepRegion::divergence) {
    merged[1].first = 0;
    merged.erase(merged.begin());
  }
  for (auto& r : merged) {
    r.alpha_lo = alpha[r.first];
    r.alpha_hi = alpha[r.last];
  }
  return merged;
}

}  // namespace

LrSweepRecord lr_range_test(const std::function<double(double)>& train_step, double alpha_start,
                            double alpha_end, const LrSweepOptions& options) {
  if (!(alpha_start > 0.0 && alpha_start < alpha_end))
    throw ConfigError("lr_range_test requires 0 < alpha_start < alpha_end");
  if (options.steps < 2) throw ConfigError("lr_range_test requires at least 2 steps");

  LrSweepRecord rec;
  rec.requested_steps = options.steps;
  const double ratio = std::log(alpha_end / alpha_start);
  std::size_t diverge_at = options.steps;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < options.steps; ++k) {
    const double a =
        alpha_start * std::exp(ratio * static_cast<double>(k) / static_cast<double>(options.steps - 1));
    double loss;
    try {
      loss = train_step(a);
    } catch (const NonFiniteError&) {
      loss = std::numeric_limits<double>::quiet_NaN();
    }
    if (!std::isfinite(loss)) {
      rec.diverged = true;
      rec.warnings.push_back("loss became non-finite at alpha=" + std::to_string(a) + "; record truncated");
      break;
    }
    const double s = rec.loss_smoothed.empty()
                         ? loss
                         : options.smoothing * rec.loss_smoothed.back() + (1.0 - options.smoothing) * loss;
    rec.alpha.push_back(a);
    rec.loss_raw.push_back(loss);
    rec.loss_smoothed.push_back(s);
    best = std::min(best, s);
    const double drop = rec.loss_smoothed.front() - best;
    const double margin = drop > 0.0 ? options.divergence_factor * drop : std::abs(best);
    if (diverge_at == options.steps && k > options.slope_window && s - best > margin && margin > 0.0)
      diverge_at = k;
  }

  const std::size_t n = rec.alpha.size();
  if (n == 0) {
    rec.fallback = true;
    rec.selected_alpha = std::sqrt(alpha_start * alpha_end);
    rec.warnings.push_back("sweep produced no finite loss");
    return rec;
  }
  if (rec.diverged && diverge_at > n) diverge_at = n;
  const std::size_t live = std::min(diverge_at, n);

  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (std::size_t i = 0; i < live; ++i) {
    lo = std::min(lo, rec.loss_smoothed[i]);
    hi = std::max(hi, rec.loss_smoothed[i]);
  }
  const double range = hi - lo;
  const double scale = range > 1e-12 * std::max(1.0, std::abs(hi)) ? range : 0.0;

  std::vector<SweepRegion> labels(n, SweepRegion::divergence);
  std::vector<double> slope(n, 0.0);
  const std::size_t half = std::max<std::size_t>(1, options.slope_window / 2);
  for (std::size_t i = 0; i < live; ++i) {
    const std::size_t a = i >= half ? i - half : 0;
    const std::size_t b = std::min(live - 1, i + half);
    if (b == a || scale == 0.0) {
      labels[i] = SweepRegion::stagnation;
      continue;
    }
    const double decades = std::log10(rec.alpha[b] / rec.alpha[a]);
    slope[i] = (rec.loss_smoothed[b] - rec.loss_smoothed[a]) / decades / scale;
    if (slope[i] < -options.decrease_threshold) labels[i] = SweepRegion::decrease;
    else if (slope[i] > options.decrease_threshold) labels[i] = SweepRegion::increase;
    else labels[i] = SweepRegion::stagnation;
  }
  rec.intervals = segment(labels, rec.alpha, std::max<std::size_t>(3, options.slope_window / 2));

  // Steepest smoothed descent inside a decrease interval.
  double steepest = 0.0;
  std::size_t pick = n;
  for (const auto& iv : rec.intervals) {
    if (iv.region != SweepRegion::decrease) continue;
    for (std::size_t i = iv.first; i <= iv.last; ++i)
      if (slope[i] < steepest) {
        steepest = slope[i];
        pick = i;
      }
  }
  if (pick == n) {
    rec.fallback = true;
    rec.selected_alpha = std::sqrt(alpha_start * alpha_end);
    rec.warnings.push_back("no decrease interval detected; selecting the geometric midpoint");
  } else {
    rec.selected_alpha = rec.alpha[pick];
  }
  return rec;
}

}  // namespace multidepth

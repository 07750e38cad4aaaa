#include "multidepth/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace multidepth {

Tensor sparse_mse(const Tensor& pred, std::span<const double> target, const Mask& mask) {
  if (target.size() != pred.numel()) throw ShapeError("sparse_mse target size mismatch");
  if (mask.count() == 0) throw EmptyReductionError("sparse_mse: no valid pixels");
  auto t = Tensor::from(pred.shape(), std::vector<double>(target.begin(), target.end()));
  return mean(square(sub(pred, t)), &mask);
}

Tensor sparse_softmax_ce(const Tensor& logits, std::span<const std::int32_t> labels, const Mask& mask) {
  if (logits.rank() != 4) throw ShapeError("logits must be N x C x H x W");
  const std::size_t n = logits.dim(0), c = logits.dim(1), hw = logits.dim(2) * logits.dim(3);
  if (labels.size() != n * hw || mask.bits.size() != n * hw)
    throw ShapeError("label/mask size does not match logits");
  const std::size_t count = mask.count();
  if (count == 0) throw EmptyReductionError("sparse_softmax_ce: no valid pixels");

  auto x = logits.values();
  // Softmax probabilities of valid pixels are kept for the backward pass.
  std::vector<double> prob(x.size(), 0.0);
  double total = 0.0;
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t p = 0; p < hw; ++p) {
      const std::size_t m = b * hw + p;
      if (!mask.bits[m]) continue;
      const auto lab = labels[m];
      if (lab < 0 || static_cast<std::size_t>(lab) >= c)
        throw DomainError("label " + std::to_string(lab) + " outside [0, " + std::to_string(c) + ")");
      const double* px = x.data() + b * c * hw + p;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < c; ++k) mx = std::max(mx, px[k * hw]);
      double z = 0.0;
      for (std::size_t k = 0; k < c; ++k) z += std::exp(px[k * hw] - mx);
      const double lse = mx + std::log(z);
      total += lse - px[static_cast<std::size_t>(lab) * hw];
      double* pp = prob.data() + b * c * hw + p;
      for (std::size_t k = 0; k < c; ++k) pp[k * hw] = std::exp(px[k * hw] - lse);
    }
  const double inv = 1.0 / static_cast<double>(count);
  std::vector<std::int32_t> lab(labels.begin(), labels.end());
  std::vector<std::uint8_t> bits = mask.bits;
  BackwardFn bw = [n, c, hw, inv, prob = std::move(prob), lab = std::move(lab),
                   bits = std::move(bits)](std::span<const double> g, std::span<std::span<double>> gi) {
    const double s = g[0] * inv;
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t p = 0; p < hw; ++p) {
        const std::size_t m = b * hw + p;
        if (!bits[m]) continue;
        const std::size_t base = b * c * hw + p;
        for (std::size_t k = 0; k < c; ++k) gi[0][base + k * hw] += s * prob[base + k * hw];
        gi[0][base + static_cast<std::size_t>(lab[m]) * hw] -= s;
      }
  };
  return make_result({1}, {total * inv}, {logits}, std::move(bw));
}

SilogResult silog(const DepthMap& pred, const DepthMap& gt) {
  if (pred.height != gt.height || pred.width != gt.width) throw ShapeError("silog: map size mismatch");
  double s1 = 0.0, s2 = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!(pred.valid[i] && gt.valid[i])) continue;
    if (!(pred.depth[i] > 0.0) || !(gt.depth[i] > 0.0))
      throw DomainError("silog: non-positive depth at a valid pixel");
    const double g = std::log(pred.depth[i]) - std::log(gt.depth[i]);
    s1 += g * g;
    s2 += g;
    ++n;
  }
  if (n == 0) throw EmptyReductionError("silog: no jointly valid pixels");
  const double dn = static_cast<double>(n);
  SilogResult r;
  r.count = n;
  r.raw = std::max(0.0, s1 / dn - (s2 * s2) / (dn * dn));
  r.scaled = 100.0 * std::sqrt(r.raw);
  return r;
}

std::string to_string(WeightingMode mode) {
  switch (mode) {
    case WeightingMode::equal: return "equal";
    case WeightingMode::manual: return "manual";
    case WeightingMode::learned: return "learned";
  }
  return "?";
}

WeightingMode weighting_from_string(const std::string& name) {
  if (name == "equal") return WeightingMode::equal;
  if (name == "manual") return WeightingMode::manual;
  if (name == "learned") return WeightingMode::learned;
  throw ConfigError("unknown weighting mode '" + name + "'");
}

TaskWeights TaskWeights::equal() {
  TaskWeights w;
  w.mode_ = WeightingMode::equal;
  w.s_reg_ = Tensor::scalar(0.0);
  w.s_cls_ = Tensor::scalar(0.0);
  return w;
}

TaskWeights TaskWeights::manual(double w_reg, double w_cls) {
  if (!(w_reg > 0.0 && w_cls > 0.0 && std::isfinite(w_reg) && std::isfinite(w_cls)))
    throw ConfigError("manual task weights must be positive and finite");
  TaskWeights w;
  w.mode_ = WeightingMode::manual;
  w.manual_reg_ = w_reg;
  w.manual_cls_ = w_cls;
  w.s_reg_ = Tensor::scalar(0.0);
  w.s_cls_ = Tensor::scalar(0.0);
  return w;
}

TaskWeights TaskWeights::learned(double s_reg_init, double s_cls_init) {
  TaskWeights w;
  w.mode_ = WeightingMode::learned;
  w.s_reg_ = Tensor::scalar(s_reg_init, true);
  w.s_cls_ = Tensor::scalar(s_cls_init, true);
  return w;
}

double TaskWeights::w_reg() const {
  switch (mode_) {
    case WeightingMode::equal: return 1.0;
    case WeightingMode::manual: return manual_reg_;
    case WeightingMode::learned: return 0.5 * std::exp(-s_reg_value());
  }
  return 1.0;
}

double TaskWeights::w_cls() const {
  switch (mode_) {
    case WeightingMode::equal: return 1.0;
    case WeightingMode::manual: return manual_cls_;
    case WeightingMode::learned: return std::exp(-s_cls_value());
  }
  return 1.0;
}

double TaskWeights::r_reg() const { return mode_ == WeightingMode::learned ? 0.5 * s_reg_value() : 0.0; }
double TaskWeights::r_cls() const { return mode_ == WeightingMode::learned ? 0.5 * s_cls_value() : 0.0; }
double TaskWeights::variance_reg() const { return std::exp(s_reg_value()); }
double TaskWeights::variance_cls() const { return std::exp(s_cls_value()); }

LossBreakdown combine(const Tensor& l_reg, const Tensor& l_cls, const TaskWeights& weights) {
  LossBreakdown out;
  out.l_reg = l_reg.item();
  out.l_cls = l_cls.item();
  out.w_reg = weights.w_reg();
  out.w_cls = weights.w_cls();
  out.r_reg = weights.r_reg();
  out.r_cls = weights.r_cls();
  switch (weights.mode()) {
    case WeightingMode::equal:
      out.l_mt = add(l_reg, l_cls);
      break;
    case WeightingMode::manual:
      out.l_mt = add(scale(l_reg, out.w_reg), scale(l_cls, out.w_cls));
      break;
    case WeightingMode::learned: {
      const Tensor& s_reg = weights.s_reg();
      const Tensor& s_cls = weights.s_cls();
      Tensor w_reg = scale(exp(neg(s_reg)), 0.5);
      Tensor w_cls = exp(neg(s_cls));
      Tensor reg_term = add(mul(w_reg, l_reg), scale(s_reg, 0.5));
      Tensor cls_term = add(mul(w_cls, l_cls), scale(s_cls, 0.5));
      out.l_mt = add(reg_term, cls_term);
      break;
    }
  }
  out.total = out.l_mt.item();
  return out;
}

LossBreakdown regression_only(const Tensor& l_reg) {
  LossBreakdown out;
  out.l_reg = l_reg.item();
  out.w_reg = 1.0;
  out.l_mt = l_reg;
  out.total = out.l_reg;
  return out;
}

}  // namespace multidepth

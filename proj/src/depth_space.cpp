#include "multidepth/depth_space.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "multidepth/errors.hpp"

namespace multidepth {

DepthBounds::DepthBounds(double d_min, double d_max) : d_min_(d_min), d_max_(d_max) {
  if (!(std::isfinite(d_min) && std::isfinite(d_max)) || d_min < 0.0 || !(d_min < d_max))
    throw ConfigError("depth bounds require 0 <= d_min < d_max, got (" + std::to_string(d_min) +
                      ", " + std::to_string(d_max) + ")");
  log_range_ = std::log(d_max - d_min + 1.0);
}

double encode_depth(double d, const DepthBounds& bounds) {
  if (!(d >= bounds.d_min()))
    throw DomainError("depth " + std::to_string(d) + " below d_min " + std::to_string(bounds.d_min()));
  return std::log(d - bounds.d_min() + 1.0) / bounds.log_range();
}

double decode_depth(double d_log, const DepthBounds& bounds) {
  if (!(d_log >= 0.0)) throw DomainError("normalized depth must be non-negative");
  return std::exp(d_log * bounds.log_range()) + bounds.d_min() - 1.0;
}

IntervalScheme::IntervalScheme(std::size_t n_cls, ClipPlanes planes, DepthBounds bounds)
    : n_cls_(n_cls), planes_(planes), bounds_(bounds) {
  if (n_cls == 0) throw ConfigError("n_cls must be positive");
  if (!(bounds.d_min() < planes.d_cmin && planes.d_cmin < planes.d_cmax &&
        planes.d_cmax < bounds.d_max()))
    throw ConfigError("clip planes must satisfy d_min < d_cmin < d_cmax < d_max");
  const double lo = encode_depth(planes.d_cmin, bounds);
  const double hi = encode_depth(planes.d_cmax, bounds);
  const double step = (hi - lo) / static_cast<double>(n_cls);
  edges_.resize(n_cls + 1);
  for (std::size_t i = 0; i < n_cls; ++i) edges_[i] = lo + static_cast<double>(i) * step;
  edges_[n_cls] = hi;
}

std::size_t quantize(double d, const IntervalScheme& scheme) {
  const auto& e = scheme.edges();
  const std::size_t n = scheme.n_cls();
  if (d <= scheme.planes().d_cmin) return 0;
  if (d >= scheme.planes().d_cmax) return n - 1;
  const double x = encode_depth(d, scheme.bounds());
  const double t = std::floor(static_cast<double>(n) * (x - e.front()) / (e.back() - e.front()));
  auto k = static_cast<std::size_t>(std::clamp(t, 0.0, static_cast<double>(n - 1)));
  // Reconcile rounding of the closed form with the stored edges.
  while (k > 0 && x < e[k]) --k;
  while (k + 1 < n && x >= e[k + 1]) ++k;
  return k;
}

double dequantize(std::size_t label, const IntervalScheme& scheme) {
  if (label >= scheme.n_cls())
    throw DomainError("label " + std::to_string(label) + " out of range for n_cls " +
                      std::to_string(scheme.n_cls()));
  const auto& e = scheme.edges();
  return decode_depth(0.5 * (e[label] + e[label + 1]), scheme.bounds());
}

DepthMap DepthMap::empty(std::size_t height, std::size_t width) {
  DepthMap m;
  m.height = height;
  m.width = width;
  m.depth.assign(height * width, 0.0);
  m.valid.assign(height * width, 0);
  return m;
}

std::size_t DepthMap::valid_count() const {
  return static_cast<std::size_t>(std::count_if(valid.begin(), valid.end(), [](auto v) { return v != 0; }));
}

void DepthMap::check() const {
  if (depth.size() != size() || valid.size() != size()) throw ShapeError("depth map storage mismatch");
  for (std::size_t i = 0; i < size(); ++i) {
    if (valid[i] && !(depth[i] > 0.0 && std::isfinite(depth[i])))
      throw DomainError("valid pixel with non-positive depth");
    if (!valid[i] && depth[i] != 0.0) throw DomainError("invalid pixel must carry depth 0");
  }
}

IntervalLabeling label_map(const DepthMap& gt, const IntervalScheme& scheme) {
  IntervalLabeling out;
  out.height = gt.height;
  out.width = gt.width;
  out.valid = gt.valid;
  out.label.assign(gt.size(), -1);
  for (std::size_t i = 0; i < gt.size(); ++i)
    if (gt.valid[i]) out.label[i] = static_cast<std::int32_t>(quantize(gt.depth[i], scheme));
  return out;
}

}  // namespace multidepth

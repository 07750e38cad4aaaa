#pragma once

// Conversions between metric depth, normalized log-space depth and discrete
// depth-interval labels.

#include <cstddef>
#include <cstdint>
#include <vector>

namespace multidepth {

/// Normalization range [d_min, d_max] in meters; 0 <= d_min < d_max.
class DepthBounds {
 public:
  DepthBounds(double d_min, double d_max);
  double d_min() const { return d_min_; }
  double d_max() const { return d_max_; }
  /// ln(d_max - d_min + 1), the normalizer of the log encoding.
  double log_range() const { return log_range_; }

 private:
  double d_min_, d_max_, log_range_;
};

/// Inner quantization range, strictly inside the bounds.
struct ClipPlanes {
  double d_cmin = 2.5;
  double d_cmax = 80.0;
};

inline DepthBounds default_bounds() { return {2.0, 125.0}; }

/// d_log = ln(d - d_min + 1) / ln(d_max - d_min + 1). Depths above d_max give
/// values above 1. Throws DomainError for d < d_min.
double encode_depth(double d, const DepthBounds& bounds);

/// Exact inverse of encode_depth. Throws DomainError for negative input.
double decode_depth(double d_log, const DepthBounds& bounds);

/// n_cls bins uniformly spaced in normalized log-space between the clip planes.
class IntervalScheme {
 public:
  IntervalScheme(std::size_t n_cls, ClipPlanes planes, DepthBounds bounds);

  std::size_t n_cls() const { return n_cls_; }
  const ClipPlanes& planes() const { return planes_; }
  const DepthBounds& bounds() const { return bounds_; }
  /// n_cls + 1 increasing normalized-log edges; front() = encode(d_cmin),
  /// back() = encode(d_cmax).
  const std::vector<double>& edges() const { return edges_; }

 private:
  std::size_t n_cls_;
  ClipPlanes planes_;
  DepthBounds bounds_;
  std::vector<double> edges_;
};

/// Bin index of a metric depth, clamped to [0, n_cls). Depths below the lower
/// clip plane (including below d_min) land in class 0, depths above the upper
/// plane in the last class.
std::size_t quantize(double d, const IntervalScheme& scheme);

/// Decoded depth of the bin's midpoint in normalized log-space.
double dequantize(std::size_t label, const IntervalScheme& scheme);

/// Per-pixel metric depth with validity mask. Invalid pixels store 0.
struct DepthMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> depth;
  std::vector<std::uint8_t> valid;

  static DepthMap empty(std::size_t height, std::size_t width);
  std::size_t size() const { return height * width; }
  std::size_t valid_count() const;
  /// Throws DomainError unless depth > 0 on valid pixels and 0 elsewhere.
  void check() const;
};

struct IntervalLabeling {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::int32_t> label;  // -1 where invalid
  std::vector<std::uint8_t> valid;

  std::size_t size() const { return height * width; }
};

IntervalLabeling label_map(const DepthMap& gt, const IntervalScheme& scheme);

}  // namespace multidepth

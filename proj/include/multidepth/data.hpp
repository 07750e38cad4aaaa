#pragma once

// Synthetic road-scene depth data, sparsification into LiDAR-like ground
// truth, augmentation and deterministic batch assembly.

#include <cstddef>
#include <cstdint>
#include <deque>
#include <future>
#include <memory>
#include <string>
#include <vector>

#include "multidepth/depth_space.hpp"
#include "multidepth/tensor.hpp"

namespace multidepth {

/// Mixes seeds and stream indices into an independent 64-bit seed.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0);

struct SceneSpec {
  std::size_t height = 64;
  std::size_t width = 64;
  /// Top portion of the frame holding sky (no ground truth).
  double sky_fraction = 0.3;
  /// Ground depth at the bottom row, drawn uniformly per scene.
  double near_depth_min = 2.5;
  double near_depth_max = 4.0;
  double camera_height = 1.65;
  std::size_t object_count_min = 2;
  std::size_t object_count_max = 6;
  double object_depth_min = 4.0;
  double object_depth_max = 80.0;
  /// Depth assigned to sky pixels and upper cap of every generated depth.
  double max_depth = 200.0;
  /// Exponential haze distance (meters).
  double haze_distance = 60.0;
  double noise_amplitude = 0.02;

  void validate() const;
  bool operator==(const SceneSpec&) const = default;
};

struct SparsityModel {
  /// Mean fraction of all pixels with ground truth; >= 1 means dense.
  double coverage = 0.12;
  /// Per-sample multiplicative jitter of the coverage, uniform in [1-j, 1+j].
  double coverage_jitter = 0.5;
  double coverage_floor = 0.008;
  /// Fraction of the scanline spacing by which each line may shift.
  double scanline_jitter = 0.3;

  void validate() const;
  bool operator==(const SparsityModel&) const = default;
};

/// Dense scene before sparsification.
struct Scene {
  std::size_t height = 0, width = 0;
  std::vector<double> rgb;  // 3 x H x W in [0, 1]
  DepthMap depth;           // dense, all valid
  std::size_t sky_rows = 0;
};

struct Sample {
  std::vector<double> rgb;  // 3 x H x W in [0, 1]
  DepthMap gt;              // sparse
  IntervalLabeling labels;  // label_map(gt, scheme)
  std::size_t height() const { return gt.height; }
  std::size_t width() const { return gt.width; }
};

Scene generate_scene(const SceneSpec& spec, std::uint64_t seed);

/// Keeps jittered horizontal scanlines below the sky rows.
DepthMap sparsify(const DepthMap& dense, std::size_t sky_rows, const SparsityModel& model, std::uint64_t seed);

/// 16-bit grayscale PNG; stored value / 256 = meters, 0 = invalid.
DepthMap read_kitti_png(const std::string& path);
void write_kitti_png(const DepthMap& map, const std::string& path);

/// 8-bit RGB PNG <-> 3 x H x W planar values in [0, 1].
struct RgbImage {
  std::size_t height = 0, width = 0;
  std::vector<double> planes;
};
RgbImage read_rgb_png(const std::string& path);
void write_rgb_png(const RgbImage& image, const std::string& path);

struct AugmentSpec {
  std::size_t crop_height = 128;
  std::size_t crop_width = 128;
  double flip_probability = 0.5;
  bool scaling = false;  // never enabled; rejected by validate()

  void validate() const;
  bool operator==(const AugmentSpec&) const = default;
};

/// Same crop and flip applied to rgb, ground truth and labels.
Sample augment(const Sample& sample, const AugmentSpec& spec, std::uint64_t seed);
Sample crop(const Sample& sample, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w);
Sample flip_horizontal(const Sample& sample);

struct DatasetSpec {
  SceneSpec scene;
  SparsityModel sparsity;
  std::size_t count = 200;
  std::uint64_t seed = 1;

  bool operator==(const DatasetSpec&) const = default;
};

/// Sample i is a pure function of (spec, seed, i).
Sample make_sample(const DatasetSpec& spec, std::size_t index, const IntervalScheme& scheme);

class Dataset {
 public:
  Dataset(DatasetSpec spec, const IntervalScheme& scheme);
  const DatasetSpec& spec() const { return spec_; }
  std::size_t size() const { return samples_.size(); }
  const Sample& operator[](std::size_t i) const { return samples_.at(i); }
  /// Mean realized ground-truth coverage.
  double mean_coverage() const;

 private:
  DatasetSpec spec_;
  std::vector<Sample> samples_;
};

struct Batch {
  std::size_t index = 0;
  Tensor images;                        // N x 3 x h x w
  std::vector<double> depth;            // N x h x w meters, 0 where invalid
  Mask mask;                            // shape N x 1 x h x w
  std::vector<std::int32_t> labels;     // N x h x w, -1 where invalid
  std::size_t valid_count = 0;
  bool empty() const { return valid_count == 0; }
};

/// Batch b of the stream: epoch b / per_epoch over a seeded permutation,
/// incomplete trailing batches dropped. Pure function of its arguments.
Batch make_batch(const Dataset& data, std::size_t batch_size, const AugmentSpec& spec, std::uint64_t seed,
                 std::size_t b);

/// Sequential view over make_batch with optional background prefetching.
/// The emitted sequence does not depend on the prefetch depth.
class BatchIterator {
 public:
  BatchIterator(const Dataset& data, std::size_t batch_size, AugmentSpec spec, std::uint64_t seed,
                std::size_t prefetch_depth = 0, std::size_t start = 0);
  ~BatchIterator();
  BatchIterator(const BatchIterator&) = delete;
  BatchIterator& operator=(const BatchIterator&) = delete;

  Batch next();
  std::size_t position() const { return next_; }
  std::size_t batches_per_epoch() const { return per_epoch_; }

 private:
  void refill();

  const Dataset& data_;
  std::size_t batch_size_;
  AugmentSpec spec_;
  std::uint64_t seed_;
  std::size_t depth_;
  std::size_t per_epoch_;
  std::size_t next_;
  std::size_t scheduled_;
  std::deque<std::future<Batch>> queue_;
};

/// Full-frame batch of samples [first, first + count) without augmentation.
Batch frame_batch(const Dataset& data, std::size_t first, std::size_t count);

}  // namespace multidepth

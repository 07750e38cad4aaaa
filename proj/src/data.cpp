#include "multidepth/data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "multidepth/errors.hpp"

namespace multidepth {

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  // splitmix64 finalizer over a running combination.
  auto fmix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return fmix(fmix(fmix(a) ^ b) ^ c);
}

void SceneSpec::validate() const {
  if (height < 8 || width < 8) throw ConfigError("scene must be at least 8x8");
  if (!(sky_fraction >= 0.0 && sky_fraction <= 0.5)) throw ConfigError("sky_fraction must lie in [0, 0.5]");
  if (!(near_depth_min > 0.0 && near_depth_min <= near_depth_max)) throw ConfigError("invalid near depth range");
  if (object_count_min > object_count_max) throw ConfigError("invalid object count range");
  if (!(object_depth_min > 0.0 && object_depth_min <= object_depth_max)) throw ConfigError("invalid object depth range");
  if (!(max_depth >= object_depth_max && max_depth > 0.0)) throw ConfigError("max_depth must cover the object depths");
  if (!(camera_height > 0.0 && haze_distance > 0.0 && noise_amplitude >= 0.0))
    throw ConfigError("camera height, haze distance and noise must be positive");
}

void SparsityModel::validate() const {
  if (!(coverage > 0.0)) throw ConfigError("coverage must be positive");
  if (!(coverage_jitter >= 0.0 && coverage_jitter < 1.0)) throw ConfigError("coverage_jitter must lie in [0, 1)");
  if (!(coverage_floor >= 0.0 && coverage_floor <= 1.0)) throw ConfigError("coverage_floor must lie in [0, 1]");
  if (!(scanline_jitter >= 0.0 && scanline_jitter < 0.5)) throw ConfigError("scanline_jitter must lie in [0, 0.5)");
}

void AugmentSpec::validate() const {
  if (crop_height == 0 || crop_width == 0) throw ConfigError("crop size must be positive");
  if (!(flip_probability >= 0.0 && flip_probability <= 1.0)) throw ConfigError("flip probability must lie in [0, 1]");
  if (scaling) throw ConfigError("scale augmentation is not supported");
}

// ---------------------------------------------------------------------------
// Scene synthesis

namespace {

struct Box {
  double depth;
  long top, bottom, left, right;
  double albedo[3];
  double world_left;  // meters, for texture phase
};

constexpr double kFog[3] = {0.75, 0.78, 0.82};

}  // namespace

Scene generate_scene(const SceneSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::size_t H = spec.height, W = spec.width;
  const auto sky = static_cast<std::size_t>(std::lround(spec.sky_fraction * static_cast<double>(H)));
  const double near = spec.near_depth_min + (spec.near_depth_max - spec.near_depth_min) * unit(rng);
  // Ground row r (below the horizon) sees depth focal * camera_height / (r - sky + 1).
  const double focal = near * static_cast<double>(H - sky) / spec.camera_height;
  const double cx = 0.5 * static_cast<double>(W);

  Scene scene;
  scene.height = H;
  scene.width = W;
  scene.sky_rows = sky;
  scene.depth = DepthMap::empty(H, W);
  std::vector<int> owner(H * W, -1);  // -2 sky, -1 ground, k object k
  for (std::size_t r = 0; r < H; ++r)
    for (std::size_t c = 0; c < W; ++c) {
      const std::size_t i = r * W + c;
      if (r < sky) {
        scene.depth.depth[i] = spec.max_depth;
        owner[i] = -2;
      } else {
        const double d = focal * spec.camera_height / static_cast<double>(r - sky + 1);
        scene.depth.depth[i] = std::min(d, spec.max_depth);
      }
      scene.depth.valid[i] = 1;
    }

  const std::size_t n_obj =
      spec.object_count_min +
      static_cast<std::size_t>(unit(rng) * static_cast<double>(spec.object_count_max - spec.object_count_min + 1));
  std::vector<Box> boxes;
  const double log_lo = std::log(spec.object_depth_min), log_hi = std::log(spec.object_depth_max);
  for (std::size_t k = 0; k < std::min(n_obj, spec.object_count_max); ++k) {
    Box b{};
    b.depth = std::exp(log_lo + (log_hi - log_lo) * unit(rng));
    const double height_m = 1.4 + 1.8 * unit(rng);
    const double width_m = 1.5 + 2.5 * unit(rng);
    const double lateral_m = (unit(rng) - 0.5) * 2.0 * std::max(4.0, 0.6 * b.depth);
    const double row_bottom = static_cast<double>(sky) - 1.0 + focal * spec.camera_height / b.depth;
    b.bottom = std::min<long>(static_cast<long>(H) - 1, std::lround(row_bottom));
    b.top = std::lround(row_bottom - height_m * focal / b.depth);
    const double col_center = cx + lateral_m * focal / b.depth;
    const double half_px = 0.5 * width_m * focal / b.depth;
    b.left = std::lround(col_center - half_px);
    b.right = std::lround(col_center + half_px);
    b.world_left = lateral_m - 0.5 * width_m;
    for (double& a : b.albedo) a = 0.1 + 0.8 * unit(rng);
    boxes.push_back(b);
  }
  for (std::size_t k = 0; k < boxes.size(); ++k) {
    const auto& b = boxes[k];
    for (long r = std::max(0L, b.top); r <= b.bottom && r < static_cast<long>(H); ++r)
      for (long c = std::max(0L, b.left); c <= b.right && c < static_cast<long>(W); ++c) {
        const std::size_t i = static_cast<std::size_t>(r) * W + static_cast<std::size_t>(c);
        if (b.depth < scene.depth.depth[i]) {
          scene.depth.depth[i] = b.depth;
          owner[i] = static_cast<int>(k);
        }
      }
  }

  scene.rgb.assign(3 * H * W, 0.0);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t r = 0; r < H; ++r)
    for (std::size_t c = 0; c < W; ++c) {
      const std::size_t i = r * W + c;
      const double d = scene.depth.depth[i];
      double base[3];
      if (owner[i] == -2) {
        const double t = static_cast<double>(r) / std::max<double>(1.0, static_cast<double>(sky));
        base[0] = 0.40 + 0.30 * t;
        base[1] = 0.55 + 0.20 * t;
        base[2] = 0.85 - 0.05 * t;
      } else if (owner[i] == -1) {
        const double x = (static_cast<double>(c) + 0.5 - cx) * d / focal;
        const double checker = (static_cast<long>(std::floor(d / 2.0)) + static_cast<long>(std::floor(x / 1.5))) % 2 == 0 ? 0.06 : -0.06;
        const bool lane = std::abs(std::abs(x) - 1.8) < 0.12;
        const double g = lane ? 0.9 : 0.35 + checker;
        base[0] = g;
        base[1] = g;
        base[2] = g * 1.05;
      } else {
        const auto& b = boxes[static_cast<std::size_t>(owner[i])];
        const double x = b.world_left + (static_cast<double>(c) - static_cast<double>(b.left)) * d / focal;
        const double stripe = std::sin(2.0 * M_PI * x / 0.8) > 0.0 ? 0.05 : -0.05;
        const double rel = static_cast<double>(static_cast<long>(r) - b.top) /
                           std::max(1.0, static_cast<double>(b.bottom - b.top));
        const double shade = 0.8 + 0.2 * rel;
        for (int ch = 0; ch < 3; ++ch) base[ch] = b.albedo[ch] * shade + stripe;
      }
      const double t = owner[i] == -2 ? 0.35 : std::exp(-d / spec.haze_distance);
      for (int ch = 0; ch < 3; ++ch) {
        double v = base[ch] * t + kFog[ch] * (1.0 - t);
        if (spec.noise_amplitude > 0.0) v += spec.noise_amplitude * noise(rng);
        scene.rgb[static_cast<std::size_t>(ch) * H * W + i] = std::clamp(v, 0.0, 1.0);
      }
    }
  return scene;
}

DepthMap sparsify(const DepthMap& dense, std::size_t sky_rows, const SparsityModel& model, std::uint64_t seed) {
  model.validate();
  const std::size_t H = dense.height, W = dense.width;
  DepthMap out = DepthMap::empty(H, W);
  if (sky_rows >= H) return out;
  const std::size_t eligible = H - sky_rows;
  auto keep_pixel = [&](std::size_t i) {
    if (dense.valid[i] && dense.depth[i] > 0.0) {
      out.depth[i] = dense.depth[i];
      out.valid[i] = 1;
    }
  };
  if (model.coverage >= 1.0) {
    for (std::size_t i = sky_rows * W; i < H * W; ++i) keep_pixel(i);
    return out;
  }

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double target = model.coverage * (1.0 - model.coverage_jitter + 2.0 * model.coverage_jitter * unit(rng));
  target = std::clamp(target, model.coverage_floor, 1.0);
  // Rows-worth of valid pixels needed; lines keep at most 90% of their pixels.
  const double rows_needed = std::min(target * static_cast<double>(H), static_cast<double>(eligible));
  const double max_keep = 0.9;
  std::size_t spacing = static_cast<std::size_t>(
      std::floor(static_cast<double>(eligible) / std::max(1.0, rows_needed / max_keep)));
  spacing = std::max<std::size_t>(1, spacing);
  std::vector<std::size_t> lines;
  const double offset = unit(rng) * static_cast<double>(spacing);
  for (double base = offset; base < static_cast<double>(eligible); base += static_cast<double>(spacing)) {
    double pos = base + (unit(rng) * 2.0 - 1.0) * model.scanline_jitter * static_cast<double>(spacing);
    auto row = static_cast<long>(std::floor(pos));
    row = std::clamp<long>(row, 0, static_cast<long>(eligible) - 1);
    lines.push_back(sky_rows + static_cast<std::size_t>(row));
  }
  std::sort(lines.begin(), lines.end());
  lines.erase(std::unique(lines.begin(), lines.end()), lines.end());
  const double p = std::min(1.0, rows_needed / static_cast<double>(lines.size()));
  for (auto r : lines)
    for (std::size_t c = 0; c < W; ++c)
      if (unit(rng) < p) keep_pixel(r * W + c);
  return out;
}

// ---------------------------------------------------------------------------
// Augmentation

Sample crop(const Sample& s, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w) {
  const std::size_t H = s.height(), W = s.width();
  if (y0 + h > H || x0 + w > W || h == 0 || w == 0)
    throw ShapeError("crop " + std::to_string(h) + "x" + std::to_string(w) + " does not fit " +
                     std::to_string(H) + "x" + std::to_string(W));
  Sample out;
  out.rgb.resize(3 * h * w);
  out.gt = DepthMap::empty(h, w);
  out.labels.height = h;
  out.labels.width = w;
  out.labels.label.resize(h * w);
  out.labels.valid.resize(h * w);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      const std::size_t src = (y0 + r) * W + x0 + c, dst = r * w + c;
      for (std::size_t ch = 0; ch < 3; ++ch) out.rgb[ch * h * w + dst] = s.rgb[ch * H * W + src];
      out.gt.depth[dst] = s.gt.depth[src];
      out.gt.valid[dst] = s.gt.valid[src];
      out.labels.label[dst] = s.labels.label[src];
      out.labels.valid[dst] = s.labels.valid[src];
    }
  return out;
}

Sample flip_horizontal(const Sample& s) {
  Sample out = s;
  const std::size_t H = s.height(), W = s.width();
  for (std::size_t r = 0; r < H; ++r)
    for (std::size_t c = 0; c < W; ++c) {
      const std::size_t src = r * W + (W - 1 - c), dst = r * W + c;
      for (std::size_t ch = 0; ch < 3; ++ch) out.rgb[ch * H * W + dst] = s.rgb[ch * H * W + src];
      out.gt.depth[dst] = s.gt.depth[src];
      out.gt.valid[dst] = s.gt.valid[src];
      out.labels.label[dst] = s.labels.label[src];
      out.labels.valid[dst] = s.labels.valid[src];
    }
  return out;
}

Sample augment(const Sample& sample, const AugmentSpec& spec, std::uint64_t seed) {
  spec.validate();
  if (spec.crop_height > sample.height() || spec.crop_width > sample.width())
    throw ShapeError("crop larger than image");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto pick = [&](std::size_t range) {
    return std::min(range, static_cast<std::size_t>(unit(rng) * static_cast<double>(range + 1)));
  };
  const std::size_t y0 = pick(sample.height() - spec.crop_height);
  const std::size_t x0 = pick(sample.width() - spec.crop_width);
  const bool flip = unit(rng) < spec.flip_probability;
  Sample out = crop(sample, y0, x0, spec.crop_height, spec.crop_width);
  return flip ? flip_horizontal(out) : out;
}

// ---------------------------------------------------------------------------
// Dataset and batches

Sample make_sample(const DatasetSpec& spec, std::size_t index, const IntervalScheme& scheme) {
  Scene scene = generate_scene(spec.scene, mix_seed(spec.seed, index, 0x5ce7e));
  Sample s;
  s.rgb = std::move(scene.rgb);
  s.gt = sparsify(scene.depth, scene.sky_rows, spec.sparsity, mix_seed(spec.seed, index, 0x5ba75e));
  s.labels = label_map(s.gt, scheme);
  return s;
}

Dataset::Dataset(DatasetSpec spec, const IntervalScheme& scheme) : spec_(std::move(spec)) {
  if (spec_.count == 0) throw ConfigError("dataset must contain at least one sample");
  samples_.reserve(spec_.count);
  for (std::size_t i = 0; i < spec_.count; ++i) samples_.push_back(make_sample(spec_, i, scheme));
}

double Dataset::mean_coverage() const {
  double acc = 0.0;
  for (const auto& s : samples_) acc += static_cast<double>(s.gt.valid_count()) / static_cast<double>(s.gt.size());
  return acc / static_cast<double>(samples_.size());
}

namespace {

Batch assemble(std::size_t index, const std::vector<Sample>& parts) {
  const std::size_t n = parts.size(), h = parts[0].height(), w = parts[0].width();
  Batch b;
  b.index = index;
  std::vector<double> img(n * 3 * h * w);
  b.depth.resize(n * h * w);
  b.labels.resize(n * h * w);
  b.mask.shape = {n, 1, h, w};
  b.mask.bits.resize(n * h * w);
  for (std::size_t k = 0; k < n; ++k) {
    const auto& s = parts[k];
    std::copy(s.rgb.begin(), s.rgb.end(), img.begin() + static_cast<std::ptrdiff_t>(k * 3 * h * w));
    for (std::size_t i = 0; i < h * w; ++i) {
      b.depth[k * h * w + i] = s.gt.valid[i] ? s.gt.depth[i] : 0.0;
      b.mask.bits[k * h * w + i] = s.gt.valid[i];
      b.labels[k * h * w + i] = s.labels.label[i];
      b.valid_count += s.gt.valid[i] ? 1 : 0;
    }
  }
  b.images = Tensor::from({n, 3, h, w}, std::move(img));
  return b;
}

}  // namespace

Batch make_batch(const Dataset& data, std::size_t batch_size, const AugmentSpec& spec, std::uint64_t seed,
                 std::size_t b) {
  if (batch_size == 0) throw ConfigError("batch size must be >= 1");
  if (data.size() == 0) throw ConfigError("empty dataset");
  const std::size_t per_epoch = data.size() / batch_size;
  if (per_epoch == 0) throw ConfigError("dataset smaller than one batch");
  const std::size_t epoch = b / per_epoch, slot = b % per_epoch;
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(mix_seed(seed, epoch, 0xe90c));
  for (std::size_t i = order.size() - 1; i > 0; --i) {
    const auto j = static_cast<std::size_t>(rng() % (i + 1));
    std::swap(order[i], order[j]);
  }
  std::vector<Sample> parts;
  parts.reserve(batch_size);
  for (std::size_t k = 0; k < batch_size; ++k)
    parts.push_back(augment(data[order[slot * batch_size + k]], spec, mix_seed(seed, b, k + 1)));
  return assemble(b, parts);
}

BatchIterator::BatchIterator(const Dataset& data, std::size_t batch_size, AugmentSpec spec, std::uint64_t seed,
                             std::size_t prefetch_depth, std::size_t start)
    : data_(data),
      batch_size_(batch_size),
      spec_(spec),
      seed_(seed),
      depth_(prefetch_depth),
      next_(start),
      scheduled_(start) {
  if (batch_size == 0) throw ConfigError("batch size must be >= 1");
  if (data.size() == 0) throw ConfigError("empty dataset");
  per_epoch_ = data.size() / batch_size;
  if (per_epoch_ == 0) throw ConfigError("dataset smaller than one batch");
  spec_.validate();
  refill();
}

BatchIterator::~BatchIterator() {
  for (auto& f : queue_)
    if (f.valid()) f.wait();
}

void BatchIterator::refill() {
  while (queue_.size() < depth_) {
    const std::size_t b = scheduled_++;
    queue_.push_back(std::async(std::launch::async, [this, b] {
      return make_batch(data_, batch_size_, spec_, seed_, b);
    }));
  }
}

Batch BatchIterator::next() {
  Batch out;
  if (depth_ == 0) {
    out = make_batch(data_, batch_size_, spec_, seed_, next_);
    ++scheduled_;
  } else {
    out = queue_.front().get();
    queue_.pop_front();
  }
  ++next_;
  refill();
  return out;
}

Batch frame_batch(const Dataset& data, std::size_t first, std::size_t count) {
  if (count == 0 || first + count > data.size()) throw ShapeError("frame batch out of range");
  std::vector<Sample> parts(data.spec().count == 0 ? 0 : count);
  for (std::size_t k = 0; k < count; ++k) parts[k] = data[first + k];
  return assemble(first, parts);
}

}  // namespace multidepth

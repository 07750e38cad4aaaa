#pragma once

// Micro shared-encoder / dual-decoder network.
//
//   stem    3x3 conv stride 2                      -> skip features (1/2)
//   block A 3x3 conv stride 2, 3x3 conv            (1/4)
//   block B two 3x3 convs with dilation 2          -> shared features (1/4)
//   head    pyramid pooling over levels, 1x1 projections, upsample, concat
//           with features and pooled skip -> 3x3 conv + ReLU + dropout
//           -> 1x1 conv to output channels -> bilinear x4
//
// The regression head emits one channel of normalized-log depth; the
// classification head emits n_cls logits. Both consume the same encoder
// output.

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "multidepth/depth_space.hpp"
#include "multidepth/tensor.hpp"

namespace multidepth {

struct ModelConfig {
  std::size_t input_channels = 3;
  std::size_t stem_channels = 16;
  std::size_t block_a_channels = 32;
  std::size_t block_b_channels = 64;
  std::size_t dilation_of_last_block = 2;
  std::size_t pyramid_channels = 16;
  std::size_t head_hidden = 24;
  std::vector<std::size_t> pyramid_levels{1, 2};
  bool use_skip = true;
  double dropout_p = 0.1;
  bool classification_head = true;
  std::size_t n_cls = 32;

  /// Throws ConfigError on inconsistent values.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

inline constexpr std::size_t kEncoderStride = 4;

enum class ParamGroup { shared, regression_head, classification_head };

struct ParamCensus {
  std::size_t shared = 0;
  std::size_t regression_head = 0;
  std::size_t classification_head = 0;
  std::size_t total() const { return shared + regression_head + classification_head; }
  double shared_fraction() const { return static_cast<double>(shared) / static_cast<double>(total()); }
};

struct ConvLayer {
  std::string name;
  ParamGroup group = ParamGroup::shared;
  Tensor weight;
  Tensor bias;
  Conv2dParams params;

  Tensor operator()(const Tensor& x) const { return conv2d(x, weight, bias, params); }
};

enum class Heads { reg_only, both };

struct ModelOutput {
  Tensor regression;     // N x 1 x H x W
  Tensor class_logits;   // N x n_cls x H x W, undefined for reg_only
};

class Model {
 public:
  /// Deterministic initialization from seed: uniform(+-sqrt(6 / fan_in))
  /// weights, zero biases.
  static Model build(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }

  /// Copies share parameter storage; clone() makes an independent model.
  Model clone() const;

  /// Dropout is applied only when rng is non-null (training mode).
  ModelOutput forward(const Tensor& batch, Heads heads, std::mt19937_64* rng = nullptr) const;

  /// Every learnable tensor in a fixed order.
  std::vector<Tensor> parameters() const;
  std::vector<const ConvLayer*> layers() const;
  ParamCensus census() const;

  std::vector<double> flat_parameters() const;
  void set_flat_parameters(std::span<const double> flat);
  void zero_grad();

  /// Zeroes the final 1x1 layers of both heads.
  void zero_output_layers();

 private:
  struct Head {
    std::vector<ConvLayer> pyramid;
    ConvLayer fuse;
    ConvLayer out;
  };

  Tensor run_head(const Head& head, const Tensor& features, const Tensor& skip, std::size_t out_h,
                  std::size_t out_w, std::mt19937_64* rng) const;

  ModelConfig config_;
  ConvLayer stem_;
  ConvLayer a1_, a2_;
  ConvLayer b1_, b2_;
  Head reg_;
  Head cls_;
  bool has_cls_ = false;
};

/// Regression output clamped to [0, 1] and decoded to meters; all pixels valid.
std::vector<DepthMap> predict_depth(const Model& model, const Tensor& images, const DepthBounds& bounds);

/// Argmax of the class logits per pixel, dequantized to meters.
std::vector<DepthMap> predict_class_depth(const Model& model, const Tensor& images,
                                          const IntervalScheme& scheme);

}  // namespace multidepth

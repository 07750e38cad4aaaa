#include "multidepth/model.hpp"

#include <algorithm>
#include <cmath>

#include "multidepth/errors.hpp"

namespace multidepth {

void ModelConfig::validate() const {
  if (input_channels == 0 || stem_channels == 0 || block_a_channels == 0 || block_b_channels == 0 ||
      pyramid_channels == 0 || head_hidden == 0)
    throw ConfigError("model channel counts must be positive");
  if (dilation_of_last_block == 0) throw ConfigError("dilation must be >= 1");
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw ConfigError("dropout_p must lie in [0, 1)");
  for (auto level : pyramid_levels)
    if (level == 0) throw ConfigError("pyramid levels must be positive");
  if (classification_head && n_cls < 2) throw ConfigError("classification head requires n_cls >= 2");
}

namespace {

ConvLayer make_conv(std::string name, ParamGroup group, std::size_t in, std::size_t out,
                    std::size_t k, Conv2dParams p, std::mt19937_64& rng) {
  ConvLayer layer;
  layer.name = std::move(name);
  layer.group = group;
  layer.params = p;
  const double fan_in = static_cast<double>(in * k * k);
  const double bound = std::sqrt(6.0 / fan_in);
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> w(out * in * k * k);
  for (auto& v : w) v = dist(rng);
  layer.weight = Tensor::from({out, in, k, k}, std::move(w), true);
  layer.bias = Tensor::zeros({out}, true);
  return layer;
}

Tensor dropout(const Tensor& x, double p, std::mt19937_64& rng) {
  if (p <= 0.0) return x;
  std::bernoulli_distribution keep(1.0 - p);
  const double s = 1.0 / (1.0 - p);
  std::vector<double> m(x.numel());
  for (auto& v : m) v = keep(rng) ? s : 0.0;
  return mul(x, Tensor::from(x.shape(), std::move(m)));
}

}  // namespace

Model Model::build(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Model m;
  m.config_ = config;
  m.has_cls_ = config.classification_head;
  std::mt19937_64 rng(seed);
  const auto& c = config;
  const std::size_t dil = c.dilation_of_last_block;
  m.stem_ = make_conv("stem", ParamGroup::shared, c.input_channels, c.stem_channels, 3, {2, 1, 1}, rng);
  m.a1_ = make_conv("block_a.0", ParamGroup::shared, c.stem_channels, c.block_a_channels, 3, {2, 1, 1}, rng);
  m.a2_ = make_conv("block_a.1", ParamGroup::shared, c.block_a_channels, c.block_a_channels, 3, {1, 1, 1}, rng);
  m.b1_ = make_conv("block_b.0", ParamGroup::shared, c.block_a_channels, c.block_b_channels, 3,
                    {1, dil, dil}, rng);
  m.b2_ = make_conv("block_b.1", ParamGroup::shared, c.block_b_channels, c.block_b_channels, 3,
                    {1, dil, dil}, rng);

  const std::size_t fused_in = c.block_b_channels + c.pyramid_channels * c.pyramid_levels.size() +
                               (c.use_skip ? c.stem_channels : 0);
  auto make_head = [&](const std::string& prefix, ParamGroup group, std::size_t out_channels) {
    Head h;
    for (std::size_t i = 0; i < c.pyramid_levels.size(); ++i)
      h.pyramid.push_back(make_conv(prefix + ".pyramid." + std::to_string(i), group, c.block_b_channels,
                                    c.pyramid_channels, 1, {1, 1, 0}, rng));
    h.fuse = make_conv(prefix + ".fuse", group, fused_in, c.head_hidden, 3, {1, 1, 1}, rng);
    h.out = make_conv(prefix + ".out", group, c.head_hidden, out_channels, 1, {1, 1, 0}, rng);
    return h;
  };
  m.reg_ = make_head("reg", ParamGroup::regression_head, 1);
  if (m.has_cls_) m.cls_ = make_head("cls", ParamGroup::classification_head, c.n_cls);
  return m;
}

Model Model::clone() const {
  Model m = build(config_, 0);
  m.set_flat_parameters(flat_parameters());
  return m;
}

Tensor Model::run_head(const Head& head, const Tensor& features, const Tensor& skip, std::size_t out_h,
                       std::size_t out_w, std::mt19937_64* rng) const {
  const std::size_t fh = features.dim(2), fw = features.dim(3);
  std::vector<Tensor> parts{features};
  for (std::size_t i = 0; i < head.pyramid.size(); ++i) {
    const std::size_t level = config_.pyramid_levels[i];
    Tensor pooled = pool2d(features, PoolKind::mean, std::min(level, fh), std::min(level, fw));
    parts.push_back(upsample_bilinear(relu(head.pyramid[i](pooled)), fh, fw));
  }
  if (skip.defined()) parts.push_back(skip);
  Tensor x = relu(head.fuse(concat(parts, 1)));
  if (rng) x = dropout(x, config_.dropout_p, *rng);
  return upsample_bilinear(head.out(x), out_h, out_w);
}

ModelOutput Model::forward(const Tensor& batch, Heads heads, std::mt19937_64* rng) const {
  if (batch.rank() != 4 || batch.dim(1) != config_.input_channels)
    throw ShapeError("model input must be N x " + std::to_string(config_.input_channels) +
                     " x H x W, got " + shape_str(batch.shape()));
  const std::size_t h = batch.dim(2), w = batch.dim(3);
  if (h % kEncoderStride != 0 || w % kEncoderStride != 0)
    throw ShapeError("input size " + std::to_string(h) + "x" + std::to_string(w) +
                     " is not divisible by the encoder stride " + std::to_string(kEncoderStride));
  if (heads == Heads::both && !has_cls_) throw ConfigError("model was built without a classification head");

  Tensor s = relu(stem_(batch));
  Tensor f = relu(a2_(relu(a1_(s))));
  f = relu(b2_(relu(b1_(f))));
  Tensor skip;
  if (config_.use_skip) skip = pool2d(s, PoolKind::mean, f.dim(2), f.dim(3));

  ModelOutput out;
  // The classification head draws its dropout mask after the regression
  // head, so reg_only and both see identical regression masks.
  out.regression = run_head(reg_, f, skip, h, w, rng);
  if (heads == Heads::both) out.class_logits = run_head(cls_, f, skip, h, w, rng);
  return out;
}

std::vector<const ConvLayer*> Model::layers() const {
  std::vector<const ConvLayer*> out{&stem_, &a1_, &a2_, &b1_, &b2_};
  auto add_head = [&](const Head& h) {
    for (const auto& p : h.pyramid) out.push_back(&p);
    out.push_back(&h.fuse);
    out.push_back(&h.out);
  };
  add_head(reg_);
  if (has_cls_) add_head(cls_);
  return out;
}

std::vector<Tensor> Model::parameters() const {
  std::vector<Tensor> out;
  for (const auto* l : layers()) {
    out.push_back(l->weight);
    out.push_back(l->bias);
  }
  return out;
}

ParamCensus Model::census() const {
  ParamCensus c;
  for (const auto* l : layers()) {
    const std::size_t n = l->weight.numel() + l->bias.numel();
    switch (l->group) {
      case ParamGroup::shared: c.shared += n; break;
      case ParamGroup::regression_head: c.regression_head += n; break;
      case ParamGroup::classification_head: c.classification_head += n; break;
    }
  }
  return c;
}

std::vector<double> Model::flat_parameters() const {
  std::vector<double> flat;
  for (const auto& p : parameters()) {
    auto v = p.values();
    flat.insert(flat.end(), v.begin(), v.end());
  }
  return flat;
}

void Model::set_flat_parameters(std::span<const double> flat) {
  std::size_t offset = 0;
  auto params = parameters();
  std::size_t total = 0;
  for (const auto& p : params) total += p.numel();
  if (flat.size() != total)
    throw ShapeError("flat parameter vector has " + std::to_string(flat.size()) + " values, model needs " +
                     std::to_string(total));
  for (auto& p : params) {
    auto dst = p.mutable_values();
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(offset), dst.size(), dst.begin());
    offset += dst.size();
  }
}

void Model::zero_grad() {
  for (auto& p : parameters()) p.zero_grad();
}

void Model::zero_output_layers() {
  auto clear = [](ConvLayer& l) {
    for (auto& v : l.weight.mutable_values()) v = 0.0;
    for (auto& v : l.bias.mutable_values()) v = 0.0;
  };
  clear(reg_.out);
  if (has_cls_) clear(cls_.out);
}

std::vector<DepthMap> predict_depth(const Model& model, const Tensor& images, const DepthBounds& bounds) {
  auto out = model.forward(images, Heads::reg_only);
  const std::size_t n = images.dim(0), h = images.dim(2), w = images.dim(3);
  auto v = out.regression.values();
  std::vector<DepthMap> maps;
  for (std::size_t b = 0; b < n; ++b) {
    DepthMap m = DepthMap::empty(h, w);
    for (std::size_t i = 0; i < h * w; ++i) {
      m.depth[i] = decode_depth(std::clamp(v[b * h * w + i], 0.0, 1.0), bounds);
      m.valid[i] = 1;
    }
    maps.push_back(std::move(m));
  }
  return maps;
}

std::vector<DepthMap> predict_class_depth(const Model& model, const Tensor& images,
                                          const IntervalScheme& scheme) {
  auto out = model.forward(images, Heads::both);
  const std::size_t n = images.dim(0), c = scheme.n_cls(), h = images.dim(2), w = images.dim(3);
  if (out.class_logits.dim(1) != c) throw ConfigError("class head width does not match the interval scheme");
  auto v = out.class_logits.values();
  std::vector<DepthMap> maps;
  for (std::size_t b = 0; b < n; ++b) {
    DepthMap m = DepthMap::empty(h, w);
    for (std::size_t i = 0; i < h * w; ++i) {
      std::size_t best = 0;
      for (std::size_t k = 1; k < c; ++k)
        if (v[(b * c + k) * h * w + i] > v[(b * c + best) * h * w + i]) best = k;
      m.depth[i] = dequantize(best, scheme);
      m.valid[i] = 1;
    }
    maps.push_back(std::move(m));
  }
  return maps;
}

}  // namespace multidepth

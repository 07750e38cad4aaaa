#pragma once

// Minimal define-by-run reverse-mode automatic differentiation over dense
// double-precision arrays. Every op records its inputs and a backward rule
// when at least one input requires a gradient; backward() orders the recorded
// graph topologically and replays it once.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "multidepth/errors.hpp"

namespace multidepth {

using Shape = std::vector<std::size_t>;

std::size_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct Node;
}

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;

  std::span<const double> values() const;
  /// Writable view of a leaf's storage (parameter updates, data loading).
  std::span<double> mutable_values();
  double item() const;

  bool requires_grad() const;
  bool is_leaf() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  /// Copy of values with no graph history.
  Tensor detach() const;

  const detail::Node* node() const { return node_.get(); }

 private:
  friend struct TensorAccess;
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

/// Backward rule: receives d(loss)/d(output) and one span per input. A span
/// is empty when that input does not require a gradient; otherwise the rule
/// accumulates into it.
using BackwardFn =
    std::function<void(std::span<const double> grad_out, std::span<std::span<double>> grad_in)>;

/// Builds a result tensor from precomputed values. The backward rule is kept
/// only if some input requires a gradient. Used by every op in this library
/// and by fused ops defined elsewhere.
Tensor make_result(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                   BackwardFn backward);

/// Topologically ordered view of the graph reachable from a scalar loss.
/// Every node appears after all nodes producing its inputs, exactly once.
class ComputationTape {
 public:
  explicit ComputationTape(const Tensor& loss);
  std::size_t size() const { return order_.size(); }
  const std::vector<const detail::Node*>& order() const { return order_; }
  /// Position of a tensor's node in the order, or size() if absent.
  std::size_t position(const Tensor& t) const;

 private:
  std::vector<const detail::Node*> order_;
};

/// Accumulates d(loss)/d(leaf) into every requires_grad leaf. The graph is
/// released afterwards; a second call on the same loss raises TapeError.
void backward(const Tensor& loss);

// Elementwise ops. Binary ops need equal shapes or one scalar (numel 1) side.
enum class UnaryOp { neg, exp, log, relu, square };
enum class BinaryOp { add, sub, mul, div };

Tensor elementwise(UnaryOp op, const Tensor& a);
Tensor elementwise(BinaryOp op, const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
/// Gradient at exactly zero is zero.
Tensor relu(const Tensor& a);
Tensor square(const Tensor& a);
Tensor scale(const Tensor& a, double factor);

/// Boolean mask with its own shape; must match the reduced tensor's shape.
struct Mask {
  Shape shape;
  std::vector<std::uint8_t> bits;

  static Mask all(Shape shape, bool value = true);
  std::size_t count() const;
};

enum class ReduceOp { sum, mean };

/// sum or mean over all elements, or only over positions where mask is set.
/// Masked mean divides by the number of set positions.
Tensor reduce(ReduceOp op, const Tensor& a, const Mask* mask = nullptr);
Tensor sum(const Tensor& a, const Mask* mask = nullptr);
Tensor mean(const Tensor& a, const Mask* mask = nullptr);

struct Conv2dParams {
  std::size_t stride = 1;
  std::size_t dilation = 1;
  std::size_t padding = 0;
};

std::size_t conv_output_extent(std::size_t in, std::size_t kernel, const Conv2dParams& p);

/// input N x C x H x W, kernel O x C x kh x kw, bias O (may be undefined).
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              const Conv2dParams& params);

enum class PoolKind { mean };

/// Adaptive pooling of N x C x H x W to N x C x out_h x out_w. Cell i covers
/// rows [floor(i*H/out_h), ceil((i+1)*H/out_h)).
Tensor pool2d(const Tensor& input, PoolKind kind, std::size_t out_h, std::size_t out_w);

/// Bilinear resize of N x C x H x W, half-pixel centers (align_corners=false).
Tensor upsample_bilinear(const Tensor& input, std::size_t out_h, std::size_t out_w);

Tensor concat(std::span<const Tensor> tensors, std::size_t axis);

}  // namespace multidepth

#include "multidepth/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace multidepth {

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  bool leaf = true;
  bool consumed = false;
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;
};

}  // namespace detail

using detail::Node;

struct TensorAccess {
  static const std::shared_ptr<Node>& node(const Tensor& t) { return t.node_; }
  static Tensor wrap(std::shared_ptr<Node> n) { return Tensor(std::move(n)); }
};

std::size_t numel_of(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

void check_shape(const Shape& shape) {
  for (auto e : shape)
    if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
}

const Node& live(const Tensor& t, const char* what) {
  if (!t.defined()) throw ShapeError(std::string(what) + ": undefined tensor");
  return *TensorAccess::node(t);
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  check_shape(shape);
  auto n = std::make_shared<Node>();
  n->values.assign(numel_of(shape), value);
  n->shape = std::move(shape);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  check_shape(shape);
  if (values.size() != numel_of(shape))
    throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                     shape_str(shape));
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->values = std::move(values);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return live(*this, "shape").shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) throw ShapeError("axis out of range for " + shape_str(s));
  return s[axis];
}

std::size_t Tensor::numel() const { return live(*this, "numel").values.size(); }

std::span<const double> Tensor::values() const { return live(*this, "values").values; }

std::span<double> Tensor::mutable_values() {
  live(*this, "mutable_values");
  if (!node_->leaf) throw TapeError("only leaf tensors may be written in place");
  return node_->values;
}

double Tensor::item() const {
  const auto& n = live(*this, "item");
  if (n.values.size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(n.shape));
  return n.values[0];
}

bool Tensor::requires_grad() const { return live(*this, "requires_grad").requires_grad; }
bool Tensor::is_leaf() const { return live(*this, "is_leaf").leaf; }
bool Tensor::has_grad() const { return !live(*this, "has_grad").grad.empty(); }

std::span<const double> Tensor::grad() const { return live(*this, "grad").grad; }

void Tensor::zero_grad() {
  live(*this, "zero_grad");
  std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const {
  const auto& n = live(*this, "detach");
  return from(n.shape, n.values, false);
}

Tensor make_result(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                   BackwardFn backward) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->values = std::move(values);
  n->leaf = false;
  bool any = false;
  for (const auto& in : inputs) {
    const auto& src = live(in, "op input");
    if (src.requires_grad) {
      if (src.consumed) throw TapeError("op input belongs to a graph that was already backpropagated");
      any = true;
    }
  }
  if (any) {
    n->requires_grad = true;
    n->backward = std::move(backward);
    n->inputs.reserve(inputs.size());
    for (const auto& in : inputs) n->inputs.push_back(TensorAccess::node(in));
  }
  return TensorAccess::wrap(std::move(n));
}

ComputationTape::ComputationTape(const Tensor& loss) {
  const auto& root = TensorAccess::node(loss);
  if (!root) throw TapeError("backward on undefined tensor");
  // Iterative post-order DFS; each node is emitted once, after its inputs.
  std::unordered_set<const Node*> seen;
  std::vector<std::pair<const Node*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      const Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order_.push_back(node);
      stack.pop_back();
    }
  }
}

std::size_t ComputationTape::position(const Tensor& t) const {
  const Node* n = t.node();
  auto it = std::find(order_.begin(), order_.end(), n);
  return static_cast<std::size_t>(it - order_.begin());
}

void backward(const Tensor& loss) {
  const auto& root = TensorAccess::node(loss);
  if (!root) throw TapeError("backward on undefined tensor");
  if (root->values.size() != 1)
    throw TapeError("backward requires a scalar loss, got " + shape_str(root->shape));
  if (root->consumed) throw TapeError("backward called twice on the same graph");
  if (!root->requires_grad) throw TapeError("loss does not depend on any tensor requiring grad");

  ComputationTape tape(loss);
  auto& order = tape.order();
  auto mut = [](const Node* n) { return const_cast<Node*>(n); };

  Node* r = root.get();
  if (r->grad.empty()) r->grad.assign(1, 0.0);
  r->grad[0] += 1.0;

  std::vector<std::span<double>> sinks;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = mut(*it);
    if (n->leaf || !n->backward) continue;
    if (n->grad.empty()) n->grad.assign(n->values.size(), 0.0);
    sinks.clear();
    for (auto& in : n->inputs) {
      if (in->requires_grad) {
        if (in->grad.empty()) in->grad.assign(in->values.size(), 0.0);
        sinks.emplace_back(in->grad);
      } else {
        sinks.emplace_back();
      }
    }
    n->backward(n->grad, sinks);
  }

  // Release the graph: intermediate grads, closures and input references.
  for (const Node* c : order) {
    Node* n = mut(c);
    if (n->leaf) continue;
    n->consumed = true;
    n->backward = nullptr;
    n->inputs.clear();
    n->grad.clear();
    n->grad.shrink_to_fit();
  }
}

// ---------------------------------------------------------------------------
// Elementwise

namespace {

struct BinaryLayout {
  Shape shape;
  bool a_scalar = false;
  bool b_scalar = false;
};

BinaryLayout binary_layout(const Tensor& a, const Tensor& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa == sb) return {sa, false, false};
  if (a.numel() == 1) return {sb, true, false};
  if (b.numel() == 1) return {sa, false, true};
  throw ShapeError("shape mismatch: " + shape_str(sa) + " vs " + shape_str(sb));
}

}  // namespace

Tensor elementwise(BinaryOp op, const Tensor& a, const Tensor& b) {
  auto layout = binary_layout(a, b);
  const std::size_t n = numel_of(layout.shape);
  auto av = a.values();
  auto bv = b.values();
  const bool as = layout.a_scalar, bs = layout.b_scalar;
  auto A = [&](std::size_t i) { return as ? av[0] : av[i]; };
  auto B = [&](std::size_t i) { return bs ? bv[0] : bv[i]; };

  std::vector<double> out(n);
  switch (op) {
    case BinaryOp::add:
      for (std::size_t i = 0; i < n; ++i) out[i] = A(i) + B(i);
      break;
    case BinaryOp::sub:
      for (std::size_t i = 0; i < n; ++i) out[i] = A(i) - B(i);
      break;
    case BinaryOp::mul:
      for (std::size_t i = 0; i < n; ++i) out[i] = A(i) * B(i);
      break;
    case BinaryOp::div:
      for (std::size_t i = 0; i < n; ++i) {
        if (B(i) == 0.0) throw DomainError("division by zero");
        out[i] = A(i) / B(i);
      }
      break;
  }

  // Saved copies keep backward independent of later writes to leaves.
  std::vector<double> sa(av.begin(), av.end()), sb(bv.begin(), bv.end());
  BackwardFn bw = [op, n, as, bs, sa = std::move(sa), sb = std::move(sb)](
                      std::span<const double> g, std::span<std::span<double>> gi) {
    auto A = [&](std::size_t i) { return as ? sa[0] : sa[i]; };
    auto B = [&](std::size_t i) { return bs ? sb[0] : sb[i]; };
    auto ga = gi[0], gb = gi[1];
    auto acc = [](std::span<double> dst, bool scalar, std::size_t i, double v) {
      dst[scalar ? 0 : i] += v;
    };
    for (std::size_t i = 0; i < n; ++i) {
      double da = 0, db = 0;
      switch (op) {
        case BinaryOp::add: da = 1; db = 1; break;
        case BinaryOp::sub: da = 1; db = -1; break;
        case BinaryOp::mul: da = B(i); db = A(i); break;
        case BinaryOp::div: da = 1.0 / B(i); db = -A(i) / (B(i) * B(i)); break;
      }
      if (!ga.empty()) acc(ga, as, i, g[i] * da);
      if (!gb.empty()) acc(gb, bs, i, g[i] * db);
    }
  };
  return make_result(layout.shape, std::move(out), {a, b}, std::move(bw));
}

Tensor elementwise(UnaryOp op, const Tensor& a) {
  auto av = a.values();
  const std::size_t n = av.size();
  std::vector<double> out(n);
  switch (op) {
    case UnaryOp::neg:
      for (std::size_t i = 0; i < n; ++i) out[i] = -av[i];
      break;
    case UnaryOp::exp:
      for (std::size_t i = 0; i < n; ++i) out[i] = std::exp(av[i]);
      break;
    case UnaryOp::log:
      for (std::size_t i = 0; i < n; ++i) {
        if (!(av[i] > 0.0)) throw DomainError("log of non-positive value");
        out[i] = std::log(av[i]);
      }
      break;
    case UnaryOp::relu:
      for (std::size_t i = 0; i < n; ++i) out[i] = av[i] > 0.0 ? av[i] : 0.0;
      break;
    case UnaryOp::square:
      for (std::size_t i = 0; i < n; ++i) out[i] = av[i] * av[i];
      break;
  }

  std::vector<double> saved;
  if (op == UnaryOp::exp) saved = out;
  else if (op != UnaryOp::neg) saved.assign(av.begin(), av.end());

  BackwardFn bw = [op, saved = std::move(saved)](std::span<const double> g,
                                                 std::span<std::span<double>> gi) {
    auto ga = gi[0];
    const std::size_t n = g.size();
    switch (op) {
      case UnaryOp::neg:
        for (std::size_t i = 0; i < n; ++i) ga[i] -= g[i];
        break;
      case UnaryOp::exp:
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * saved[i];
        break;
      case UnaryOp::log:
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] / saved[i];
        break;
      case UnaryOp::relu:
        for (std::size_t i = 0; i < n; ++i) ga[i] += saved[i] > 0.0 ? g[i] : 0.0;
        break;
      case UnaryOp::square:
        for (std::size_t i = 0; i < n; ++i) ga[i] += 2.0 * saved[i] * g[i];
        break;
    }
  };
  return make_result(a.shape(), std::move(out), {a}, std::move(bw));
}

Tensor add(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::mul, a, b); }
Tensor div(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::div, a, b); }
Tensor neg(const Tensor& a) { return elementwise(UnaryOp::neg, a); }
Tensor exp(const Tensor& a) { return elementwise(UnaryOp::exp, a); }
Tensor log(const Tensor& a) { return elementwise(UnaryOp::log, a); }
Tensor relu(const Tensor& a) { return elementwise(UnaryOp::relu, a); }
Tensor square(const Tensor& a) { return elementwise(UnaryOp::square, a); }

Tensor scale(const Tensor& a, double factor) {
  auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * factor;
  return make_result(a.shape(), std::move(out), {a},
                     [factor](std::span<const double> g, std::span<std::span<double>> gi) {
                       for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i] * factor;
                     });
}

// ---------------------------------------------------------------------------
// Reductions

Mask Mask::all(Shape shape, bool value) {
  Mask m;
  m.bits.assign(numel_of(shape), value ? 1 : 0);
  m.shape = std::move(shape);
  return m;
}

std::size_t Mask::count() const {
  return static_cast<std::size_t>(std::count_if(bits.begin(), bits.end(), [](auto b) { return b != 0; }));
}

Tensor reduce(ReduceOp op, const Tensor& a, const Mask* mask) {
  auto av = a.values();
  const std::size_t n = av.size();
  if (mask) {
    if (mask->shape != a.shape())
      throw ShapeError("mask shape " + shape_str(mask->shape) + " does not match " +
                       shape_str(a.shape()));
    if (mask->bits.size() != n) throw ShapeError("mask storage does not match its shape");
  }
  std::size_t count = n;
  double total = 0.0;
  if (mask) {
    count = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (mask->bits[i]) {
        total += av[i];
        ++count;
      }
  } else {
    for (double v : av) total += v;
  }
  if (op == ReduceOp::mean) {
    if (count == 0) throw EmptyReductionError("mean over an empty mask");
    total /= static_cast<double>(count);
  }
  const double coeff = op == ReduceOp::mean ? 1.0 / static_cast<double>(count) : 1.0;
  std::vector<std::uint8_t> bits;
  if (mask) bits = mask->bits;
  return make_result({1}, {total}, {a},
                     [coeff, bits = std::move(bits)](std::span<const double> g,
                                                     std::span<std::span<double>> gi) {
                       auto ga = gi[0];
                       const double v = g[0] * coeff;
                       if (bits.empty()) {
                         for (auto& x : ga) x += v;
                       } else {
                         for (std::size_t i = 0; i < ga.size(); ++i)
                           if (bits[i]) ga[i] += v;
                       }
                     });
}

Tensor sum(const Tensor& a, const Mask* mask) { return reduce(ReduceOp::sum, a, mask); }
Tensor mean(const Tensor& a, const Mask* mask) { return reduce(ReduceOp::mean, a, mask); }

// ---------------------------------------------------------------------------
// Convolution via im2col + GEMM

std::size_t conv_output_extent(std::size_t in, std::size_t kernel, const Conv2dParams& p) {
  if (p.dilation < 1) throw ShapeError("dilation must be >= 1");
  if (p.stride < 1) throw ShapeError("stride must be >= 1");
  const long span = static_cast<long>(p.dilation * (kernel - 1) + 1);
  const long padded = static_cast<long>(in + 2 * p.padding);
  if (padded < span) throw ShapeError("kernel does not fit the padded input");
  return static_cast<std::size_t>((padded - span) / static_cast<long>(p.stride)) + 1;
}

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<RowMatrix>;
using CMapM = Eigen::Map<const RowMatrix>;

struct ConvGeom {
  std::size_t n, c, h, w, o, kh, kw, oh, ow;
  Conv2dParams p;
  std::size_t rows() const { return c * kh * kw; }
  std::size_t cols() const { return oh * ow; }
};

void im2col(const double* img, const ConvGeom& g, double* col) {
  const long pad = static_cast<long>(g.p.padding);
  for (std::size_t ci = 0; ci < g.c; ++ci)
    for (std::size_t ki = 0; ki < g.kh; ++ki)
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        double* row = col + ((ci * g.kh + ki) * g.kw + kj) * g.cols();
        for (std::size_t y = 0; y < g.oh; ++y) {
          const long iy = static_cast<long>(y * g.p.stride + ki * g.p.dilation) - pad;
          double* dst = row + y * g.ow;
          if (iy < 0 || iy >= static_cast<long>(g.h)) {
            std::fill(dst, dst + g.ow, 0.0);
            continue;
          }
          const double* src = img + (ci * g.h + static_cast<std::size_t>(iy)) * g.w;
          for (std::size_t x = 0; x < g.ow; ++x) {
            const long ix = static_cast<long>(x * g.p.stride + kj * g.p.dilation) - pad;
            dst[x] = (ix < 0 || ix >= static_cast<long>(g.w)) ? 0.0 : src[ix];
          }
        }
      }
}

void col2im(const double* col, const ConvGeom& g, double* img) {
  const long pad = static_cast<long>(g.p.padding);
  for (std::size_t ci = 0; ci < g.c; ++ci)
    for (std::size_t ki = 0; ki < g.kh; ++ki)
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const double* row = col + ((ci * g.kh + ki) * g.kw + kj) * g.cols();
        for (std::size_t y = 0; y < g.oh; ++y) {
          const long iy = static_cast<long>(y * g.p.stride + ki * g.p.dilation) - pad;
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          double* dst = img + (ci * g.h + static_cast<std::size_t>(iy)) * g.w;
          const double* src = row + y * g.ow;
          for (std::size_t x = 0; x < g.ow; ++x) {
            const long ix = static_cast<long>(x * g.p.stride + kj * g.p.dilation) - pad;
            if (ix >= 0 && ix < static_cast<long>(g.w)) dst[ix] += src[x];
          }
        }
      }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              const Conv2dParams& params) {
  if (input.rank() != 4) throw ShapeError("conv2d input must be NCHW, got " + shape_str(input.shape()));
  if (kernel.rank() != 4) throw ShapeError("conv2d kernel must be OCkk, got " + shape_str(kernel.shape()));
  ConvGeom g{};
  g.n = input.dim(0);
  g.c = input.dim(1);
  g.h = input.dim(2);
  g.w = input.dim(3);
  g.o = kernel.dim(0);
  g.kh = kernel.dim(2);
  g.kw = kernel.dim(3);
  g.p = params;
  if (kernel.dim(1) != g.c)
    throw ShapeError("conv2d channel mismatch: input has " + std::to_string(g.c) +
                     ", kernel expects " + std::to_string(kernel.dim(1)));
  if (bias.defined() && bias.numel() != g.o) throw ShapeError("conv2d bias length mismatch");
  g.oh = conv_output_extent(g.h, g.kh, params);
  g.ow = conv_output_extent(g.w, g.kw, params);

  const std::size_t R = g.rows(), C = g.cols();
  std::vector<double> cols(g.n * R * C);
  std::vector<double> out(g.n * g.o * C);
  auto in = input.values();
  auto kv = kernel.values();
  CMapM K(kv.data(), static_cast<long>(g.o), static_cast<long>(R));
  for (std::size_t b = 0; b < g.n; ++b) {
    double* col = cols.data() + b * R * C;
    im2col(in.data() + b * g.c * g.h * g.w, g, col);
    MapM Y(out.data() + b * g.o * C, static_cast<long>(g.o), static_cast<long>(C));
    Y.noalias() = K * CMapM(col, static_cast<long>(R), static_cast<long>(C));
    if (bias.defined()) {
      auto bv = bias.values();
      for (std::size_t oc = 0; oc < g.o; ++oc) Y.row(static_cast<long>(oc)).array() += bv[oc];
    }
  }

  std::vector<double> kcopy(kv.begin(), kv.end());
  const bool has_bias = bias.defined();
  BackwardFn bw = [g, cols = std::move(cols), kcopy = std::move(kcopy), has_bias](
                      std::span<const double> grad, std::span<std::span<double>> gi) {
    const std::size_t R = g.rows(), C = g.cols();
    auto gin = gi[0], gk = gi[1];
    std::span<double> gb = has_bias ? gi[2] : std::span<double>{};
    CMapM K(kcopy.data(), static_cast<long>(g.o), static_cast<long>(R));
    std::vector<double> dcol(gin.empty() ? 0 : R * C);
    for (std::size_t b = 0; b < g.n; ++b) {
      CMapM G(grad.data() + b * g.o * C, static_cast<long>(g.o), static_cast<long>(C));
      CMapM X(cols.data() + b * R * C, static_cast<long>(R), static_cast<long>(C));
      if (!gk.empty()) {
        MapM GK(gk.data(), static_cast<long>(g.o), static_cast<long>(R));
        GK.noalias() += G * X.transpose();
      }
      // Plain loop: Eigen's vectorized sum depends on pointer alignment.
      if (!gb.empty())
        for (std::size_t oc = 0; oc < g.o; ++oc) {
          const double* row = grad.data() + (b * g.o + oc) * C;
          double acc = 0.0;
          for (std::size_t j = 0; j < C; ++j) acc += row[j];
          gb[oc] += acc;
        }
      if (!gin.empty()) {
        MapM D(dcol.data(), static_cast<long>(R), static_cast<long>(C));
        D.noalias() = K.transpose() * G;
        col2im(dcol.data(), g, gin.data() + b * g.c * g.h * g.w);
      }
    }
  };
  std::vector<Tensor> inputs{input, kernel};
  if (has_bias) inputs.push_back(bias);
  return make_result({g.n, g.o, g.oh, g.ow}, std::move(out), std::move(inputs), std::move(bw));
}

// ---------------------------------------------------------------------------
// Adaptive mean pooling

namespace {

struct Cell {
  std::size_t begin, end;
};

std::vector<Cell> adaptive_cells(std::size_t in, std::size_t out) {
  std::vector<Cell> cells(out);
  for (std::size_t i = 0; i < out; ++i) {
    cells[i].begin = (i * in) / out;
    cells[i].end = ((i + 1) * in + out - 1) / out;
  }
  return cells;
}

}  // namespace

Tensor pool2d(const Tensor& input, PoolKind kind, std::size_t out_h, std::size_t out_w) {
  (void)kind;
  if (input.rank() != 4) throw ShapeError("pool2d input must be NCHW");
  if (out_h == 0 || out_w == 0) throw ShapeError("pool2d output extent must be positive");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (out_h > h || out_w > w) throw ShapeError("pool2d output larger than input");
  auto rows = adaptive_cells(h, out_h);
  auto colsv = adaptive_cells(w, out_w);
  auto in = input.values();
  std::vector<double> out(n * c * out_h * out_w);
  for (std::size_t p = 0; p < n * c; ++p) {
    const double* src = in.data() + p * h * w;
    double* dst = out.data() + p * out_h * out_w;
    for (std::size_t i = 0; i < out_h; ++i)
      for (std::size_t j = 0; j < out_w; ++j) {
        double acc = 0;
        for (std::size_t y = rows[i].begin; y < rows[i].end; ++y)
          for (std::size_t x = colsv[j].begin; x < colsv[j].end; ++x) acc += src[y * w + x];
        const double area = static_cast<double>((rows[i].end - rows[i].begin) *
                                                (colsv[j].end - colsv[j].begin));
        dst[i * out_w + j] = acc / area;
      }
  }
  BackwardFn bw = [n, c, h, w, out_h, out_w, rows, colsv](std::span<const double> g,
                                                          std::span<std::span<double>> gi) {
    for (std::size_t p = 0; p < n * c; ++p) {
      double* dst = gi[0].data() + p * h * w;
      const double* src = g.data() + p * out_h * out_w;
      for (std::size_t i = 0; i < out_h; ++i)
        for (std::size_t j = 0; j < out_w; ++j) {
          const double area = static_cast<double>((rows[i].end - rows[i].begin) *
                                                  (colsv[j].end - colsv[j].begin));
          const double v = src[i * out_w + j] / area;
          for (std::size_t y = rows[i].begin; y < rows[i].end; ++y)
            for (std::size_t x = colsv[j].begin; x < colsv[j].end; ++x) dst[y * w + x] += v;
        }
    }
  };
  return make_result({n, c, out_h, out_w}, std::move(out), {input}, std::move(bw));
}

// ---------------------------------------------------------------------------
// Bilinear upsampling (align_corners = false)

namespace {

struct Tap {
  std::size_t i0, i1;
  double frac;
};

std::vector<Tap> bilinear_taps(std::size_t in, std::size_t out) {
  std::vector<Tap> taps(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    auto i0 = static_cast<std::size_t>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    taps[o] = {i0, i1, src - static_cast<double>(i0)};
  }
  return taps;
}

}  // namespace

Tensor upsample_bilinear(const Tensor& input, std::size_t out_h, std::size_t out_w) {
  if (input.rank() != 4) throw ShapeError("upsample_bilinear input must be NCHW");
  if (out_h == 0 || out_w == 0) throw ShapeError("upsample target must be at least 1x1");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  auto ty = bilinear_taps(h, out_h);
  auto tx = bilinear_taps(w, out_w);
  auto in = input.values();
  std::vector<double> out(n * c * out_h * out_w);
  for (std::size_t p = 0; p < n * c; ++p) {
    const double* src = in.data() + p * h * w;
    double* dst = out.data() + p * out_h * out_w;
    for (std::size_t y = 0; y < out_h; ++y) {
      const auto& a = ty[y];
      for (std::size_t x = 0; x < out_w; ++x) {
        const auto& b = tx[x];
        const double top = src[a.i0 * w + b.i0] * (1 - b.frac) + src[a.i0 * w + b.i1] * b.frac;
        const double bot = src[a.i1 * w + b.i0] * (1 - b.frac) + src[a.i1 * w + b.i1] * b.frac;
        dst[y * out_w + x] = top * (1 - a.frac) + bot * a.frac;
      }
    }
  }
  BackwardFn bw = [n, c, h, w, out_h, out_w, ty, tx](std::span<const double> g,
                                                     std::span<std::span<double>> gi) {
    for (std::size_t p = 0; p < n * c; ++p) {
      double* dst = gi[0].data() + p * h * w;
      const double* src = g.data() + p * out_h * out_w;
      for (std::size_t y = 0; y < out_h; ++y) {
        const auto& a = ty[y];
        for (std::size_t x = 0; x < out_w; ++x) {
          const auto& b = tx[x];
          const double v = src[y * out_w + x];
          dst[a.i0 * w + b.i0] += v * (1 - a.frac) * (1 - b.frac);
          dst[a.i0 * w + b.i1] += v * (1 - a.frac) * b.frac;
          dst[a.i1 * w + b.i0] += v * a.frac * (1 - b.frac);
          dst[a.i1 * w + b.i1] += v * a.frac * b.frac;
        }
      }
    }
  };
  return make_result({n, c, out_h, out_w}, std::move(out), {input}, std::move(bw));
}

// ---------------------------------------------------------------------------
// Concatenation

Tensor concat(std::span<const Tensor> tensors, std::size_t axis) {
  if (tensors.empty()) throw ShapeError("concat of zero tensors");
  Shape shape = tensors[0].shape();
  if (axis >= shape.size()) throw ShapeError("concat axis out of range");
  std::size_t total = 0;
  for (const auto& t : tensors) {
    const auto& s = t.shape();
    if (s.size() != shape.size()) throw ShapeError("concat rank mismatch");
    for (std::size_t d = 0; d < s.size(); ++d)
      if (d != axis && s[d] != shape[d])
        throw ShapeError("concat extent mismatch: " + shape_str(s) + " vs " + shape_str(shape));
    total += s[axis];
  }
  shape[axis] = total;
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= shape[d];
  for (std::size_t d = axis + 1; d < shape.size(); ++d) inner *= shape[d];

  std::vector<std::size_t> widths;
  for (const auto& t : tensors) widths.push_back(t.dim(axis) * inner);
  const std::size_t row = total * inner;
  std::vector<double> out(outer * row);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < tensors.size(); ++k) {
    auto v = tensors[k].values();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(v.data() + o * widths[k], widths[k], out.data() + o * row + offset);
    offset += widths[k];
  }
  BackwardFn bw = [outer, row, widths](std::span<const double> g, std::span<std::span<double>> gi) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      if (!gi[k].empty())
        for (std::size_t o = 0; o < outer; ++o) {
          const double* src = g.data() + o * row + offset;
          double* dst = gi[k].data() + o * widths[k];
          for (std::size_t i = 0; i < widths[k]; ++i) dst[i] += src[i];
        }
      offset += widths[k];
    }
  };
  return make_result(std::move(shape), std::move(out),
                     std::vector<Tensor>(tensors.begin(), tensors.end()), std::move(bw));
}

}  // namespace multidepth

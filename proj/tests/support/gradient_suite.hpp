#pragma once

// Gradient checks shared by the unit tests and the acceptance run.

#include <string>
#include <utility>
#include <vector>

#include "multidepth/losses.hpp"
#include "multidepth/model.hpp"
#include "support/gradcheck.hpp"

namespace multidepth::testing {

struct OpResult {
  std::string op;
  double max_rel = 0.0;
};

/// Max relative error of every differentiable op (and the sparse losses and
/// Eq. 3 combination) on inputs drawn from `seed`.
inline std::vector<OpResult> op_gradient_errors(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<OpResult> out;
  auto check = [&](std::string op, const std::function<Tensor()>& f, std::vector<Tensor> leaves) {
    out.push_back({std::move(op), check_gradients(f, std::move(leaves)).max_rel});
  };
  auto a = random_tensor({2, 3}, rng, 0.2, 1.5);
  auto b = random_tensor({2, 3}, rng, 0.2, 1.5);
  auto s = random_tensor({1}, rng, 0.5, 1.5);
  check("add", [&] { return weighted_sum(add(a, b), seed); }, {a, b});
  check("sub", [&] { return weighted_sum(sub(a, b), seed); }, {a, b});
  check("mul", [&] { return weighted_sum(mul(a, b), seed); }, {a, b});
  check("div", [&] { return weighted_sum(div(a, b), seed); }, {a, b});
  check("mul_broadcast", [&] { return weighted_sum(mul(a, s), seed); }, {a, s});
  check("div_broadcast", [&] { return weighted_sum(div(s, a), seed); }, {a, s});
  check("neg", [&] { return weighted_sum(neg(a), seed); }, {a});
  check("exp", [&] { return weighted_sum(exp(a), seed); }, {a});
  check("log", [&] { return weighted_sum(log(a), seed); }, {a});
  check("square", [&] { return weighted_sum(square(a), seed); }, {a});
  check("scale", [&] { return weighted_sum(scale(a, -2.5), seed); }, {a});
  auto c = random_tensor({2, 3}, rng, -1, 1);
  for (auto& v : c.mutable_values())
    if (std::abs(v) < 0.05) v = 0.5;  // keep away from the kink
  check("relu", [&] { return weighted_sum(relu(c), seed); }, {c});
  Mask m = Mask::all({2, 3});
  m.bits[seed % 6] = 0;
  check("masked_mean", [&] { return mean(mul(a, b), &m); }, {a, b});
  check("masked_sum", [&] { return sum(square(a), &m); }, {a});

  auto x = random_tensor({2, 2, 6, 6}, rng);
  auto k = random_tensor({3, 2, 3, 3}, rng);
  auto bias = random_tensor({3}, rng);
  check("conv2d_dilated", [&] { return weighted_sum(conv2d(x, k, bias, {1, 2, 2}), seed); }, {x, k, bias});
  check("conv2d_strided", [&] { return weighted_sum(conv2d(x, k, bias, {2, 1, 1}), seed); }, {x, k, bias});
  check("pool2d_mean", [&] { return weighted_sum(pool2d(x, PoolKind::mean, 4, 3), seed); }, {x});
  check("upsample_bilinear", [&] { return weighted_sum(upsample_bilinear(x, 9, 13), seed); }, {x});
  auto y = random_tensor({2, 1, 6, 6}, rng);
  check(
      "concat",
      [&] {
        std::vector<Tensor> ts{x, y};
        return weighted_sum(concat(ts, 1), seed);
      },
      {x, y});

  auto p = random_tensor({2, 1, 3, 3}, rng);
  std::vector<double> t(18);
  for (auto& v : t) v = std::uniform_real_distribution<double>(0, 1)(rng);
  Mask sm = Mask::all({2, 1, 3, 3});
  sm.bits[seed % 18] = 0;
  check("sparse_mse", [&] { return sparse_mse(p, t, sm); }, {p});
  auto lg = random_tensor({2, 4, 3, 3}, rng, -2, 2);
  std::vector<std::int32_t> lab(18);
  for (auto& l : lab) l = static_cast<std::int32_t>(rng() % 4);
  check("sparse_softmax_ce", [&] { return sparse_softmax_ce(lg, lab, sm); }, {lg});
  auto w = TaskWeights::learned(std::uniform_real_distribution<double>(-2, 2)(rng),
                                std::uniform_real_distribution<double>(-2, 2)(rng));
  auto lr = random_tensor({1}, rng, 0.1, 3.0), lc = random_tensor({1}, rng, 0.1, 3.0);
  check("combine_learned", [&] { return combine(sum(lr), sum(lc), w).l_mt; }, {w.s_reg(), w.s_cls(), lr, lc});
  return out;
}

/// Full model forward (both heads, dropout with a fixed stream) into the
/// learned Eq. 3 objective; checks up to `per_leaf` entries of every leaf.
inline GradCheck composite_gradient_error(std::uint64_t seed, std::size_t per_leaf = 4) {
  ModelConfig cfg;
  cfg.n_cls = 8;
  auto m = Model::build(cfg, seed + 6);
  std::mt19937_64 rng(seed + 4);
  auto x = random_tensor({2, 3, 8, 8}, rng, 0, 1, false);
  Mask mask = Mask::all({2, 1, 8, 8}, false);
  std::vector<double> target(128, 0.0);
  std::vector<std::int32_t> labels(128, -1);
  for (std::size_t i = 0; i < 128; ++i)
    if (rng() % 3 == 0) {
      mask.bits[i] = 1;
      target[i] = std::uniform_real_distribution<double>(0, 1)(rng);
      labels[i] = static_cast<std::int32_t>(rng() % 8);
    }
  auto w = TaskWeights::learned(0.8, 1.2);
  auto loss = [&] {
    std::mt19937_64 drop(seed + 17);
    auto out = m.forward(x, Heads::both, &drop);
    return combine(sparse_mse(out.regression, target, mask), sparse_softmax_ce(out.class_logits, labels, mask), w).l_mt;
  };
  auto leaves = m.parameters();
  leaves.push_back(w.s_reg());
  leaves.push_back(w.s_cls());
  return check_gradients(loss, leaves, 1e-5, per_leaf, seed + 1);
}

}  // namespace multidepth::testing

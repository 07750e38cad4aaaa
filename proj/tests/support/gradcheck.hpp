#pragma once

// Central finite-difference gradient checks for tests and the acceptance run.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "multidepth/tensor.hpp"

namespace multidepth::testing {

/// |a - n| / max(|a|, |n|, floor). The floor keeps gradients that are zero up
/// to round-off from dominating the ratio.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

struct GradCheck {
  double max_rel = 0.0;
  std::size_t checked = 0;
};

/// Compares backward() against central differences of loss_fn for every leaf
/// entry (or a random subset of at most max_per_leaf entries per leaf).
inline GradCheck check_gradients(const std::function<Tensor()>& loss_fn, std::vector<Tensor> leaves,
                                 double eps = 1e-5, std::size_t max_per_leaf = SIZE_MAX,
                                 std::uint64_t seed = 0) {
  for (auto& l : leaves) l.zero_grad();
  backward(loss_fn());
  GradCheck out;
  std::mt19937_64 rng(seed);
  for (auto& leaf : leaves) {
    std::vector<double> analytic(leaf.grad().begin(), leaf.grad().end());
    std::vector<std::size_t> idx(leaf.numel());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (idx.size() > max_per_leaf) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(max_per_leaf);
    }
    for (std::size_t i : idx) {
      auto v = leaf.mutable_values();
      const double x = v[i];
      v[i] = x + eps;
      const double up = loss_fn().item();
      v[i] = x - eps;
      const double down = loss_fn().item();
      v[i] = x;
      const double numeric = (up - down) / (2.0 * eps);
      out.max_rel = std::max(out.max_rel, relative_error(analytic[i], numeric));
      ++out.checked;
    }
  }
  return out;
}

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0,
                            bool requires_grad = true) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(numel_of(shape));
  for (auto& x : v) x = u(rng);
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

/// sum(t * w) for a fixed random w, so every output entry carries a distinct
/// upstream gradient.
inline Tensor weighted_sum(const Tensor& t, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sum(mul(t, random_tensor(t.shape(), rng, -1.0, 1.0, false)));
}

}  // namespace multidepth::testing

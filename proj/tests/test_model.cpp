#include <doctest.h>

#include <map>
#include <random>

#include "multidepth/losses.hpp"
#include "multidepth/model.hpp"
#include "support/gradcheck.hpp"
#include "support/gradient_suite.hpp"

using namespace multidepth;
using multidepth::testing::check_gradients;
using multidepth::testing::random_tensor;

namespace {

Tensor find_param(const Model& m, const std::string& name, bool bias) {
  for (const auto* l : m.layers())
    if (l->name == name) return bias ? l->bias : l->weight;
  FAIL("no layer " << name);
  return {};
}

}  // namespace

TEST_CASE("build is deterministic and seed dependent") {
  ModelConfig c;
  auto a = Model::build(c, 42), b = Model::build(c, 42), d = Model::build(c, 43);
  CHECK(a.flat_parameters() == b.flat_parameters());
  CHECK(a.flat_parameters() != d.flat_parameters());
  CHECK(a.census().total() == d.census().total());
  CHECK(a.census().total() == a.flat_parameters().size());
}

TEST_CASE("parameter census") {
  ModelConfig c;
  auto m = Model::build(c, 1);
  const auto census = m.census();
  CHECK(census.shared_fraction() >= 0.4);
  CHECK(census.shared_fraction() <= 0.7);
  const std::size_t k = c.head_hidden;
  CHECK(census.classification_head - census.regression_head == 31 * k + 31);

  ModelConfig single = c;
  single.classification_head = false;
  auto s = Model::build(single, 1);
  CHECK(s.census().classification_head == 0);
  CHECK(s.census().shared == census.shared);
  CHECK_THROWS_AS(s.forward(Tensor::zeros({1, 3, 8, 8}), Heads::both), ConfigError);
}

TEST_CASE("config validation") {
  ModelConfig c;
  c.n_cls = 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.classification_head = false;
  CHECK_NOTHROW(c.validate());
  ModelConfig d;
  d.dropout_p = 1.0;
  CHECK_THROWS_AS(Model::build(d, 1), ConfigError);
}

TEST_CASE("reg_only output equals both-heads regression") {
  auto m = Model::build(ModelConfig{}, 3);
  std::mt19937_64 rng(1);
  auto x = random_tensor({2, 3, 16, 16}, rng, 0, 1, false);
  auto r = m.forward(x, Heads::reg_only);
  auto b = m.forward(x, Heads::both);
  CHECK_FALSE(r.class_logits.defined());
  REQUIRE(b.class_logits.defined());
  CHECK(b.class_logits.shape() == Shape{2, 32, 16, 16});
  CHECK(r.regression.shape() == Shape{2, 1, 16, 16});
  for (std::size_t i = 0; i < r.regression.numel(); ++i) CHECK(r.regression.values()[i] == b.regression.values()[i]);
}

TEST_CASE("zero input with zeroed output layers gives constant output") {
  auto m = Model::build(ModelConfig{}, 3);
  m.zero_output_layers();
  auto out = m.forward(Tensor::zeros({1, 3, 8, 8}), Heads::both);
  for (double v : out.regression.values()) CHECK(v == out.regression.values()[0]);
  for (double v : out.class_logits.values()) CHECK(v == 0.0);
}

TEST_CASE("fully convolutional and stride check") {
  auto m = Model::build(ModelConfig{}, 3);
  CHECK(m.forward(Tensor::zeros({1, 3, 16, 24}), Heads::both).regression.shape() == Shape{1, 1, 16, 24});
  CHECK(m.forward(Tensor::zeros({1, 3, 4, 4}), Heads::reg_only).regression.shape() == Shape{1, 1, 4, 4});
  CHECK_THROWS_AS(m.forward(Tensor::zeros({1, 3, 10, 8}), Heads::reg_only), ShapeError);
  CHECK_THROWS_AS(m.forward(Tensor::zeros({1, 2, 8, 8}), Heads::reg_only), ShapeError);
}

TEST_CASE("dropout only in training mode") {
  auto m = Model::build(ModelConfig{}, 3);
  std::mt19937_64 rng(1);
  auto x = random_tensor({1, 3, 8, 8}, rng, 0, 1, false);
  auto a = m.forward(x, Heads::reg_only), b = m.forward(x, Heads::reg_only);
  for (std::size_t i = 0; i < a.regression.numel(); ++i) CHECK(a.regression.values()[i] == b.regression.values()[i]);
  std::mt19937_64 d(5);
  auto t = m.forward(x, Heads::reg_only, &d);
  bool differs = false;
  for (std::size_t i = 0; i < a.regression.numel(); ++i) differs |= t.regression.values()[i] != a.regression.values()[i];
  CHECK(differs);
}

TEST_CASE("predict_depth boundaries and composition") {
  DepthBounds bounds(2, 125);
  auto m = Model::build(ModelConfig{}, 3);
  m.zero_output_layers();
  auto x = Tensor::full({1, 3, 8, 8}, 0.5);
  for (const auto& d : predict_depth(m, x, bounds))
    for (std::size_t i = 0; i < d.size(); ++i) {
      CHECK(d.depth[i] == doctest::Approx(2.0).epsilon(1e-15));
      CHECK(d.valid[i] == 1);
    }
  find_param(m, "reg.out", true).mutable_values()[0] = 1.0;
  for (const auto& d : predict_depth(m, x, bounds))
    for (double v : d.depth) CHECK(v == doctest::Approx(125.0).epsilon(1e-14));

  auto r = Model::build(ModelConfig{}, 9);
  std::mt19937_64 rng(2);
  auto img = random_tensor({2, 3, 8, 8}, rng, 0, 1, false);
  auto out = r.forward(img, Heads::reg_only);
  auto raw = out.regression.values();
  auto maps = predict_depth(r, img, bounds);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t i = 0; i < 64; ++i)
      CHECK(maps[b].depth[i] == decode_depth(std::clamp(raw[b * 64 + i], 0.0, 1.0), bounds));
}

TEST_CASE("flat parameters roundtrip and clone independence") {
  auto m = Model::build(ModelConfig{}, 3);
  auto flat = m.flat_parameters();
  auto c = m.clone();
  c.set_flat_parameters(std::vector<double>(flat.size(), 0.25));
  CHECK(m.flat_parameters() == flat);
  c.set_flat_parameters(flat);
  CHECK(c.flat_parameters() == flat);
  CHECK_THROWS_AS(c.set_flat_parameters(std::vector<double>(3, 0.0)), ShapeError);
}

TEST_CASE("task losses only reach their own head") {
  auto m = Model::build(ModelConfig{}, 4);
  std::mt19937_64 rng(3);
  auto x = random_tensor({2, 3, 8, 8}, rng, 0, 1, false);
  Mask mask = Mask::all({2, 1, 8, 8});
  std::vector<double> target(128, 0.4);
  std::vector<std::int32_t> labels(128, 3);
  auto touched = [&](bool cls_loss) {
    m.zero_grad();
    auto out = m.forward(x, Heads::both);
    backward(cls_loss ? sparse_softmax_ce(out.class_logits, labels, mask) : sparse_mse(out.regression, target, mask));
    std::map<ParamGroup, bool> any;
    for (const auto* l : m.layers())
      for (const Tensor* t : {&l->weight, &l->bias})
        for (double g : t->grad()) any[l->group] = any[l->group] || g != 0.0;
    return any;
  };
  auto c = touched(true);
  CHECK(c[ParamGroup::shared]);
  CHECK(c[ParamGroup::classification_head]);
  CHECK_FALSE(c[ParamGroup::regression_head]);
  auto r = touched(false);
  CHECK(r[ParamGroup::shared]);
  CHECK(r[ParamGroup::regression_head]);
  CHECK_FALSE(r[ParamGroup::classification_head]);
}

TEST_CASE("composite model + multi-task loss gradient") {
  auto r = multidepth::testing::composite_gradient_error(0);
  CHECK(r.checked > 50);
  CHECK(r.max_rel < 1e-4);
}

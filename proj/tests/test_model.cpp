#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <string>
#include <vector>

#include "flora/model.hpp"
#include "flora/nn_ops.hpp"
#include "flora/rng.hpp"
#include "test_util.hpp"

using flora::InceptionConfig;
using flora::ModelGraph;
using flora::Tensor;

namespace {

std::int64_t prefixed_param_count(const ModelGraph& m, const std::string& prefix) {
  std::int64_t total = 0;
  for (const auto& [name, tensor] : m.params)
    if (name.rfind(prefix, 0) == 0) total += static_cast<std::int64_t>(tensor.numel());
  return total;
}

InceptionConfig sample_config() {
  InceptionConfig c;
  c.branch1_1x1 = 16;
  c.branch2_reduce_1x1 = 24;
  c.branch2_3x3 = 32;
  c.branch3_reduce_1x1 = 4;
  c.branch3_5x5 = 8;
  c.branch4_pool_proj_1x1 = 8;
  return c;
}

}  // namespace

TEST_CASE("closed-form parameter counts match their definitions") {
  CHECK(flora::conv_param_count(3, 16, 3) == 3 * 16 * 9 + 16);
  CHECK(flora::conv_param_count(24, 32, 1) == 24 * 32 + 32);
  CHECK(flora::dense_param_count(1024, 128) == 1024 * 128 + 128);

  const InceptionConfig c = sample_config();
  CHECK(c.output_channels() == 16 + 32 + 8 + 8);
  const std::int64_t by_hand = (64 * 16 + 16) + (64 * 24 + 24) + (24 * 32 * 9 + 32) +
                               (64 * 4 + 4) + (4 * 8 * 25 + 8) + (64 * 8 + 8);
  CHECK(flora::inception_param_count(64, c) == by_hand);
  const std::int64_t naive_by_hand =
      (64 * 16 + 16) + (64 * 32 * 9 + 32) + (64 * 8 * 25 + 8) + (64 * 8 + 8);
  CHECK(flora::naive_inception_param_count(64, c) == naive_by_hand);
}

TEST_CASE("inception reduces parameters versus the naive module") {
  // Module-level claim: with the 1x1 reductions narrower than both the input
  // and the branch outputs they feed, the module undercuts the naive
  // four-branch block of the same output width.
  for (std::int64_t in : {8, 16, 64, 192, 480}) {
    InceptionConfig c;
    c.branch1_1x1 = in / 2;
    c.branch2_reduce_1x1 = in / 4;
    c.branch2_3x3 = in / 2;
    c.branch3_reduce_1x1 = std::max<std::int64_t>(1, in / 8);
    c.branch3_5x5 = in / 4;
    c.branch4_pool_proj_1x1 = in / 4;
    CHECK(flora::inception_param_count(in, c) < flora::naive_inception_param_count(in, c));
  }

  // The generated mini configurations must show the same reduction.
  const flora::MiniInceptionConfigs mini = flora::mini_inception_configs(8, {3, 32, 32});
  CHECK(flora::inception_param_count(16, mini.a) <
        flora::naive_inception_param_count(16, mini.a));
  CHECK(flora::inception_param_count(mini.a.output_channels(), mini.b) <
        flora::naive_inception_param_count(mini.a.output_channels(), mini.b));
}

TEST_CASE("plain network parameter count matches the closed form") {
  for (const auto& [classes, size] :
       std::vector<std::pair<std::int64_t, std::int64_t>>{{8, 32}, {3, 8}, {102, 64}, {5, 17}}) {
    const ModelGraph m = flora::build_mini_plainnet(classes, {3, size, size}, 7);
    CHECK(flora::count_parameters(m) == flora::mini_plainnet_param_count(classes, {3, size, size}));
  }
  // the documented headline configuration
  CHECK(flora::mini_plainnet_param_count(8, {3, 32, 32}) == 155816);
}

TEST_CASE("inception network parameter count stays within 20% of the plain stack") {
  for (const auto& [classes, size] :
       std::vector<std::pair<std::int64_t, std::int64_t>>{{8, 32}, {3, 8}, {102, 64}, {12, 48}}) {
    const std::vector<std::int64_t> shape = {3, size, size};
    const ModelGraph m = flora::build_mini_inceptionnet(classes, shape, 7);
    const double target = static_cast<double>(flora::mini_plainnet_param_count(classes, shape));
    const double got = static_cast<double>(flora::count_parameters(m));
    INFO("classes=" << classes << " size=" << size << " plain=" << target << " incep=" << got);
    CHECK(std::abs(got - target) <= 0.20 * target);
  }
}

TEST_CASE("built inception modules match the closed-form count per module") {
  const flora::MiniInceptionConfigs cfg = flora::mini_inception_configs(8, {3, 32, 32});
  const ModelGraph m = flora::build_mini_inceptionnet(8, {3, 32, 32}, 3);
  CHECK(prefixed_param_count(m, "incep1.") == flora::inception_param_count(16, cfg.a));
  CHECK(prefixed_param_count(m, "incep2.") ==
        flora::inception_param_count(cfg.a.output_channels(), cfg.b));
  CHECK(prefixed_param_count(m, "stem.") == flora::conv_param_count(3, 16, 3));
  CHECK(prefixed_param_count(m, "fc.") ==
        flora::dense_param_count(cfg.b.output_channels(), 8));
}

TEST_CASE("builders reject invalid inputs") {
  CHECK_THROWS_AS(flora::build_mini_plainnet(8, {3, 7, 32}, 1), flora::BadShape);
  CHECK_THROWS_AS(flora::build_mini_plainnet(8, {3, 32, 7}, 1), flora::BadShape);
  CHECK_THROWS_AS(flora::build_mini_plainnet(1, {3, 32, 32}, 1), flora::BadShape);
  CHECK_THROWS_AS(flora::build_mini_plainnet(8, {3, 32}, 1), flora::BadShape);
  CHECK_THROWS_AS(flora::build_mini_inceptionnet(8, {3, 6, 6}, 1), flora::BadShape);
  CHECK_THROWS_AS(flora::build_mini_plainnet(8, {0, 32, 32}, 1), flora::BadShape);

  InceptionConfig bad = sample_config();
  bad.branch3_reduce_1x1 = 0;
  CHECK_THROWS_AS(bad.validate(), flora::BadShape);
}

TEST_CASE("graph builder validates layer compatibility while assembling") {
  // dense before flatten
  {
    flora::GraphBuilder b("x", {3, 8, 8}, 2, 1);
    CHECK_THROWS_AS(b.dense("fc", 4), flora::BadShape);
  }
  // window larger than the running activation
  {
    flora::GraphBuilder b("x", {3, 8, 8}, 2, 1);
    CHECK_THROWS_AS(b.maxpool(9, 1), flora::BadShape);
  }
  // spatial op after flatten
  {
    flora::GraphBuilder b("x", {3, 8, 8}, 2, 1);
    b.flatten();
    CHECK_THROWS_AS(b.conv("c", 4, 3, 1, 1), flora::BadShape);
  }
  // finish with the wrong output width
  {
    flora::GraphBuilder b("x", {3, 8, 8}, 2, 1);
    b.flatten();
    b.dense("fc", 5);
    CHECK_THROWS_AS(b.finish(), flora::BadShape);
  }
  // dropout ratio bounds
  {
    flora::GraphBuilder b("x", {3, 8, 8}, 2, 1);
    CHECK_THROWS_AS(b.dropout(1.0), flora::BadShape);
  }
}

TEST_CASE("parameter initialization is seed-deterministic with zero biases") {
  const ModelGraph a = flora::build_mini_plainnet(8, {3, 32, 32}, 42);
  const ModelGraph b = flora::build_mini_plainnet(8, {3, 32, 32}, 42);
  const ModelGraph c = flora::build_mini_plainnet(8, {3, 32, 32}, 43);

  REQUIRE(a.params.size() == b.params.size());
  for (const auto& [name, tensor] : a.params) {
    REQUIRE(b.params.at(name).data == tensor.data);
    if (name.ends_with(".bias"))
      for (double v : tensor.data) REQUIRE(v == 0.0);
  }
  bool any_differ = false;
  for (const auto& [name, tensor] : a.params)
    if (c.params.at(name).data != tensor.data) any_differ = true;
  CHECK(any_differ);
}

TEST_CASE("weight scales follow fan-in scaling") {
  const ModelGraph m = flora::build_mini_plainnet(8, {3, 32, 32}, 11);
  const Tensor& w1 = flora::param(m, "conv1.weight");
  double ss = 0.0;
  for (double v : w1.data) ss += v * v;
  const double std_got = std::sqrt(ss / static_cast<double>(w1.numel()));
  const double std_want = std::sqrt(2.0 / (3 * 3 * 3));
  CHECK(std_got == Catch::Approx(std_want).epsilon(0.15));

  const Tensor& w2 = flora::param(m, "fc1.weight");
  ss = 0.0;
  for (double v : w2.data) ss += v * v;
  const double fc_got = std::sqrt(ss / static_cast<double>(w2.numel()));
  const double fc_want = std::sqrt(2.0 / 1024.0);
  CHECK(fc_got == Catch::Approx(fc_want).epsilon(0.1));
}

TEST_CASE("missing parameter lookups fail loudly") {
  const ModelGraph m = flora::build_mini_plainnet(8, {3, 32, 32}, 1);
  CHECK_THROWS_AS(flora::param(m, "conv9.weight"), flora::ShapeMismatch);
}

TEST_CASE("forward produces class scores of the right shape in both modes") {
  for (const bool inception : {false, true}) {
    const ModelGraph m = inception ? flora::build_mini_inceptionnet(5, {3, 16, 16}, 9)
                                   : flora::build_mini_plainnet(5, {3, 16, 16}, 9);
    const Tensor batch = flora::random_uniform({4, 3, 16, 16}, 0.0, 1.0, 123);

    const Tensor probs = flora::forward(m, batch, flora::DropoutMode::kInference, 0);
    REQUIRE(probs.shape == std::vector<std::int64_t>{4, 5});
    for (std::int64_t r = 0; r < 4; ++r) {
      double sum = 0.0;
      for (std::int64_t c = 0; c < 5; ++c) {
        REQUIRE(probs.at2(r, c) >= 0.0);
        sum += probs.at2(r, c);
      }
      REQUIRE(sum == Catch::Approx(1.0).margin(1e-9));
    }

    // training mode leaves raw logits for the fused loss
    const Tensor logits = flora::forward(m, batch, flora::DropoutMode::kTraining, 1);
    REQUIRE(logits.shape == std::vector<std::int64_t>{4, 5});
    double sum = 0.0;
    for (std::int64_t c = 0; c < 5; ++c) sum += logits.at2(0, c);
    CHECK(std::abs(sum - 1.0) > 1e-6);
  }
}

TEST_CASE("forward rejects a batch that does not match the input shape") {
  const ModelGraph m = flora::build_mini_plainnet(5, {3, 16, 16}, 9);
  CHECK_THROWS_AS(flora::forward(m, Tensor({2, 3, 16, 8}), flora::DropoutMode::kInference, 0),
                  flora::ShapeMismatch);
  CHECK_THROWS_AS(flora::forward(m, Tensor({2, 1, 16, 16}), flora::DropoutMode::kInference, 0),
                  flora::ShapeMismatch);
  CHECK_THROWS_AS(flora::forward(m, Tensor({3, 16, 16}), flora::DropoutMode::kInference, 0),
                  flora::ShapeMismatch);
}

TEST_CASE("inference output is independent of the dropout seed") {
  const ModelGraph m = flora::build_mini_plainnet(4, {3, 8, 8}, 21);
  const Tensor batch = flora::random_uniform({2, 3, 8, 8}, 0.0, 1.0, 5);
  const Tensor a = flora::forward(m, batch, flora::DropoutMode::kInference, 1);
  const Tensor b = flora::forward(m, batch, flora::DropoutMode::kInference, 999);
  CHECK(a.data == b.data);
}

TEST_CASE("end-to-end gradients match finite differences on both architectures") {
  for (const bool inception : {false, true}) {
    ModelGraph m = inception ? flora::build_mini_inceptionnet(3, {3, 8, 8}, 31)
                             : flora::build_mini_plainnet(3, {3, 8, 8}, 31);
    const Tensor batch = flora::random_uniform({2, 3, 8, 8}, 0.0, 1.0, 77);
    const std::vector<std::int64_t> labels = {0, 2};
    const std::uint64_t drop_seed = 11;

    flora::ForwardTape tape;
    const Tensor logits =
        flora::model_forward(m, batch, flora::DropoutMode::kTraining, drop_seed, &tape);
    const flora::SoftmaxCrossEntropy fused = flora::softmax_cross_entropy(logits, labels);
    const flora::GradMap grads = flora::model_backward(m, tape, fused.grad_logits);

    REQUIRE(grads.size() == m.params.size());

    const auto loss = [&] {
      const Tensor l = flora::forward(m, batch, flora::DropoutMode::kTraining, drop_seed);
      return flora::softmax_cross_entropy(l, labels).loss;
    };
    flora::Rng pick(inception ? 606ull : 505ull);
    for (const auto& [name, tensor] : grads) {
      Tensor& target = m.params.at(name);
      REQUIRE(tensor.shape == target.shape);
      const int samples = tensor.numel() < 8 ? static_cast<int>(tensor.numel()) : 8;
      for (int s = 0; s < samples; ++s) {
        const std::size_t i = pick.next_index(target.data.size());
        const double numeric = testutil::central_diff(loss, &target.data[i], 1e-5);
        INFO("param " << name << " coordinate " << i);
        REQUIRE(testutil::grad_close(tensor.data[i], numeric));
      }
    }
  }
}

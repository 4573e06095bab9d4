#include <gtest/gtest.h>

#include <cmath>

#include "ipvae/dist.hpp"
#include "ipvae/finite_diff.hpp"
#include "ipvae/nn.hpp"
#include "test_util.hpp"

using namespace ipvae;
using namespace ipvae::nn;
using diff::Graph;
using diff::Node;
using testing_util::uniform;

TEST(Glorot, BoundAndRange) {
  EXPECT_NEAR(glorot_bound(500, 500), 0.0774597, 1e-6);
  Rng rng(1);
  const Tensor w = glorot_init(500, 500, rng);
  EXPECT_EQ(w.shape(), (Tensor::Shape{500, 500}));
  const double bound = glorot_bound(500, 500);
  for (double v : w.data()) EXPECT_LE(std::abs(v), bound);
}

TEST(Glorot, SameSeedSameMatrix) {
  Rng a(9), b(9);
  EXPECT_EQ(glorot_init(7, 3, a), glorot_init(7, 3, b));
}

TEST(Glorot, SampleMeanIsCentred) {
  Rng rng(2);
  const Tensor w = glorot_init(1000, 1000, rng);
  double mean = 0.0;
  for (double v : w.data()) mean += v;
  mean /= static_cast<double>(w.size());
  // Uniform on [-b, b] has standard deviation b / sqrt(3).
  const double sigma = glorot_bound(1000, 1000) / std::sqrt(3.0);
  EXPECT_LT(std::abs(mean), 3.0 * sigma / std::sqrt(static_cast<double>(w.size())));
}

namespace {

ParamMap random_gated(const GatedDenseLayer& layer, Rng& rng) {
  ParamMap p;
  init_layer(p, layer, rng);
  for (auto& [_, t] : p) t = uniform(t.shape(), rng, -1.0, 1.0);
  return p;
}

}  // namespace

TEST(Gated, ClosedGateHalvesTheValuePath) {
  Rng rng(3);
  const GatedDenseLayer layer{"g", 3, 4};
  ParamMap p = random_gated(layer, rng);
  p.at("g.W_g") = Tensor({3, 4});
  p.at("g.b_g") = Tensor({4});
  const Tensor x = uniform({5, 3}, rng);
  Graph g;
  const Tensor h = g.value(gated_forward(ParamScope(g, p), layer, g.constant(x)));
  for (std::size_t r = 0; r < 5; ++r) {
    for (std::size_t c = 0; c < 4; ++c) {
      double pre = p.at("g.b_h")[c];
      for (std::size_t k = 0; k < 3; ++k) pre += x.at(r, k) * p.at("g.W_h").at(k, c);
      EXPECT_NEAR(h.at(r, c), 0.5 * pre, 1e-12);
    }
  }
}

TEST(Gated, SaturatedGatePassesTheValuePath) {
  Rng rng(4);
  const GatedDenseLayer layer{"g", 3, 4};
  ParamMap p = random_gated(layer, rng);
  p.at("g.W_g") = Tensor({3, 4});
  p.at("g.b_g") = Tensor({4}, 20.0);
  const Tensor x = uniform({2, 3}, rng);
  Graph g;
  const Tensor h = g.value(gated_forward(ParamScope(g, p), layer, g.constant(x)));
  for (std::size_t r = 0; r < 2; ++r) {
    for (std::size_t c = 0; c < 4; ++c) {
      double pre = p.at("g.b_h")[c];
      for (std::size_t k = 0; k < 3; ++k) pre += x.at(r, k) * p.at("g.W_h").at(k, c);
      EXPECT_NEAR(h.at(r, c), pre, 1e-8);
    }
  }
}

TEST(Gated, ShapeMismatchThrows) {
  Rng rng(5);
  const GatedDenseLayer layer{"g", 3, 4};
  ParamMap p = random_gated(layer, rng);
  Graph g;
  EXPECT_THROW(gated_forward(ParamScope(g, p), layer, g.constant(Tensor({2, 5}))), diff::GraphError);
}

TEST(Gated, GradientsMatchFiniteDifferences) {
  Rng rng(6);
  const GatedDenseLayer layer{"g", 3, 4};
  const ParamMap p = random_gated(layer, rng);
  ASSERT_EQ(p.size(), 4u);
  const Tensor x = uniform({5, 3}, rng);
  const auto f = [&](Graph& g, const ParamMap& q) {
    return g.sum(g.square(gated_forward(ParamScope(g, q), layer, g.constant(x))));
  };
  EXPECT_LT(diff::finite_diff_check(f, p, 1e-5).max_rel_err, 1e-4);
}

TEST(Gated, MlpWithGaussianLogPdfMatchesFiniteDifferences) {
  Rng rng(7);
  const GatedDenseLayer l1{"l1", 3, 6};
  const DenseLayer mu{"mu", 6, 2, Activation::Identity};
  const DenseLayer lv{"lv", 6, 2, Activation::Identity};
  ParamMap p = random_gated(l1, rng);
  init_layer(p, mu, rng);
  init_layer(p, lv, rng);
  for (auto& [_, t] : p) t = uniform(t.shape(), rng, -1.0, 1.0);
  const Tensor x = uniform({4, 3}, rng);
  const Tensor z = uniform({4, 2}, rng, -1.0, 1.0);
  const auto f = [&](Graph& g, const ParamMap& q) {
    const ParamScope s(g, q);
    const Node h = gated_forward(s, l1, g.constant(x));
    return g.sum(dist::diag_gaussian_log_pdf(g, dense_forward(s, mu, h), dense_forward(s, lv, h), g.constant(z)));
  };
  EXPECT_LT(diff::finite_diff_check(f, p, 1e-5).max_rel_err, 1e-4);
}

TEST(Dense, ActivationsAndGradients) {
  Rng rng(8);
  for (Activation act : {Activation::Identity, Activation::Tanh, Activation::Sigmoid}) {
    const DenseLayer layer{"d", 3, 2, act};
    ParamMap p;
    init_layer(p, layer, rng);
    p.at("d.b") = uniform({2}, rng, -1.0, 1.0);
    const Tensor x = uniform({4, 3}, rng);
    const auto f = [&](Graph& g, const ParamMap& q) {
      return g.sum(g.square(dense_forward(ParamScope(g, q), layer, g.constant(x))));
    };
    EXPECT_LT(diff::finite_diff_check(f, p, 1e-5).max_rel_err, 1e-4);
  }
}

TEST(Dropout, EvalAndKeepOneAreIdentity) {
  Rng rng(9);
  const Tensor x = uniform({10, 10}, rng);
  EXPECT_EQ(dropout_apply(x, {0.5, Mode::Eval}, rng), x);
  EXPECT_EQ(dropout_apply(x, {1.0, Mode::Train}, rng), x);
}

TEST(Dropout, RejectsInvalidKeep) {
  Rng rng(10);
  const Tensor x({2, 2}, 1.0);
  EXPECT_THROW(dropout_apply(x, {0.0, Mode::Train}, rng), std::invalid_argument);
  EXPECT_THROW(dropout_apply(x, {-0.5, Mode::Eval}, rng), std::invalid_argument);
  EXPECT_THROW(dropout_apply(x, {1.5, Mode::Train}, rng), std::invalid_argument);
}

TEST(Dropout, InvertedDropoutPreservesTheMean) {
  Rng rng(11);
  const Tensor ones({100000}, 1.0);
  const Tensor y = dropout_apply(ones, {0.5, Mode::Train}, rng);
  double mean = 0.0;
  for (double v : y.data()) {
    EXPECT_TRUE(v == 0.0 || v == 2.0);
    mean += v;
  }
  mean /= static_cast<double>(y.size());
  EXPECT_NEAR(mean, 1.0, 0.02);
}

TEST(Dropout, ExpectationPerCoordinateWithinTwoSigma) {
  Rng rng(12);
  const Tensor x = uniform({8}, rng, 0.5, 2.0);
  const double keep = 0.7;
  const std::size_t n = 20000;
  std::vector<double> sum(8, 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    const Tensor y = dropout_apply(x, {keep, Mode::Train}, rng);
    for (std::size_t i = 0; i < 8; ++i) sum[i] += y[i];
  }
  std::size_t outside = 0;
  for (std::size_t i = 0; i < 8; ++i) {
    // Var of x * b / keep with b ~ Bernoulli(keep) is x^2 (1 - keep) / keep.
    const double se = x[i] * std::sqrt((1.0 - keep) / keep / static_cast<double>(n));
    if (std::abs(sum[i] / static_cast<double>(n) - x[i]) > 2.0 * se) ++outside;
  }
  EXPECT_LE(outside, 2u);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  ParamMap p = {{"w", Tensor::vector({1.0, -2.0})}};
  const ParamMap before = p;
  Adam adam({}, {"w"});
  adam.step(p, {{"w", Tensor({2})}});
  EXPECT_EQ(p, before);
  EXPECT_EQ(adam.steps(), 1u);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ParamMap p = {{"w", Tensor::vector({0.5, 0.5, 0.5})}};
  Adam adam({.lr = 1e-3}, {"w"});
  adam.step(p, {{"w", Tensor::vector({0.3, -7.0, 1e3})}});
  EXPECT_NEAR(p.at("w")[0], 0.5 - 1e-3, 1e-9);
  EXPECT_NEAR(p.at("w")[1], 0.5 + 1e-3, 1e-9);
  EXPECT_NEAR(p.at("w")[2], 0.5 - 1e-3, 1e-9);
}

TEST(Adam, FirstStepInvariantToGradientScale) {
  ParamMap a = {{"w", Tensor::vector({1.0, 2.0})}};
  ParamMap b = a;
  Adam adam_a({}, {"w"}), adam_b({}, {"w"});
  // The step is lr * g / (|g| + eps); eps shifts it by about lr * eps / |g|,
  // so the gradients are large enough for that shift to stay below 1e-12.
  adam_a.step(a, {{"w", Tensor::vector({50.0, -25.0})}});
  adam_b.step(b, {{"w", Tensor::vector({5000.0, -2500.0})}});
  for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(a.at("w")[i], b.at("w")[i], 1e-12);
}

TEST(Adam, MinimisesAQuadratic) {
  ParamMap p = {{"w", Tensor::scalar(1.0)}};
  Adam adam({.lr = 1e-2}, {"w"});
  double prev = 1.0;
  std::size_t increases = 0;
  for (int i = 0; i < 500; ++i) {
    Graph g;
    const auto grads = g.backward(g.square(g.parameter("w", p.at("w"))));
    adam.step(p, grads);
    const double loss = p.at("w").item() * p.at("w").item();
    if (loss > prev) ++increases;
    prev = loss;
  }
  EXPECT_LT(std::abs(p.at("w").item()), 1e-3);
  // Adam overshoots only once momentum has carried w through the origin.
  EXPECT_LT(increases, 50u);
}

TEST(Adam, ErrorsNameTheParameter) {
  ParamMap p = {{"a", Tensor::scalar(1.0)}, {"b", Tensor::vector({1.0, 2.0})}};
  const ParamMap before = p;
  Adam adam({}, {"a", "b"});
  try {
    adam.step(p, {{"a", Tensor::scalar(1.0)}, {"b", Tensor::vector({1.0, std::nan("")})}});
    FAIL() << "expected an error";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("'b'"), std::string::npos);
  }
  EXPECT_EQ(p, before);
  EXPECT_EQ(adam.steps(), 0u);
  EXPECT_THROW(adam.step(p, {{"a", Tensor::scalar(1.0)}, {"b", Tensor::scalar(1.0)}}), std::invalid_argument);
  EXPECT_THROW(adam.step(p, {{"a", Tensor::scalar(1.0)}}), std::out_of_range);
}

TEST(Adam, MomentsShapedLikeParameters) {
  ParamMap p = {{"w", Tensor({3, 2}, 1.0)}};
  Adam adam({}, {"w"});
  adam.step(p, {{"w", Tensor({3, 2}, 0.1)}});
  EXPECT_EQ(adam.first_moment().at("w").shape(), p.at("w").shape());
  EXPECT_EQ(adam.second_moment().at("w").shape(), p.at("w").shape());
}

TEST(Mlp, ZeroWeightsGiveFinalBias) {
  const std::vector<DenseLayer> layers = {{"a", 3, 5, Activation::Tanh}, {"b", 5, 2, Activation::Identity}};
  ParamMap p;
  Rng rng(13);
  for (const auto& l : layers) init_layer(p, l, rng);
  for (auto& [name, t] : p) t = Tensor(t.shape());
  p.at("b.b") = Tensor::vector({0.25, -4.0});
  Graph g;
  const Tensor y = g.value(mlp_forward(ParamScope(g, p), layers, g.constant(uniform({3, 3}, rng))));
  for (std::size_t r = 0; r < 3; ++r) {
    EXPECT_EQ(y.at(r, 0), 0.25);
    EXPECT_EQ(y.at(r, 1), -4.0);
  }
}

TEST(Mlp, IdentityLayerPassesInput) {
  const std::vector<DenseLayer> layers = {{"i", 3, 3, Activation::Identity}};
  ParamMap p = {{"i.W", Tensor::matrix({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}})}, {"i.b", Tensor({3})}};
  Rng rng(14);
  const Tensor x = uniform({4, 3}, rng);
  Graph g;
  EXPECT_EQ(g.value(mlp_forward(ParamScope(g, p), layers, g.constant(x))), x);
}

TEST(Mlp, GradientCheckWithFixedDropout) {
  const std::vector<DenseLayer> layers = {{"a", 2, 6, Activation::Tanh},
                                          {"b", 6, 6, Activation::Tanh},
                                          {"c", 6, 1, Activation::Identity}};
  Rng rng(15);
  ParamMap p;
  for (const auto& l : layers) init_layer(p, l, rng);
  const Tensor x = uniform({5, 2}, rng);
  const DropoutSpec spec{0.5, Mode::Train};
  const auto f = [&](Graph& g, const ParamMap& q) {
    Rng mask_rng(99);  // same masks on every evaluation
    return g.mean(g.square(mlp_forward(ParamScope(g, q), layers, g.constant(x), &spec, &mask_rng)));
  };
  EXPECT_LT(diff::finite_diff_check(f, p, 1e-5).max_rel_err, 1e-4);
}

TEST(Mlp, ShapeMismatchAndMissingRng) {
  const std::vector<DenseLayer> layers = {{"a", 3, 2, Activation::Tanh}};
  Rng rng(16);
  ParamMap p;
  init_layer(p, layers[0], rng);
  Graph g;
  EXPECT_THROW(mlp_forward(ParamScope(g, p), layers, g.constant(Tensor({2, 4}))), diff::GraphError);
  const DropoutSpec spec{0.5, Mode::Train};
  EXPECT_THROW(mlp_forward(ParamScope(g, p), layers, g.constant(Tensor({2, 3})), &spec, nullptr),
               std::invalid_argument);
}

TEST(Scope, FrozenScopeBlocksGradients) {
  ParamMap p = {{"w", Tensor::scalar(3.0)}};
  Graph g;
  const ParamScope frozen(g, p, true);
  const auto grads = g.backward(g.square(frozen("w")));
  EXPECT_EQ(grads.at("w").item(), 0.0);
}

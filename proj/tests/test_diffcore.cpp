#include <gtest/gtest.h>

#include <cmath>

#include "ipvae/finite_diff.hpp"
#include "ipvae/graph.hpp"
#include "test_util.hpp"

using namespace ipvae;
using namespace ipvae::diff;
using testing_util::uniform;

TEST(Tensor, ShapeAndAccess) {
  Tensor m = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
  EXPECT_EQ(m.rows(), 2u);
  EXPECT_EQ(m.cols(), 3u);
  EXPECT_EQ(m.at(1, 2), 6.0);
  EXPECT_EQ(Tensor().size(), 1u);
  EXPECT_EQ(Tensor().rank(), 0u);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1.0}), std::invalid_argument);
  const std::vector<std::size_t> idx = {1, 0};
  EXPECT_EQ(m.gather_rows(idx).at(0, 0), 4.0);
  EXPECT_EQ(m.rows_slice(1, 2).at(0, 1), 5.0);
}

TEST(Forward, IdentityMatmul) {
  Graph g;
  const Node eye = g.constant(Tensor::matrix({{1, 0}, {0, 1}}));
  const Node v = g.constant(Tensor::vector({3, 4}));
  const Tensor out = g.value(g.matmul(eye, v));
  EXPECT_EQ(out.shape(), Tensor::Shape{2});
  EXPECT_EQ(out[0], 3.0);
  EXPECT_EQ(out[1], 4.0);
}

TEST(Forward, SigmoidAndLogExp) {
  Graph g;
  EXPECT_EQ(g.value(g.sigmoid(g.constant(Tensor::scalar(0.0)))).item(), 0.5);
  EXPECT_NEAR(g.value(g.log(g.exp(g.constant(Tensor::scalar(1.0))))).item(), 1.0, 1e-15);
}

TEST(Forward, LogIsFloored) {
  Graph g;
  const double v = g.value(g.log(g.constant(Tensor::scalar(0.0)))).item();
  EXPECT_DOUBLE_EQ(v, std::log(Graph::kLogFloor));
}

TEST(Forward, RowBroadcastAddsBias) {
  Graph g;
  const Node x = g.constant(Tensor::matrix({{1, 2}, {3, 4}}));
  const Node b = g.constant(Tensor::vector({10, 20}));
  const Tensor y = g.value(g.add(x, b));
  EXPECT_EQ(y.at(1, 0), 13.0);
  EXPECT_EQ(y.at(0, 1), 22.0);
}

TEST(Forward, ShapeMismatchNamesTheNode) {
  Graph g;
  const Node a = g.constant(Tensor({2, 3}));
  const Node b = g.constant(Tensor({2, 2}));
  try {
    g.matmul(a, b);
    FAIL() << "expected a GraphError";
  } catch (const GraphError& e) {
    EXPECT_EQ(e.node(), 2u);
    EXPECT_EQ(e.op(), OpKind::MatMul);
    EXPECT_NE(std::string(e.what()).find("inner dimensions"), std::string::npos);
  }
  EXPECT_THROW(g.add(a, b), GraphError);
}

TEST(Forward, NaNRaisesWithNodeId) {
  Graph g;
  const Node big = g.exp(g.constant(Tensor::scalar(1000.0)));
  try {
    g.sub(big, big);
    FAIL() << "expected a GraphError";
  } catch (const GraphError& e) {
    EXPECT_EQ(e.op(), OpKind::Sub);
    EXPECT_EQ(e.node(), big.id + 1);
  }
}

TEST(Forward, PlaceholdersEvaluateOnForward) {
  Graph g;
  const Node x = g.placeholder("x");
  const Node y = g.square(x);
  g.name_output("y", y);
  EXPECT_FALSE(g.evaluated(y));
  const Tensor three = Tensor::scalar(3.0);
  auto out = g.forward({{"x", std::cref(three)}});
  EXPECT_EQ(out.at("y").item(), 9.0);
  const Tensor four = Tensor::scalar(4.0);
  EXPECT_EQ(g.forward({{"x", std::cref(four)}}).at("y").item(), 16.0);
  EXPECT_THROW(g.forward({{"nope", std::cref(four)}}), GraphError);

  Graph unbound;
  unbound.name_output("y", unbound.square(unbound.placeholder("x")));
  EXPECT_THROW(unbound.forward(), GraphError);
}

TEST(Forward, DeterministicBitIdentical) {
  Rng rng(3);
  const Tensor w = uniform({5, 7}, rng);
  const Tensor x = uniform({4, 5}, rng);
  const auto run = [&] {
    Graph g;
    return g.value(g.tanh(g.matmul(g.input("x", x), g.parameter("w", w))));
  };
  EXPECT_EQ(run(), run());
}

TEST(Backward, SquareAndSigmoid) {
  {
    Graph g;
    const Tensor x = Tensor::scalar(3.0);
    EXPECT_EQ(g.backward(g.square(g.parameter("x", x))).at("x").item(), 6.0);
  }
  {
    Graph g;
    const Tensor x = Tensor::scalar(0.0);
    EXPECT_EQ(g.backward(g.sigmoid(g.parameter("x", x))).at("x").item(), 0.25);
  }
}

TEST(Backward, RequiresForwardAndScalar) {
  {
    Graph g;
    const Tensor w = Tensor::scalar(2.0);
    const Node y = g.mul(g.parameter("w", w), g.placeholder("x"));
    EXPECT_THROW(g.backward(y), GraphError);
  }
  {
    Graph g;
    const Tensor w = Tensor::vector({1, 2});
    EXPECT_THROW(g.backward(g.square(g.parameter("w", w))), GraphError);
  }
}

TEST(Backward, FanOutAccumulates) {
  Graph g;
  const Tensor x = Tensor::scalar(2.0);
  const Node a = g.parameter("x", x);
  const Node b = g.parameter("x", x);
  EXPECT_EQ(a, b);
  // x * x + 3 x -> 2 x + 3 = 7
  const Node y = g.add(g.mul(a, b), g.scale(a, 3.0));
  EXPECT_EQ(g.backward(y).at("x").item(), 7.0);
}

TEST(Backward, UnreachedParametersGetZeros) {
  Graph g;
  const Tensor a = Tensor::vector({1, 2});
  const Tensor b = Tensor::scalar(5.0);
  g.parameter("a", a);
  const auto grads = g.backward(g.square(g.parameter("b", b)));
  EXPECT_EQ(grads.at("a"), Tensor({2}));
}

TEST(Backward, RandomMlpMatchesFiniteDifferences) {
  Rng rng(11);
  ParamMap params = {{"W1", uniform({3, 6}, rng, -1, 1)},
                     {"b1", uniform({6}, rng, -1, 1)},
                     {"W2", uniform({6, 1}, rng, -1, 1)},
                     {"b2", uniform({1}, rng, -1, 1)}};
  const Tensor x = uniform({5, 3}, rng);
  const auto f = [&](Graph& g, const ParamMap& p) {
    const Node h = g.tanh(g.add(g.matmul(g.constant(x), g.parameter("W1", p.at("W1"))), g.parameter("b1", p.at("b1"))));
    const Node o = g.add(g.matmul(h, g.parameter("W2", p.at("W2"))), g.parameter("b2", p.at("b2")));
    return g.mean(g.square(o));
  };
  EXPECT_LT(finite_diff_check(f, params, 1e-5).max_rel_err, 1e-4);
}

TEST(FiniteDiff, LinearFunctionIsExact) {
  Rng rng(5);
  ParamMap params = {{"w", uniform({4}, rng)}};
  const Tensor c = uniform({4}, rng);
  const auto f = [&](Graph& g, const ParamMap& p) {
    return g.sum(g.mul(g.parameter("w", p.at("w")), g.constant(c)));
  };
  EXPECT_LT(finite_diff_check(f, params, 1e-5).max_rel_err, 1e-9);
}

TEST(FiniteDiff, HardThresholdIsReported) {
  ParamMap params = {{"x", Tensor::scalar(1.0)}};
  const auto f = [](Graph& g, const ParamMap& p) { return g.sum(g.clamp(g.parameter("x", p.at("x")), 1.0, 1.0)); };
  const auto r = finite_diff_check(f, params, 1e-5);
  EXPECT_GT(r.max_rel_err, 0.5);
  EXPECT_EQ(r.worst_param, "x");
}

TEST(FiniteDiff, RejectsBadInput) {
  ParamMap params = {{"x", Tensor::scalar(1.0)}};
  const auto f = [](Graph& g, const ParamMap& p) { return g.square(g.parameter("x", p.at("x"))); };
  EXPECT_THROW(finite_diff_check(f, params, 0.0), std::invalid_argument);
  const auto nan_f = [](Graph& g, const ParamMap& p) {
    const Node big = g.exp(g.scale(g.parameter("x", p.at("x")), 1000.0));
    return g.sub(big, big);
  };
  EXPECT_ANY_THROW(finite_diff_check(nan_f, params, 1e-5));
}

TEST(StopGradient, BlocksUpstream) {
  Graph g;
  const Tensor x = Tensor::scalar(2.0);
  const Node p = g.parameter("x", x);
  const Node y = g.mul(g.stop_gradient(p), p);
  EXPECT_EQ(g.value(y).item(), 4.0);
  EXPECT_EQ(g.backward(y).at("x").item(), 2.0);
}

TEST(StopGradient, OnlyStoppedTermsGiveZeroGradients) {
  Graph g;
  const Tensor x = Tensor::vector({1.0, -2.0});
  const Node p = g.parameter("x", x);
  const Node y = g.sum(g.square(g.stop_gradient(p)));
  EXPECT_EQ(g.backward(y).at("x"), Tensor({2}));
}

// Every differentiable primitive against central differences on inputs in [-3, 3].
class PrimitiveGradient : public ::testing::TestWithParam<int> {};

TEST_P(PrimitiveGradient, MatchesFiniteDifferences) {
  Rng rng(100 + GetParam());
  ParamMap params = {{"a", uniform({3, 4}, rng)}, {"b", uniform({3, 4}, rng)},
                     {"v", uniform({4}, rng)},    {"m", uniform({4, 2}, rng)}};
  const Tensor weights = uniform({3, 4}, rng);
  using Op = std::function<Node(Graph&, Node, Node, Node, Node)>;
  const std::vector<std::pair<const char*, Op>> ops = {
      {"matmul", [](Graph& g, Node a, Node, Node, Node m) { return g.matmul(a, m); }},
      {"transpose", [](Graph& g, Node a, Node, Node, Node) { return g.transpose(a); }},
      {"reshape", [](Graph& g, Node a, Node, Node, Node) { return g.reshape(a, {12}); }},
      {"add", [](Graph& g, Node a, Node b, Node, Node) { return g.add(a, b); }},
      {"bias", [](Graph& g, Node a, Node, Node v, Node) { return g.add(a, v); }},
      {"sub", [](Graph& g, Node a, Node b, Node, Node) { return g.sub(a, b); }},
      {"sub_bias", [](Graph& g, Node a, Node, Node v, Node) { return g.sub(a, v); }},
      {"mul", [](Graph& g, Node a, Node b, Node, Node) { return g.mul(a, b); }},
      {"mul_bias", [](Graph& g, Node a, Node, Node v, Node) { return g.mul(a, v); }},
      {"scale", [](Graph& g, Node a, Node, Node, Node) { return g.scale(a, -1.7); }},
      {"shift", [](Graph& g, Node a, Node, Node, Node) { return g.shift(a, 0.3); }},
      {"sigmoid", [](Graph& g, Node a, Node, Node, Node) { return g.sigmoid(a); }},
      {"tanh", [](Graph& g, Node a, Node, Node, Node) { return g.tanh(a); }},
      {"exp", [](Graph& g, Node a, Node, Node, Node) { return g.exp(a); }},
      {"log", [](Graph& g, Node a, Node, Node, Node) { return g.log(g.shift(g.square(a), 0.5)); }},
      {"log_sigmoid", [](Graph& g, Node a, Node, Node, Node) { return g.log_sigmoid(a); }},
      {"square", [](Graph& g, Node a, Node, Node, Node) { return g.square(a); }},
      {"clamp", [](Graph& g, Node a, Node, Node, Node) { return g.clamp(a, -10.0, 10.0); }},
      {"sum", [](Graph& g, Node a, Node, Node, Node) { return g.sum(a); }},
      {"sum_cols", [](Graph& g, Node a, Node, Node, Node) { return g.sum_cols(a); }},
      {"mean", [](Graph& g, Node a, Node, Node, Node) { return g.mean(a); }},
      {"concat", [](Graph& g, Node a, Node b, Node, Node) {
         const Node parts[] = {a, b};
         return g.concat(parts);
       }},
      {"logsumexp_cols", [](Graph& g, Node a, Node, Node, Node) { return g.logsumexp_cols(a); }},
  };
  for (const auto& [name, op] : ops) {
    const auto f = [&, &op = op](Graph& g, const ParamMap& p) {
      const Node a = g.parameter("a", p.at("a"));
      const Node b = g.parameter("b", p.at("b"));
      const Node v = g.parameter("v", p.at("v"));
      const Node m = g.parameter("m", p.at("m"));
      const Node out = op(g, a, b, v, m);
      // Weighted sum so every output coordinate carries a distinct gradient.
      const Node flat = g.reshape(out, {shape_numel(g.shape(out))});
      Tensor w({shape_numel(g.shape(out))});
      for (std::size_t i = 0; i < w.size(); ++i) w[i] = weights[i % weights.size()];
      const Node touch = g.scale(g.add(g.add(g.sum(a), g.sum(b)), g.add(g.sum(v), g.sum(m))), 0.0);
      return g.add(g.sum(g.mul(flat, g.constant(w))), touch);
    };
    const auto r = finite_diff_check(f, params, 1e-5);
    EXPECT_LT(r.max_rel_err, 1e-4) << name << " worst " << r.worst_param << "[" << r.worst_index << "]";
  }
}

INSTANTIATE_TEST_SUITE_P(RandomInputs, PrimitiveGradient, ::testing::Range(0, 5));

TEST(Backward, LinearityOfSums) {
  Rng rng(21);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor w = uniform({3, 3}, rng);
    const Tensor x = uniform({2, 3}, rng);
    const auto build_f = [&](Graph& g) { return g.sum(g.tanh(g.matmul(g.constant(x), g.parameter("w", w)))); };
    const auto build_h = [&](Graph& g) { return g.mean(g.square(g.parameter("w", w))); };
    Graph gf, gh, gs;
    const auto df = gf.backward(build_f(gf)).at("w");
    const auto dh = gh.backward(build_h(gh)).at("w");
    const auto ds = gs.backward(gs.add(build_f(gs), build_h(gs))).at("w");
    for (std::size_t i = 0; i < ds.size(); ++i) EXPECT_NEAR(ds[i], df[i] + dh[i], 1e-12);
  }
}

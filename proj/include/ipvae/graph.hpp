#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ipvae/tensor.hpp"

namespace ipvae::diff {

/// Handle to a node of a Graph. Only meaningful for the graph that issued it.
struct Node {
  std::uint32_t id = UINT32_MAX;
  bool valid() const { return id != UINT32_MAX; }
  friend bool operator==(Node, Node) = default;
};

enum class OpKind : std::uint8_t {
  Parameter,
  Input,
  Constant,
  MatMul,
  Transpose,
  Reshape,
  Add,
  Sub,
  Mul,
  Scale,
  Shift,
  Sigmoid,
  Tanh,
  Exp,
  Log,
  LogSigmoid,
  Square,
  Clamp,
  Sum,
  SumCols,
  Mean,
  Concat,
  LogSumExpCols,
  StopGradient,
};

const char* op_name(OpKind kind);

/// Error raised while building, evaluating or differentiating a graph.
/// Carries the offending node id (or UINT32_MAX when not node specific).
class GraphError : public std::runtime_error {
 public:
  GraphError(std::uint32_t node, OpKind op, const std::string& what);
  std::uint32_t node() const { return node_; }
  OpKind op() const { return op_; }

 private:
  std::uint32_t node_;
  OpKind op_;
};

/// Leaf overrides for Graph::forward, keyed by leaf name. Referenced tensors
/// must outlive every later forward/backward call on the graph.
using Bindings = std::map<std::string, std::reference_wrapper<const Tensor>, std::less<>>;

/// Reverse-mode differentiation tape over 64-bit tensors.
///
/// Nodes are appended in topological order. A node is evaluated as soon as all
/// of its inputs have values, so graphs built from bound leaves behave eagerly;
/// graphs containing unbound placeholders are evaluated by forward().
///
/// Binary pointwise ops accept either equal shapes or a second operand whose
/// shape equals the first operand's shape without its leading (batch) extent.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = default;
  Graph& operator=(Graph&&) = default;

  // --- leaves -------------------------------------------------------------
  /// Trainable leaf referencing `value`. Requesting an existing name returns
  /// the same node, so a parameter used twice accumulates both gradients.
  Node parameter(const std::string& name, const Tensor& value);
  /// Non-trainable named leaf owning its value.
  Node input(const std::string& name, Tensor value);
  /// Non-trainable named leaf with no value; must be bound in forward().
  Node placeholder(const std::string& name);
  Node constant(Tensor value);

  // --- primitives ---------------------------------------------------------
  Node matmul(Node a, Node b);
  Node transpose(Node a);
  Node reshape(Node a, Tensor::Shape shape);
  Node add(Node a, Node b);
  Node sub(Node a, Node b);
  Node mul(Node a, Node b);
  Node scale(Node a, double c);
  Node shift(Node a, double c);
  Node sigmoid(Node a);
  Node tanh(Node a);
  Node exp(Node a);
  /// Natural log with the input clamped to >= kLogFloor.
  Node log(Node a);
  Node log_sigmoid(Node a);
  Node square(Node a);
  Node clamp(Node a, double lo, double hi);
  Node sum(Node a);
  /// Row sums of a matrix: [B, D] -> [B].
  Node sum_cols(Node a);
  Node mean(Node a);
  /// Concatenation along the feature (last) axis.
  Node concat(std::span<const Node> parts);
  /// Stable row-wise log-sum-exp: [B, K] -> [B].
  Node logsumexp_cols(Node a);
  /// Identity in the forward pass; blocks gradient flow to its input.
  Node stop_gradient(Node a);

  void name_output(const std::string& name, Node n);

  // --- evaluation ---------------------------------------------------------
  /// Re-evaluates every node with the given leaf overrides and returns the
  /// values of all named outputs.
  std::map<std::string, Tensor> forward(const Bindings& bindings = {});

  /// Gradients of a scalar node with respect to every trainable leaf, keyed
  /// by parameter name. Leaves unreachable from `output` get zero tensors.
  ParamMap backward(Node output);

  const Tensor& value(Node n) const;
  const Tensor::Shape& shape(Node n) const { return value(n).shape(); }
  bool evaluated(Node n) const;
  bool requires_grad(Node n) const;
  OpKind kind(Node n) const;
  std::size_t size() const { return nodes_.size(); }

  static constexpr double kLogFloor = 1e-12;

 private:
  struct Record {
    OpKind kind;
    std::vector<std::uint32_t> inputs;
    double c0 = 0.0;
    double c1 = 0.0;
    Tensor::Shape shape_arg;
    std::string name;
    bool requires_grad = false;
    const Tensor* bound = nullptr;  // leaf value when not owned
    std::optional<Tensor> value;    // owned value (ops, constants, inputs)
    bool has_value = false;
  };

  Node push(Record rec);
  void evaluate(std::uint32_t id);
  void compute(std::uint32_t id);
  void accumulate_grads(std::uint32_t id, const Tensor& g, std::vector<std::optional<Tensor>>& grads);
  void check(Node n) const;
  [[noreturn]] void fail(std::uint32_t id, const std::string& what) const;

  std::vector<Record> nodes_;
  std::map<std::string, std::uint32_t, std::less<>> leaves_by_name_;
  std::map<std::string, std::uint32_t, std::less<>> outputs_;
};

}  // namespace ipvae::diff

#include "ipvae/graph.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

namespace ipvae::diff {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

constexpr std::uint32_t kNoNode = UINT32_MAX;

ConstMatMap as_matrix(const Tensor& t, std::size_t rows, std::size_t cols) {
  return ConstMatMap(t.data().data(), static_cast<Eigen::Index>(rows),
                     static_cast<Eigen::Index>(cols));
}

MatMap as_matrix(Tensor& t, std::size_t rows, std::size_t cols) {
  return MatMap(t.data().data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

// Matrix view of a matmul operand: rank-1 lhs is a row, rank-1 rhs a column.
struct MatDims {
  std::size_t rows;
  std::size_t cols;
};

MatDims lhs_dims(const Tensor& a) {
  return a.rank() == 1 ? MatDims{1, a.shape()[0]} : MatDims{a.shape()[0], a.shape()[1]};
}

MatDims rhs_dims(const Tensor& b) {
  return b.rank() == 1 ? MatDims{b.shape()[0], 1} : MatDims{b.shape()[0], b.shape()[1]};
}

enum class Broadcast { Same, Rows };

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double log_sigmoid_value(double x) { return std::min(x, 0.0) - std::log1p(std::exp(-std::abs(x))); }

}  // namespace

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Parameter: return "parameter";
    case OpKind::Input: return "input";
    case OpKind::Constant: return "constant";
    case OpKind::MatMul: return "matmul";
    case OpKind::Transpose: return "transpose";
    case OpKind::Reshape: return "reshape";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Scale: return "scale";
    case OpKind::Shift: return "shift";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Tanh: return "tanh";
    case OpKind::Exp: return "exp";
    case OpKind::Log: return "log";
    case OpKind::LogSigmoid: return "log_sigmoid";
    case OpKind::Square: return "square";
    case OpKind::Clamp: return "clamp";
    case OpKind::Sum: return "sum";
    case OpKind::SumCols: return "sum_cols";
    case OpKind::Mean: return "mean";
    case OpKind::Concat: return "concat";
    case OpKind::LogSumExpCols: return "logsumexp_cols";
    case OpKind::StopGradient: return "stop_gradient";
  }
  return "unknown";
}

GraphError::GraphError(std::uint32_t node, OpKind op, const std::string& what)
    : std::runtime_error("graph node " + (node == kNoNode ? std::string("?") : std::to_string(node)) +
                         " (" + op_name(op) + "): " + what),
      node_(node),
      op_(op) {}

void Graph::fail(std::uint32_t id, const std::string& what) const {
  throw GraphError(id, id < nodes_.size() ? nodes_[id].kind : OpKind::Constant, what);
}

void Graph::check(Node n) const {
  if (!n.valid() || n.id >= nodes_.size()) {
    throw GraphError(n.id, OpKind::Constant, "invalid node handle");
  }
}

Node Graph::push(Record rec) {
  const auto id = static_cast<std::uint32_t>(nodes_.size());
  bool ready = true;
  for (auto in : rec.inputs) {
    if (in >= id) throw GraphError(in, OpKind::Constant, "invalid node handle");
    rec.requires_grad = rec.requires_grad || nodes_[in].requires_grad;
    ready = ready && nodes_[in].has_value;
  }
  if (rec.kind == OpKind::StopGradient) rec.requires_grad = false;
  const bool is_leaf = rec.inputs.empty();
  nodes_.push_back(std::move(rec));
  if (!is_leaf && ready) evaluate(id);
  return Node{id};
}

Node Graph::parameter(const std::string& name, const Tensor& value) {
  if (auto it = leaves_by_name_.find(name); it != leaves_by_name_.end()) {
    const auto& rec = nodes_[it->second];
    if (rec.kind != OpKind::Parameter) fail(it->second, "leaf '" + name + "' is not a parameter");
    return Node{it->second};
  }
  Record rec{.kind = OpKind::Parameter};
  rec.name = name;
  rec.requires_grad = true;
  rec.bound = &value;
  rec.has_value = true;
  auto n = push(std::move(rec));
  leaves_by_name_[name] = n.id;
  return n;
}

Node Graph::input(const std::string& name, Tensor value) {
  if (leaves_by_name_.contains(name)) {
    throw GraphError(leaves_by_name_.at(name), OpKind::Input, "duplicate leaf name '" + name + "'");
  }
  Record rec{.kind = OpKind::Input};
  rec.name = name;
  rec.value = std::move(value);
  rec.has_value = true;
  auto n = push(std::move(rec));
  leaves_by_name_[name] = n.id;
  return n;
}

Node Graph::placeholder(const std::string& name) {
  if (leaves_by_name_.contains(name)) {
    throw GraphError(leaves_by_name_.at(name), OpKind::Input, "duplicate leaf name '" + name + "'");
  }
  Record rec{.kind = OpKind::Input};
  rec.name = name;
  auto n = push(std::move(rec));
  leaves_by_name_[name] = n.id;
  return n;
}

Node Graph::constant(Tensor value) {
  Record rec{.kind = OpKind::Constant};
  rec.value = std::move(value);
  rec.has_value = true;
  return push(std::move(rec));
}

#define IPVAE_UNARY(fn, KIND)                      \
  Node Graph::fn(Node a) {                         \
    check(a);                                      \
    return push(Record{.kind = OpKind::KIND, .inputs = {a.id}}); \
  }

IPVAE_UNARY(transpose, Transpose)
IPVAE_UNARY(sigmoid, Sigmoid)
IPVAE_UNARY(tanh, Tanh)
IPVAE_UNARY(exp, Exp)
IPVAE_UNARY(log, Log)
IPVAE_UNARY(log_sigmoid, LogSigmoid)
IPVAE_UNARY(square, Square)
IPVAE_UNARY(sum, Sum)
IPVAE_UNARY(sum_cols, SumCols)
IPVAE_UNARY(mean, Mean)
IPVAE_UNARY(logsumexp_cols, LogSumExpCols)
IPVAE_UNARY(stop_gradient, StopGradient)
#undef IPVAE_UNARY

#define IPVAE_BINARY(fn, KIND)                                        \
  Node Graph::fn(Node a, Node b) {                                    \
    check(a);                                                         \
    check(b);                                                         \
    return push(Record{.kind = OpKind::KIND, .inputs = {a.id, b.id}}); \
  }

IPVAE_BINARY(matmul, MatMul)
IPVAE_BINARY(add, Add)
IPVAE_BINARY(sub, Sub)
IPVAE_BINARY(mul, Mul)
#undef IPVAE_BINARY

Node Graph::reshape(Node a, Tensor::Shape shape) {
  check(a);
  return push(Record{.kind = OpKind::Reshape, .inputs = {a.id}, .shape_arg = std::move(shape)});
}

Node Graph::scale(Node a, double c) {
  check(a);
  return push(Record{.kind = OpKind::Scale, .inputs = {a.id}, .c0 = c});
}

Node Graph::shift(Node a, double c) {
  check(a);
  return push(Record{.kind = OpKind::Shift, .inputs = {a.id}, .c0 = c});
}

Node Graph::clamp(Node a, double lo, double hi) {
  check(a);
  if (!(lo <= hi)) throw GraphError(a.id, OpKind::Clamp, "clamp bounds out of order");
  return push(Record{.kind = OpKind::Clamp, .inputs = {a.id}, .c0 = lo, .c1 = hi});
}

Node Graph::concat(std::span<const Node> parts) {
  if (parts.empty()) throw GraphError(kNoNode, OpKind::Concat, "concat of zero tensors");
  Record rec{.kind = OpKind::Concat};
  for (auto p : parts) {
    check(p);
    rec.inputs.push_back(p.id);
  }
  return push(std::move(rec));
}

void Graph::name_output(const std::string& name, Node n) {
  check(n);
  outputs_[name] = n.id;
}

const Tensor& Graph::value(Node n) const {
  check(n);
  const auto& rec = nodes_[n.id];
  if (!rec.has_value) fail(n.id, "value requested before evaluation");
  return rec.bound ? *rec.bound : *rec.value;
}

bool Graph::evaluated(Node n) const {
  check(n);
  return nodes_[n.id].has_value;
}

bool Graph::requires_grad(Node n) const {
  check(n);
  return nodes_[n.id].requires_grad;
}

OpKind Graph::kind(Node n) const {
  check(n);
  return nodes_[n.id].kind;
}

std::map<std::string, Tensor> Graph::forward(const Bindings& bindings) {
  for (const auto& [name, tensor] : bindings) {
    auto it = leaves_by_name_.find(name);
    if (it == leaves_by_name_.end()) {
      throw GraphError(kNoNode, OpKind::Input, "no leaf named '" + name + "'");
    }
    auto& rec = nodes_[it->second];
    rec.bound = &tensor.get();
    rec.has_value = true;
  }
  for (std::uint32_t id = 0; id < nodes_.size(); ++id) {
    auto& rec = nodes_[id];
    if (rec.inputs.empty()) {
      if (!rec.has_value) fail(id, "leaf '" + rec.name + "' is unbound");
      continue;
    }
    rec.has_value = false;
  }
  for (std::uint32_t id = 0; id < nodes_.size(); ++id) {
    if (!nodes_[id].inputs.empty()) evaluate(id);
  }
  std::map<std::string, Tensor> out;
  for (const auto& [name, id] : outputs_) out.emplace(name, value(Node{id}));
  return out;
}

void Graph::evaluate(std::uint32_t id) {
  compute(id);
  auto& rec = nodes_[id];
  rec.has_value = true;
  for (double v : rec.value->data()) {
    if (std::isnan(v)) {
      rec.has_value = false;
      fail(id, "NaN produced");
    }
  }
}

void Graph::compute(std::uint32_t id) {
  auto& rec = nodes_[id];
  auto in = [&](std::size_t k) -> const Tensor& { return value(Node{rec.inputs[k]}); };

  auto broadcast_mode = [&](const Tensor& a, const Tensor& b) {
    if (a.shape() == b.shape()) return Broadcast::Same;
    if (a.rank() >= 1 && b.rank() + 1 == a.rank() &&
        std::equal(b.shape().begin(), b.shape().end(), a.shape().begin() + 1)) {
      return Broadcast::Rows;
    }
    fail(id, "shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  };

  auto pointwise = [&](auto f) {
    const Tensor& a = in(0);
    Tensor out(a.shape());
    auto src = a.data();
    auto dst = out.data();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = f(src[i]);
    rec.value = std::move(out);
  };

  // Evaluates f on aligned fixed-size blocks so every element takes the same
  // SIMD path regardless of where the heap buffers happen to start.
  auto vectorized = [&](auto f) {
    using Block = Eigen::Array<double, 8, 1>;
    const Tensor& a = in(0);
    Tensor out(a.shape());
    const double* src = a.data().data();
    double* dst = out.data().data();
    const std::size_t n = a.size();
    Block x;
    Block y;
    for (std::size_t i = 0; i < n; i += 8) {
      const std::size_t m = std::min<std::size_t>(8, n - i);
      x.setZero();
      std::copy_n(src + i, m, x.data());
      y = f(x);
      std::copy_n(y.data(), m, dst + i);
    }
    rec.value = std::move(out);
  };

  auto binary = [&](auto f) {
    const Tensor& a = in(0);
    const Tensor& b = in(1);
    const auto mode = broadcast_mode(a, b);
    Tensor out(a.shape());
    auto pa = a.data();
    auto pb = b.data();
    auto dst = out.data();
    if (mode == Broadcast::Same) {
      for (std::size_t i = 0; i < pa.size(); ++i) dst[i] = f(pa[i], pb[i]);
    } else {
      const std::size_t inner = pb.size();
      for (std::size_t i = 0; i < pa.size(); ++i) dst[i] = f(pa[i], pb[i % inner]);
    }
    rec.value = std::move(out);
  };

  switch (rec.kind) {
    case OpKind::Parameter:
    case OpKind::Input:
    case OpKind::Constant:
      return;
    case OpKind::MatMul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      if (a.rank() == 0 || b.rank() == 0) fail(id, "matmul of a scalar");
      const auto da = lhs_dims(a);
      const auto db = rhs_dims(b);
      if (da.cols != db.rows) {
        fail(id, "inner dimensions differ: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
      }
      Tensor::Shape s;
      if (a.rank() == 2) s.push_back(da.rows);
      if (b.rank() == 2) s.push_back(db.cols);
      Tensor out(s);
      as_matrix(out, da.rows, db.cols).noalias() =
          as_matrix(a, da.rows, da.cols) * as_matrix(b, db.rows, db.cols);
      rec.value = std::move(out);
      return;
    }
    case OpKind::Transpose: {
      const Tensor& a = in(0);
      if (a.rank() != 2) fail(id, "transpose expects a matrix, got " + shape_string(a.shape()));
      Tensor out({a.shape()[1], a.shape()[0]});
      as_matrix(out, a.shape()[1], a.shape()[0]) = as_matrix(a, a.shape()[0], a.shape()[1]).transpose();
      rec.value = std::move(out);
      return;
    }
    case OpKind::Reshape: {
      const Tensor& a = in(0);
      if (shape_numel(rec.shape_arg) != a.size()) {
        fail(id, "cannot reshape " + shape_string(a.shape()) + " to " + shape_string(rec.shape_arg));
      }
      rec.value = a.reshaped(rec.shape_arg);
      return;
    }
    case OpKind::Add: return binary([](double x, double y) { return x + y; });
    case OpKind::Sub: return binary([](double x, double y) { return x - y; });
    case OpKind::Mul: return binary([](double x, double y) { return x * y; });
    case OpKind::Scale: {
      const double c = rec.c0;
      return pointwise([c](double x) { return c * x; });
    }
    case OpKind::Shift: {
      const double c = rec.c0;
      return pointwise([c](double x) { return x + c; });
    }
    case OpKind::Sigmoid:
      return vectorized([](const auto& x) { return 1.0 / (1.0 + (-x.max(-700.0).min(700.0)).exp()); });
    case OpKind::Tanh:
      // tanh(x) = 1 - 2 / (exp(2x) + 1); the clamp keeps exp finite.
      return vectorized([](const auto& x) { return 1.0 - 2.0 / ((2.0 * x.max(-40.0).min(40.0)).exp() + 1.0); });
    case OpKind::Exp: return vectorized([](const auto& x) { return x.exp(); });
    case OpKind::Log: return pointwise([](double x) { return std::log(std::max(x, kLogFloor)); });
    case OpKind::LogSigmoid: return pointwise(log_sigmoid_value);
    case OpKind::Square: return pointwise([](double x) { return x * x; });
    case OpKind::Clamp: {
      const double lo = rec.c0;
      const double hi = rec.c1;
      return pointwise([lo, hi](double x) { return std::clamp(x, lo, hi); });
    }
    case OpKind::Sum:
    case OpKind::Mean: {
      const Tensor& a = in(0);
      double s = 0.0;
      for (double v : a.data()) s += v;
      if (rec.kind == OpKind::Mean) {
        if (a.size() == 0) fail(id, "mean of an empty tensor");
        s /= static_cast<double>(a.size());
      }
      rec.value = Tensor::scalar(s);
      return;
    }
    case OpKind::SumCols: {
      const Tensor& a = in(0);
      if (a.rank() != 2) fail(id, "sum_cols expects a matrix, got " + shape_string(a.shape()));
      Tensor out({a.rows()});
      for (std::size_t r = 0; r < a.rows(); ++r) {
        double s = 0.0;
        for (double v : a.row(r)) s += v;
        out[r] = s;
      }
      rec.value = std::move(out);
      return;
    }
    case OpKind::LogSumExpCols: {
      const Tensor& a = in(0);
      if (a.rank() != 2 || a.cols() == 0) {
        fail(id, "logsumexp_cols expects a non-empty matrix, got " + shape_string(a.shape()));
      }
      Tensor out({a.rows()});
      for (std::size_t r = 0; r < a.rows(); ++r) {
        auto row = a.row(r);
        const double m = *std::max_element(row.begin(), row.end());
        if (std::isinf(m)) {
          out[r] = m;
          continue;
        }
        double s = 0.0;
        for (double v : row) s += std::exp(v - m);
        out[r] = m + std::log(s);
      }
      rec.value = std::move(out);
      return;
    }
    case OpKind::Concat: {
      const Tensor& first = in(0);
      const bool matrix = first.rank() == 2;
      if (first.rank() == 0) fail(id, "concat of scalars");
      const std::size_t rows = matrix ? first.rows() : 1;
      std::size_t total = 0;
      for (std::size_t k = 0; k < rec.inputs.size(); ++k) {
        const Tensor& p = in(k);
        if (p.rank() != first.rank() || (matrix && p.rows() != rows)) {
          fail(id, "concat operands disagree: " + shape_string(first.shape()) + " vs " +
                       shape_string(p.shape()));
        }
        total += matrix ? p.cols() : p.size();
      }
      Tensor out(matrix ? Tensor::Shape{rows, total} : Tensor::Shape{total});
      std::size_t offset = 0;
      for (std::size_t k = 0; k < rec.inputs.size(); ++k) {
        const Tensor& p = in(k);
        const std::size_t w = matrix ? p.cols() : p.size();
        for (std::size_t r = 0; r < rows; ++r) {
          std::copy_n(p.data().begin() + static_cast<std::ptrdiff_t>(r * w), w,
                      out.data().begin() + static_cast<std::ptrdiff_t>(r * total + offset));
        }
        offset += w;
      }
      rec.value = std::move(out);
      return;
    }
    case OpKind::StopGradient:
      rec.value = in(0);
      return;
  }
}

ParamMap Graph::backward(Node output) {
  check(output);
  for (std::uint32_t id = 0; id <= output.id; ++id) {
    if (!nodes_[id].has_value) fail(id, "backward called before forward");
  }
  const Tensor& out_value = value(output);
  if (out_value.rank() != 0) {
    fail(output.id, "backward needs a scalar output, got " + shape_string(out_value.shape()));
  }

  std::vector<std::optional<Tensor>> grads(output.id + 1);
  grads[output.id] = Tensor::scalar(1.0);
  for (std::uint32_t id = output.id + 1; id-- > 0;) {
    if (!grads[id] || !nodes_[id].requires_grad || nodes_[id].inputs.empty()) continue;
    accumulate_grads(id, *grads[id], grads);
    // Intermediate gradients are dead once propagated.
    if (nodes_[id].kind != OpKind::Parameter) grads[id].reset();
  }

  ParamMap result;
  for (const auto& [name, id] : leaves_by_name_) {
    const auto& rec = nodes_[id];
    if (rec.kind != OpKind::Parameter) continue;
    if (id < grads.size() && grads[id]) {
      result.emplace(name, std::move(*grads[id]));
    } else {
      result.emplace(name, Tensor(value(Node{id}).shape()));
    }
  }
  return result;
}

void Graph::accumulate_grads(std::uint32_t id, const Tensor& g,
                             std::vector<std::optional<Tensor>>& grads) {
  const auto& rec = nodes_[id];
  auto in = [&](std::size_t k) -> const Tensor& { return value(Node{rec.inputs[k]}); };
  auto wants = [&](std::size_t k) { return nodes_[rec.inputs[k]].requires_grad; };
  auto slot = [&](std::size_t k) -> Tensor& {
    auto& s = grads[rec.inputs[k]];
    if (!s) s = Tensor(in(k).shape());
    return *s;
  };
  const Tensor& y = value(Node{id});
  auto gd = g.data();

  // d(input k) += g * f'(x)
  auto pointwise_grad = [&](auto deriv) {
    if (!wants(0)) return;
    auto x = in(0).data();
    auto yv = y.data();
    auto dst = slot(0).data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += gd[i] * deriv(x[i], yv[i]);
  };

  // Adds `scaled(i)` into operand k, reducing over rows when it was broadcast.
  auto binary_grad = [&](std::size_t k, auto scaled) {
    if (!wants(k)) return;
    auto dst = slot(k).data();
    if (dst.size() == gd.size()) {
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += scaled(i);
    } else {
      const std::size_t inner = dst.size();
      for (std::size_t i = 0; i < gd.size(); ++i) dst[i % inner] += scaled(i);
    }
  };

  switch (rec.kind) {
    case OpKind::Parameter:
    case OpKind::Input:
    case OpKind::Constant:
    case OpKind::StopGradient:
      return;
    case OpKind::MatMul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      const auto da = lhs_dims(a);
      const auto db = rhs_dims(b);
      auto gm = as_matrix(g, da.rows, db.cols);
      if (wants(0)) {
        as_matrix(slot(0), da.rows, da.cols).noalias() += gm * as_matrix(b, db.rows, db.cols).transpose();
      }
      if (wants(1)) {
        as_matrix(slot(1), db.rows, db.cols).noalias() += as_matrix(a, da.rows, da.cols).transpose() * gm;
      }
      return;
    }
    case OpKind::Transpose: {
      if (!wants(0)) return;
      const auto r = y.shape()[0];
      const auto c = y.shape()[1];
      as_matrix(slot(0), c, r) += as_matrix(g, r, c).transpose();
      return;
    }
    case OpKind::Reshape: {
      if (!wants(0)) return;
      auto dst = slot(0).data();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += gd[i];
      return;
    }
    case OpKind::Add:
      binary_grad(0, [&](std::size_t i) { return gd[i]; });
      binary_grad(1, [&](std::size_t i) { return gd[i]; });
      return;
    case OpKind::Sub:
      binary_grad(0, [&](std::size_t i) { return gd[i]; });
      binary_grad(1, [&](std::size_t i) { return -gd[i]; });
      return;
    case OpKind::Mul: {
      auto a = in(0).data();
      auto b = in(1).data();
      const std::size_t nb = b.size();
      const bool same = a.size() == nb;
      binary_grad(0, [&](std::size_t i) { return gd[i] * b[same ? i : i % nb]; });
      binary_grad(1, [&](std::size_t i) { return gd[i] * a[i]; });
      return;
    }
    case OpKind::Scale: {
      const double c = rec.c0;
      return pointwise_grad([c](double, double) { return c; });
    }
    case OpKind::Shift: return pointwise_grad([](double, double) { return 1.0; });
    case OpKind::Sigmoid: return pointwise_grad([](double, double s) { return s * (1.0 - s); });
    case OpKind::Tanh: return pointwise_grad([](double, double t) { return 1.0 - t * t; });
    case OpKind::Exp: return pointwise_grad([](double, double e) { return e; });
    case OpKind::Log:
      return pointwise_grad([](double x, double) { return x > kLogFloor ? 1.0 / x : 0.0; });
    case OpKind::LogSigmoid: return pointwise_grad([](double x, double) { return stable_sigmoid(-x); });
    case OpKind::Square: return pointwise_grad([](double x, double) { return 2.0 * x; });
    case OpKind::Clamp: {
      const double lo = rec.c0;
      const double hi = rec.c1;
      return pointwise_grad([lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
    }
    case OpKind::Sum:
    case OpKind::Mean: {
      if (!wants(0)) return;
      auto dst = slot(0).data();
      const double scale = rec.kind == OpKind::Mean ? 1.0 / static_cast<double>(dst.size()) : 1.0;
      const double v = gd[0] * scale;
      for (double& d : dst) d += v;
      return;
    }
    case OpKind::SumCols: {
      if (!wants(0)) return;
      Tensor& dst = slot(0);
      for (std::size_t r = 0; r < dst.rows(); ++r) {
        for (double& d : dst.row(r)) d += gd[r];
      }
      return;
    }
    case OpKind::LogSumExpCols: {
      if (!wants(0)) return;
      const Tensor& a = in(0);
      Tensor& dst = slot(0);
      for (std::size_t r = 0; r < a.rows(); ++r) {
        if (std::isinf(y[r])) continue;
        auto src = a.row(r);
        auto d = dst.row(r);
        for (std::size_t c = 0; c < src.size(); ++c) d[c] += gd[r] * std::exp(src[c] - y[r]);
      }
      return;
    }
    case OpKind::Concat: {
      const bool matrix = y.rank() == 2;
      const std::size_t rows = matrix ? y.rows() : 1;
      const std::size_t total = matrix ? y.cols() : y.size();
      std::size_t offset = 0;
      for (std::size_t k = 0; k < rec.inputs.size(); ++k) {
        const Tensor& p = in(k);
        const std::size_t w = matrix ? p.cols() : p.size();
        if (wants(k)) {
          auto dst = slot(k).data();
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < w; ++c) dst[r * w + c] += gd[r * total + offset + c];
          }
        }
        offset += w;
      }
      return;
    }
  }
}

}  // namespace ipvae::diff

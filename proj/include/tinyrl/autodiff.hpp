#pragma once

// Static reverse-mode autodiff graph over dense tensors.
//
// A Graph is built once (nodes are appended in topological order), evaluated
// with forward() against named inputs, and differentiated with backward().
// Parameter leaves reference external tensors that must outlive the graph's
// forward/backward calls. A Graph is single-writer.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tinyrl/tensor.hpp"

namespace tinyrl {

enum class Precision : std::uint8_t { f64, f32 };

const char* precision_name(Precision p);
Precision parse_precision(const std::string& name);

struct NodeId {
  std::int32_t index = -1;
  bool valid() const { return index >= 0; }
  friend bool operator==(NodeId, NodeId) = default;
};

enum class OpKind : std::uint8_t {
  input,
  parameter,
  constant,
  add,
  sub,
  mul,
  scale,
  add_scalar,
  exp,
  log,
  silu,
  clip,
  minimum,
  stop_gradient,
  trust_region_mask,
  sum,
  mean,
  matmul,
  add_row_vector,
  gather_rows,
  slice_rows,
  gather_elements,
  rms_norm,
  softmax,
  log_softmax,
  linear_attention,
  softmax_attention,
  cast,
};

const char* op_name(OpKind kind);

struct ParameterGradient {
  std::string name;
  Tensor grad;
};

class Graph {
 public:
  Graph() = default;

  // Leaves. Leaves carry no precision; at an f32 node their values are rounded on read.
  NodeId input(std::string name);
  // Parameters are read by reference; `value` must outlive the graph.
  NodeId parameter(std::string name, const Tensor& value);
  NodeId constant(Tensor value);

  // Elementwise; a single-element operand broadcasts against the other.
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId scale(NodeId a, double factor);
  NodeId add_scalar(NodeId a, double offset);
  NodeId exp(NodeId a);
  NodeId log(NodeId a);
  NodeId silu(NodeId a);
  // Gradient passes where lo <= x <= hi and is zero outside.
  NodeId clip(NodeId a, double lo, double hi);
  // Gradient goes to the smaller operand (to `a` on ties).
  NodeId minimum(NodeId a, NodeId b);
  NodeId stop_gradient(NodeId a);
  // Elementwise 0/1 token mask of the PPO trust region applied to importance
  // ratios: 0 where (advantage > 0 and r > 1 + eps_high) or
  // (advantage < 0 and r < 1 - eps_low). Carries no gradient.
  NodeId trust_region_mask(NodeId ratio, double advantage, double eps_low, double eps_high);

  NodeId sum(NodeId a);
  NodeId mean(NodeId a);

  // [m x k] * [k x n]
  NodeId matmul(NodeId a, NodeId b);
  // [m x n] + [n] broadcast over rows
  NodeId add_row_vector(NodeId x, NodeId bias);
  // Rows of a [V x d] table selected by index -> [L x d]
  NodeId gather_rows(NodeId table, std::vector<std::size_t> rows);
  NodeId slice_rows(NodeId x, std::size_t begin, std::size_t count);
  // x[rows[i], cols[i]] -> vector
  NodeId gather_elements(NodeId x, std::vector<std::size_t> rows, std::vector<std::size_t> cols);
  NodeId rms_norm(NodeId x, NodeId gain, double eps);
  NodeId softmax(NodeId x);
  NodeId log_softmax(NodeId x);
  // Multi-head decayed linear attention on [L x H*dh] inputs, one decay per head.
  NodeId linear_attention(NodeId q, NodeId k, NodeId v, std::vector<double> decays);
  // Multi-head causal softmax attention on [L x H*dh] inputs.
  NodeId softmax_attention(NodeId q, NodeId k, NodeId v, std::size_t n_heads);
  // Explicit precision boundary.
  NodeId cast(NodeId a, Precision target);

  // Precision applied to subsequently created non-leaf nodes.
  void set_precision(Precision p) { precision_ = p; }
  Precision precision() const { return precision_; }

  void mark_output(const std::string& name, NodeId id);

  // Evaluates every node. Throws ShapeError on inconsistent shapes,
  // ValueError on unbound inputs and NumericError on non-finite values.
  std::map<std::string, Tensor> forward(const std::map<std::string, Tensor>& inputs = {});
  // Gradients of a scalar output with respect to every parameter leaf, in
  // parameter creation order.
  std::vector<ParameterGradient> backward(NodeId output);

  const Tensor& value(NodeId id) const;
  // Gradient accumulated at a node by the last backward() call.
  const Tensor& grad(NodeId id) const;
  std::size_t node_count() const { return nodes_.size(); }
  bool has_forward() const { return forward_done_; }

 private:
  struct Node {
    OpKind kind;
    Precision precision = Precision::f64;
    std::int32_t a = -1, b = -1, c = -1;
    double p0 = 0.0, p1 = 0.0, p2 = 0.0;
    std::vector<std::size_t> idx0, idx1;
    std::vector<double> attr;  // decays
    std::string name;
    const Tensor* external = nullptr;
    bool needs_grad = false;
    bool leaf = false;
    Tensor value;
    Tensor grad;
    std::vector<double> cache;
  };

  NodeId push(Node node);
  const Node& at(NodeId id) const;
  void check_precision(const Node& parent, OpKind kind) const;
  void eval(Node& n);
  void propagate(Node& n);

  std::vector<Node> nodes_;
  std::vector<std::int32_t> parameters_;
  std::map<std::string, std::int32_t> outputs_;
  Precision precision_ = Precision::f64;
  bool forward_done_ = false;
};

}  // namespace tinyrl

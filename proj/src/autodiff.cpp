#include "tinyrl/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "tinyrl/error.hpp"
#include "tinyrl/kernels.hpp"

namespace tinyrl {

const char* precision_name(Precision p) { return p == Precision::f32 ? "f32" : "f64"; }

Precision parse_precision(const std::string& name) {
  if (name == "f64" || name == "64" || name == "fp64") return Precision::f64;
  if (name == "f32" || name == "32" || name == "fp32") return Precision::f32;
  throw ValueError("unknown precision '" + name + "' (expected f32 or f64)");
}

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::input: return "input";
    case OpKind::parameter: return "parameter";
    case OpKind::constant: return "constant";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::scale: return "scale";
    case OpKind::add_scalar: return "add_scalar";
    case OpKind::exp: return "exp";
    case OpKind::log: return "log";
    case OpKind::silu: return "silu";
    case OpKind::clip: return "clip";
    case OpKind::minimum: return "minimum";
    case OpKind::stop_gradient: return "stop_gradient";
    case OpKind::trust_region_mask: return "trust_region_mask";
    case OpKind::sum: return "sum";
    case OpKind::mean: return "mean";
    case OpKind::matmul: return "matmul";
    case OpKind::add_row_vector: return "add_row_vector";
    case OpKind::gather_rows: return "gather_rows";
    case OpKind::slice_rows: return "slice_rows";
    case OpKind::gather_elements: return "gather_elements";
    case OpKind::rms_norm: return "rms_norm";
    case OpKind::softmax: return "softmax";
    case OpKind::log_softmax: return "log_softmax";
    case OpKind::linear_attention: return "linear_attention";
    case OpKind::softmax_attention: return "softmax_attention";
    case OpKind::cast: return "cast";
  }
  return "?";
}

namespace {

template <class T>
double round_to(double x) {
  return double(T(x));
}

double rounded(Precision p, double x) { return p == Precision::f32 ? round_to<float>(x) : x; }

void require_matrix(const Tensor& t, const char* op, const char* what) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": " + what + " must be a matrix, got " + shape_string(t.shape()));
  }
}

Shape broadcast_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return a.shape();
  if (b.size() == 1) return a.shape();
  if (a.size() == 1) return b.shape();
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_string(a.shape()) + " and " +
                   shape_string(b.shape()));
}

// Sum of grad entries routed to an operand that may have been broadcast.
void accumulate_broadcast(Tensor& target, const Tensor& g) {
  if (target.size() == g.size()) {
    for (std::size_t i = 0; i < g.size(); ++i) target[i] += g[i];
  } else {
    double s = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) s += g[i];
    target[0] += s;
  }
}

}  // namespace

NodeId Graph::push(Node node) {
  forward_done_ = false;
  nodes_.push_back(std::move(node));
  return NodeId{static_cast<std::int32_t>(nodes_.size() - 1)};
}

const Graph::Node& Graph::at(NodeId id) const {
  if (id.index < 0 || static_cast<std::size_t>(id.index) >= nodes_.size()) {
    throw ValueError("invalid node id " + std::to_string(id.index));
  }
  return nodes_[id.index];
}

void Graph::check_precision(const Node& parent, OpKind kind) const {
  if (parent.leaf || kind == OpKind::cast) return;
  if (parent.precision != precision_) {
    throw ValueError(std::string("precision mismatch at ") + op_name(kind) + ": operand is " +
                     precision_name(parent.precision) + " but region is " + precision_name(precision_) +
                     "; insert an explicit cast");
  }
}

NodeId Graph::input(std::string name) {
  Node n{};
  n.kind = OpKind::input;
  n.leaf = true;
  n.name = std::move(name);
  return push(std::move(n));
}

NodeId Graph::parameter(std::string name, const Tensor& value) {
  Node n{};
  n.kind = OpKind::parameter;
  n.leaf = true;
  n.needs_grad = true;
  n.name = std::move(name);
  n.external = &value;
  auto id = push(std::move(n));
  parameters_.push_back(id.index);
  return id;
}

NodeId Graph::constant(Tensor value) {
  Node n{};
  n.kind = OpKind::constant;
  n.leaf = true;
  n.value = std::move(value);
  return push(std::move(n));
}

#define TINYRL_MAKE_NODE(KIND, A, B, C)                                                                 \
  Node n{};                                                                                              \
  n.kind = KIND;                                                                                         \
  n.precision = precision_;                                                                               \
  {                                                                                                      \
    const NodeId ids[3] = {A, B, C};                                                                     \
    std::int32_t* slots[3] = {&n.a, &n.b, &n.c};                                                         \
    for (int s = 0; s < 3; ++s) {                                                                        \
      if (!ids[s].valid()) continue;                                                                     \
      const Node& parent = at(ids[s]);                                                                   \
      check_precision(parent, KIND);                                                                     \
      *slots[s] = ids[s].index;                                                                          \
      n.needs_grad = n.needs_grad || parent.needs_grad;                                                  \
    }                                                                                                    \
  }

NodeId Graph::add(NodeId a, NodeId b) {
  TINYRL_MAKE_NODE(OpKind::add, a, b, NodeId{});
  return push(std::move(n));
}
NodeId Graph::sub(NodeId a, NodeId b) {
  TINYRL_MAKE_NODE(OpKind::sub, a, b, NodeId{});
  return push(std::move(n));
}
NodeId Graph::mul(NodeId a, NodeId b) {
  TINYRL_MAKE_NODE(OpKind::mul, a, b, NodeId{});
  return push(std::move(n));
}
NodeId Graph::scale(NodeId a, double factor) {
  TINYRL_MAKE_NODE(OpKind::scale, a, NodeId{}, NodeId{});
  n.p0 = factor;
  return push(std::move(n));
}
NodeId Graph::add_scalar(NodeId a, double offset) {
  TINYRL_MAKE_NODE(OpKind::add_scalar, a, NodeId{}, NodeId{});
  n.p0 = offset;
  return push(std::move(n));
}
NodeId Graph::exp(NodeId a) {
  TINYRL_MAKE_NODE(OpKind::exp, a, NodeId{}, NodeId{});
  return push(std::move(n));
}
NodeId Graph::log(NodeId a) {
  TINYRL_MAKE_NODE(OpKind::log, a, NodeId{}, NodeId{});
  return push(std::move(n));
}
NodeId Graph::silu(NodeId a) {
  TINYRL_MAKE_NODE(OpKind::silu, a, NodeId{}, NodeId{});
  return push(std::move(n));
}
NodeId Graph::clip(NodeId a, double lo, double hi) {
  if (!(lo <= hi)) throw ValueError("clip: lower bound exceeds upper bound");
  TINYRL_MAKE_NODE(OpKind::clip, a, NodeId{}, NodeId{});
  n.p0 = lo;
  n.p1 = hi;
  return push(std::move(n));
}
NodeId Graph::minimum(NodeId a, NodeId b) {
  TINYRL_MAKE_NODE(OpKind::minimum, a, b, NodeId{});
  return push(std::move(n));
}
NodeId Graph::stop_gradient(NodeId a) {
  TINYRL_MAKE_NODE(OpKind::stop_gradient, a, NodeId{}, NodeId{});
  n.needs_grad = false;
  return push(std::move(n));
}
NodeId Graph::trust_region_mask(NodeId ratio, double advantage, double eps_low, double eps_high) {
  TINYRL_MAKE_NODE(OpKind::trust_region_mask, ratio, NodeId{}, NodeId{});
  n.needs_grad = false;
  n.p0 = advantage;
  n.p1 = eps_low;
  n.p2 = eps_high;
  return push(std::move(n));
}
NodeId Graph::sum(NodeId a) {
  TINYRL_MAKE_NODE(OpKind::sum, a, NodeId{}, NodeId{});
  return push(std::move(n));
}
NodeId Graph::mean(NodeId a) {
  TINYRL_MAKE_NODE(OpKind::mean, a, NodeId{}, NodeId{});
  return push(std::move(n));
}
NodeId Graph::matmul(NodeId a, NodeId b) {
  TINYRL_MAKE_NODE(OpKind::matmul, a, b, NodeId{});
  return push(std::move(n));
}
NodeId Graph::add_row_vector(NodeId x, NodeId bias) {
  TINYRL_MAKE_NODE(OpKind::add_row_vector, x, bias, NodeId{});
  return push(std::move(n));
}
NodeId Graph::gather_rows(NodeId table, std::vector<std::size_t> rows) {
  if (rows.empty()) throw ValueError("gather_rows: empty index list");
  TINYRL_MAKE_NODE(OpKind::gather_rows, table, NodeId{}, NodeId{});
  n.idx0 = std::move(rows);
  return push(std::move(n));
}
NodeId Graph::slice_rows(NodeId x, std::size_t begin, std::size_t count) {
  if (count == 0) throw ValueError("slice_rows: empty slice");
  TINYRL_MAKE_NODE(OpKind::slice_rows, x, NodeId{}, NodeId{});
  n.idx0 = {begin, count};
  return push(std::move(n));
}
NodeId Graph::gather_elements(NodeId x, std::vector<std::size_t> rows, std::vector<std::size_t> cols) {
  if (rows.size() != cols.size() || rows.empty()) {
    throw ValueError("gather_elements: row and column index lists must be non-empty and equal length");
  }
  TINYRL_MAKE_NODE(OpKind::gather_elements, x, NodeId{}, NodeId{});
  n.idx0 = std::move(rows);
  n.idx1 = std::move(cols);
  return push(std::move(n));
}
NodeId Graph::rms_norm(NodeId x, NodeId gain, double eps) {
  TINYRL_MAKE_NODE(OpKind::rms_norm, x, gain, NodeId{});
  n.p0 = eps;
  return push(std::move(n));
}
NodeId Graph::softmax(NodeId x) {
  TINYRL_MAKE_NODE(OpKind::softmax, x, NodeId{}, NodeId{});
  return push(std::move(n));
}
NodeId Graph::log_softmax(NodeId x) {
  TINYRL_MAKE_NODE(OpKind::log_softmax, x, NodeId{}, NodeId{});
  return push(std::move(n));
}
NodeId Graph::linear_attention(NodeId q, NodeId k, NodeId v, std::vector<double> decays) {
  if (decays.empty()) throw ValueError("linear_attention: need at least one head");
  for (double d : decays) {
    if (!(d > 0.0 && d <= 1.0)) throw ValueError("linear_attention: decay must lie in (0, 1]");
  }
  if (precision_ != Precision::f64) throw ValueError("linear_attention: only f64 evaluation is supported");
  TINYRL_MAKE_NODE(OpKind::linear_attention, q, k, v);
  n.attr = std::move(decays);
  return push(std::move(n));
}
NodeId Graph::softmax_attention(NodeId q, NodeId k, NodeId v, std::size_t n_heads) {
  if (n_heads == 0) throw ValueError("softmax_attention: need at least one head");
  if (precision_ != Precision::f64) throw ValueError("softmax_attention: only f64 evaluation is supported");
  TINYRL_MAKE_NODE(OpKind::softmax_attention, q, k, v);
  n.idx0 = {n_heads};
  return push(std::move(n));
}
NodeId Graph::cast(NodeId a, Precision target) {
  TINYRL_MAKE_NODE(OpKind::cast, a, NodeId{}, NodeId{});
  n.precision = target;
  return push(std::move(n));
}

#undef TINYRL_MAKE_NODE

void Graph::mark_output(const std::string& name, NodeId id) {
  at(id);
  outputs_[name] = id.index;
}

const Tensor& Graph::value(NodeId id) const {
  const Node& n = at(id);
  if (n.kind == OpKind::parameter) return *n.external;
  if (!forward_done_ && n.kind != OpKind::constant) throw StateError("value() requested before forward()");
  return n.value;
}

const Tensor& Graph::grad(NodeId id) const {
  const Node& n = at(id);
  if (n.grad.size() != (n.kind == OpKind::parameter ? n.external->size() : n.value.size()) || !n.needs_grad) {
    throw StateError("no gradient recorded for node " + std::to_string(id.index));
  }
  return n.grad;
}

std::map<std::string, Tensor> Graph::forward(const std::map<std::string, Tensor>& inputs) {
  forward_done_ = false;
  for (auto& n : nodes_) {
    if (n.kind == OpKind::input) {
      auto it = inputs.find(n.name);
      if (it == inputs.end()) throw ValueError("forward: input '" + n.name + "' is not bound");
      n.value = it->second;
    }
  }
  for (auto& n : nodes_) {
    if (n.leaf) {
      const Tensor& v = n.kind == OpKind::parameter ? *n.external : n.value;
      if (!v.all_finite()) throw NumericError("forward: leaf '" + n.name + "' holds a non-finite value");
      continue;
    }
    eval(n);
    if (!n.value.all_finite()) {
      throw NumericError(std::string("forward: non-finite value produced by ") + op_name(n.kind));
    }
  }
  forward_done_ = true;
  std::map<std::string, Tensor> out;
  for (const auto& [name, idx] : outputs_) out.emplace(name, nodes_[idx].value);
  return out;
}

namespace {

template <class T>
void eval_elementwise_binary(OpKind kind, const Tensor& a, const Tensor& b, Tensor& out) {
  out = Tensor(broadcast_shape(a, b, op_name(kind)));
  const bool sa = a.size() == 1 && out.size() != 1;
  const bool sb = b.size() == 1 && out.size() != 1;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T x = T(a[sa ? 0 : i]);
    const T y = T(b[sb ? 0 : i]);
    T r{};
    switch (kind) {
      case OpKind::add: r = x + y; break;
      case OpKind::sub: r = x - y; break;
      case OpKind::mul: r = x * y; break;
      case OpKind::minimum: r = std::min(x, y); break;
      default: break;
    }
    out[i] = double(r);
  }
}

template <class T>
void eval_unary(OpKind kind, const Tensor& a, double p0, double p1, Tensor& out) {
  out = Tensor(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const T x = T(a[i]);
    T r{};
    switch (kind) {
      case OpKind::scale: r = x * T(p0); break;
      case OpKind::add_scalar: r = x + T(p0); break;
      case OpKind::exp: r = std::exp(x); break;
      case OpKind::log: r = std::log(x); break;
      case OpKind::silu: r = kernels::silu(x); break;
      case OpKind::clip: r = std::clamp(x, T(p0), T(p1)); break;
      default: break;
    }
    out[i] = double(r);
  }
}

template <class T>
void eval_matmul(const Tensor& a, const Tensor& b, Tensor& out) {
  require_matrix(a, "matmul", "left operand");
  require_matrix(b, "matmul", "right operand");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw ShapeError("matmul: inner dimensions differ: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  out = Tensor(Shape{m, n});
  for (std::size_t i = 0; i < m; ++i) kernels::vec_mat<T>(&a[i * k], b.data().data(), k, n, &out[i * n]);
}

template <class T>
void eval_add_row_vector(const Tensor& x, const Tensor& bias, Tensor& out) {
  require_matrix(x, "add_row_vector", "input");
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  if (bias.size() != n) throw ShapeError("add_row_vector: bias length does not match columns");
  out = Tensor(x.shape());
  for (std::size_t i = 0; i < m; ++i) kernels::add_vec<T>(&x[i * n], bias.data().data(), n, &out[i * n]);
}

template <class T>
void eval_rowwise(OpKind kind, const Tensor& x, Tensor& out) {
  const std::size_t n = x.cols(), m = x.size() / n;
  out = Tensor(x.shape());
  for (std::size_t i = 0; i < m; ++i) {
    if (kind == OpKind::softmax) {
      kernels::softmax_row<T>(&x[i * n], n, &out[i * n]);
    } else {
      kernels::log_softmax_row<T>(&x[i * n], n, &out[i * n]);
    }
  }
}

template <class T>
void eval_rms_norm(const Tensor& x, const Tensor& gain, double eps, Tensor& out) {
  const std::size_t n = x.cols(), m = x.size() / n;
  if (gain.size() != n) throw ShapeError("rms_norm: gain length does not match row width");
  out = Tensor(x.shape());
  for (std::size_t i = 0; i < m; ++i) kernels::rms_norm_row<T>(&x[i * n], gain.data().data(), n, eps, &out[i * n]);
}

void check_attention_shapes(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads, const char* op) {
  require_matrix(q, op, "queries");
  require_matrix(k, op, "keys");
  require_matrix(v, op, "values");
  if (q.shape() != k.shape() || q.shape() != v.shape()) {
    throw ShapeError(std::string(op) + ": query/key/value shapes differ");
  }
  if (q.shape()[1] % heads != 0) throw ShapeError(std::string(op) + ": width not divisible by head count");
}

}  // namespace

void Graph::eval(Node& n) {
  auto val = [this](std::int32_t idx) -> const Tensor& {
    const Node& p = nodes_[idx];
    return p.kind == OpKind::parameter ? *p.external : p.value;
  };
  const bool f32 = n.precision == Precision::f32;
  switch (n.kind) {
    case OpKind::add:
    case OpKind::sub:
    case OpKind::mul:
    case OpKind::minimum:
      if (f32) {
        eval_elementwise_binary<float>(n.kind, val(n.a), val(n.b), n.value);
      } else {
        eval_elementwise_binary<double>(n.kind, val(n.a), val(n.b), n.value);
      }
      break;
    case OpKind::scale:
    case OpKind::add_scalar:
    case OpKind::exp:
    case OpKind::log:
    case OpKind::silu:
    case OpKind::clip:
      if (f32) {
        eval_unary<float>(n.kind, val(n.a), n.p0, n.p1, n.value);
      } else {
        eval_unary<double>(n.kind, val(n.a), n.p0, n.p1, n.value);
      }
      break;
    case OpKind::stop_gradient: {
      const Tensor& a = val(n.a);
      n.value = a;
      if (f32) {
        for (auto& x : n.value.values()) x = round_to<float>(x);
      }
      break;
    }
    case OpKind::trust_region_mask: {
      const Tensor& r = val(n.a);
      n.value = Tensor(r.shape());
      for (std::size_t i = 0; i < r.size(); ++i) {
        const bool drop = (n.p0 > 0.0 && r[i] > 1.0 + n.p2) || (n.p0 < 0.0 && r[i] < 1.0 - n.p1);
        n.value[i] = drop ? 0.0 : 1.0;
      }
      break;
    }
    case OpKind::sum:
    case OpKind::mean: {
      const Tensor& a = val(n.a);
      double s = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) s = rounded(n.precision, s + a[i]);
      if (n.kind == OpKind::mean) s = rounded(n.precision, s / double(a.size()));
      n.value = Tensor::scalar(s);
      break;
    }
    case OpKind::matmul:
      if (f32) {
        eval_matmul<float>(val(n.a), val(n.b), n.value);
      } else {
        eval_matmul<double>(val(n.a), val(n.b), n.value);
      }
      break;
    case OpKind::add_row_vector:
      if (f32) {
        eval_add_row_vector<float>(val(n.a), val(n.b), n.value);
      } else {
        eval_add_row_vector<double>(val(n.a), val(n.b), n.value);
      }
      break;
    case OpKind::gather_rows: {
      const Tensor& t = val(n.a);
      require_matrix(t, "gather_rows", "table");
      const std::size_t d = t.shape()[1];
      n.value = Tensor(Shape{n.idx0.size(), d});
      for (std::size_t i = 0; i < n.idx0.size(); ++i) {
        if (n.idx0[i] >= t.shape()[0]) throw ShapeError("gather_rows: index out of range");
        for (std::size_t j = 0; j < d; ++j) n.value[i * d + j] = rounded(n.precision, t[n.idx0[i] * d + j]);
      }
      break;
    }
    case OpKind::slice_rows: {
      const Tensor& t = val(n.a);
      require_matrix(t, "slice_rows", "input");
      const std::size_t begin = n.idx0[0], count = n.idx0[1], d = t.shape()[1];
      if (begin + count > t.shape()[0]) throw ShapeError("slice_rows: slice exceeds row count");
      n.value = Tensor(Shape{count, d});
      for (std::size_t i = 0; i < count * d; ++i) n.value[i] = rounded(n.precision, t[begin * d + i]);
      break;
    }
    case OpKind::gather_elements: {
      const Tensor& t = val(n.a);
      require_matrix(t, "gather_elements", "input");
      n.value = Tensor(Shape{n.idx0.size()});
      for (std::size_t i = 0; i < n.idx0.size(); ++i) {
        if (n.idx0[i] >= t.shape()[0] || n.idx1[i] >= t.shape()[1]) {
          throw ShapeError("gather_elements: index out of range");
        }
        n.value[i] = rounded(n.precision, t.at(n.idx0[i], n.idx1[i]));
      }
      break;
    }
    case OpKind::rms_norm:
      if (f32) {
        eval_rms_norm<float>(val(n.a), val(n.b), n.p0, n.value);
      } else {
        eval_rms_norm<double>(val(n.a), val(n.b), n.p0, n.value);
      }
      break;
    case OpKind::softmax:
    case OpKind::log_softmax:
      if (f32) {
        eval_rowwise<float>(n.kind, val(n.a), n.value);
      } else {
        eval_rowwise<double>(n.kind, val(n.a), n.value);
      }
      break;
    case OpKind::linear_attention: {
      const Tensor &q = val(n.a), &k = val(n.b), &v = val(n.c);
      const std::size_t heads = n.attr.size();
      check_attention_shapes(q, k, v, heads, "linear_attention");
      const std::size_t len = q.shape()[0], width = q.shape()[1], dh = width / heads;
      n.value = Tensor(q.shape());
      std::vector<double> state(dh * dh);
      for (std::size_t h = 0; h < heads; ++h) {
        std::fill(state.begin(), state.end(), 0.0);
        for (std::size_t t = 0; t < len; ++t) {
          const std::size_t off = t * width + h * dh;
          kernels::linear_attention_step(&q[off], &k[off], &v[off], dh, dh, n.attr[h], state.data(),
                                         &n.value[off]);
        }
      }
      break;
    }
    case OpKind::softmax_attention: {
      const Tensor &q = val(n.a), &k = val(n.b), &v = val(n.c);
      const std::size_t heads = n.idx0[0];
      check_attention_shapes(q, k, v, heads, "softmax_attention");
      const std::size_t len = q.shape()[0], width = q.shape()[1], dh = width / heads;
      const double scale = 1.0 / std::sqrt(double(dh));
      n.value = Tensor(q.shape());
      n.cache.assign(heads * len * len, 0.0);
      for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t t = 0; t < len; ++t) {
          kernels::softmax_attention_row(&q[t * width + h * dh], &k[h * dh], &v[h * dh], t + 1, width, dh, scale,
                                         &n.cache[(h * len + t) * len], &n.value[t * width + h * dh]);
        }
      }
      break;
    }
    case OpKind::cast: {
      n.value = val(n.a);
      if (f32) {
        for (auto& x : n.value.values()) x = round_to<float>(x);
      }
      break;
    }
    case OpKind::input:
    case OpKind::parameter:
    case OpKind::constant:
      break;
  }
}

std::vector<ParameterGradient> Graph::backward(NodeId output) {
  if (!forward_done_) throw StateError("backward() called before forward()");
  const Node& out = at(output);
  if (out.value.size() != 1) throw ShapeError("backward: output must be a scalar, got " + shape_string(out.value.shape()));

  for (std::int32_t i = 0; i <= output.index; ++i) {
    Node& n = nodes_[i];
    if (!n.needs_grad) continue;
    const Tensor& v = n.kind == OpKind::parameter ? *n.external : n.value;
    if (n.grad.shape() != v.shape()) {
      n.grad = Tensor(v.shape());
    } else {
      n.grad.fill(0.0);
    }
  }
  for (std::size_t i = output.index + 1; i < nodes_.size(); ++i) nodes_[i].grad = Tensor();

  std::vector<ParameterGradient> result;
  if (out.needs_grad) {
    nodes_[output.index].grad[0] = 1.0;
    for (std::int32_t i = output.index; i >= 0; --i) {
      Node& n = nodes_[i];
      if (!n.needs_grad || n.leaf) continue;
      propagate(n);
    }
  }
  result.reserve(parameters_.size());
  for (auto idx : parameters_) {
    const Node& p = nodes_[idx];
    if (idx <= output.index && p.grad.shape() == p.external->shape()) {
      result.push_back({p.name, p.grad});
    } else {
      result.push_back({p.name, Tensor(p.external->shape())});
    }
  }
  return result;
}

void Graph::propagate(Node& n) {
  auto val = [this](std::int32_t idx) -> const Tensor& {
    const Node& p = nodes_[idx];
    return p.kind == OpKind::parameter ? *p.external : p.value;
  };
  auto wants = [this](std::int32_t idx) { return idx >= 0 && nodes_[idx].needs_grad; };
  const Tensor& g = n.grad;

  switch (n.kind) {
    case OpKind::add:
    case OpKind::sub: {
      if (wants(n.a)) accumulate_broadcast(nodes_[n.a].grad, g);
      if (wants(n.b)) {
        Tensor& gb = nodes_[n.b].grad;
        const double sign = n.kind == OpKind::sub ? -1.0 : 1.0;
        if (gb.size() == g.size()) {
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += sign * g[i];
        } else {
          double s = 0.0;
          for (std::size_t i = 0; i < g.size(); ++i) s += g[i];
          gb[0] += sign * s;
        }
      }
      break;
    }
    case OpKind::mul: {
      const Tensor &a = val(n.a), &b = val(n.b);
      const bool sa = a.size() == 1 && g.size() != 1;
      const bool sb = b.size() == 1 && g.size() != 1;
      if (wants(n.a)) {
        Tensor& ga = nodes_[n.a].grad;
        for (std::size_t i = 0; i < g.size(); ++i) ga[sa ? 0 : i] += g[i] * b[sb ? 0 : i];
      }
      if (wants(n.b)) {
        Tensor& gb = nodes_[n.b].grad;
        for (std::size_t i = 0; i < g.size(); ++i) gb[sb ? 0 : i] += g[i] * a[sa ? 0 : i];
      }
      break;
    }
    case OpKind::minimum: {
      const Tensor &a = val(n.a), &b = val(n.b);
      const bool sa = a.size() == 1 && g.size() != 1;
      const bool sb = b.size() == 1 && g.size() != 1;
      for (std::size_t i = 0; i < g.size(); ++i) {
        const bool take_a = a[sa ? 0 : i] <= b[sb ? 0 : i];
        const std::int32_t target = take_a ? n.a : n.b;
        if (wants(target)) nodes_[target].grad[(take_a ? sa : sb) ? 0 : i] += g[i];
      }
      break;
    }
    case OpKind::scale: {
      Tensor& ga = nodes_[n.a].grad;
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * n.p0;
      break;
    }
    case OpKind::add_scalar:
    case OpKind::cast: {
      Tensor& ga = nodes_[n.a].grad;
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      break;
    }
    case OpKind::exp: {
      Tensor& ga = nodes_[n.a].grad;
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * n.value[i];
      break;
    }
    case OpKind::log: {
      const Tensor& a = val(n.a);
      Tensor& ga = nodes_[n.a].grad;
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / a[i];
      break;
    }
    case OpKind::silu: {
      const Tensor& a = val(n.a);
      Tensor& ga = nodes_[n.a].grad;
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double s = 1.0 / (1.0 + std::exp(-a[i]));
        ga[i] += g[i] * (s + a[i] * s * (1.0 - s));
      }
      break;
    }
    case OpKind::clip: {
      const Tensor& a = val(n.a);
      Tensor& ga = nodes_[n.a].grad;
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (a[i] >= n.p0 && a[i] <= n.p1) ga[i] += g[i];
      }
      break;
    }
    case OpKind::sum:
    case OpKind::mean: {
      Tensor& ga = nodes_[n.a].grad;
      const double gi = n.kind == OpKind::mean ? g[0] / double(ga.size()) : g[0];
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gi;
      break;
    }
    case OpKind::matmul: {
      const Tensor &a = val(n.a), &b = val(n.b);
      const std::size_t m = a.shape()[0], k = a.shape()[1], cols = b.shape()[1];
      if (wants(n.a)) {
        Tensor& ga = nodes_[n.a].grad;
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            double acc = 0.0;
            for (std::size_t j = 0; j < cols; ++j) acc += g[i * cols + j] * b[p * cols + j];
            ga[i * k + p] += acc;
          }
        }
      }
      if (wants(n.b)) {
        Tensor& gb = nodes_[n.b].grad;
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            const double ap = a[i * k + p];
            if (ap == 0.0) continue;
            for (std::size_t j = 0; j < cols; ++j) gb[p * cols + j] += ap * g[i * cols + j];
          }
        }
      }
      break;
    }
    case OpKind::add_row_vector: {
      const std::size_t cols = g.cols(), m = g.size() / cols;
      if (wants(n.a)) {
        Tensor& ga = nodes_[n.a].grad;
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (wants(n.b)) {
        Tensor& gb = nodes_[n.b].grad;
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < cols; ++j) gb[j] += g[i * cols + j];
        }
      }
      break;
    }
    case OpKind::gather_rows: {
      Tensor& gt = nodes_[n.a].grad;
      const std::size_t d = gt.shape()[1];
      for (std::size_t i = 0; i < n.idx0.size(); ++i) {
        for (std::size_t j = 0; j < d; ++j) gt[n.idx0[i] * d + j] += g[i * d + j];
      }
      break;
    }
    case OpKind::slice_rows: {
      Tensor& gt = nodes_[n.a].grad;
      const std::size_t begin = n.idx0[0], d = gt.shape()[1];
      for (std::size_t i = 0; i < g.size(); ++i) gt[begin * d + i] += g[i];
      break;
    }
    case OpKind::gather_elements: {
      Tensor& gt = nodes_[n.a].grad;
      for (std::size_t i = 0; i < n.idx0.size(); ++i) gt.at(n.idx0[i], n.idx1[i]) += g[i];
      break;
    }
    case OpKind::rms_norm: {
      const Tensor &x = val(n.a), &gain = val(n.b);
      const std::size_t d = x.cols(), m = x.size() / d;
      for (std::size_t r = 0; r < m; ++r) {
        const double* xr = &x[r * d];
        const double* gr = &g[r * d];
        double ms = 0.0;
        for (std::size_t j = 0; j < d; ++j) ms += xr[j] * xr[j];
        ms /= double(d);
        const double inv = 1.0 / std::sqrt(ms + n.p0);
        if (wants(n.a)) {
          double dot = 0.0;
          for (std::size_t j = 0; j < d; ++j) dot += gr[j] * gain[j] * xr[j];
          Tensor& gx = nodes_[n.a].grad;
          const double coef = inv * inv * inv / double(d) * dot;
          for (std::size_t j = 0; j < d; ++j) gx[r * d + j] += inv * gr[j] * gain[j] - coef * xr[j];
        }
        if (wants(n.b)) {
          Tensor& gg = nodes_[n.b].grad;
          for (std::size_t j = 0; j < d; ++j) gg[j] += gr[j] * xr[j] * inv;
        }
      }
      break;
    }
    case OpKind::softmax: {
      const std::size_t d = g.cols(), m = g.size() / d;
      Tensor& gx = nodes_[n.a].grad;
      for (std::size_t r = 0; r < m; ++r) {
        double dot = 0.0;
        for (std::size_t j = 0; j < d; ++j) dot += g[r * d + j] * n.value[r * d + j];
        for (std::size_t j = 0; j < d; ++j) gx[r * d + j] += n.value[r * d + j] * (g[r * d + j] - dot);
      }
      break;
    }
    case OpKind::log_softmax: {
      const std::size_t d = g.cols(), m = g.size() / d;
      Tensor& gx = nodes_[n.a].grad;
      for (std::size_t r = 0; r < m; ++r) {
        double total = 0.0;
        for (std::size_t j = 0; j < d; ++j) total += g[r * d + j];
        for (std::size_t j = 0; j < d; ++j) gx[r * d + j] += g[r * d + j] - std::exp(n.value[r * d + j]) * total;
      }
      break;
    }
    case OpKind::linear_attention: {
      const Tensor &q = val(n.a), &k = val(n.b), &v = val(n.c);
      const std::size_t heads = n.attr.size();
      const std::size_t len = q.shape()[0], width = q.shape()[1], dh = width / heads;
      std::vector<double> gq(q.size(), 0.0), gk(k.size(), 0.0), gv(v.size(), 0.0);
      std::vector<double> state(dh * dh), acc(dh * dh);
      for (std::size_t h = 0; h < heads; ++h) {
        const double decay = n.attr[h];
        std::fill(state.begin(), state.end(), 0.0);
        for (std::size_t t = 0; t < len; ++t) {
          const std::size_t off = t * width + h * dh;
          for (std::size_t i = 0; i < dh; ++i) {
            for (std::size_t j = 0; j < dh; ++j) state[i * dh + j] = decay * state[i * dh + j] + k[off + i] * v[off + j];
          }
          for (std::size_t i = 0; i < dh; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < dh; ++j) s += state[i * dh + j] * g[off + j];
            gq[off + i] = s;
          }
        }
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t t = len; t-- > 0;) {
          const std::size_t off = t * width + h * dh;
          for (std::size_t i = 0; i < dh; ++i) {
            for (std::size_t j = 0; j < dh; ++j) acc[i * dh + j] = decay * acc[i * dh + j] + q[off + i] * g[off + j];
          }
          for (std::size_t i = 0; i < dh; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < dh; ++j) s += acc[i * dh + j] * v[off + j];
            gk[off + i] = s;
          }
          for (std::size_t j = 0; j < dh; ++j) {
            double s = 0.0;
            for (std::size_t i = 0; i < dh; ++i) s += k[off + i] * acc[i * dh + j];
            gv[off + j] = s;
          }
        }
      }
      const std::int32_t parents[3] = {n.a, n.b, n.c};
      const std::vector<double>* grads[3] = {&gq, &gk, &gv};
      for (int s = 0; s < 3; ++s) {
        if (!wants(parents[s])) continue;
        Tensor& target = nodes_[parents[s]].grad;
        for (std::size_t i = 0; i < target.size(); ++i) target[i] += (*grads[s])[i];
      }
      break;
    }
    case OpKind::softmax_attention: {
      const Tensor &q = val(n.a), &k = val(n.b), &v = val(n.c);
      const std::size_t heads = n.idx0[0];
      const std::size_t len = q.shape()[0], width = q.shape()[1], dh = width / heads;
      const double scale = 1.0 / std::sqrt(double(dh));
      std::vector<double> gq(q.size(), 0.0), gk(k.size(), 0.0), gv(v.size(), 0.0), gz(len);
      for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t t = 0; t < len; ++t) {
          const double* p = &n.cache[(h * len + t) * len];
          const double* go = &g[t * width + h * dh];
          double dot = 0.0;
          for (std::size_t s = 0; s <= t; ++s) {
            double gp = 0.0;
            for (std::size_t j = 0; j < dh; ++j) gp += go[j] * v[s * width + h * dh + j];
            gz[s] = gp;
            dot += p[s] * gp;
          }
          for (std::size_t s = 0; s <= t; ++s) {
            const double z = p[s] * (gz[s] - dot) * scale;
            for (std::size_t i = 0; i < dh; ++i) {
              gq[t * width + h * dh + i] += z * k[s * width + h * dh + i];
              gk[s * width + h * dh + i] += z * q[t * width + h * dh + i];
              gv[s * width + h * dh + i] += p[s] * go[i];
            }
          }
        }
      }
      const std::int32_t parents[3] = {n.a, n.b, n.c};
      const std::vector<double>* grads[3] = {&gq, &gk, &gv};
      for (int s = 0; s < 3; ++s) {
        if (!wants(parents[s])) continue;
        Tensor& target = nodes_[parents[s]].grad;
        for (std::size_t i = 0; i < target.size(); ++i) target[i] += (*grads[s])[i];
      }
      break;
    }
    case OpKind::stop_gradient:
    case OpKind::trust_region_mask:
    case OpKind::input:
    case OpKind::parameter:
    case OpKind::constant:
      break;
  }
}

}  // namespace tinyrl

#include "tinyrl/policy.hpp"

#include <algorithm>
#include <cmath>

#include "tinyrl/error.hpp"
#include "tinyrl/kernels.hpp"
#include "tinyrl/rng.hpp"

namespace tinyrl {

namespace {

constexpr std::size_t kPerLayer = 10;

enum LayerSlot : std::size_t { attn_norm, wq, wk, wv, wo, mlp_norm, w1, b1, w2, b2 };

std::size_t layer_index(std::size_t layer, LayerSlot slot) { return 2 + layer * kPerLayer + slot; }
std::size_t final_norm_index(const PolicyConfig& c) { return 2 + c.n_layers * kPerLayer; }

const char* slot_name(std::size_t slot) {
  static const char* names[kPerLayer] = {"attn_norm", "wq", "wk", "wv", "wo", "mlp_norm", "w1", "b1", "w2", "b2"};
  return names[slot];
}

void check_sequence(const PolicyConfig& c, const std::vector<int>& seq) {
  if (seq.empty()) throw ValueError("policy: empty sequence");
  if (seq.size() > c.max_position) {
    throw ValueError("policy: sequence length " + std::to_string(seq.size()) + " exceeds max_position " +
                     std::to_string(c.max_position));
  }
  for (int t : seq) {
    if (t < 0 || static_cast<std::size_t>(t) >= c.vocab_size) {
      throw ValueError("policy: token " + std::to_string(t) + " is outside the vocabulary");
    }
  }
}

}  // namespace

std::vector<std::vector<double>> default_decays(std::size_t n_layers, std::size_t n_heads) {
  PolicyConfig c;
  c.n_layers = n_layers;
  c.n_heads = n_heads;
  std::vector<std::vector<double>> out(n_layers, std::vector<double>(n_heads));
  for (std::size_t l = 0; l < n_layers; ++l) {
    for (std::size_t h = 0; h < n_heads; ++h) out[l][h] = c.decay(l, h);
  }
  return out;
}

void PolicyConfig::validate() const {
  if (vocab_size < 2 || vocab_size > 64) throw ValueError("policy config: vocab_size must lie in [2, 64]");
  if (d_model == 0 || n_heads == 0) throw ValueError("policy config: d_model and n_heads must be positive");
  if (d_model % n_heads != 0) {
    throw ValueError("policy config: d_model " + std::to_string(d_model) + " is not divisible by n_heads " +
                     std::to_string(n_heads));
  }
  if (n_layers == 0) throw ValueError("policy config: n_layers must be positive");
  if (max_position == 0) throw ValueError("policy config: max_position must be positive");
  if (!decays.empty()) {
    if (decays.size() != n_layers) throw ValueError("policy config: decays must have one row per layer");
    for (const auto& row : decays) {
      if (row.size() != n_heads) throw ValueError("policy config: decays must have one entry per head");
      for (double d : row) {
        if (!(d > 0.0 && d <= 1.0)) throw ValueError("policy config: decay rates must lie in (0, 1]");
      }
    }
  }
  if (!(head_init_scale > 0.0) || !std::isfinite(head_init_scale)) {
    throw ValueError("policy config: head_init_scale must be positive");
  }
  if (!(norm_eps > 0.0)) throw ValueError("policy config: norm_eps must be positive");
  if (!std::isfinite(head_activation_offset)) throw ValueError("policy config: head_activation_offset must be finite");
}

std::size_t PolicyConfig::softmax_layer_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < n_layers; ++l) n += is_softmax_layer(l) ? 1 : 0;
  return n;
}

double PolicyConfig::decay(std::size_t layer, std::size_t head) const {
  if (!decays.empty()) return decays.at(layer).at(head);
  const double depth = 1.0 - double(layer) / double(n_layers);
  return std::exp(-std::exp2(-8.0 * double(head + 1) / double(n_heads)) * depth);
}

std::size_t PolicyParams::index_of(const std::string& name) const {
  auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw ValueError("policy: no parameter named '" + name + "'");
  return static_cast<std::size_t>(it - names.begin());
}

std::size_t PolicyParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.size();
  return n;
}

bool PolicyParams::all_finite() const {
  return std::all_of(tensors.begin(), tensors.end(), [](const Tensor& t) { return t.all_finite(); });
}

std::vector<Tensor*> PolicyParams::pointers() {
  std::vector<Tensor*> out;
  for (auto& t : tensors) out.push_back(&t);
  return out;
}

PolicyParams init_policy(const PolicyConfig& config, std::uint64_t seed) {
  config.validate();
  const std::size_t d = config.d_model, hid = config.hidden(), V = config.vocab_size;
  Rng rng(seed);
  PolicyParams p;
  p.config = config;
  auto add = [&](std::string name, Shape shape, double bound, double fill) {
    Tensor t(std::move(shape), fill);
    if (bound > 0.0) {
      for (auto& x : t.values()) x = rng.uniform(-bound, bound);
    }
    p.names.push_back(std::move(name));
    p.tensors.push_back(std::move(t));
  };
  const double inv_d = 1.0 / std::sqrt(double(d));
  add("embed", {V, d}, 1.0, 0.0);
  add("pos", {config.max_position, d}, 0.1, 0.0);
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    const std::string prefix = "layers." + std::to_string(l) + ".";
    add(prefix + slot_name(attn_norm), {d}, 0.0, 1.0);
    add(prefix + slot_name(wq), {d, d}, inv_d, 0.0);
    add(prefix + slot_name(wk), {d, d}, inv_d, 0.0);
    add(prefix + slot_name(wv), {d, d}, inv_d, 0.0);
    add(prefix + slot_name(wo), {d, d}, inv_d, 0.0);
    add(prefix + slot_name(mlp_norm), {d}, 0.0, 1.0);
    add(prefix + slot_name(w1), {d, hid}, inv_d, 0.0);
    add(prefix + slot_name(b1), {hid}, 0.0, 0.0);
    add(prefix + slot_name(w2), {hid, d}, 1.0 / std::sqrt(double(hid)), 0.0);
    add(prefix + slot_name(b2), {d}, 0.0, 0.0);
  }
  add("final_norm", {d}, 0.0, 1.0);
  add("head_w", {d, V}, config.head_init_scale * inv_d, 0.0);
  add("head_b", {V}, 0.0, 0.0);
  return p;
}

std::vector<NodeId> add_parameter_leaves(Graph& g, const PolicyParams& params) {
  std::vector<NodeId> leaves;
  leaves.reserve(params.tensors.size());
  for (std::size_t i = 0; i < params.tensors.size(); ++i) leaves.push_back(g.parameter(params.names[i], params.tensors[i]));
  return leaves;
}

PolicyNodes build_policy_graph(Graph& g, const PolicyParams& params, const std::vector<NodeId>& leaves,
                               const std::vector<int>& seq, EvalMode mode) {
  const PolicyConfig& c = params.config;
  check_sequence(c, seq);
  if (leaves.size() != params.tensors.size()) throw ValueError("policy: parameter leaf count mismatch");
  const std::size_t L = seq.size();
  std::vector<std::size_t> inputs(L);
  inputs[0] = kBosToken;
  for (std::size_t t = 1; t < L; ++t) inputs[t] = static_cast<std::size_t>(seq[t - 1]);

  g.set_precision(Precision::f64);
  NodeId x = g.gather_rows(leaves[0], inputs);
  NodeId pos{};
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    auto P = [&](LayerSlot s) { return leaves[layer_index(l, s)]; };
    const bool soft = c.is_softmax_layer(l);
    NodeId xin = x;
    if (soft) {
      if (!pos.valid()) pos = g.slice_rows(leaves[1], 0, L);
      xin = g.add(x, pos);
    }
    NodeId h = g.rms_norm(xin, P(attn_norm), c.norm_eps);
    NodeId q = g.matmul(h, P(wq));
    NodeId k = g.matmul(h, P(wk));
    NodeId v = g.matmul(h, P(wv));
    NodeId a;
    if (soft) {
      a = g.softmax_attention(q, k, v, c.n_heads);
    } else {
      std::vector<double> decays(c.n_heads);
      for (std::size_t hd = 0; hd < c.n_heads; ++hd) decays[hd] = c.decay(l, hd);
      a = g.linear_attention(q, k, v, decays);
    }
    x = g.add(x, g.matmul(a, P(wo)));
    NodeId h2 = g.rms_norm(x, P(mlp_norm), c.norm_eps);
    NodeId u = g.silu(g.add_row_vector(g.matmul(h2, P(w1)), P(b1)));
    x = g.add(x, g.add_row_vector(g.matmul(u, P(w2)), P(b2)));
  }
  const std::size_t fn = final_norm_index(c);
  NodeId hf = g.rms_norm(x, leaves[fn], c.norm_eps);
  const Precision hp = mode == EvalMode::infer ? c.head_precision : Precision::f64;
  if (hp == Precision::f32) {
    g.set_precision(Precision::f32);
    hf = g.cast(hf, Precision::f32);
  }
  NodeId logits = g.add_row_vector(g.matmul(hf, leaves[fn + 1]), leaves[fn + 2]);
  if (c.head_activation_offset != 0.0) logits = g.add_scalar(logits, c.head_activation_offset);
  NodeId lp = g.log_softmax(logits);
  if (hp == Precision::f32) {
    g.set_precision(Precision::f64);
    lp = g.cast(lp, Precision::f64);
  }
  std::vector<std::size_t> rows(L), cols(L);
  for (std::size_t t = 0; t < L; ++t) {
    rows[t] = t;
    cols[t] = static_cast<std::size_t>(seq[t]);
  }
  return PolicyNodes{lp, g.gather_elements(lp, std::move(rows), std::move(cols))};
}

PolicyNodes build_policy_graph(Graph& g, const PolicyParams& params, const std::vector<int>& seq, EvalMode mode) {
  return build_policy_graph(g, params, add_parameter_leaves(g, params), seq, mode);
}

std::vector<double> token_logprobs(const PolicyParams& params, const std::vector<int>& seq, EvalMode mode) {
  Graph g;
  auto nodes = build_policy_graph(g, params, seq, mode);
  g.forward();
  return g.value(nodes.token_logprobs).values();
}

Tensor position_log_probs(const PolicyParams& params, const std::vector<int>& seq, EvalMode mode) {
  Graph g;
  auto nodes = build_policy_graph(g, params, seq, mode);
  g.forward();
  return g.value(nodes.log_probs);
}

PolicyDecoder::PolicyDecoder(const PolicyParams& params, EvalMode mode) : params_(&params), mode_(mode) {
  const PolicyConfig& c = params.config;
  c.validate();
  const std::size_t d = c.d_model, dh = c.head_dim();
  linear_state_.resize(c.n_layers);
  keys_.resize(c.n_layers);
  values_.resize(c.n_layers);
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    if (c.is_softmax_layer(l)) {
      keys_[l].assign(c.max_position * d, 0.0);
      values_[l].assign(c.max_position * d, 0.0);
    } else {
      linear_state_[l].assign(c.n_heads * dh * dh, 0.0);
    }
  }
  feed(kBosToken);
}

void PolicyDecoder::feed(int token) {
  using namespace kernels;
  const PolicyParams& p = *params_;
  const PolicyConfig& c = p.config;
  if (token < 0 || static_cast<std::size_t>(token) >= c.vocab_size) {
    throw ValueError("decoder: token " + std::to_string(token) + " is outside the vocabulary");
  }
  if (position_ >= c.max_position) throw ValueError("decoder: sequence exceeds max_position");
  const std::size_t t = position_;
  const std::size_t d = c.d_model, H = c.n_heads, dh = c.head_dim(), hid = c.hidden(), V = c.vocab_size;
  auto W = [&](std::size_t idx) { return p.tensors[idx].data().data(); };

  std::vector<double> x(W(0) + std::size_t(token) * d, W(0) + std::size_t(token) * d + d);
  std::vector<double> xin(d), h(d), q(d), k(d), v(d), a(d), o(d), u(hid), probs(c.max_position);
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const bool soft = c.is_softmax_layer(l);
    const double* src = x.data();
    if (soft) {
      add_vec<double>(x.data(), W(1) + t * d, d, xin.data());
      src = xin.data();
    }
    rms_norm_row<double>(src, W(layer_index(l, attn_norm)), d, c.norm_eps, h.data());
    vec_mat<double>(h.data(), W(layer_index(l, wq)), d, d, q.data());
    vec_mat<double>(h.data(), W(layer_index(l, wk)), d, d, k.data());
    vec_mat<double>(h.data(), W(layer_index(l, wv)), d, d, v.data());
    if (soft) {
      std::copy(k.begin(), k.end(), keys_[l].begin() + std::ptrdiff_t(t * d));
      std::copy(v.begin(), v.end(), values_[l].begin() + std::ptrdiff_t(t * d));
      const double scale = 1.0 / std::sqrt(double(dh));
      for (std::size_t hd = 0; hd < H; ++hd) {
        softmax_attention_row(&q[hd * dh], &keys_[l][hd * dh], &values_[l][hd * dh], t + 1, d, dh, scale,
                              probs.data(), &a[hd * dh]);
      }
    } else {
      for (std::size_t hd = 0; hd < H; ++hd) {
        linear_attention_step(&q[hd * dh], &k[hd * dh], &v[hd * dh], dh, dh, c.decay(l, hd),
                              &linear_state_[l][hd * dh * dh], &a[hd * dh]);
      }
    }
    vec_mat<double>(a.data(), W(layer_index(l, wo)), d, d, o.data());
    add_vec<double>(x.data(), o.data(), d, x.data());
    rms_norm_row<double>(x.data(), W(layer_index(l, mlp_norm)), d, c.norm_eps, h.data());
    vec_mat<double>(h.data(), W(layer_index(l, w1)), d, hid, u.data());
    add_vec<double>(u.data(), W(layer_index(l, b1)), hid, u.data());
    silu_vec<double>(u.data(), hid, u.data());
    vec_mat<double>(u.data(), W(layer_index(l, w2)), hid, d, o.data());
    add_vec<double>(o.data(), W(layer_index(l, b2)), d, o.data());
    add_vec<double>(x.data(), o.data(), d, x.data());
  }
  const std::size_t fn = final_norm_index(c);
  rms_norm_row<double>(x.data(), W(fn), d, c.norm_eps, h.data());
  std::vector<double> logits(V);
  log_probs_.assign(V, 0.0);
  const Precision hp = mode_ == EvalMode::infer ? c.head_precision : Precision::f64;
  if (hp == Precision::f32) {
    for (auto& e : h) e = double(float(e));
    vec_mat<float>(h.data(), W(fn + 1), d, V, logits.data());
    add_vec<float>(logits.data(), W(fn + 2), V, logits.data());
    if (c.head_activation_offset != 0.0) add_scalar<float>(logits.data(), c.head_activation_offset, V, logits.data());
    log_softmax_row<float>(logits.data(), V, log_probs_.data());
  } else {
    vec_mat<double>(h.data(), W(fn + 1), d, V, logits.data());
    add_vec<double>(logits.data(), W(fn + 2), V, logits.data());
    if (c.head_activation_offset != 0.0) add_scalar<double>(logits.data(), c.head_activation_offset, V, logits.data());
    log_softmax_row<double>(logits.data(), V, log_probs_.data());
  }
  for (double lp : log_probs_) {
    if (!std::isfinite(lp)) throw NumericError("decoder: non-finite log-probability");
  }
  ++position_;
}

}  // namespace tinyrl

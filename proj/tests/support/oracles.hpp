#pragma once

// Independent references shared by the unit tests and the acceptance binary:
// random small policy/group instances, loss construction over a fresh graph,
// and a quadratic decayed-attention reference.

#include <cmath>
#include <functional>
#include <vector>

#include "tinyrl/autodiff.hpp"
#include "tinyrl/finite_diff.hpp"
#include "tinyrl/objectives.hpp"
#include "tinyrl/policy.hpp"
#include "tinyrl/rng.hpp"
#include "tinyrl/tasks.hpp"

namespace tinyrl::testing {

struct GroupInstance {
  PolicyParams params;
  std::vector<std::vector<int>> prompts;
  std::vector<std::vector<int>> responses;
  std::vector<std::vector<double>> old_logprobs;
  std::vector<double> advantages;
};

inline PolicyConfig small_config(std::size_t d_model = 8, std::size_t heads = 2) {
  PolicyConfig c;
  c.d_model = d_model;
  c.n_heads = heads;
  c.n_layers = 2;
  c.hybrid_ratio = 1;  // layer 0 linear, layer 1 softmax
  c.max_position = 16;
  c.ffn_hidden = 2 * d_model;
  c.head_init_scale = 1.0;
  return c;
}

inline std::vector<double> live_response_logprobs(const PolicyParams& p, const std::vector<int>& prompt,
                                                  const std::vector<int>& response) {
  std::vector<int> seq = prompt;
  seq.insert(seq.end(), response.begin(), response.end());
  const auto lp = token_logprobs(p, seq, EvalMode::train);
  return {lp.end() - std::ptrdiff_t(response.size()), lp.end()};
}

// Behavior log-probs are the live ones plus N(0, noise) so ratios straddle
// the clip boundaries; noise 0 gives an exactly on-policy group.
inline GroupInstance random_group(std::uint64_t seed, std::size_t group = 3, double noise = 0.3) {
  Rng rng(seed);
  GroupInstance g;
  g.params = init_policy(small_config(), derive_seed(seed, 1));
  for (std::size_t i = 0; i < group; ++i) {
    std::vector<int> prompt(1 + rng.index(3)), response(1 + rng.index(4));
    for (auto& t : prompt) t = int(rng.index(tok::vocab_size));
    for (auto& t : response) t = int(rng.index(tok::vocab_size));
    auto lp = live_response_logprobs(g.params, prompt, response);
    for (auto& x : lp) x += noise * rng.normal();
    g.prompts.push_back(prompt);
    g.responses.push_back(response);
    g.old_logprobs.push_back(lp);
    g.advantages.push_back(rng.normal());
  }
  return g;
}

using LossBuilder = std::function<LossInfo(Graph&, const std::vector<ResponseTerm>&)>;

// frozen: per-response ratios used for the stop-gradient quantities.
inline void build_loss(Graph& g, LossInfo& info, const GroupInstance& inst, const LossBuilder& builder,
                       const std::vector<std::vector<double>>* frozen) {
  const auto leaves = add_parameter_leaves(g, inst.params);
  std::vector<ResponseTerm> terms;
  for (std::size_t i = 0; i < inst.responses.size(); ++i) {
    std::vector<int> seq = inst.prompts[i];
    seq.insert(seq.end(), inst.responses[i].begin(), inst.responses[i].end());
    const PolicyNodes nodes = build_policy_graph(g, inst.params, leaves, seq, EvalMode::train);
    const std::size_t P = inst.prompts[i].size(), T = inst.responses[i].size();
    std::vector<std::size_t> rows(T), cols(T);
    for (std::size_t t = 0; t < T; ++t) {
      rows[t] = P + t;
      cols[t] = std::size_t(inst.responses[i][t]);
    }
    ResponseTerm term;
    term.new_logprobs = g.gather_elements(nodes.log_probs, rows, cols);
    term.old_logprobs = inst.old_logprobs[i];
    term.advantage = inst.advantages[i];
    if (frozen) term.frozen_ratios = (*frozen)[i];
    terms.push_back(std::move(term));
  }
  info = builder(g, terms);
}

inline double loss_value(const GroupInstance& inst, const LossBuilder& builder,
                         const std::vector<std::vector<double>>* frozen) {
  Graph g;
  LossInfo info;
  build_loss(g, info, inst, builder, frozen);
  g.forward();
  return g.value(info.loss).item();
}

inline std::vector<Tensor> loss_gradient(const GroupInstance& inst, const LossBuilder& builder,
                                         const std::vector<std::vector<double>>* frozen = nullptr) {
  Graph g;
  LossInfo info;
  build_loss(g, info, inst, builder, frozen);
  g.forward();
  std::vector<Tensor> out;
  for (auto& pg : g.backward(info.loss)) out.push_back(std::move(pg.grad));
  return out;
}

inline std::vector<std::vector<double>> live_ratios(const GroupInstance& inst) {
  std::vector<std::vector<double>> r;
  for (std::size_t i = 0; i < inst.responses.size(); ++i) {
    r.push_back(is_weights(live_response_logprobs(inst.params, inst.prompts[i], inst.responses[i]),
                           inst.old_logprobs[i]));
  }
  return r;
}

inline std::vector<double> flatten(const std::vector<Tensor>& ts) {
  std::vector<double> out;
  for (const auto& t : ts) out.insert(out.end(), t.values().begin(), t.values().end());
  return out;
}

// Random coordinates drawn uniformly from every parameter tensor.
inline std::vector<std::pair<std::size_t, std::size_t>> sample_coords(const PolicyParams& p, std::size_t per_tensor,
                                                                      std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t i = 0; i < p.tensors.size(); ++i) {
    for (std::size_t k = 0; k < per_tensor; ++k) out.emplace_back(i, rng.index(p.tensors[i].size()));
  }
  return out;
}

struct GradCheck {
  double rel_error = 0.0;
  std::size_t coords = 0;
};

// Stop-gradient quantities are frozen at the unperturbed point so that the
// finite-difference objective has the same derivative as the surrogate.
inline GradCheck check_gradient(GroupInstance inst, const LossBuilder& builder, std::size_t per_tensor,
                                std::uint64_t seed, bool freeze = true) {
  const auto frozen = live_ratios(inst);
  const auto* fz = freeze ? &frozen : nullptr;
  const auto analytic = loss_gradient(inst, builder, fz);
  const auto coords = sample_coords(inst.params, per_tensor, seed);
  const auto numeric = finite_diff_at([&] { return loss_value(inst, builder, fz); }, inst.params.pointers(), coords);
  std::vector<double> a;
  for (const auto& [ti, ei] : coords) a.push_back(analytic[ti][ei]);
  return {relative_error(a, numeric), coords.size()};
}

// o_t = sum_{s<=t} lambda^{t-s} (q_t . k_s) v_s per head, computed directly.
inline Tensor quadratic_decay_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                        const std::vector<double>& decays) {
  const std::size_t L = q.rows(), D = q.cols(), H = decays.size(), dh = D / H;
  Tensor out({L, D}, 0.0);
  for (std::size_t h = 0; h < H; ++h) {
    for (std::size_t t = 0; t < L; ++t) {
      for (std::size_t s = 0; s <= t; ++s) {
        double dot = 0.0;
        for (std::size_t j = 0; j < dh; ++j) dot += q.at(t, h * dh + j) * k.at(s, h * dh + j);
        const double w = std::pow(decays[h], double(t - s)) * dot;
        for (std::size_t j = 0; j < dh; ++j) out.at(t, h * dh + j) += w * v.at(s, h * dh + j);
      }
    }
  }
  return out;
}

inline Tensor random_matrix(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  Tensor t({r, c});
  for (auto& x : t.values()) x = scale * rng.uniform(-1.0, 1.0);
  return t;
}

}  // namespace tinyrl::testing

#include "tinyrl/objectives.hpp"

#include <algorithm>
#include <cmath>

#include "tinyrl/error.hpp"

namespace tinyrl {

const char* normalization_name(Normalization n) {
  switch (n) {
    case Normalization::token_mean: return "token_mean";
    case Normalization::sample_mean: return "sample_mean";
    case Normalization::combined: return "combined";
  }
  return "?";
}

Normalization parse_normalization(const std::string& name) {
  if (name == "token_mean") return Normalization::token_mean;
  if (name == "sample_mean") return Normalization::sample_mean;
  if (name == "combined") return Normalization::combined;
  throw ValueError("unknown normalization '" + name + "'");
}

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::ppo_grpo: return "ppo_grpo";
    case Variant::dapo_like: return "dapo_like";
    case Variant::cispo: return "cispo";
    case Variant::unified: return "unified";
  }
  return "?";
}

Variant parse_variant(const std::string& name) {
  if (name == "ppo_grpo" || name == "grpo" || name == "ppo") return Variant::ppo_grpo;
  if (name == "dapo_like" || name == "dapo") return Variant::dapo_like;
  if (name == "cispo") return Variant::cispo;
  if (name == "unified") return Variant::unified;
  throw ValueError("unknown objective variant '" + name + "'");
}

void ClipConfig::validate() const {
  for (double e : {ppo_epsilon, is_eps_low, is_eps_high, mask_eps_low, mask_eps_high}) {
    if (!(e >= 0.0) || !std::isfinite(e)) throw ValueError("clip config: every epsilon must be >= 0");
  }
  if (!(kl_coef >= 0.0) || !std::isfinite(kl_coef)) throw ValueError("clip config: kl_coef must be >= 0");
}

ClipConfig variant_preset(Variant v) {
  ClipConfig c;
  switch (v) {
    case Variant::ppo_grpo:
      c.normalization = Normalization::sample_mean;
      break;
    case Variant::dapo_like:
      c.is_eps_high = kNoBound;
      c.mask_eps_low = 0.2;
      c.mask_eps_high = 0.28;
      break;
    case Variant::cispo:
      c.mask_enabled = false;
      break;
    case Variant::unified:
      break;
  }
  return c;
}

AdvantageSet grpo_advantages(const std::vector<double>& rewards) {
  if (rewards.size() < 2) throw ValueError("grpo_advantages: need at least two rewards");
  AdvantageSet a;
  const double n = double(rewards.size());
  for (double r : rewards) {
    if (!std::isfinite(r)) throw NumericError("grpo_advantages: non-finite reward");
    a.mean += r;
  }
  a.mean /= n;
  double var = 0.0;
  for (double r : rewards) var += (r - a.mean) * (r - a.mean);
  a.std = std::sqrt(var / n);
  a.values.assign(rewards.size(), 0.0);
  if (a.std < 1e-12) {
    a.degenerate = true;
    return a;
  }
  for (std::size_t i = 0; i < rewards.size(); ++i) a.values[i] = (rewards[i] - a.mean) / a.std;
  return a;
}

std::vector<double> is_weights(const std::vector<double>& new_logprobs, const std::vector<double>& old_logprobs) {
  if (new_logprobs.size() != old_logprobs.size()) throw ShapeError("is_weights: length mismatch");
  std::vector<double> r(new_logprobs.size());
  for (std::size_t i = 0; i < r.size(); ++i) {
    r[i] = std::exp(new_logprobs[i] - old_logprobs[i]);
    if (!std::isfinite(r[i])) throw NumericError("is_weights: non-finite ratio");
  }
  return r;
}

double clip_is_weight(double r, const ClipConfig& cfg) {
  return std::clamp(r, 1.0 - cfg.is_eps_low, 1.0 + cfg.is_eps_high);
}

bool trust_region_keep(double r, double advantage, double eps_low, double eps_high) {
  return !((advantage > 0.0 && r > 1.0 + eps_high) || (advantage < 0.0 && r < 1.0 - eps_low));
}

std::vector<double> normalization_weights(const std::vector<std::size_t>& lengths, Normalization mode) {
  if (lengths.empty()) throw ValueError("normalization: empty group");
  std::size_t total = 0;
  for (auto n : lengths) {
    if (n == 0) throw ValueError("normalization: empty response");
    total += n;
  }
  const double G = double(lengths.size());
  std::vector<double> w(lengths.size());
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    const double tok = 1.0 / double(total);
    const double smp = 1.0 / (G * double(lengths[i]));
    switch (mode) {
      case Normalization::token_mean: w[i] = tok; break;
      case Normalization::sample_mean: w[i] = smp; break;
      case Normalization::combined: w[i] = 0.5 * tok + 0.5 * smp; break;
    }
  }
  return w;
}

double combined_normalization(const std::vector<std::vector<double>>& token_losses, Normalization mode) {
  std::vector<std::size_t> lengths;
  for (const auto& v : token_losses) lengths.push_back(v.size());
  const auto w = normalization_weights(lengths, mode);
  double out = 0.0;
  for (std::size_t i = 0; i < token_losses.size(); ++i) {
    double s = 0.0;
    for (double x : token_losses[i]) s += x;
    out += w[i] * s;
  }
  return out;
}

namespace {

struct Prepared {
  std::vector<std::size_t> lengths;
  std::vector<double> weights;
  std::vector<NodeId> ratios;
};

Prepared prepare(Graph& g, const std::vector<ResponseTerm>& terms, const ClipConfig& cfg) {
  cfg.validate();
  if (terms.empty()) throw ValueError("loss: empty group");
  Prepared p;
  for (const auto& t : terms) {
    if (t.old_logprobs.empty()) throw ValueError("loss: empty response");
    if (!t.frozen_ratios.empty() && t.frozen_ratios.size() != t.old_logprobs.size()) {
      throw ShapeError("loss: frozen ratio length mismatch");
    }
    p.lengths.push_back(t.old_logprobs.size());
    NodeId old = g.constant(Tensor::vector(t.old_logprobs));
    p.ratios.push_back(g.exp(g.sub(t.new_logprobs, old)));
  }
  p.weights = normalization_weights(p.lengths, cfg.normalization);
  return p;
}

NodeId accumulate(Graph& g, NodeId total, NodeId term, double weight) {
  NodeId scaled = g.scale(term, weight);
  return total.valid() ? g.add(total, scaled) : scaled;
}

NodeId kl_penalty(Graph& g, const std::vector<ResponseTerm>& terms, const Prepared& p, const ClipConfig& cfg,
                  NodeId loss) {
  if (cfg.kl_coef <= 0.0) return loss;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (terms[i].ref_logprobs.size() != p.lengths[i]) throw ShapeError("loss: reference log-prob length mismatch");
    NodeId ref = g.constant(Tensor::vector(terms[i].ref_logprobs));
    loss = accumulate(g, loss, g.sum(g.sub(terms[i].new_logprobs, ref)), cfg.kl_coef * p.weights[i]);
  }
  return loss;
}

// Shared form sum_i w_i sum_t sg(c_it) * A_i * log pi_it with c from `coef`.
template <class CoefFn>
LossInfo weighted_logprob_loss(Graph& g, const std::vector<ResponseTerm>& terms, const ClipConfig& cfg, LossKind kind,
                               CoefFn coef) {
  Prepared p = prepare(g, terms, cfg);
  NodeId loss{};
  for (std::size_t i = 0; i < terms.size(); ++i) {
    const auto& t = terms[i];
    NodeId c;
    if (!t.frozen_ratios.empty()) {
      std::vector<double> v(t.frozen_ratios.size());
      for (std::size_t j = 0; j < v.size(); ++j) v[j] = coef.value(t.frozen_ratios[j], t.advantage);
      c = g.constant(Tensor::vector(std::move(v)));
    } else {
      c = g.stop_gradient(coef.node(g, p.ratios[i], t.advantage));
    }
    NodeId term = g.sum(g.mul(c, t.new_logprobs));
    loss = accumulate(g, loss, term, -t.advantage * p.weights[i]);
  }
  loss = kl_penalty(g, terms, p, cfg, loss);
  std::vector<double> adv;
  for (const auto& t : terms) adv.push_back(t.advantage);
  return LossInfo{loss, kind, cfg, p.ratios, adv};
}

struct RawRatio {
  double value(double r, double) const { return r; }
  NodeId node(Graph&, NodeId r, double) const { return r; }
};

struct ClippedRatio {
  double lo, hi;
  bool mask;
  double eps_low, eps_high;
  double value(double r, double a) const {
    const double c = std::clamp(r, lo, hi);
    return (!mask || trust_region_keep(r, a, eps_low, eps_high)) ? c : 0.0;
  }
  NodeId node(Graph& g, NodeId r, double a) const {
    NodeId c = g.clip(r, lo, hi);
    if (mask) c = g.mul(c, g.trust_region_mask(r, a, eps_low, eps_high));
    return c;
  }
};

}  // namespace

LossInfo ppo_grpo_loss(Graph& g, const std::vector<ResponseTerm>& terms, const ClipConfig& cfg) {
  Prepared p = prepare(g, terms, cfg);
  const double eps = cfg.ppo_epsilon;
  NodeId loss{};
  for (std::size_t i = 0; i < terms.size(); ++i) {
    const double a = terms[i].advantage;
    NodeId r = p.ratios[i];
    NodeId unclipped = g.scale(r, a);
    NodeId clipped = g.scale(g.clip(r, std::max(0.0, 1.0 - eps), 1.0 + eps), a);
    NodeId obj = g.sum(g.minimum(unclipped, clipped));
    loss = accumulate(g, loss, obj, -p.weights[i]);
  }
  loss = kl_penalty(g, terms, p, cfg, loss);
  std::vector<double> adv;
  for (const auto& t : terms) adv.push_back(t.advantage);
  return LossInfo{loss, LossKind::ppo_grpo, cfg, p.ratios, adv};
}

LossInfo reinforce_is_loss(Graph& g, const std::vector<ResponseTerm>& terms, const ClipConfig& cfg) {
  return weighted_logprob_loss(g, terms, cfg, LossKind::reinforce_is, RawRatio{});
}

LossInfo cispo_loss(Graph& g, const std::vector<ResponseTerm>& terms, const ClipConfig& cfg) {
  return weighted_logprob_loss(g, terms, cfg, LossKind::cispo,
                               ClippedRatio{1.0 - cfg.is_eps_low, 1.0 + cfg.is_eps_high, false, 0.0, 0.0});
}

LossInfo unified_loss(Graph& g, const std::vector<ResponseTerm>& terms, const ClipConfig& cfg) {
  return weighted_logprob_loss(g, terms, cfg, LossKind::unified,
                               ClippedRatio{1.0 - cfg.is_eps_low, 1.0 + cfg.is_eps_high, cfg.mask_enabled,
                                            cfg.mask_eps_low, cfg.mask_eps_high});
}

LossInfo variant_loss(Graph& g, Variant v, const std::vector<ResponseTerm>& terms, const ClipConfig& cfg) {
  switch (v) {
    case Variant::ppo_grpo: return ppo_grpo_loss(g, terms, cfg);
    case Variant::cispo: return cispo_loss(g, terms, cfg);
    case Variant::dapo_like:
    case Variant::unified: return unified_loss(g, terms, cfg);
  }
  throw ValueError("unknown variant");
}

LossDiagnostics loss_diagnostics(const Graph& g, const LossInfo& info) {
  LossDiagnostics d;
  std::size_t zeroed = 0, clipped = 0;
  double sum_r = 0.0, sum_c = 0.0, sum_dev = 0.0;
  const ClipConfig& c = info.cfg;
  for (std::size_t i = 0; i < info.ratios.size(); ++i) {
    const Tensor& r = g.value(info.ratios[i]);
    const double a = info.advantages[i];
    for (std::size_t t = 0; t < r.size(); ++t) {
      ++d.tokens;
      sum_r += r[t];
      sum_dev += std::abs(r[t] - 1.0);
      double hr = r[t];
      switch (info.kind) {
        case LossKind::ppo_grpo:
          zeroed += trust_region_keep(r[t], a, c.ppo_epsilon, c.ppo_epsilon) ? 0 : 1;
          hr = std::clamp(r[t], std::max(0.0, 1.0 - c.ppo_epsilon), 1.0 + c.ppo_epsilon);
          break;
        case LossKind::unified:
          if (c.mask_enabled) zeroed += trust_region_keep(r[t], a, c.mask_eps_low, c.mask_eps_high) ? 0 : 1;
          hr = clip_is_weight(r[t], c);
          break;
        case LossKind::cispo:
          hr = clip_is_weight(r[t], c);
          break;
        case LossKind::reinforce_is:
          break;
      }
      clipped += hr != r[t] ? 1 : 0;
      sum_c += hr;
    }
  }
  if (d.tokens > 0) {
    const double n = double(d.tokens);
    d.zeroed_fraction = double(zeroed) / n;
    d.is_clip_fraction = double(clipped) / n;
    d.mean_ratio = sum_r / n;
    d.mean_clipped_ratio = sum_c / n;
    d.mean_abs_ratio_dev = sum_dev / n;
  }
  return d;
}

}  // namespace tinyrl

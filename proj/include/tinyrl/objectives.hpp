#pragma once

// Policy-optimization objectives on autodiff graphs: PPO-clip with GRPO
// advantages, REINFORCE with importance-sampling correction, CISPO and the
// unified token-masked objective. Every builder returns a scalar loss node
// (the negated objective) to be minimized.

#include <cstdint>
#include <string>
#include <vector>

#include "tinyrl/autodiff.hpp"

namespace tinyrl {

// A clip bound this large means "no bound".
inline constexpr double kNoBound = 1e9;

enum class Normalization : std::uint8_t { token_mean, sample_mean, combined };
const char* normalization_name(Normalization n);
Normalization parse_normalization(const std::string& name);

enum class Variant : std::uint8_t { ppo_grpo, dapo_like, cispo, unified };
const char* variant_name(Variant v);
Variant parse_variant(const std::string& name);

struct ClipConfig {
  double ppo_epsilon = 0.2;
  double is_eps_low = kNoBound;
  double is_eps_high = 0.2;
  double mask_eps_low = 0.2;
  double mask_eps_high = 0.2;
  bool mask_enabled = true;
  double kl_coef = 0.0;
  Normalization normalization = Normalization::token_mean;

  void validate() const;
  friend bool operator==(const ClipConfig&, const ClipConfig&) = default;
};

// ppo_grpo: eps 0.2, sample_mean. dapo_like: decoupled mask (0.2, 0.28),
// unclipped IS weight, token_mean. cispo: IS upper clip 0.2, no lower bound,
// no mask, token_mean. unified: mask (0.2, 0.2) with the CISPO IS clip.
ClipConfig variant_preset(Variant v);

struct AdvantageSet {
  std::vector<double> values;
  double mean = 0.0;
  double std = 0.0;
  bool degenerate = false;
};

// Population standard deviation; degenerate when std < 1e-12 (values are 0).
AdvantageSet grpo_advantages(const std::vector<double>& rewards);
std::vector<double> is_weights(const std::vector<double>& new_logprobs, const std::vector<double>& old_logprobs);
double clip_is_weight(double r, const ClipConfig& cfg);
// Trust-region mask value for one token: false when the update is clipped away.
bool trust_region_keep(double r, double advantage, double eps_low, double eps_high);

// Per-response weights w_i such that the normalized loss is sum_i w_i * sum_t l_it.
std::vector<double> normalization_weights(const std::vector<std::size_t>& lengths, Normalization mode);
double combined_normalization(const std::vector<std::vector<double>>& token_losses, Normalization mode);

struct ResponseTerm {
  NodeId new_logprobs;               // [T_i]
  std::vector<double> old_logprobs;  // behavior policy, frozen
  double advantage = 0.0;
  std::vector<double> ref_logprobs;  // only read when kl_coef > 0
  // When set, stop-gradient quantities (clipped IS weight, mask) are computed
  // from these ratios instead of the live ones. Used by gradient oracles.
  std::vector<double> frozen_ratios;
};

enum class LossKind : std::uint8_t { ppo_grpo, reinforce_is, cispo, unified };

struct LossInfo {
  NodeId loss;
  LossKind kind;
  ClipConfig cfg;
  std::vector<NodeId> ratios;
  std::vector<double> advantages;
};

struct LossDiagnostics {
  std::size_t tokens = 0;
  double zeroed_fraction = 0.0;    // tokens whose gradient the trust region removes
  double is_clip_fraction = 0.0;   // tokens whose IS weight was clipped
  double mean_ratio = 0.0;
  double mean_clipped_ratio = 0.0;
  double mean_abs_ratio_dev = 0.0;
};

LossInfo ppo_grpo_loss(Graph& g, const std::vector<ResponseTerm>& terms, const ClipConfig& cfg);
LossInfo reinforce_is_loss(Graph& g, const std::vector<ResponseTerm>& terms, const ClipConfig& cfg);
LossInfo cispo_loss(Graph& g, const std::vector<ResponseTerm>& terms, const ClipConfig& cfg);
// Uses cfg.mask_* for the mask (when cfg.mask_enabled) and cfg.is_* for the IS clip.
LossInfo unified_loss(Graph& g, const std::vector<ResponseTerm>& terms, const ClipConfig& cfg);
LossInfo variant_loss(Graph& g, Variant v, const std::vector<ResponseTerm>& terms, const ClipConfig& cfg);

// Reads ratios from a graph that has run forward().
LossDiagnostics loss_diagnostics(const Graph& g, const LossInfo& info);

}  // namespace tinyrl

#pragma once

// Training-health instruments: train/infer probability correlation, policy
// entropy and the fork-token (low-probability decile) mask analysis.

#include <array>
#include <optional>
#include <vector>

#include "tinyrl/objectives.hpp"
#include "tinyrl/policy.hpp"
#include "tinyrl/rollout.hpp"

namespace tinyrl {

// Single-pass (Welford) Pearson correlation. Throws ValueError on fewer than
// two points or zero variance. Identical inputs give exactly 1.
double pearson(const std::vector<double>& a, const std::vector<double>& b);

struct CorrelationReport {
  double pearson = 0.0;
  std::size_t tokens = 0;
  double max_abs_gap = 0.0;
  std::vector<double> train_probs;
  std::vector<double> infer_probs;
};

// infer_head overrides the config's head precision for the infer side.
CorrelationReport train_infer_correlation(const PolicyParams& params, const std::vector<std::vector<int>>& sequences,
                                          std::optional<Precision> infer_head = std::nullopt);

struct PrecisionStudy {
  CorrelationReport full_head;     // infer head at f64
  CorrelationReport reduced_head;  // infer head at f32
};

// Random-token sequences of seq_len under a freshly initialized policy until
// at least min_tokens positions are scored.
PrecisionStudy precision_study(const PolicyConfig& config, std::size_t min_tokens, std::size_t seq_len,
                               std::uint64_t seed);

double row_entropy(const double* log_probs, std::size_t n);

struct EntropyReport {
  double mean = 0.0;
  std::vector<double> per_position;  // all positions of all sequences, in order
};
EntropyReport entropy_report(const PolicyParams& params, const std::vector<std::vector<int>>& sequences);

struct ForkTokenRecord {
  double behavior_prob = 0.0;
  double ratio = 1.0;
  double advantage = 0.0;
  bool zeroed_under_ppo = false;
  bool retained_under_cispo = true;
};

struct ForkTokenReport {
  std::vector<ForkTokenRecord> records;
  std::array<std::size_t, 10> decile_count{};
  std::array<double, 10> decile_zeroed_fraction{};
  double lowest_decile_zeroed_fraction = 0.0;
  double cispo_retained_fraction = 1.0;
};

// Deciles are by behavior probability rank (decile 0 = least likely). The
// mask uses cfg.mask_eps_low / mask_eps_high.
ForkTokenReport fork_token_report(const std::vector<std::vector<double>>& behavior_logprobs,
                                  const std::vector<std::vector<double>>& new_logprobs,
                                  const std::vector<double>& advantages, const ClipConfig& cfg);
ForkTokenReport fork_token_report(const RolloutGroup& group, const std::vector<std::vector<double>>& new_logprobs,
                                  const std::vector<double>& advantages, const ClipConfig& cfg);

}  // namespace tinyrl

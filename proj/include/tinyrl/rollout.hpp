#pragma once

// Seeded autoregressive sampling of response groups with temperature, top-p,
// a length window and the repetition early-truncation rule.

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "tinyrl/policy.hpp"

namespace tinyrl {

inline constexpr int kEosToken = 2;

struct SamplingConfig {
  double temperature = 1.0;
  double top_p = 0.95;
  std::size_t max_new_tokens = 32;
  std::size_t repetition_window = 30;
  double repetition_threshold = 0.99;
  bool repetition_check = true;
  std::size_t group_size = 8;

  void validate() const;
  friend bool operator==(const SamplingConfig&, const SamplingConfig&) = default;
};

enum class TruncationReason : std::uint8_t { eos, window_limit, repetition };
const char* truncation_name(TruncationReason r);

struct Response {
  std::vector<int> tokens;
  std::vector<double> behavior_logprobs;  // raw infer-mode log pi, one per token
  std::vector<double> ref_logprobs;       // reference policy, filled only when a KL term is used
  TruncationReason reason = TruncationReason::eos;
  double reward = 0.0;
  bool correct = false;
  bool format_ok = false;
};

struct RolloutGroup {
  std::string task_id;
  std::vector<int> prompt;
  std::vector<Response> responses;
};

// Next-token distributions for one sequence being decoded.
class DecodeSession {
 public:
  virtual ~DecodeSession() = default;
  virtual const std::vector<double>& log_probs() const = 0;
  virtual void feed(int token) = 0;
};

class SequencePolicy {
 public:
  virtual ~SequencePolicy() = default;
  virtual std::size_t vocab_size() const = 0;
  virtual std::size_t max_position() const = 0;
  // Session positioned after BOS and the prompt.
  virtual std::unique_ptr<DecodeSession> start(const std::vector<int>& prompt) const = 0;
};

// The trainable policy in inference mode. Holds a reference to params.
class HybridPolicy : public SequencePolicy {
 public:
  explicit HybridPolicy(const PolicyParams& params, EvalMode mode = EvalMode::infer) : params_(&params), mode_(mode) {}
  std::size_t vocab_size() const override { return params_->config.vocab_size; }
  std::size_t max_position() const override { return params_->config.max_position; }
  std::unique_ptr<DecodeSession> start(const std::vector<int>& prompt) const override;

 private:
  const PolicyParams* params_;
  EvalMode mode_;
};

// Puts `peak` on one token at every step and spreads the rest uniformly.
class FixedTokenPolicy : public SequencePolicy {
 public:
  FixedTokenPolicy(std::size_t vocab, int token, double peak = 1.0, std::size_t max_pos = 4096);
  std::size_t vocab_size() const override { return vocab_; }
  std::size_t max_position() const override { return max_pos_; }
  std::unique_ptr<DecodeSession> start(const std::vector<int>& prompt) const override;

 private:
  std::size_t vocab_;
  std::size_t max_pos_;
  std::vector<double> log_probs_;
};

// Smallest prefix of the probability-sorted distribution (ties by ascending
// id) with mass >= p, renormalized. p = 1 returns the input unchanged.
std::vector<double> top_p_filter(const std::vector<double>& probs, double p);

// True iff the last n entries all strictly exceed tau.
bool check_repetition(const std::vector<double>& recent_probs, std::size_t n, double tau);

Response sample_response(const SequencePolicy& policy, const std::vector<int>& prompt, const SamplingConfig& cfg,
                         std::uint64_t seed);
// Response i uses derive_seed(seed, i).
RolloutGroup sample_group(const SequencePolicy& policy, const std::vector<int>& prompt, const SamplingConfig& cfg,
                          std::uint64_t seed, std::size_t group_size = 0);

// One JSON object per response.
void write_rollout_jsonl(std::ostream& out, const RolloutGroup& group);

}  // namespace tinyrl

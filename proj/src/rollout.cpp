#include "tinyrl/rollout.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>

#include "json.hpp"

#include "tinyrl/error.hpp"
#include "tinyrl/rng.hpp"

namespace tinyrl {

void SamplingConfig::validate() const {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) throw ValueError("sampling: temperature must be positive");
  if (!(top_p > 0.0 && top_p <= 1.0)) throw ValueError("sampling: top_p must lie in (0, 1]");
  if (max_new_tokens < 1) throw ValueError("sampling: max_new_tokens must be at least 1");
  if (repetition_window < 1) throw ValueError("sampling: repetition_window must be at least 1");
  if (!(repetition_threshold > 0.0 && repetition_threshold < 1.0)) {
    throw ValueError("sampling: repetition_threshold must lie in (0, 1)");
  }
  if (group_size < 2) throw ValueError("sampling: group_size must be at least 2");
}

const char* truncation_name(TruncationReason r) {
  switch (r) {
    case TruncationReason::eos: return "eos";
    case TruncationReason::window_limit: return "window_limit";
    case TruncationReason::repetition: return "repetition";
  }
  return "?";
}

namespace {

class HybridSession : public DecodeSession {
 public:
  HybridSession(const PolicyParams& params, EvalMode mode) : decoder_(params, mode) {}
  const std::vector<double>& log_probs() const override { return decoder_.log_probs(); }
  void feed(int token) override { decoder_.feed(token); }

 private:
  PolicyDecoder decoder_;
};

class FixedSession : public DecodeSession {
 public:
  explicit FixedSession(const std::vector<double>& lp) : lp_(lp) {}
  const std::vector<double>& log_probs() const override { return lp_; }
  void feed(int) override {}

 private:
  const std::vector<double>& lp_;
};

}  // namespace

std::unique_ptr<DecodeSession> HybridPolicy::start(const std::vector<int>& prompt) const {
  auto s = std::make_unique<HybridSession>(*params_, mode_);
  for (int t : prompt) s->feed(t);
  return s;
}

FixedTokenPolicy::FixedTokenPolicy(std::size_t vocab, int token, double peak, std::size_t max_pos)
    : vocab_(vocab), max_pos_(max_pos), log_probs_(vocab) {
  if (vocab < 2 || token < 0 || static_cast<std::size_t>(token) >= vocab) throw ValueError("fixed policy: bad token");
  if (!(peak > 0.0 && peak <= 1.0)) throw ValueError("fixed policy: peak must lie in (0, 1]");
  const double rest = (1.0 - peak) / double(vocab - 1);
  for (std::size_t i = 0; i < vocab; ++i) {
    const double p = static_cast<int>(i) == token ? peak : rest;
    log_probs_[i] = p > 0.0 ? std::log(p) : -std::numeric_limits<double>::infinity();
  }
}

std::unique_ptr<DecodeSession> FixedTokenPolicy::start(const std::vector<int>& prompt) const {
  if (prompt.size() + 1 > max_pos_) throw ValueError("fixed policy: prompt exceeds max_position");
  return std::make_unique<FixedSession>(log_probs_);
}

std::vector<double> top_p_filter(const std::vector<double>& probs, double p) {
  if (!(p > 0.0 && p <= 1.0)) throw ValueError("top_p_filter: p must lie in (0, 1]");
  double total = 0.0;
  for (double x : probs) {
    if (!(x >= 0.0) || !std::isfinite(x)) throw ValueError("top_p_filter: probabilities must be nonnegative");
    total += x;
  }
  if (probs.empty() || std::abs(total - 1.0) > 1e-6) throw ValueError("top_p_filter: distribution is not normalized");
  if (p == 1.0) return probs;
  std::vector<std::size_t> order(probs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
  std::vector<double> out(probs.size(), 0.0);
  double mass = 0.0;
  for (std::size_t idx : order) {
    out[idx] = probs[idx];
    mass += probs[idx];
    if (mass >= p - 1e-12) break;
  }
  for (double& x : out) x /= mass;
  return out;
}

bool check_repetition(const std::vector<double>& recent_probs, std::size_t n, double tau) {
  if (n == 0 || recent_probs.size() < n) return false;
  return std::all_of(recent_probs.end() - std::ptrdiff_t(n), recent_probs.end(), [tau](double x) { return x > tau; });
}

Response sample_response(const SequencePolicy& policy, const std::vector<int>& prompt, const SamplingConfig& cfg,
                         std::uint64_t seed) {
  cfg.validate();
  if (prompt.size() + cfg.max_new_tokens > policy.max_position()) {
    throw ValueError("sample: prompt length " + std::to_string(prompt.size()) + " plus window " +
                     std::to_string(cfg.max_new_tokens) + " exceeds the position budget");
  }
  Rng rng(seed);
  auto session = policy.start(prompt);
  Response r;
  std::vector<double> seen;
  const std::size_t V = policy.vocab_size();
  std::vector<double> probs(V);
  while (true) {
    const auto& lp = session->log_probs();
    double m = -std::numeric_limits<double>::infinity();
    for (double x : lp) m = std::max(m, x);
    double z = 0.0;
    for (std::size_t i = 0; i < V; ++i) {
      probs[i] = std::exp((lp[i] - m) / cfg.temperature);
      z += probs[i];
    }
    for (double& x : probs) x /= z;
    const std::vector<double> filtered = top_p_filter(probs, cfg.top_p);
    const double u = rng.uniform();
    double cum = 0.0;
    int token = -1;
    for (std::size_t i = 0; i < V; ++i) {
      if (filtered[i] <= 0.0) continue;
      cum += filtered[i];
      token = static_cast<int>(i);
      if (u < cum) break;
    }
    r.tokens.push_back(token);
    r.behavior_logprobs.push_back(lp[static_cast<std::size_t>(token)]);
    seen.push_back(filtered[static_cast<std::size_t>(token)]);
    if (token == kEosToken) {
      r.reason = TruncationReason::eos;
      break;
    }
    if (cfg.repetition_check && check_repetition(seen, cfg.repetition_window, cfg.repetition_threshold)) {
      r.reason = TruncationReason::repetition;
      break;
    }
    if (r.tokens.size() >= cfg.max_new_tokens) {
      r.reason = TruncationReason::window_limit;
      break;
    }
    session->feed(token);
  }
  return r;
}

RolloutGroup sample_group(const SequencePolicy& policy, const std::vector<int>& prompt, const SamplingConfig& cfg,
                          std::uint64_t seed, std::size_t group_size) {
  const std::size_t G = group_size == 0 ? cfg.group_size : group_size;
  RolloutGroup g;
  g.prompt = prompt;
  g.responses.reserve(G);
  for (std::size_t i = 0; i < G; ++i) g.responses.push_back(sample_response(policy, prompt, cfg, derive_seed(seed, i)));
  return g;
}

void write_rollout_jsonl(std::ostream& out, const RolloutGroup& group) {
  for (std::size_t i = 0; i < group.responses.size(); ++i) {
    const Response& r = group.responses[i];
    nlohmann::json j;
    j["task_id"] = group.task_id;
    j["index"] = i;
    j["prompt"] = group.prompt;
    j["tokens"] = r.tokens;
    j["behavior_logprobs"] = r.behavior_logprobs;
    j["truncation_reason"] = truncation_name(r.reason);
    j["reward"] = r.reward;
    out << j.dump() << '\n';
  }
}

}  // namespace tinyrl

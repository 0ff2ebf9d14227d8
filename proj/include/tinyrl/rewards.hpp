#pragma once

// Rule-based reward with the soft overlong penalty, a scripted generative
// judge with an injectable length bias, and the online length-bias monitor.

#include <cstdint>
#include <deque>
#include <string>
#include <vector>

#include "tinyrl/tasks.hpp"

namespace tinyrl {

struct LengthPenalty {
  bool enabled = true;
  std::size_t l_max = 32;
  std::size_t l_cache = 8;
  friend bool operator==(const LengthPenalty&, const LengthPenalty&) = default;
};

struct RewardConfig {
  double correct_reward = 1.0;
  double format_bonus = 0.1;
  LengthPenalty length_penalty;
  double genrm_bias = 0.0;      // b
  double pairwise_margin = 0.05;
  double length_scale = 100.0;  // normalized_length = length / length_scale
  double recalibration_factor = 0.5;

  void validate() const;
  friend bool operator==(const RewardConfig&, const RewardConfig&) = default;
};

// Soft overlong penalty in [-1, 0]; truncated responses get -1.
double length_penalty(std::size_t length, bool truncated, const LengthPenalty& p);
double rule_reward(const VerifyResult& result, std::size_t length, bool truncated, const RewardConfig& cfg);

// s(x) = correct + b * length / length_scale
double judge_score(bool correct, std::size_t length, const RewardConfig& cfg);
// sign(s(response) - s(reference)), 0 when |difference| <= margin.
int pairwise_verdict(double score_response, double score_reference, const RewardConfig& cfg);
int mock_genrm_pairwise(const std::vector<int>& response, const std::vector<int>& reference, const TaskInstance& task,
                        const RewardConfig& cfg);
// 4 iff the canonical answers match; otherwise min(3, floor(4 * f)) with f
// the fraction of answer positions that agree. Unparseable responses get 0.
int mock_genrm_graded(const std::vector<int>& response, const std::vector<int>& ground_truth, const RewardConfig& cfg,
                      TaskFamily family = TaskFamily::sequence_sort);

struct BiasObservation {
  double mean_length = 0.0;
  double success_rate = 0.0;
  double model_reward = 0.0;
};

struct BiasMonitorConfig {
  std::size_t window = 20;
  std::size_t min_observations = 10;
  double length_growth = 0.2;      // g
  double success_tolerance = 0.05; // s
  void validate() const;
  friend bool operator==(const BiasMonitorConfig&, const BiasMonitorConfig&) = default;
};

enum class MonitorStatus : std::uint8_t { cold_start, ok, alarm };
const char* monitor_status_name(MonitorStatus s);

// Compares the older and newer halves of a sliding window.
class BiasMonitor {
 public:
  explicit BiasMonitor(BiasMonitorConfig cfg = {});
  MonitorStatus observe(const BiasObservation& obs);
  MonitorStatus status() const;
  void reset() { history_.clear(); }
  std::size_t size() const { return history_.size(); }
  const BiasMonitorConfig& config() const { return cfg_; }

 private:
  BiasMonitorConfig cfg_;
  std::deque<BiasObservation> history_;
};

// Multiplies genrm_bias by recalibration_factor, floored at 0.
RewardConfig recalibrate(const RewardConfig& cfg);

// Closed-loop scenario: lengths ~ N(mu, length_std^2) with mu = exp(theta),
// theta trained by REINFORCE on pairwise verdicts against peer samples and
// watched by the monitor. Inflation is proportional to mu while the bias
// term can still beat the verdict margin.
struct LengthBiasScenario {
  std::size_t steps = 300;
  std::size_t batch = 64;
  double initial_mean_length = 200.0;
  double length_std = 40.0;
  double learning_rate = 0.04;
  double success_prob = 0.6;
  RewardConfig reward = [] {
    RewardConfig r;
    r.genrm_bias = 2.0;
    r.recalibration_factor = 0.25;
    return r;
  }();
  BiasMonitorConfig monitor = [] {
    BiasMonitorConfig m;
    m.window = 40;
    m.min_observations = 20;
    return m;
  }();
  std::uint64_t seed = 0;
};

struct LengthBiasStep {
  std::size_t step = 0;
  double mean_length = 0.0;
  double success_rate = 0.0;
  double model_reward = 0.0;
  double bias_before = 0.0;
  double bias_after = 0.0;
  MonitorStatus status = MonitorStatus::cold_start;
};

struct LengthBiasResult {
  std::vector<LengthBiasStep> steps;
  std::vector<std::size_t> alarm_steps;
  double final_bias = 0.0;
};

LengthBiasResult simulate_length_bias_loop(const LengthBiasScenario& scenario);

}  // namespace tinyrl

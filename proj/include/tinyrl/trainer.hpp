#pragma once

// RL loop: batch collection with dynamic sampling, multi-round off-policy
// minibatch updates, curriculum mixing of rule-verified and judge-scored
// tasks, and the staged length-window scheduler.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "tinyrl/error.hpp"
#include "tinyrl/objectives.hpp"
#include "tinyrl/optimizer.hpp"
#include "tinyrl/policy.hpp"
#include "tinyrl/rewards.hpp"
#include "tinyrl/rollout.hpp"
#include "tinyrl/tasks.hpp"

namespace tinyrl {

struct CurriculumPoint {
  std::size_t step = 0;
  double judge_share = 0.0;
  friend bool operator==(const CurriculumPoint&, const CurriculumPoint&) = default;
};

// Judge share is 0 before the first point, linear between points and
// constant after the last. Shares must be non-decreasing.
struct CurriculumConfig {
  std::vector<CurriculumPoint> points;
  void validate() const;
  friend bool operator==(const CurriculumConfig&, const CurriculumConfig&) = default;
};

struct Mixture {
  double rule = 1.0;
  double judge = 0.0;
};

struct WindowConfig {
  std::vector<std::size_t> lengths{64, 80, 96, 112, 128};
  double p99_fraction = 0.9;
  double slope_bound = 0.01;
  std::size_t stats_window = 50;
  void validate() const;
  friend bool operator==(const WindowConfig&, const WindowConfig&) = default;
};

enum class WindowDecision : std::uint8_t { cold_start, stay, advance };
const char* window_decision_name(WindowDecision d);

struct WindowState {
  std::size_t index = 0;
  double p99 = 0.0;                  // latest batch's 99th-percentile response length
  std::vector<double> perplexities;  // per step since the last advance, oldest first
};

// Least-squares slope of values against their index.
double least_squares_slope(const std::vector<double>& values);
double percentile(std::vector<double> values, double q);

WindowDecision window_scheduler(const WindowState& state, const WindowConfig& cfg);
// Records one step's statistics, decides, and on advance moves to the next
// window and clears the perplexity history.
WindowDecision window_step(WindowState& state, double p99, double perplexity, const WindowConfig& cfg);
Mixture curriculum_next(std::size_t step, const CurriculumConfig& cfg);

struct TaskPool {
  std::vector<TaskInstance> rule_tasks;
  std::vector<TaskInstance> judge_tasks;
};

struct FamilySpec {
  TaskFamily family;
  int min_difficulty;
  int max_difficulty;
  friend bool operator==(const FamilySpec&, const FamilySpec&) = default;
};

std::vector<TaskInstance> generate_pool(const std::vector<FamilySpec>& families, std::size_t count, std::uint64_t seed);

struct TrainConfig {
  Variant variant = Variant::cispo;
  ClipConfig clip = variant_preset(Variant::cispo);
  OptimizerConfig optimizer;
  std::size_t group_size = 8;
  std::size_t batch_groups = 16;
  std::size_t rounds = 16;
  std::size_t steps = 400;
  std::size_t warmstart_steps = 0;
  std::size_t warmstart_batch = 16;
  double warmstart_lr = 3e-3;
  // Share of warm-start targets that copy the candidates in prompt order.
  double warmstart_copy_prob = 0.0;
  std::size_t eval_interval = 20;
  std::size_t eval_tasks = 64;
  std::size_t eval_samples = 4;
  std::size_t pool_size = 512;
  std::vector<FamilySpec> rule_families{{TaskFamily::sequence_sort, 2, 3}};
  std::vector<FamilySpec> judge_families{{TaskFamily::substitution_cipher, 1, 2}};
  CurriculumConfig curriculum;
  WindowConfig window;
  BiasMonitorConfig monitor;
  double retry_factor = 3.0;

  void validate() const;
};

struct ExperimentConfig {
  int schema_version = 1;
  std::uint64_t seed = 0;
  std::string output_dir = "runs/default";
  PolicyConfig policy;
  SamplingConfig sampling;
  RewardConfig reward;
  TrainConfig train;

  void validate() const;
};

class SamplingExhausted : public Error {
 public:
  SamplingExhausted(const std::string& msg, std::size_t shortfall) : Error(msg), shortfall_(shortfall) {}
  std::size_t shortfall() const { return shortfall_; }

 private:
  std::size_t shortfall_;
};

struct Batch {
  std::vector<RolloutGroup> groups;
  std::vector<std::vector<double>> advantages;  // per group, per response
  std::vector<bool> judge_scored;               // per group
  std::size_t requested = 0;
  std::size_t shortfall = 0;
  std::size_t attempts = 0;
  std::size_t degenerate_discarded = 0;
};

struct CollectContext {
  std::size_t window = 32;
  Mixture mixture;
  const PolicyParams* reference = nullptr;  // for kl_coef > 0
};

// Discards groups whose rewards are all equal and resamples replacement
// prompts up to retry_factor * batch_groups extra attempts. Throws
// SamplingExhausted if no usable group was found.
Batch collect_batch(const PolicyParams& params, const TaskPool& pool, const ExperimentConfig& cfg,
                    const CollectContext& ctx, std::uint64_t seed);
// Same, with an arbitrary sampling policy (scripted policies in tests).
Batch collect_batch(const SequencePolicy& policy, const TaskPool& pool, const ExperimentConfig& cfg,
                    const CollectContext& ctx, std::uint64_t seed);

struct RoundMetrics {
  std::size_t responses = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
  double entropy = 0.0;
  LossDiagnostics diag;
  double fork_low_decile_zeroed = 0.0;
};

// One optimizer step per contiguous minibatch, always against the frozen
// behavior log-probabilities stored in the batch.
std::vector<RoundMetrics> train_minibatches(const Batch& batch, PolicyParams& params, OptimizerState& opt,
                                            const ExperimentConfig& cfg);

struct WarmstartResult {
  std::size_t steps = 0;
  double initial_nll = 0.0;
  double final_nll = 0.0;
};

// Supervised format warm start: NLL of OPEN <random guess> CLOSE EOS
// continuations, teaching the answer format but not the task.
WarmstartResult format_warmstart(PolicyParams& params, const TaskPool& pool, const ExperimentConfig& cfg,
                                 std::uint64_t seed);

// Mean verified success over a fixed task set; sample j of task i uses
// derive_seed(seed, i * samples + j) so checkpoints share random numbers.
double evaluate_pass_rate(const PolicyParams& params, const std::vector<TaskInstance>& tasks,
                          const SamplingConfig& sampling, std::size_t samples, std::uint64_t seed);

struct RunResult {
  std::vector<nlohmann::ordered_json> metrics;
  std::vector<std::pair<std::size_t, double>> eval_curve;  // (step, pass rate)
  PolicyParams final_params;
  WarmstartResult warmstart;
  std::vector<std::string> events;
};

using MetricsSink = std::function<void(const nlohmann::ordered_json&)>;

RunResult run_experiment(const ExperimentConfig& cfg, const MetricsSink& sink = nullptr);

}  // namespace tinyrl

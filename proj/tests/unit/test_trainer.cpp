#include <gtest/gtest.h>

#include <cmath>

#include "tinyrl/error.hpp"
#include "tinyrl/rng.hpp"
#include "tinyrl/trainer.hpp"

using namespace tinyrl;

namespace {

ExperimentConfig tiny_experiment() {
  ExperimentConfig c;
  c.policy.d_model = 16;
  c.policy.n_heads = 2;
  c.policy.n_layers = 2;
  c.policy.hybrid_ratio = 1;
  c.policy.max_position = 24;
  c.sampling.top_p = 1.0;
  c.reward.length_penalty.l_cache = 4;
  c.train.group_size = 4;
  c.train.batch_groups = 4;
  c.train.rounds = 4;
  c.train.steps = 3;
  c.train.warmstart_steps = 5;
  c.train.eval_interval = 2;
  c.train.eval_tasks = 6;
  c.train.eval_samples = 2;
  c.train.pool_size = 32;
  c.train.window.lengths = {12};
  c.train.window.stats_window = 2;
  return c;
}

TaskPool sort_pool(std::size_t n) {
  TaskPool p;
  p.rule_tasks = generate_pool({{TaskFamily::sequence_sort, 2, 3}}, n, 11);
  return p;
}

CollectContext context(std::size_t window = 12) {
  CollectContext c;
  c.window = window;
  return c;
}

}  // namespace

TEST(Curriculum, Examples) {
  CurriculumConfig c;
  c.points = {{100, 0.1}, {300, 0.4}};
  EXPECT_EQ(curriculum_next(0, c).rule, 1.0);
  EXPECT_EQ(curriculum_next(0, c).judge, 0.0);
  EXPECT_NEAR(curriculum_next(1000, c).rule, 0.6, 1e-12);
  EXPECT_NEAR(curriculum_next(1000, c).judge, 0.4, 1e-12);
  EXPECT_NEAR(curriculum_next(200, c).judge, 0.25, 1e-12);
  double prev = 0.0;
  for (std::size_t s = 0; s < 500; ++s) {
    const Mixture m = curriculum_next(s, c);
    EXPECT_GE(m.judge, prev);
    EXPECT_NEAR(m.rule + m.judge, 1.0, 1e-12);
    prev = m.judge;
  }
  EXPECT_EQ(curriculum_next(5, CurriculumConfig{}).judge, 0.0);
  c.points = {{10, 0.5}, {20, 0.2}};
  EXPECT_THROW(c.validate(), ValueError);
}

TEST(Window, SchedulerExamples) {
  WindowConfig cfg;
  cfg.lengths = {100, 200};
  cfg.stats_window = 5;
  WindowState s;
  s.perplexities = {3, 3, 3, 3, 3};
  s.p99 = 95;
  EXPECT_EQ(window_scheduler(s, cfg), WindowDecision::advance);
  s.p99 = 50;
  EXPECT_EQ(window_scheduler(s, cfg), WindowDecision::stay);
  s.p99 = 99;
  s.perplexities = {1, 2, 3, 4, 5};
  EXPECT_EQ(window_scheduler(s, cfg), WindowDecision::stay);
  s.perplexities = {3, 3};
  EXPECT_EQ(window_scheduler(s, cfg), WindowDecision::cold_start);
  s.index = 1;
  EXPECT_EQ(window_scheduler(s, cfg), WindowDecision::stay);
}

TEST(Window, StepNeverSkips) {
  WindowConfig cfg;
  cfg.lengths = {8, 16, 24, 32};
  cfg.stats_window = 3;
  WindowState s;
  std::size_t prev = 0;
  for (int i = 0; i < 40; ++i) {
    const std::size_t before = s.index;
    const auto d = window_step(s, 1e9, 2.0, cfg);
    EXPECT_LE(s.index, before + 1);
    EXPECT_EQ(d == WindowDecision::advance, s.index == before + 1);
    EXPECT_GE(s.index, prev);
    prev = s.index;
  }
  EXPECT_EQ(s.index, 3u);
}

TEST(Stats, SlopeAndPercentile) {
  EXPECT_NEAR(least_squares_slope({1, 3, 5, 7}), 2.0, 1e-12);
  EXPECT_NEAR(least_squares_slope({4, 4, 4}), 0.0, 1e-12);
  EXPECT_NEAR(percentile({1, 2, 3, 4, 5}, 0.5), 3.0, 1e-12);
  EXPECT_NEAR(percentile({0, 10}, 0.99), 9.9, 1e-12);
}

TEST(Collect, OraclePolicyIsExhausted) {
  const ExperimentConfig cfg = tiny_experiment();
  try {
    collect_batch(OraclePolicy{}, sort_pool(16), cfg, context(), 1);
    FAIL() << "expected SamplingExhausted";
  } catch (const SamplingExhausted& e) {
    EXPECT_EQ(e.shortfall(), cfg.train.batch_groups);
  }
}

TEST(Collect, GroupsAreNonDegenerateAndDeterministic) {
  const ExperimentConfig cfg = tiny_experiment();
  const TaskPool pool = sort_pool(16);
  const Batch a = collect_batch(RandomGuessPolicy{}, pool, cfg, context(), 5);
  const Batch b = collect_batch(RandomGuessPolicy{}, pool, cfg, context(), 5);
  ASSERT_EQ(a.groups.size() + a.shortfall, cfg.train.batch_groups);
  ASSERT_FALSE(a.groups.empty());
  for (std::size_t g = 0; g < a.groups.size(); ++g) {
    double lo = 1e9, hi = -1e9;
    for (const auto& r : a.groups[g].responses) {
      lo = std::min(lo, r.reward);
      hi = std::max(hi, r.reward);
    }
    EXPECT_GT(hi, lo);
    EXPECT_EQ(a.groups[g].task_id, b.groups[g].task_id);
    EXPECT_EQ(a.groups[g].responses[0].tokens, b.groups[g].responses[0].tokens);
    EXPECT_EQ(a.advantages[g], b.advantages[g]);
  }
  EXPECT_LE(a.attempts, cfg.train.batch_groups + std::size_t(std::ceil(cfg.train.retry_factor * cfg.train.batch_groups)));
}

TEST(Minibatches, OnPolicyFirstRoundAndDrift) {
  ExperimentConfig cfg = tiny_experiment();
  cfg.train.batch_groups = 8;
  cfg.train.rounds = 16;
  cfg.train.optimizer.learning_rate = 3e-3;
  PolicyParams params = init_policy(cfg.policy, 2);
  const Batch batch = collect_batch(params, sort_pool(32), cfg, context(), 9);
  ASSERT_EQ(batch.groups.size(), 8u);
  const Batch copy = batch;
  OptimizerState opt = make_optimizer_state(params.tensors);
  const auto rounds = train_minibatches(batch, params, opt, cfg);
  ASSERT_EQ(rounds.size(), 16u);
  EXPECT_EQ(rounds[0].diag.mean_ratio, 1.0);
  EXPECT_EQ(rounds[0].diag.mean_abs_ratio_dev, 0.0);
  EXPECT_GT(rounds[15].diag.mean_abs_ratio_dev, rounds[1].diag.mean_abs_ratio_dev);
  for (std::size_t g = 0; g < batch.groups.size(); ++g) {
    for (std::size_t i = 0; i < batch.groups[g].responses.size(); ++i) {
      EXPECT_EQ(batch.groups[g].responses[i].behavior_logprobs, copy.groups[g].responses[i].behavior_logprobs);
    }
  }
  cfg.train.rounds = 1;
  PolicyParams fresh = init_policy(cfg.policy, 2);
  OptimizerState opt2 = make_optimizer_state(fresh.tensors);
  const auto one = train_minibatches(batch, fresh, opt2, cfg);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one[0].diag.mean_ratio, 1.0);
  EXPECT_THROW(train_minibatches(Batch{}, fresh, opt2, cfg), ValueError);
}

TEST(Warmstart, LowersFormatLoss) {
  ExperimentConfig cfg = tiny_experiment();
  cfg.train.warmstart_steps = 30;
  PolicyParams params = init_policy(cfg.policy, 4);
  const auto res = format_warmstart(params, sort_pool(16), cfg, 3);
  EXPECT_EQ(res.steps, 30u);
  EXPECT_LT(res.final_nll, res.initial_nll);
  cfg.train.warmstart_copy_prob = 1.5;
  EXPECT_THROW(cfg.train.validate(), ValueError);
}

TEST(Experiment, DeterministicAndComplete) {
  const ExperimentConfig cfg = tiny_experiment();
  const RunResult a = run_experiment(cfg);
  const RunResult b = run_experiment(cfg);
  ASSERT_EQ(a.metrics.size(), cfg.train.steps);
  for (std::size_t i = 0; i < a.metrics.size(); ++i) EXPECT_EQ(a.metrics[i].dump(), b.metrics[i].dump());
  EXPECT_EQ(a.final_params.tensors.size(), b.final_params.tensors.size());
  for (std::size_t i = 0; i < a.final_params.tensors.size(); ++i) {
    EXPECT_EQ(a.final_params.tensors[i].values(), b.final_params.tensors[i].values());
  }
  for (const char* key : {"reward_mean", "pass_rate", "length_p50", "length_p99", "entropy", "clip_fraction",
                          "mean_clipped_ratio", "window_index", "curriculum", "rounds", "monitor"}) {
    EXPECT_TRUE(a.metrics[0].contains(key)) << key;
  }
  ASSERT_FALSE(a.eval_curve.empty());
  EXPECT_EQ(a.eval_curve.back().first, cfg.train.steps);
}

TEST(Experiment, ZeroSteps) {
  ExperimentConfig cfg = tiny_experiment();
  cfg.train.steps = 0;
  cfg.train.warmstart_steps = 0;
  const RunResult r = run_experiment(cfg);
  EXPECT_TRUE(r.metrics.empty());
  const PolicyParams init = init_policy(cfg.policy, derive_seed(cfg.seed, 1));
  for (std::size_t i = 0; i < init.tensors.size(); ++i) EXPECT_EQ(r.final_params.tensors[i].values(), init.tensors[i].values());
}

TEST(Experiment, Validation) {
  ExperimentConfig cfg = tiny_experiment();
  cfg.train.group_size = 1;
  EXPECT_THROW(cfg.validate(), ValueError);
  cfg = tiny_experiment();
  cfg.train.window.lengths = {};
  EXPECT_THROW(cfg.validate(), ValueError);
}

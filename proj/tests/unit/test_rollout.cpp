#include <gtest/gtest.h>

#include <sstream>

#include "json.hpp"

#include "../support/oracles.hpp"
#include "tinyrl/error.hpp"
#include "tinyrl/rollout.hpp"
#include "tinyrl/tasks.hpp"

using namespace tinyrl;

TEST(TopP, KeepsSmallestCoveringPrefix) {
  const auto f = top_p_filter({0.6, 0.3, 0.1}, 0.8);
  EXPECT_NEAR(f[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(f[1], 1.0 / 3.0, 1e-15);
  EXPECT_EQ(f[2], 0.0);
}

TEST(TopP, OneIsIdentity) {
  const std::vector<double> p{0.1, 0.2, 0.05, 0.65};
  EXPECT_EQ(top_p_filter(p, 1.0), p);
}

TEST(TopP, TiesResolvedByAscendingId) {
  const auto f = top_p_filter({0.25, 0.25, 0.25, 0.25}, 0.5);
  EXPECT_EQ(f, (std::vector<double>{0.5, 0.5, 0.0, 0.0}));
}

TEST(Repetition, RuleExamples) {
  EXPECT_TRUE(check_repetition(std::vector<double>(30, 0.995), 30, 0.99));
  std::vector<double> v(29, 0.995);
  v.push_back(0.5);
  EXPECT_FALSE(check_repetition(v, 30, 0.99));
  EXPECT_FALSE(check_repetition({}, 30, 0.99));
}

TEST(Sampling, GroupIsDeterministic) {
  const auto p = init_policy(tinyrl::testing::small_config(), 4);
  HybridPolicy pol(p);
  SamplingConfig cfg;
  cfg.max_new_tokens = 10;
  const auto a = sample_group(pol, {3, 4}, cfg, 17, 2), b = sample_group(pol, {3, 4}, cfg, 17, 2);
  ASSERT_EQ(a.responses.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(a.responses[i].tokens, b.responses[i].tokens);
    EXPECT_EQ(a.responses[i].behavior_logprobs, b.responses[i].behavior_logprobs);
  }
}

TEST(Sampling, BehaviorLogprobsMatchTeacherForcedInferMode) {
  const auto p = init_policy(tinyrl::testing::small_config(), 6);
  HybridPolicy pol(p);
  SamplingConfig cfg;
  cfg.max_new_tokens = 12;
  const std::vector<int> prompt{7, 8};
  const auto r = sample_response(pol, prompt, cfg, 3);
  std::vector<int> seq = prompt;
  seq.insert(seq.end(), r.tokens.begin(), r.tokens.end());
  const auto lp = token_logprobs(p, seq, EvalMode::infer);
  for (std::size_t t = 0; t < r.tokens.size(); ++t) EXPECT_EQ(r.behavior_logprobs[t], lp[prompt.size() + t]);
}

TEST(Sampling, PeakedPolicyTruncatedByRepetition) {
  FixedTokenPolicy pol(tok::vocab_size, tok::digit(3), 0.9995);
  SamplingConfig cfg;
  cfg.max_new_tokens = 100;
  cfg.repetition_window = 30;
  cfg.repetition_threshold = 0.99;
  const std::vector<int> prompt{26, 6, 7};
  const auto r = sample_response(pol, prompt, cfg, 1);
  EXPECT_EQ(r.reason, TruncationReason::repetition);
  EXPECT_EQ(prompt.size() + r.tokens.size(), prompt.size() + 30);
  cfg.repetition_check = false;
  const auto w = sample_response(pol, prompt, cfg, 1);
  EXPECT_EQ(w.reason, TruncationReason::window_limit);
  EXPECT_EQ(w.tokens.size(), 100u);
}

TEST(Sampling, SingleTokenWindow) {
  const auto p = init_policy(tinyrl::testing::small_config(), 8);
  HybridPolicy pol(p);
  SamplingConfig cfg;
  cfg.max_new_tokens = 1;
  const auto g = sample_group(pol, {5}, cfg, 2, 16);
  for (const auto& r : g.responses) {
    EXPECT_EQ(r.tokens.size(), 1u);
    EXPECT_TRUE(r.reason == TruncationReason::eos || r.reason == TruncationReason::window_limit);
  }
}

TEST(Sampling, EosStopsGeneration) {
  FixedTokenPolicy pol(tok::vocab_size, tok::eos, 1.0);
  SamplingConfig cfg;
  const auto r = sample_response(pol, {6}, cfg, 0);
  EXPECT_EQ(r.tokens, (std::vector<int>{tok::eos}));
  EXPECT_EQ(r.reason, TruncationReason::eos);
}

TEST(Sampling, PositionBudgetEnforced) {
  const auto p = init_policy(tinyrl::testing::small_config(), 8);
  HybridPolicy pol(p);
  SamplingConfig cfg;
  cfg.max_new_tokens = 15;
  EXPECT_THROW(sample_response(pol, {5, 6}, cfg, 0), ValueError);
}

TEST(Sampling, ConfigValidation) {
  SamplingConfig c;
  c.temperature = 0.0;
  EXPECT_THROW(c.validate(), ValueError);
  c = SamplingConfig{};
  c.top_p = 1.5;
  EXPECT_THROW(c.validate(), ValueError);
}

TEST(Sampling, RolloutJsonl) {
  FixedTokenPolicy pol(tok::vocab_size, tok::eos, 1.0);
  const auto g = sample_group(pol, {6}, SamplingConfig{}, 0, 2);
  std::ostringstream out;
  write_rollout_jsonl(out, g);
  std::istringstream in(out.str());
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("truncation_reason"), "eos");
    ++n;
  }
  EXPECT_EQ(n, 2);
}

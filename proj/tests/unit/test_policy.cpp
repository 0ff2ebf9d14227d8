#include <gtest/gtest.h>

#include <cmath>

#include "../support/oracles.hpp"
#include "tinyrl/diagnostics.hpp"
#include "tinyrl/error.hpp"
#include "tinyrl/policy.hpp"

using namespace tinyrl;
using tinyrl::testing::small_config;

TEST(Policy, InitIsDeterministic) {
  const auto a = init_policy(small_config(), 7), b = init_policy(small_config(), 7), c = init_policy(small_config(), 8);
  ASSERT_EQ(a.tensors.size(), b.tensors.size());
  for (std::size_t i = 0; i < a.tensors.size(); ++i) EXPECT_EQ(a.tensors[i].values(), b.tensors[i].values());
  EXPECT_NE(a.tensors[0].values(), c.tensors[0].values());
}

TEST(Policy, ParameterLayout) {
  const PolicyConfig cfg = small_config();
  const auto p = init_policy(cfg, 0);
  EXPECT_EQ(p.names.front(), "embed");
  EXPECT_EQ(p.names[1], "pos");
  EXPECT_EQ(p.names[2 + 10 + 1], "layers.1.wq");
  EXPECT_EQ(p.names.back(), "head_b");
  EXPECT_EQ(p.get("layers.0.w1").shape(), (Shape{8, 16}));
  EXPECT_EQ(p.tensors.size(), 2 + 10 * cfg.n_layers + 3);
  for (double g : p.get("final_norm").values()) EXPECT_EQ(g, 1.0);
}

TEST(Policy, IndivisibleHeadsRejected) {
  PolicyConfig c;
  c.d_model = 12;
  c.n_heads = 5;
  EXPECT_THROW(c.validate(), ValueError);
  EXPECT_THROW(init_policy(c, 0), ValueError);
}

TEST(Policy, HybridLayerPattern) {
  PolicyConfig c;
  c.n_layers = 16;
  c.hybrid_ratio = 7;
  EXPECT_EQ(c.softmax_layer_count(), 2u);
  EXPECT_FALSE(c.is_softmax_layer(6));
  EXPECT_TRUE(c.is_softmax_layer(7));
  EXPECT_TRUE(c.is_softmax_layer(15));
}

TEST(Policy, DefaultDecayLadder) {
  const auto d = default_decays(4, 4);
  for (std::size_t l = 0; l < 4; ++l) {
    for (std::size_t h = 0; h < 4; ++h) {
      EXPECT_GT(d[l][h], 0.0);
      EXPECT_LE(d[l][h], 1.0);
      if (h > 0) {
        EXPECT_GT(d[l][h], d[l][h - 1]);
      }
    }
  }
}

TEST(Policy, FreshInitIsNearUniform) {
  PolicyConfig c;
  c.vocab_size = 16;
  const auto p = init_policy(c, 3);
  Rng rng(4);
  for (int s = 0; s < 5; ++s) {
    std::vector<int> seq(20);
    for (auto& t : seq) t = int(rng.index(16));
    const Tensor lp = position_log_probs(p, seq, EvalMode::train);
    for (double x : lp.values()) {
      EXPECT_GT(std::exp(x), 0.02);
      EXPECT_LT(std::exp(x), 0.2);
    }
  }
}

TEST(Policy, LengthOneSequenceIsLogSoftmaxOfHead) {
  const auto p = init_policy(small_config(), 1);
  const auto lp = token_logprobs(p, {5}, EvalMode::train);
  ASSERT_EQ(lp.size(), 1u);
  const Tensor full = position_log_probs(p, {5}, EvalMode::train);
  EXPECT_EQ(lp[0], full[5]);
  double z = 0.0;
  for (double x : full.values()) z += std::exp(x);
  EXPECT_NEAR(z, 1.0, 1e-12);
}

TEST(Policy, DecoderMatchesTeacherForcingBitwise) {
  for (int mode = 0; mode < 2; ++mode) {
    const EvalMode m = mode == 0 ? EvalMode::train : EvalMode::infer;
    const auto p = init_policy(small_config(), 9);
    const std::vector<int> seq{3, 7, 11, 2, 30, 31, 5, 9};
    const Tensor lp = position_log_probs(p, seq, m);
    PolicyDecoder dec(p, m);
    for (std::size_t t = 0; t < seq.size(); ++t) {
      for (std::size_t v = 0; v < p.config.vocab_size; ++v) EXPECT_EQ(dec.log_probs()[v], lp.at(t, v));
      dec.feed(seq[t]);
    }
  }
}

TEST(Policy, IdenticalModesAgreeExactly) {
  const auto p = init_policy(small_config(), 2);
  const std::vector<int> seq{1, 2, 3, 4, 5};
  EXPECT_EQ(token_logprobs(p, seq, EvalMode::train), token_logprobs(p, seq, EvalMode::infer));
}

TEST(Policy, SequenceLongerThanMaxPositionRejected) {
  const auto p = init_policy(small_config(), 2);
  EXPECT_THROW(token_logprobs(p, std::vector<int>(17, 3), EvalMode::train), ValueError);
  EXPECT_THROW(token_logprobs(p, {99}, EvalMode::train), ValueError);
}

TEST(Policy, NllGradientMatchesFiniteDifferences) {
  PolicyParams p = init_policy(small_config(), 21);
  const std::vector<int> seq{4, 9, 13, 2, 7, 30};
  auto nll = [&] {
    Graph g;
    const PolicyNodes n = build_policy_graph(g, p, seq, EvalMode::train);
    NodeId loss = g.scale(g.mean(n.token_logprobs), -1.0);
    g.forward();
    return g.value(loss).item();
  };
  Graph g;
  const PolicyNodes n = build_policy_graph(g, p, seq, EvalMode::train);
  NodeId loss = g.scale(g.mean(n.token_logprobs), -1.0);
  g.forward();
  const auto grads = g.backward(loss);
  const auto fd = finite_diff_grad(nll, p.pointers());
  std::vector<double> a, b;
  for (std::size_t i = 0; i < grads.size(); ++i) {
    a.insert(a.end(), grads[i].grad.values().begin(), grads[i].grad.values().end());
    b.insert(b.end(), fd[i].values().begin(), fd[i].values().end());
  }
  EXPECT_LT(relative_error(a, b), 1e-4);
}

TEST(Policy, ReducedPrecisionHeadDiverges) {
  PolicyConfig c = small_config();
  c.head_activation_offset = 4e6;
  const PrecisionStudy s = precision_study(c, 2000, 16, 1);
  EXPECT_EQ(s.full_head.pearson, 1.0);
  EXPECT_LT(s.reduced_head.pearson, s.full_head.pearson);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  PolicyConfig c = small_config();
  c.decays = default_decays(2, 2);
  c.decays[0][1] = 0.123456789012345678;
  const auto p = init_policy(c, 5);
  const std::string bytes = serialize_checkpoint(p);
  const auto q = deserialize_checkpoint(bytes);
  EXPECT_EQ(q.config, p.config);
  EXPECT_EQ(q.names, p.names);
  for (std::size_t i = 0; i < p.tensors.size(); ++i) EXPECT_EQ(q.tensors[i].values(), p.tensors[i].values());
  EXPECT_EQ(serialize_checkpoint(q), bytes);
}

TEST(Checkpoint, CorruptionDetected) {
  const auto p = init_policy(small_config(), 5);
  std::string bytes = serialize_checkpoint(p);
  EXPECT_THROW(deserialize_checkpoint(bytes.substr(0, bytes.size() - 3)), ValueError);
  std::string bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(deserialize_checkpoint(bad), ValueError);
  std::string ver = bytes;
  ver[8] = 9;
  EXPECT_THROW(deserialize_checkpoint(ver), ValueError);
  EXPECT_THROW(deserialize_checkpoint(bytes + "x"), ValueError);
}

#include <gtest/gtest.h>

#include <cmath>

#include "tinyrl/error.hpp"
#include "tinyrl/optimizer.hpp"

using namespace tinyrl;

namespace {

// Minimizes scale * x^2 from x = 1 and returns the final x.
double descend(double scale, const OptimizerConfig& cfg, int steps) {
  std::vector<Tensor> x{Tensor::scalar(1.0)};
  OptimizerState st = make_optimizer_state(x);
  for (int i = 0; i < steps; ++i) {
    std::vector<Tensor> g{Tensor::scalar(2.0 * scale * x[0].item())};
    adamw_step(x, g, st, cfg);
  }
  return x[0].item();
}

}  // namespace

TEST(Clip, Examples) {
  std::vector<Tensor> g{Tensor::vector({1.2, 0.0}), Tensor::vector({1.6})};
  EXPECT_DOUBLE_EQ(clip_gradients(g, 1.0), 2.0);
  EXPECT_DOUBLE_EQ(g[0][0], 0.6);
  EXPECT_DOUBLE_EQ(g[1][0], 0.8);
  std::vector<Tensor> small{Tensor::vector({0.3, 0.4})};
  clip_gradients(small, 1.0);
  EXPECT_DOUBLE_EQ(small[0][0], 0.3);
  std::vector<Tensor> zero{Tensor::vector({0.0, 0.0})};
  EXPECT_DOUBLE_EQ(clip_gradients(zero, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(zero[0][1], 0.0);
  std::vector<Tensor> bad{Tensor::vector({NAN})};
  EXPECT_THROW(clip_gradients(bad, 1.0), NumericError);
}

TEST(Adam, FirstStepMagnitudeIsLr) {
  OptimizerConfig c;
  c.learning_rate = 0.01;
  for (double g : {3.0, -0.002, 1e-9}) {
    std::vector<Tensor> x{Tensor::scalar(0.5)};
    OptimizerState st = make_optimizer_state(x);
    adamw_step(x, {Tensor::scalar(g)}, st, c);
    EXPECT_NEAR(0.5 - x[0].item(), std::copysign(0.01, g), 1e-7);
  }
}

TEST(Adam, DecoupledDecayOnly) {
  OptimizerConfig c;
  c.learning_rate = 0.01;
  c.weight_decay = 0.1;
  std::vector<Tensor> x{Tensor::scalar(2.0)};
  OptimizerState st = make_optimizer_state(x);
  for (int i = 0; i < 50; ++i) adamw_step(x, {Tensor::scalar(0.0)}, st, c);
  EXPECT_NEAR(x[0].item(), 2.0 * std::pow(1.0 - 0.01 * 0.1, 50), 1e-12);
}

TEST(Adam, QuadraticConverges) {
  OptimizerConfig c;
  c.learning_rate = 0.05;
  EXPECT_LT(std::abs(descend(1.0, c, 100)), 0.1);
}

TEST(Adam, TinyGradientsNeedSmallEpsilon) {
  OptimizerConfig good;
  good.learning_rate = 0.01;
  OptimizerConfig legacy = optimizer_preset("legacy");
  legacy.learning_rate = 0.01;
  // gradients ~ 2e-16
  const double moved_good = 1.0 - descend(1e-16, good, 100);
  const double moved_legacy = 1.0 - descend(1e-16, legacy, 100);
  EXPECT_GT(moved_good, 0.1);
  EXPECT_LT(moved_legacy, 1e-6);
}

TEST(Adam, Deterministic) {
  OptimizerConfig c;
  EXPECT_EQ(descend(0.3, c, 37), descend(0.3, c, 37));
}

TEST(Adam, Validation) {
  OptimizerConfig c;
  c.beta2 = 1.0;
  EXPECT_THROW(c.validate(), ValueError);
  c = OptimizerConfig{};
  c.epsilon = 0.0;
  EXPECT_THROW(c.validate(), ValueError);
  c = OptimizerConfig{};
  c.grad_clip = 0.0;
  EXPECT_THROW(c.validate(), ValueError);
  EXPECT_THROW(optimizer_preset("sgd"), ValueError);
  std::vector<Tensor> x{Tensor::vector({1.0, 2.0})};
  OptimizerState st = make_optimizer_state(x);
  EXPECT_ANY_THROW(adamw_step(x, {Tensor::vector({1.0})}, st, OptimizerConfig{}));
}

#include "tinyrl/optimizer.hpp"

#include <cmath>

#include "tinyrl/error.hpp"

namespace tinyrl {

void OptimizerConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ValueError("optimizer: learning_rate must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ValueError("optimizer: betas must lie in [0, 1)");
  }
  if (!(epsilon > 0.0)) throw ValueError("optimizer: epsilon must be positive");
  if (!(weight_decay >= 0.0)) throw ValueError("optimizer: weight_decay must be >= 0");
  if (!(grad_clip > 0.0)) throw ValueError("optimizer: grad_clip must be positive");
}

OptimizerConfig optimizer_preset(const std::string& name) {
  OptimizerConfig c;
  if (name == "default") return c;
  if (name == "legacy") {
    c.beta2 = 0.999;
    c.epsilon = 1e-8;
    return c;
  }
  throw ValueError("unknown optimizer preset '" + name + "'");
}

OptimizerState make_optimizer_state(const std::vector<Tensor>& params) {
  OptimizerState s;
  for (const auto& p : params) {
    s.m.emplace_back(p.shape());
    s.v.emplace_back(p.shape());
  }
  return s;
}

double global_norm(const std::vector<Tensor>& grads) {
  double s = 0.0;
  for (const auto& g : grads) {
    for (double x : g.values()) s += x * x;
  }
  return std::sqrt(s);
}

double clip_gradients(std::vector<Tensor>& grads, double threshold) {
  if (!(threshold > 0.0)) throw ValueError("clip_gradients: threshold must be positive");
  for (const auto& g : grads) {
    if (!g.all_finite()) throw NumericError("clip_gradients: non-finite gradient");
  }
  const double norm = global_norm(grads);
  if (norm > threshold) {
    const double f = threshold / norm;
    for (auto& g : grads) {
      for (double& x : g.values()) x *= f;
    }
  }
  return norm;
}

void adamw_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads, OptimizerState& state,
                const OptimizerConfig& cfg) {
  cfg.validate();
  if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ShapeError("adamw_step: parameter, gradient and state counts differ");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].shape() != params[i].shape() || state.m[i].shape() != params[i].shape()) {
      throw ShapeError("adamw_step: shape mismatch for parameter " + std::to_string(i));
    }
  }
  ++state.step;
  const double t = double(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i].values();
    auto& m = state.m[i].values();
    auto& v = state.v[i].values();
    const auto& g = grads[i].values();
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p[j] -= cfg.learning_rate * (mhat / (std::sqrt(vhat) + cfg.epsilon) + cfg.weight_decay * p[j]);
    }
    if (!params[i].all_finite()) throw NumericError("adamw_step: non-finite parameter after update");
  }
}

}  // namespace tinyrl

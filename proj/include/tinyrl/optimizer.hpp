#pragma once

// AdamW with bias correction and global-norm gradient clipping.

#include <cstdint>
#include <string>
#include <vector>

#include "tinyrl/tensor.hpp"

namespace tinyrl {

struct OptimizerConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double epsilon = 1e-15;
  double weight_decay = 0.0;
  double grad_clip = 1.0;

  void validate() const;
  friend bool operator==(const OptimizerConfig&, const OptimizerConfig&) = default;
};

// (0.9, 0.95, 1e-15) and the legacy (0.9, 0.999, 1e-8).
OptimizerConfig optimizer_preset(const std::string& name);

struct OptimizerState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::uint64_t step = 0;
};

OptimizerState make_optimizer_state(const std::vector<Tensor>& params);

double global_norm(const std::vector<Tensor>& grads);
// Scales every gradient by threshold / norm when norm exceeds threshold.
// Returns the pre-clip norm.
double clip_gradients(std::vector<Tensor>& grads, double threshold);

// In-place update of params and state.
void adamw_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads, OptimizerState& state,
                const OptimizerConfig& cfg);

}  // namespace tinyrl

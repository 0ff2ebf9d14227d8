#pragma once

// Miniature hybrid-attention token policy: decayed linear-attention blocks
// with a causal softmax block after every `hybrid_ratio` of them.
//
// Sequences are scored with an implicit BOS: entry t of token_logprobs() is
// log pi(seq[t] | BOS, seq[0..t-1]).

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "tinyrl/autodiff.hpp"
#include "tinyrl/tensor.hpp"

namespace tinyrl {

inline constexpr int kBosToken = 1;

struct PolicyConfig {
  std::size_t vocab_size = 42;
  std::size_t d_model = 32;
  std::size_t n_heads = 4;
  std::size_t n_layers = 2;
  std::size_t hybrid_ratio = 7;
  std::size_t max_position = 128;
  std::size_t ffn_hidden = 0;  // 0 -> 4 * d_model
  // decays[l][h]; empty selects the default ladder.
  std::vector<std::vector<double>> decays;
  Precision head_precision = Precision::f64;
  // Constant added to every logit. Cancels in exact arithmetic; at reduced
  // precision it emulates a high-magnitude head activation.
  double head_activation_offset = 0.0;
  double head_init_scale = 0.1;
  double norm_eps = 1e-6;

  void validate() const;
  bool is_softmax_layer(std::size_t layer) const { return (layer + 1) % (hybrid_ratio + 1) == 0; }
  std::size_t softmax_layer_count() const;
  std::size_t hidden() const { return ffn_hidden == 0 ? 4 * d_model : ffn_hidden; }
  std::size_t head_dim() const { return d_model / n_heads; }
  double decay(std::size_t layer, std::size_t head) const;
  friend bool operator==(const PolicyConfig&, const PolicyConfig&) = default;
};

std::vector<std::vector<double>> default_decays(std::size_t n_layers, std::size_t n_heads);

struct PolicyParams {
  PolicyConfig config;
  std::vector<std::string> names;
  std::vector<Tensor> tensors;

  std::size_t index_of(const std::string& name) const;
  Tensor& get(const std::string& name) { return tensors[index_of(name)]; }
  const Tensor& get(const std::string& name) const { return tensors[index_of(name)]; }
  std::size_t parameter_count() const;
  bool all_finite() const;
  std::vector<Tensor*> pointers();
};

PolicyParams init_policy(const PolicyConfig& config, std::uint64_t seed);

enum class EvalMode : std::uint8_t { train, infer };

struct PolicyNodes {
  NodeId log_probs;        // [L x V]
  NodeId token_logprobs;   // [L]
};

// Appends the teacher-forced evaluation of seq to g. Leaves g in f64.
PolicyNodes build_policy_graph(Graph& g, const PolicyParams& params, const std::vector<int>& seq, EvalMode mode);
// Variant that reuses parameter leaves already registered in g (one per tensor, in params order).
PolicyNodes build_policy_graph(Graph& g, const PolicyParams& params, const std::vector<NodeId>& leaves,
                               const std::vector<int>& seq, EvalMode mode);
std::vector<NodeId> add_parameter_leaves(Graph& g, const PolicyParams& params);

std::vector<double> token_logprobs(const PolicyParams& params, const std::vector<int>& seq, EvalMode mode);
// Row t is the next-token log-distribution after BOS, seq[0..t-1].
Tensor position_log_probs(const PolicyParams& params, const std::vector<int>& seq, EvalMode mode);

// Token-by-token evaluation with a recurrent/KV state. Uses the same kernels
// as the graph, so its log-probabilities equal the teacher-forced ones bitwise.
class PolicyDecoder {
 public:
  PolicyDecoder(const PolicyParams& params, EvalMode mode);
  void feed(int token);
  // Log-distribution over the next token.
  const std::vector<double>& log_probs() const { return log_probs_; }
  std::size_t position() const { return position_; }

 private:
  const PolicyParams* params_;
  EvalMode mode_;
  std::size_t position_ = 0;  // tokens fed, BOS included
  std::vector<std::vector<double>> linear_state_;   // per layer, H * dh * dh
  std::vector<std::vector<double>> keys_, values_;  // per layer, max_position * d
  std::vector<std::size_t> param_index_;
  std::vector<double> log_probs_;
};

// Binary checkpoint: "TINYRLCK", u32 version, u64 + config JSON, u64 tensor
// count, then per tensor name, rank, dims and raw little-endian doubles.
inline constexpr std::uint32_t kCheckpointVersion = 1;
std::string serialize_checkpoint(const PolicyParams& params);
PolicyParams deserialize_checkpoint(const std::string& bytes);
void save_checkpoint(const std::string& path, const PolicyParams& params);
PolicyParams load_checkpoint(const std::string& path);

}  // namespace tinyrl

#pragma once

// Theoretical inference FLOPs for stacks of softmax and linear attention
// layers. One multiply-add counts as 2 FLOPs; only projections, attention
// score/value products and non-attention active parameters are counted.
//
// Per generated token at absolute position t:
//   softmax layer: 2 * P_attn + 4 * t * d_attn
//   linear layer:  2 * P_attn + 4 * d_attn * head_dim
//   plus 2 * active non-attention parameters,
// where d_attn = n_heads * head_dim and P_attn defaults to 4 * d_model * d_attn.

#include <map>
#include <string>
#include <vector>

namespace tinyrl {

enum class AttentionKind { softmax, linear };

struct ArchSpec {
  std::string name;
  std::size_t d_model = 0;
  std::size_t n_heads = 0;
  std::size_t head_dim = 0;
  std::vector<AttentionKind> layers;
  double active_params = 0.0;          // non-attention, per token
  double attn_params_per_layer = 0.0;  // 0 -> 4 * d_model * d_attn
  std::map<std::string, std::string> assumptions;

  void validate() const;
  std::size_t d_attn() const { return n_heads * head_dim; }
  double attention_params() const;
  std::size_t softmax_layers() const;
};

// n_layers layers; layer l is softmax iff (l + 1) % (ratio + 1) == 0.
ArchSpec hybrid_arch(std::string name, std::size_t n_layers, std::size_t ratio, std::size_t d_model,
                     std::size_t n_heads, std::size_t head_dim, double active_params);
ArchSpec uniform_arch(std::string name, AttentionKind kind, std::size_t n_layers, std::size_t d_model,
                      std::size_t n_heads, std::size_t head_dim, double active_params);

double per_token_flops(const ArchSpec& arch, double t);
// Sum of per_token_flops over t = prompt_len + 1 .. prompt_len + L, closed form.
double generation_flops(const ArchSpec& arch, double L, double prompt_len = 1024.0);
// Literal summation in extended precision.
double generation_flops_bruteforce(const ArchSpec& arch, std::size_t L, std::size_t prompt_len = 1024);
double flops_ratio(const ArchSpec& a, const ArchSpec& b, double L, double prompt_len = 1024.0);

ArchSpec m1_like_preset();
ArchSpec r1_like_preset();
ArchSpec builtin_preset(const std::string& name);

std::string arch_to_json(const ArchSpec& arch);
ArchSpec arch_from_json(const std::string& text);
ArchSpec load_arch(const std::string& path_or_name);

}  // namespace tinyrl

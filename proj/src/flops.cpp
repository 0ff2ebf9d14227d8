#include "tinyrl/flops.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "tinyrl/error.hpp"

namespace tinyrl {

void ArchSpec::validate() const {
  if (d_model == 0 || n_heads == 0 || head_dim == 0 || layers.empty()) {
    throw ValueError("arch '" + name + "': dimensions and layer count must be positive");
  }
  if (!(active_params > 0.0)) throw ValueError("arch '" + name + "': active_params must be positive");
  if (attn_params_per_layer < 0.0) throw ValueError("arch '" + name + "': attn_params_per_layer must be >= 0");
}

double ArchSpec::attention_params() const {
  return attn_params_per_layer > 0.0 ? attn_params_per_layer : 4.0 * double(d_model) * double(d_attn());
}

std::size_t ArchSpec::softmax_layers() const {
  std::size_t n = 0;
  for (auto k : layers) n += k == AttentionKind::softmax ? 1 : 0;
  return n;
}

ArchSpec hybrid_arch(std::string name, std::size_t n_layers, std::size_t ratio, std::size_t d_model,
                     std::size_t n_heads, std::size_t head_dim, double active_params) {
  ArchSpec a{std::move(name), d_model, n_heads, head_dim, {}, active_params, 0.0, {}};
  for (std::size_t l = 0; l < n_layers; ++l) {
    a.layers.push_back((l + 1) % (ratio + 1) == 0 ? AttentionKind::softmax : AttentionKind::linear);
  }
  return a;
}

ArchSpec uniform_arch(std::string name, AttentionKind kind, std::size_t n_layers, std::size_t d_model,
                      std::size_t n_heads, std::size_t head_dim, double active_params) {
  return ArchSpec{std::move(name), d_model, n_heads, head_dim, std::vector<AttentionKind>(n_layers, kind),
                  active_params, 0.0, {}};
}

namespace {

// per_token_flops(t) = base + slope * t
void affine(const ArchSpec& a, double& base, double& slope) {
  a.validate();
  const double n = double(a.layers.size());
  const double soft = double(a.softmax_layers());
  const double lin = n - soft;
  base = 2.0 * a.attention_params() * n + 4.0 * double(a.d_attn()) * double(a.head_dim) * lin + 2.0 * a.active_params;
  slope = 4.0 * double(a.d_attn()) * soft;
}

}  // namespace

double per_token_flops(const ArchSpec& arch, double t) {
  if (!(t >= 1.0)) throw ValueError("per_token_flops: position must be >= 1");
  double base, slope;
  affine(arch, base, slope);
  return base + slope * t;
}

double generation_flops(const ArchSpec& arch, double L, double prompt_len) {
  if (!(L >= 1.0)) throw ValueError("generation_flops: L must be >= 1");
  if (!(prompt_len >= 0.0)) throw ValueError("generation_flops: prompt_len must be >= 0");
  double base, slope;
  affine(arch, base, slope);
  const double sum_t = L * prompt_len + L * (L + 1.0) / 2.0;
  return base * L + slope * sum_t;
}

double generation_flops_bruteforce(const ArchSpec& arch, std::size_t L, std::size_t prompt_len) {
  if (L < 1) throw ValueError("generation_flops: L must be >= 1");
  long double total = 0.0L;
  for (std::size_t t = prompt_len + 1; t <= prompt_len + L; ++t) total += per_token_flops(arch, double(t));
  return double(total);
}

double flops_ratio(const ArchSpec& a, const ArchSpec& b, double L, double prompt_len) {
  const double denom = generation_flops(b, L, prompt_len);
  if (!(denom > 0.0)) throw ValueError("flops_ratio: denominator must be positive");
  return generation_flops(a, L, prompt_len) / denom;
}

ArchSpec m1_like_preset() {
  ArchSpec a = hybrid_arch("m1-like", 80, 7, 6144, 64, 128, 29.794e9);
  a.assumptions = {
      {"layers", "80 layers, one softmax block after every 7 linear blocks"},
      {"dims", "d_model 6144, 64 heads of dim 128"},
      {"active_params", "45.9e9 activated parameters minus 80 * 4 * 6144 * 8192 attention projection parameters"},
  };
  return a;
}

ArchSpec r1_like_preset() {
  ArchSpec a = uniform_arch("r1-like", AttentionKind::softmax, 61, 7168, 128, 160, 25.6e9);
  a.attn_params_per_layer = 187e6;
  a.assumptions = {
      {"source", "external assumption from the public model card"},
      {"layers", "61 softmax-attention layers"},
      {"dims", "d_model 7168, 128 heads, effective score/value head dim 160 (128 + 32 rotary, latent attention)"},
      {"attn_params_per_layer", "187e6 latent-attention projection parameters"},
      {"active_params", "37e9 activated parameters minus 61 * 187e6 attention parameters, rounded"},
  };
  return a;
}

ArchSpec builtin_preset(const std::string& name) {
  if (name == "m1-like") return m1_like_preset();
  if (name == "r1-like") return r1_like_preset();
  throw ValueError("unknown architecture preset '" + name + "'");
}

std::string arch_to_json(const ArchSpec& a) {
  nlohmann::ordered_json j;
  j["name"] = a.name;
  j["d_model"] = a.d_model;
  j["n_heads"] = a.n_heads;
  j["head_dim"] = a.head_dim;
  std::string kinds;
  for (auto k : a.layers) kinds += k == AttentionKind::softmax ? 'S' : 'L';
  j["layers"] = kinds;
  j["active_params"] = a.active_params;
  j["attn_params_per_layer"] = a.attn_params_per_layer;
  j["assumptions"] = a.assumptions;
  return j.dump(2);
}

ArchSpec arch_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("arch preset: ") + e.what());
  }
  static const char* known[] = {"name", "d_model", "n_heads", "head_dim", "layers", "hybrid_ratio", "n_layers",
                                "active_params", "attn_params_per_layer", "assumptions"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(std::begin(known), std::end(known), it.key()) == std::end(known)) {
      throw ConfigError("arch preset: unknown key '" + it.key() + "'");
    }
  }
  ArchSpec a;
  try {
    a.name = j.value("name", std::string("custom"));
    a.d_model = j.at("d_model").get<std::size_t>();
    a.n_heads = j.at("n_heads").get<std::size_t>();
    a.head_dim = j.at("head_dim").get<std::size_t>();
    if (j.contains("layers")) {
      for (char c : j.at("layers").get<std::string>()) {
        if (c == 'S') {
          a.layers.push_back(AttentionKind::softmax);
        } else if (c == 'L') {
          a.layers.push_back(AttentionKind::linear);
        } else {
          throw ConfigError("arch preset: layers must be a string of 'S' and 'L'");
        }
      }
    } else {
      a = hybrid_arch(a.name, j.at("n_layers").get<std::size_t>(), j.at("hybrid_ratio").get<std::size_t>(), a.d_model,
                      a.n_heads, a.head_dim, 0.0);
    }
    a.active_params = j.at("active_params").get<double>();
    a.attn_params_per_layer = j.value("attn_params_per_layer", 0.0);
    if (j.contains("assumptions")) a.assumptions = j.at("assumptions").get<std::map<std::string, std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("arch preset: ") + e.what());
  }
  try {
    a.validate();
  } catch (const ValueError& e) {
    throw ConfigError(e.what());
  }
  return a;
}

ArchSpec load_arch(const std::string& path_or_name) {
  if (path_or_name == "m1-like" || path_or_name == "r1-like") return builtin_preset(path_or_name);
  std::ifstream in(path_or_name);
  if (!in) throw ConfigError("cannot open architecture preset '" + path_or_name + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return arch_from_json(ss.str());
}

}  // namespace tinyrl

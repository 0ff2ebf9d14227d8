#include "tinyrl/config.hpp"

#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "tinyrl/error.hpp"

namespace tinyrl {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& what) { throw ConfigError(path + ": " + what); }

void read(const json& v, const std::string& path, double& out) {
  if (!v.is_number()) fail(path, "expected a number");
  out = v.get<double>();
}
void read(const json& v, const std::string& path, bool& out) {
  if (!v.is_boolean()) fail(path, "expected a boolean");
  out = v.get<bool>();
}
void read(const json& v, const std::string& path, std::string& out) {
  if (!v.is_string()) fail(path, "expected a string");
  out = v.get<std::string>();
}
void read(const json& v, const std::string& path, std::size_t& out) {
  if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
    fail(path, "expected a non-negative integer");
  }
  out = v.get<std::size_t>();
}
void read(const json& v, const std::string& path, int& out) {
  if (!v.is_number_integer()) fail(path, "expected an integer");
  const auto x = v.get<std::int64_t>();
  if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) fail(path, "integer out of range");
  out = int(x);
}

// Number or the string "none" (explicit no-bound sentinel).
void read_bound(const json& v, const std::string& path, double& out) {
  if (v.is_string() && v.get<std::string>() == "none") {
    out = kNoBound;
    return;
  }
  if (!v.is_number()) fail(path, "expected a number or \"none\"");
  out = v.get<double>();
}
ordered_json bound_json(double v) { return v >= kNoBound ? ordered_json("none") : ordered_json(v); }

template <class F>
auto wrap(const std::string& path, F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    fail(path, e.what());
  }
}

class Obj {
 public:
  Obj(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(path_, "expected an object");
  }
  std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  const json* find(const std::string& key) {
    auto it = j_.find(key);
    if (it == j_.end()) return nullptr;
    used_.insert(key);
    return &*it;
  }
  template <class T>
  void get(const std::string& key, T& out) {
    if (const json* v = find(key)) read(*v, child(key), out);
  }
  void bound(const std::string& key, double& out) {
    if (const json* v = find(key)) read_bound(*v, child(key), out);
  }
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!used_.count(it.key())) fail(child(it.key()), "unknown key");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

SamplingConfig sampling_from_json(const json& j, const std::string& path) {
  SamplingConfig c;
  Obj o(j, path);
  o.get("temperature", c.temperature);
  o.get("top_p", c.top_p);
  o.get("max_new_tokens", c.max_new_tokens);
  o.get("repetition_window", c.repetition_window);
  o.get("repetition_threshold", c.repetition_threshold);
  o.get("repetition_check", c.repetition_check);
  o.get("group_size", c.group_size);
  o.finish();
  return c;
}

ordered_json sampling_to_json(const SamplingConfig& c) {
  return {{"temperature", c.temperature},
          {"top_p", c.top_p},
          {"max_new_tokens", c.max_new_tokens},
          {"repetition_window", c.repetition_window},
          {"repetition_threshold", c.repetition_threshold},
          {"repetition_check", c.repetition_check},
          {"group_size", c.group_size}};
}

RewardConfig reward_from_json(const json& j, const std::string& path) {
  RewardConfig c;
  Obj o(j, path);
  o.get("correct_reward", c.correct_reward);
  o.get("format_bonus", c.format_bonus);
  if (const json* lp = o.find("length_penalty")) {
    Obj p(*lp, o.child("length_penalty"));
    p.get("enabled", c.length_penalty.enabled);
    p.get("l_max", c.length_penalty.l_max);
    p.get("l_cache", c.length_penalty.l_cache);
    p.finish();
  }
  o.get("genrm_bias", c.genrm_bias);
  o.get("pairwise_margin", c.pairwise_margin);
  o.get("length_scale", c.length_scale);
  o.get("recalibration_factor", c.recalibration_factor);
  o.finish();
  return c;
}

ordered_json reward_to_json(const RewardConfig& c) {
  return {{"correct_reward", c.correct_reward},
          {"format_bonus", c.format_bonus},
          {"length_penalty",
           {{"enabled", c.length_penalty.enabled},
            {"l_max", c.length_penalty.l_max},
            {"l_cache", c.length_penalty.l_cache}}},
          {"genrm_bias", c.genrm_bias},
          {"pairwise_margin", c.pairwise_margin},
          {"length_scale", c.length_scale},
          {"recalibration_factor", c.recalibration_factor}};
}

ClipConfig clip_from_json(const json& j, const std::string& path, ClipConfig c) {
  Obj o(j, path);
  o.get("ppo_epsilon", c.ppo_epsilon);
  o.bound("is_eps_low", c.is_eps_low);
  o.bound("is_eps_high", c.is_eps_high);
  o.get("mask_eps_low", c.mask_eps_low);
  o.get("mask_eps_high", c.mask_eps_high);
  o.get("mask_enabled", c.mask_enabled);
  o.get("kl_coef", c.kl_coef);
  if (const json* v = o.find("normalization")) {
    std::string s;
    read(*v, o.child("normalization"), s);
    c.normalization = wrap(o.child("normalization"), [&] { return parse_normalization(s); });
  }
  o.finish();
  return c;
}

ordered_json clip_to_json(const ClipConfig& c) {
  return {{"ppo_epsilon", c.ppo_epsilon},
          {"is_eps_low", bound_json(c.is_eps_low)},
          {"is_eps_high", bound_json(c.is_eps_high)},
          {"mask_eps_low", c.mask_eps_low},
          {"mask_eps_high", c.mask_eps_high},
          {"mask_enabled", c.mask_enabled},
          {"kl_coef", c.kl_coef},
          {"normalization", normalization_name(c.normalization)}};
}

OptimizerConfig optimizer_from_json(const json& j, const std::string& path) {
  Obj o(j, path);
  OptimizerConfig c;
  if (const json* v = o.find("preset")) {
    std::string s;
    read(*v, o.child("preset"), s);
    c = wrap(o.child("preset"), [&] { return optimizer_preset(s); });
  }
  o.get("learning_rate", c.learning_rate);
  o.get("beta1", c.beta1);
  o.get("beta2", c.beta2);
  o.get("epsilon", c.epsilon);
  o.get("weight_decay", c.weight_decay);
  o.get("grad_clip", c.grad_clip);
  o.finish();
  return c;
}

ordered_json optimizer_to_json(const OptimizerConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"beta1", c.beta1},           {"beta2", c.beta2},
          {"epsilon", c.epsilon},             {"weight_decay", c.weight_decay}, {"grad_clip", c.grad_clip}};
}

std::vector<FamilySpec> families_from_json(const json& j, const std::string& path) {
  if (!j.is_array()) fail(path, "expected an array");
  std::vector<FamilySpec> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string p = path + "[" + std::to_string(i) + "]";
    Obj o(j[i], p);
    std::string name;
    FamilySpec f{TaskFamily::sequence_sort, 0, 0};
    const json* v = o.find("family");
    if (!v) fail(p + ".family", "required");
    read(*v, p + ".family", name);
    f.family = wrap(p + ".family", [&] { return parse_family(name); });
    const auto r = difficulty_range(f.family);
    f.min_difficulty = r.lo;
    f.max_difficulty = r.hi;
    o.get("min_difficulty", f.min_difficulty);
    o.get("max_difficulty", f.max_difficulty);
    o.finish();
    out.push_back(f);
  }
  return out;
}

ordered_json families_to_json(const std::vector<FamilySpec>& fs) {
  ordered_json a = ordered_json::array();
  for (const auto& f : fs) {
    a.push_back({{"family", family_name(f.family)},
                 {"min_difficulty", f.min_difficulty},
                 {"max_difficulty", f.max_difficulty}});
  }
  return a;
}

TrainConfig train_from_json(const json& j, const std::string& path) {
  TrainConfig c;
  Obj o(j, path);
  if (const json* v = o.find("variant")) {
    std::string s;
    read(*v, o.child("variant"), s);
    c.variant = wrap(o.child("variant"), [&] { return parse_variant(s); });
  }
  c.clip = variant_preset(c.variant);
  if (const json* v = o.find("clip")) c.clip = clip_from_json(*v, o.child("clip"), c.clip);
  if (const json* v = o.find("optimizer")) c.optimizer = optimizer_from_json(*v, o.child("optimizer"));
  o.get("group_size", c.group_size);
  o.get("batch_groups", c.batch_groups);
  o.get("rounds", c.rounds);
  o.get("steps", c.steps);
  o.get("warmstart_steps", c.warmstart_steps);
  o.get("warmstart_batch", c.warmstart_batch);
  o.get("warmstart_lr", c.warmstart_lr);
  o.get("warmstart_copy_prob", c.warmstart_copy_prob);
  o.get("eval_interval", c.eval_interval);
  o.get("eval_tasks", c.eval_tasks);
  o.get("eval_samples", c.eval_samples);
  o.get("pool_size", c.pool_size);
  if (const json* v = o.find("rule_families")) c.rule_families = families_from_json(*v, o.child("rule_families"));
  if (const json* v = o.find("judge_families")) c.judge_families = families_from_json(*v, o.child("judge_families"));
  if (const json* v = o.find("curriculum")) {
    const std::string cp = o.child("curriculum");
    if (!v->is_array()) fail(cp, "expected an array of {step, judge_share}");
    for (std::size_t i = 0; i < v->size(); ++i) {
      const std::string p = cp + "[" + std::to_string(i) + "]";
      Obj po((*v)[i], p);
      CurriculumPoint pt;
      po.get("step", pt.step);
      po.get("judge_share", pt.judge_share);
      po.finish();
      c.curriculum.points.push_back(pt);
    }
  }
  if (const json* v = o.find("window")) {
    Obj w(*v, o.child("window"));
    if (const json* l = w.find("lengths")) {
      if (!l->is_array()) fail(w.child("lengths"), "expected an array");
      c.window.lengths.clear();
      for (std::size_t i = 0; i < l->size(); ++i) {
        std::size_t x = 0;
        read((*l)[i], w.child("lengths") + "[" + std::to_string(i) + "]", x);
        c.window.lengths.push_back(x);
      }
    }
    w.get("p99_fraction", c.window.p99_fraction);
    w.get("slope_bound", c.window.slope_bound);
    w.get("stats_window", c.window.stats_window);
    w.finish();
  }
  if (const json* v = o.find("monitor")) {
    Obj m(*v, o.child("monitor"));
    m.get("window", c.monitor.window);
    m.get("min_observations", c.monitor.min_observations);
    m.get("length_growth", c.monitor.length_growth);
    m.get("success_tolerance", c.monitor.success_tolerance);
    m.finish();
  }
  o.get("retry_factor", c.retry_factor);
  o.finish();
  return c;
}

ordered_json train_to_json(const TrainConfig& c) {
  ordered_json cur = ordered_json::array();
  for (const auto& p : c.curriculum.points) cur.push_back({{"step", p.step}, {"judge_share", p.judge_share}});
  return {{"variant", variant_name(c.variant)},
          {"clip", clip_to_json(c.clip)},
          {"optimizer", optimizer_to_json(c.optimizer)},
          {"group_size", c.group_size},
          {"batch_groups", c.batch_groups},
          {"rounds", c.rounds},
          {"steps", c.steps},
          {"warmstart_steps", c.warmstart_steps},
          {"warmstart_batch", c.warmstart_batch},
          {"warmstart_lr", c.warmstart_lr},
          {"warmstart_copy_prob", c.warmstart_copy_prob},
          {"eval_interval", c.eval_interval},
          {"eval_tasks", c.eval_tasks},
          {"eval_samples", c.eval_samples},
          {"pool_size", c.pool_size},
          {"rule_families", families_to_json(c.rule_families)},
          {"judge_families", families_to_json(c.judge_families)},
          {"curriculum", cur},
          {"window",
           {{"lengths", c.window.lengths},
            {"p99_fraction", c.window.p99_fraction},
            {"slope_bound", c.window.slope_bound},
            {"stats_window", c.window.stats_window}}},
          {"monitor",
           {{"window", c.monitor.window},
            {"min_observations", c.monitor.min_observations},
            {"length_growth", c.monitor.length_growth},
            {"success_tolerance", c.monitor.success_tolerance}}},
          {"retry_factor", c.retry_factor}};
}

void check_version(Obj& o) {
  int version = 0;
  const json* v = o.find("schema_version");
  if (!v) fail(o.child("schema_version"), "required");
  read(*v, o.child("schema_version"), version);
  if (version != kConfigSchemaVersion) {
    fail(o.child("schema_version"), "unsupported version " + std::to_string(version) + " (expected " +
                                        std::to_string(kConfigSchemaVersion) + ")");
  }
}

}  // namespace

PolicyConfig policy_config_from_json(const json& j, const std::string& path) {
  PolicyConfig c;
  Obj o(j, path);
  o.get("vocab_size", c.vocab_size);
  o.get("d_model", c.d_model);
  o.get("n_heads", c.n_heads);
  o.get("n_layers", c.n_layers);
  o.get("hybrid_ratio", c.hybrid_ratio);
  o.get("max_position", c.max_position);
  o.get("ffn_hidden", c.ffn_hidden);
  if (const json* v = o.find("decays")) {
    const std::string p = o.child("decays");
    if (!v->is_array()) fail(p, "expected an array of per-layer arrays");
    for (std::size_t l = 0; l < v->size(); ++l) {
      const json& row = (*v)[l];
      const std::string rp = p + "[" + std::to_string(l) + "]";
      if (!row.is_array()) fail(rp, "expected an array");
      std::vector<double> r;
      for (std::size_t h = 0; h < row.size(); ++h) {
        double x = 0.0;
        read(row[h], rp + "[" + std::to_string(h) + "]", x);
        r.push_back(x);
      }
      c.decays.push_back(std::move(r));
    }
  }
  if (const json* v = o.find("head_precision")) {
    std::string s;
    read(*v, o.child("head_precision"), s);
    c.head_precision = wrap(o.child("head_precision"), [&] { return parse_precision(s); });
  }
  o.get("head_activation_offset", c.head_activation_offset);
  o.get("head_init_scale", c.head_init_scale);
  o.get("norm_eps", c.norm_eps);
  o.finish();
  wrap(path, [&] { c.validate(); return 0; });
  return c;
}

ordered_json policy_config_to_json(const PolicyConfig& c) {
  return {{"vocab_size", c.vocab_size},
          {"d_model", c.d_model},
          {"n_heads", c.n_heads},
          {"n_layers", c.n_layers},
          {"hybrid_ratio", c.hybrid_ratio},
          {"max_position", c.max_position},
          {"ffn_hidden", c.ffn_hidden},
          {"decays", c.decays},
          {"head_precision", precision_name(c.head_precision)},
          {"head_activation_offset", c.head_activation_offset},
          {"head_init_scale", c.head_init_scale},
          {"norm_eps", c.norm_eps}};
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  Obj o(j, "");
  check_version(o);
  o.get("seed", c.seed);
  o.get("output_dir", c.output_dir);
  if (const json* v = o.find("policy")) c.policy = policy_config_from_json(*v, "policy");
  if (const json* v = o.find("sampling")) c.sampling = sampling_from_json(*v, "sampling");
  if (const json* v = o.find("reward")) c.reward = reward_from_json(*v, "reward");
  if (const json* v = o.find("train")) c.train = train_from_json(*v, "train");
  o.finish();
  wrap("config", [&] { c.validate(); return 0; });
  return c;
}

ordered_json config_to_json(const ExperimentConfig& c) {
  return {{"schema_version", c.schema_version},
          {"seed", c.seed},
          {"output_dir", c.output_dir},
          {"policy", policy_config_to_json(c.policy)},
          {"sampling", sampling_to_json(c.sampling)},
          {"reward", reward_to_json(c.reward)},
          {"train", train_to_json(c.train)}};
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open file");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": invalid JSON: " + e.what());
  }
}

ExperimentConfig load_config(const std::string& path) { return config_from_json(read_json_file(path)); }

CompareConfig compare_config_from_json(const json& j) {
  CompareConfig c;
  Obj o(j, "");
  check_version(o);
  const json* base = o.find("base");
  if (!base) fail("base", "required");
  c.base = config_from_json(*base);
  if (const json* v = o.find("variants")) {
    if (!v->is_array() || v->empty()) fail("variants", "expected a nonempty array");
    c.variants.clear();
    for (std::size_t i = 0; i < v->size(); ++i) {
      std::string s;
      const std::string p = "variants[" + std::to_string(i) + "]";
      read((*v)[i], p, s);
      c.variants.push_back(wrap(p, [&] { return parse_variant(s); }));
    }
  }
  if (const json* v = o.find("seeds")) {
    if (!v->is_array() || v->empty()) fail("seeds", "expected a nonempty array");
    c.seeds.clear();
    for (std::size_t i = 0; i < v->size(); ++i) {
      std::uint64_t s = 0;
      read((*v)[i], "seeds[" + std::to_string(i) + "]", s);
      c.seeds.push_back(s);
    }
  }
  o.get("threshold", c.threshold);
  o.get("output_dir", c.output_dir);
  o.finish();
  if (!(c.threshold >= 0.0 && c.threshold <= 1.0)) fail("threshold", "must lie in [0, 1]");
  return c;
}

CompareConfig load_compare_config(const std::string& path) { return compare_config_from_json(read_json_file(path)); }

ordered_json compare_config_to_json(const CompareConfig& c) {
  ordered_json variants = ordered_json::array();
  for (Variant v : c.variants) variants.push_back(variant_name(v));
  return {{"schema_version", kConfigSchemaVersion},
          {"base", config_to_json(c.base)},
          {"variants", variants},
          {"seeds", c.seeds},
          {"threshold", c.threshold},
          {"output_dir", c.output_dir}};
}

}  // namespace tinyrl

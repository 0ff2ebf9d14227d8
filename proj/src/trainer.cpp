#include "tinyrl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tinyrl/diagnostics.hpp"
#include "tinyrl/error.hpp"
#include "tinyrl/rng.hpp"

namespace tinyrl {

void CurriculumConfig::validate() const {
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto& p = points[i];
    if (!(p.judge_share >= 0.0 && p.judge_share <= 1.0)) throw ValueError("curriculum: judge_share must lie in [0, 1]");
    if (i > 0 && p.step <= points[i - 1].step) throw ValueError("curriculum: steps must be strictly increasing");
    if (i > 0 && p.judge_share < points[i - 1].judge_share) {
      throw ValueError("curriculum: judge_share must be non-decreasing");
    }
  }
}

Mixture curriculum_next(std::size_t step, const CurriculumConfig& cfg) {
  const auto& pts = cfg.points;
  double judge = 0.0;
  if (!pts.empty() && step >= pts.front().step) {
    judge = pts.back().judge_share;
    for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
      if (step >= pts[i].step && step < pts[i + 1].step) {
        const double f = double(step - pts[i].step) / double(pts[i + 1].step - pts[i].step);
        judge = pts[i].judge_share + f * (pts[i + 1].judge_share - pts[i].judge_share);
        break;
      }
    }
    if (pts.size() == 1) judge = pts[0].judge_share;
  }
  return Mixture{1.0 - judge, judge};
}

void WindowConfig::validate() const {
  if (lengths.empty()) throw ValueError("window: need at least one window length");
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    if (lengths[i] == 0) throw ValueError("window: lengths must be positive");
    if (i > 0 && lengths[i] <= lengths[i - 1]) throw ValueError("window: lengths must be strictly increasing");
  }
  if (!(p99_fraction > 0.0 && p99_fraction <= 1.0)) throw ValueError("window: p99_fraction must lie in (0, 1]");
  if (!(slope_bound >= 0.0)) throw ValueError("window: slope_bound must be >= 0");
  if (stats_window < 2) throw ValueError("window: stats_window must be at least 2");
}

const char* window_decision_name(WindowDecision d) {
  switch (d) {
    case WindowDecision::cold_start: return "cold_start";
    case WindowDecision::stay: return "stay";
    case WindowDecision::advance: return "advance";
  }
  return "?";
}

double least_squares_slope(const std::vector<double>& v) {
  const std::size_t n = v.size();
  if (n < 2) return 0.0;
  const double mx = double(n - 1) / 2.0;
  const double my = std::accumulate(v.begin(), v.end(), 0.0) / double(n);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (double(i) - mx) * (v[i] - my);
    sxx += (double(i) - mx) * (double(i) - mx);
  }
  return sxy / sxx;
}

// Linear interpolation between order statistics.
double percentile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const double pos = q * double(v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - double(lo)) * (v[hi] - v[lo]);
}

WindowDecision window_scheduler(const WindowState& s, const WindowConfig& cfg) {
  if (s.index + 1 >= cfg.lengths.size()) return WindowDecision::stay;
  if (s.perplexities.size() < cfg.stats_window) return WindowDecision::cold_start;
  const std::vector<double> recent(s.perplexities.end() - std::ptrdiff_t(cfg.stats_window), s.perplexities.end());
  const bool long_enough = s.p99 >= cfg.p99_fraction * double(cfg.lengths[s.index]);
  const bool stable = std::abs(least_squares_slope(recent)) <= cfg.slope_bound;
  return long_enough && stable ? WindowDecision::advance : WindowDecision::stay;
}

WindowDecision window_step(WindowState& s, double p99, double perplexity, const WindowConfig& cfg) {
  s.p99 = p99;
  s.perplexities.push_back(perplexity);
  if (s.perplexities.size() > cfg.stats_window) s.perplexities.erase(s.perplexities.begin());
  const WindowDecision d = window_scheduler(s, cfg);
  if (d == WindowDecision::advance) {
    ++s.index;
    s.perplexities.clear();
  }
  return d;
}

std::vector<TaskInstance> generate_pool(const std::vector<FamilySpec>& families, std::size_t count, std::uint64_t seed) {
  std::vector<TaskInstance> out;
  if (families.empty()) return out;
  Rng rng(seed);
  for (std::size_t i = 0; i < count; ++i) {
    const FamilySpec& f = families[rng.index(families.size())];
    const int d = int(rng.integer(f.min_difficulty, f.max_difficulty));
    out.push_back(generate_task(f.family, d, derive_seed(seed, i)));
  }
  return out;
}

void TrainConfig::validate() const {
  clip.validate();
  optimizer.validate();
  curriculum.validate();
  window.validate();
  monitor.validate();
  if (group_size < 2) throw ValueError("train: group_size must be at least 2");
  if (batch_groups < 1) throw ValueError("train: batch_groups must be at least 1");
  if (rounds < 1) throw ValueError("train: rounds must be at least 1");
  if (eval_interval < 1) throw ValueError("train: eval_interval must be at least 1");
  if (eval_samples < 1) throw ValueError("train: eval_samples must be at least 1");
  if (pool_size < 1) throw ValueError("train: pool_size must be at least 1");
  if (rule_families.empty()) throw ValueError("train: rule_families must be nonempty");
  if (!(retry_factor >= 0.0)) throw ValueError("train: retry_factor must be >= 0");
  if (!(warmstart_lr >= 0.0)) throw ValueError("train: warmstart_lr must be >= 0");
  if (!(warmstart_copy_prob >= 0.0 && warmstart_copy_prob <= 1.0)) {
    throw ValueError("train: warmstart_copy_prob must be in [0, 1]");
  }
  for (const auto* fams : {&rule_families, &judge_families}) {
    for (const auto& f : *fams) {
      const auto r = difficulty_range(f.family);
      if (f.min_difficulty < r.lo || f.max_difficulty > r.hi || f.min_difficulty > f.max_difficulty) {
        throw ValueError(std::string("train: difficulty range out of bounds for ") + family_name(f.family));
      }
    }
  }
}

void ExperimentConfig::validate() const {
  if (schema_version != 1) throw ValueError("config: unsupported schema_version " + std::to_string(schema_version));
  policy.validate();
  sampling.validate();
  reward.validate();
  train.validate();
  if (policy.vocab_size != std::size_t(tok::vocab_size)) {
    throw ValueError("config: policy.vocab_size must equal the task vocabulary size " + std::to_string(tok::vocab_size));
  }
}

namespace {

RewardConfig windowed_reward(const RewardConfig& base, std::size_t window) {
  RewardConfig r = base;
  r.length_penalty.l_max = window;
  r.length_penalty.l_cache = std::min(base.length_penalty.l_cache, window > 1 ? window - 1 : 0);
  if (r.length_penalty.l_cache == 0) r.length_penalty.enabled = false;
  return r;
}

void score_group(RolloutGroup& group, const TaskInstance& task, bool judge, const RewardConfig& reward) {
  for (auto& r : group.responses) {
    const VerifyResult v = verify(task, r.tokens);
    r.correct = v.correct;
    r.format_ok = v.format_ok;
    if (judge) {
      const int grade = mock_genrm_graded(r.tokens, task.answer, reward, task.family);
      r.reward = double(grade) / 4.0 + reward.genrm_bias * double(r.tokens.size()) / reward.length_scale;
    } else {
      r.reward = rule_reward(v, r.tokens.size(), r.reason == TruncationReason::window_limit, reward);
    }
  }
}

}  // namespace

Batch collect_batch(const SequencePolicy& policy, const TaskPool& pool, const ExperimentConfig& cfg,
                    const CollectContext& ctx, std::uint64_t seed) {
  if (pool.rule_tasks.empty() && pool.judge_tasks.empty()) throw ValueError("collect_batch: task pool is empty");
  const TrainConfig& tc = cfg.train;
  SamplingConfig sampling = cfg.sampling;
  sampling.max_new_tokens = ctx.window;
  sampling.group_size = tc.group_size;
  const RewardConfig reward = windowed_reward(cfg.reward, ctx.window);
  const std::size_t budget = tc.batch_groups + static_cast<std::size_t>(std::ceil(tc.retry_factor * double(tc.batch_groups)));

  Batch b;
  b.requested = tc.batch_groups;
  Rng rng(derive_seed(seed, 0));
  while (b.groups.size() < tc.batch_groups && b.attempts < budget) {
    const bool judge =
        !pool.judge_tasks.empty() && (pool.rule_tasks.empty() || rng.uniform() < ctx.mixture.judge);
    const auto& tasks = judge ? pool.judge_tasks : pool.rule_tasks;
    const TaskInstance& task = tasks[rng.index(tasks.size())];
    RolloutGroup group = sample_group(policy, task.prompt, sampling, derive_seed(seed, b.attempts + 1));
    ++b.attempts;
    group.task_id = task.id;
    score_group(group, task, judge, reward);
    std::vector<double> rewards;
    for (const auto& r : group.responses) rewards.push_back(r.reward);
    AdvantageSet adv = grpo_advantages(rewards);
    if (adv.degenerate) {
      ++b.degenerate_discarded;
      continue;
    }
    if (ctx.reference != nullptr && tc.clip.kl_coef > 0.0) {
      for (auto& r : group.responses) {
        std::vector<int> seq = group.prompt;
        seq.insert(seq.end(), r.tokens.begin(), r.tokens.end());
        const auto lp = token_logprobs(*ctx.reference, seq, EvalMode::train);
        r.ref_logprobs.assign(lp.end() - std::ptrdiff_t(r.tokens.size()), lp.end());
      }
    }
    b.groups.push_back(std::move(group));
    b.advantages.push_back(std::move(adv.values));
    b.judge_scored.push_back(judge);
  }
  b.shortfall = tc.batch_groups - b.groups.size();
  if (b.groups.empty()) {
    throw SamplingExhausted("dynamic sampling exhausted " + std::to_string(b.attempts) +
                                " attempts without a non-degenerate group (shortfall " + std::to_string(b.shortfall) + ")",
                            b.shortfall);
  }
  return b;
}

Batch collect_batch(const PolicyParams& params, const TaskPool& pool, const ExperimentConfig& cfg,
                    const CollectContext& ctx, std::uint64_t seed) {
  HybridPolicy policy(params, EvalMode::infer);
  return collect_batch(policy, pool, cfg, ctx, seed);
}

namespace {

ClipConfig fork_mask_config(Variant v, const ClipConfig& c, bool& applies) {
  ClipConfig m = c;
  applies = true;
  switch (v) {
    case Variant::ppo_grpo:
      m.mask_eps_low = c.ppo_epsilon;
      m.mask_eps_high = c.ppo_epsilon;
      break;
    case Variant::cispo:
      applies = false;
      break;
    case Variant::dapo_like:
    case Variant::unified:
      applies = c.mask_enabled;
      break;
  }
  return m;
}

}  // namespace

std::vector<RoundMetrics> train_minibatches(const Batch& batch, PolicyParams& params, OptimizerState& opt,
                                            const ExperimentConfig& cfg) {
  struct Item {
    const RolloutGroup* group;
    const Response* response;
    double advantage;
  };
  std::vector<Item> items;
  for (std::size_t g = 0; g < batch.groups.size(); ++g) {
    for (std::size_t i = 0; i < batch.groups[g].responses.size(); ++i) {
      items.push_back({&batch.groups[g], &batch.groups[g].responses[i], batch.advantages.at(g).at(i)});
    }
  }
  if (items.empty()) throw ValueError("train_minibatches: empty batch");
  const TrainConfig& tc = cfg.train;
  const std::size_t n = items.size();
  const std::size_t R = std::min(tc.rounds, n);
  const std::size_t V = params.config.vocab_size;
  bool fork_applies = false;
  const ClipConfig fork_cfg = fork_mask_config(tc.variant, tc.clip, fork_applies);

  std::vector<RoundMetrics> out;
  for (std::size_t k = 0; k < R; ++k) {
    const std::size_t begin = k * n / R, end = (k + 1) * n / R;
    Graph g;
    const auto leaves = add_parameter_leaves(g, params);
    std::vector<ResponseTerm> terms;
    std::vector<std::pair<NodeId, std::pair<std::size_t, std::size_t>>> dists;
    for (std::size_t j = begin; j < end; ++j) {
      const Item& it = items[j];
      std::vector<int> seq = it.group->prompt;
      seq.insert(seq.end(), it.response->tokens.begin(), it.response->tokens.end());
      const PolicyNodes nodes = build_policy_graph(g, params, leaves, seq, EvalMode::train);
      const std::size_t P = it.group->prompt.size(), T = it.response->tokens.size();
      std::vector<std::size_t> rows(T), cols(T);
      for (std::size_t t = 0; t < T; ++t) {
        rows[t] = P + t;
        cols[t] = static_cast<std::size_t>(it.response->tokens[t]);
      }
      ResponseTerm term;
      term.new_logprobs = g.gather_elements(nodes.log_probs, std::move(rows), std::move(cols));
      term.old_logprobs = it.response->behavior_logprobs;
      term.advantage = it.advantage;
      term.ref_logprobs = it.response->ref_logprobs;
      terms.push_back(std::move(term));
      dists.push_back({nodes.log_probs, {P, T}});
    }
    const LossInfo info = variant_loss(g, tc.variant, terms, tc.clip);
    g.forward();
    auto pg = g.backward(info.loss);
    std::vector<Tensor> grads;
    grads.reserve(pg.size());
    for (auto& p : pg) grads.push_back(std::move(p.grad));

    RoundMetrics m;
    m.responses = end - begin;
    m.loss = g.value(info.loss).item();
    m.diag = loss_diagnostics(g, info);
    double ent = 0.0;
    std::size_t positions = 0;
    std::vector<std::vector<double>> behavior, fresh;
    std::vector<double> advs;
    for (std::size_t j = 0; j < terms.size(); ++j) {
      const Tensor& lp = g.value(dists[j].first);
      for (std::size_t t = 0; t < dists[j].second.second; ++t) {
        ent += row_entropy(&lp[(dists[j].second.first + t) * V], V);
        ++positions;
      }
      behavior.push_back(terms[j].old_logprobs);
      fresh.push_back(g.value(terms[j].new_logprobs).values());
      advs.push_back(terms[j].advantage);
    }
    m.entropy = positions > 0 ? ent / double(positions) : 0.0;
    if (fork_applies) m.fork_low_decile_zeroed = fork_token_report(behavior, fresh, advs, fork_cfg).lowest_decile_zeroed_fraction;

    m.grad_norm = clip_gradients(grads, tc.optimizer.grad_clip);
    adamw_step(params.tensors, grads, opt, tc.optimizer);
    if (!params.all_finite()) throw NumericError("train: parameters became non-finite");
    out.push_back(m);
  }
  return out;
}

WarmstartResult format_warmstart(PolicyParams& params, const TaskPool& pool, const ExperimentConfig& cfg,
                                 std::uint64_t seed) {
  const TrainConfig& tc = cfg.train;
  WarmstartResult res;
  if (tc.warmstart_steps == 0) return res;
  std::vector<const TaskInstance*> tasks;
  for (const auto& t : pool.rule_tasks) tasks.push_back(&t);
  for (const auto& t : pool.judge_tasks) tasks.push_back(&t);
  if (tasks.empty()) throw ValueError("warmstart: task pool is empty");
  OptimizerConfig oc = tc.optimizer;
  oc.learning_rate = tc.warmstart_lr;
  OptimizerState opt = make_optimizer_state(params.tensors);
  Rng rng(seed);
  for (std::size_t step = 0; step < tc.warmstart_steps; ++step) {
    Graph g;
    const auto leaves = add_parameter_leaves(g, params);
    NodeId loss{};
    const double w = 1.0 / double(tc.warmstart_batch);
    for (std::size_t b = 0; b < tc.warmstart_batch; ++b) {
      const TaskInstance& task = *tasks[rng.index(tasks.size())];
      const auto cands = guess_candidates(task.prompt);
      std::vector<int> target{tok::ans_open};
      const bool copy = tc.warmstart_copy_prob > 0.0 && rng.uniform() < tc.warmstart_copy_prob;
      for (std::size_t i = 0; i < task.answer.size(); ++i) {
        target.push_back(copy ? cands[i % cands.size()] : cands[rng.index(cands.size())]);
      }
      target.push_back(tok::ans_close);
      target.push_back(tok::eos);
      std::vector<int> seq = task.prompt;
      seq.insert(seq.end(), target.begin(), target.end());
      const PolicyNodes nodes = build_policy_graph(g, params, leaves, seq, EvalMode::train);
      const std::size_t P = task.prompt.size(), T = target.size();
      std::vector<std::size_t> rows(T), cols(T);
      for (std::size_t t = 0; t < T; ++t) {
        rows[t] = P + t;
        cols[t] = static_cast<std::size_t>(target[t]);
      }
      NodeId nll = g.scale(g.sum(g.gather_elements(nodes.log_probs, std::move(rows), std::move(cols))), -w / double(T));
      loss = loss.valid() ? g.add(loss, nll) : nll;
    }
    g.forward();
    const double value = g.value(loss).item();
    if (step == 0) res.initial_nll = value;
    res.final_nll = value;
    auto pg = g.backward(loss);
    std::vector<Tensor> grads;
    for (auto& p : pg) grads.push_back(std::move(p.grad));
    clip_gradients(grads, oc.grad_clip);
    adamw_step(params.tensors, grads, opt, oc);
    ++res.steps;
  }
  return res;
}

double evaluate_pass_rate(const PolicyParams& params, const std::vector<TaskInstance>& tasks,
                          const SamplingConfig& sampling, std::size_t samples, std::uint64_t seed) {
  if (tasks.empty()) return 0.0;
  HybridPolicy policy(params, EvalMode::infer);
  std::size_t ok = 0;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    for (std::size_t j = 0; j < samples; ++j) {
      const Response r = sample_response(policy, tasks[i].prompt, sampling, derive_seed(seed, i * samples + j));
      ok += verify(tasks[i], r.tokens).correct ? 1 : 0;
    }
  }
  return double(ok) / double(tasks.size() * samples);
}

RunResult run_experiment(const ExperimentConfig& cfg, const MetricsSink& sink) {
  cfg.validate();
  const TrainConfig& tc = cfg.train;
  RunResult res;
  res.final_params = init_policy(cfg.policy, derive_seed(cfg.seed, 1));
  PolicyParams& params = res.final_params;

  bool judge_used = false;
  for (const auto& p : tc.curriculum.points) judge_used = judge_used || p.judge_share > 0.0;
  TaskPool pool;
  pool.rule_tasks = generate_pool(tc.rule_families, tc.pool_size, derive_seed(cfg.seed, 2));
  if (judge_used) pool.judge_tasks = generate_pool(tc.judge_families, tc.pool_size, derive_seed(cfg.seed, 3));
  const std::vector<TaskInstance> eval_set = generate_pool(tc.rule_families, tc.eval_tasks, derive_seed(cfg.seed, 4));
  const std::uint64_t eval_seed = derive_seed(cfg.seed, 5);

  res.warmstart = format_warmstart(params, pool, cfg, derive_seed(cfg.seed, 6));
  const PolicyParams reference = params;
  OptimizerState opt = make_optimizer_state(params.tensors);
  RewardConfig reward = cfg.reward;
  BiasMonitor monitor(tc.monitor);
  WindowState ws;

  auto eval_sampling = [&](std::size_t window) {
    SamplingConfig s = cfg.sampling;
    s.max_new_tokens = window;
    return s;
  };

  for (std::size_t step = 0; step < tc.steps; ++step) {
    const std::size_t window = tc.window.lengths[ws.index];
    const Mixture mix = curriculum_next(step, tc.curriculum);
    ExperimentConfig step_cfg = cfg;
    step_cfg.reward = reward;
    nlohmann::ordered_json rec;
    rec["step"] = step;
    rec["window_index"] = ws.index;
    rec["window"] = window;
    rec["curriculum"] = {{"rule", mix.rule}, {"judge", mix.judge}};
    nlohmann::json events = nlohmann::json::array();

    Batch batch;
    bool skipped = false;
    try {
      batch = collect_batch(params, pool, step_cfg, CollectContext{window, mix, &reference},
                            derive_seed(cfg.seed, 1000 + step));
    } catch (const SamplingExhausted& e) {
      skipped = true;
      events.push_back({{"type", "sampling_exhausted"}, {"shortfall", e.shortfall()}});
      res.events.push_back("step " + std::to_string(step) + ": " + e.what());
    }

    std::vector<double> lengths;
    double reward_sum = 0.0, logp_sum = 0.0;
    std::size_t correct = 0, responses = 0, tokens = 0;
    double judge_len = 0.0, judge_ok = 0.0, judge_reward = 0.0;
    std::size_t judge_n = 0;
    for (std::size_t gi = 0; gi < batch.groups.size(); ++gi) {
      for (const auto& r : batch.groups[gi].responses) {
        lengths.push_back(double(r.tokens.size()));
        reward_sum += r.reward;
        correct += r.correct ? 1 : 0;
        ++responses;
        for (double lp : r.behavior_logprobs) logp_sum += lp;
        tokens += r.tokens.size();
        if (batch.judge_scored[gi]) {
          judge_len += double(r.tokens.size());
          judge_ok += r.correct ? 1.0 : 0.0;
          judge_reward += r.reward;
          ++judge_n;
        }
      }
    }

    std::vector<RoundMetrics> rounds;
    if (!skipped) {
      try {
        rounds = train_minibatches(batch, params, opt, step_cfg);
      } catch (const Error& e) {
        throw Error("step " + std::to_string(step) + ": " + e.what());
      }
    }

    const double ppl = tokens > 0 ? std::exp(-logp_sum / double(tokens)) : 0.0;
    rec["skipped"] = skipped;
    rec["groups_used"] = batch.groups.size();
    rec["shortfall"] = skipped ? tc.batch_groups : batch.shortfall;
    rec["degenerate_discarded"] = batch.degenerate_discarded;
    rec["reward_mean"] = responses > 0 ? reward_sum / double(responses) : 0.0;
    rec["pass_rate"] = responses > 0 ? double(correct) / double(responses) : 0.0;
    rec["length_p50"] = percentile(lengths, 0.5);
    rec["length_p99"] = percentile(lengths, 0.99);
    rec["perplexity"] = ppl;

    double ent = 0.0, zeroed = 0.0, isclip = 0.0, mr = 0.0, mhr = 0.0, loss = 0.0, gn = 0.0, fork = 0.0;
    nlohmann::json per_round = nlohmann::json::array();
    for (const auto& r : rounds) {
      ent += r.entropy;
      zeroed += r.diag.zeroed_fraction;
      isclip += r.diag.is_clip_fraction;
      mr += r.diag.mean_ratio;
      mhr += r.diag.mean_clipped_ratio;
      loss += r.loss;
      gn += r.grad_norm;
      fork += r.fork_low_decile_zeroed;
      per_round.push_back({{"mean_ratio", r.diag.mean_ratio},
                           {"mean_abs_ratio_dev", r.diag.mean_abs_ratio_dev},
                           {"clip_fraction", r.diag.zeroed_fraction},
                           {"entropy", r.entropy}});
    }
    const double nr = rounds.empty() ? 1.0 : double(rounds.size());
    rec["entropy"] = ent / nr;
    rec["clip_fraction"] = zeroed / nr;
    rec["is_clip_fraction"] = isclip / nr;
    rec["mean_ratio"] = mr / nr;
    rec["mean_clipped_ratio"] = mhr / nr;
    rec["loss"] = loss / nr;
    rec["grad_norm"] = gn / nr;
    rec["fork_low_decile_zeroed"] = fork / nr;
    rec["rounds"] = per_round;

    if (judge_n > 0) {
      const double before = reward.genrm_bias;
      const MonitorStatus st = monitor.observe(
          {judge_len / double(judge_n), judge_ok / double(judge_n), judge_reward / double(judge_n)});
      rec["monitor"] = monitor_status_name(st);
      if (st == MonitorStatus::alarm) {
        reward = recalibrate(reward);
        monitor.reset();
        events.push_back({{"type", "recalibration"}, {"bias_before", before}, {"bias_after", reward.genrm_bias}});
        res.events.push_back("step " + std::to_string(step) + ": recalibrated judge bias");
      }
    } else {
      rec["monitor"] = "idle";
    }
    rec["genrm_bias"] = reward.genrm_bias;

    WindowDecision wd = WindowDecision::stay;
    if (!skipped) {
      wd = window_step(ws, percentile(lengths, 0.99), ppl, tc.window);
    } else if (window_scheduler(ws, tc.window) == WindowDecision::cold_start) {
      wd = WindowDecision::cold_start;
    }
    rec["window_decision"] = window_decision_name(wd);
    if (wd == WindowDecision::advance) {
      events.push_back({{"type", "window_advance"}, {"window", tc.window.lengths[ws.index]}});
      res.events.push_back("step " + std::to_string(step) + ": window advanced");
    }

    if ((step + 1) % tc.eval_interval == 0 || step + 1 == tc.steps) {
      const double pr = evaluate_pass_rate(params, eval_set, eval_sampling(tc.window.lengths[ws.index]),
                                           tc.eval_samples, eval_seed);
      rec["eval_pass_rate"] = pr;
      res.eval_curve.emplace_back(step + 1, pr);
    } else {
      rec["eval_pass_rate"] = nullptr;
    }
    rec["events"] = events;
    if (sink) sink(rec);
    res.metrics.push_back(std::move(rec));
  }
  return res;
}

}  // namespace tinyrl

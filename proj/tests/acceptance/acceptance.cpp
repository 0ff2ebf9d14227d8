// Acceptance suite: one PASS/FAIL line per criterion. Exit status is 1 when
// any selected criterion fails. `--only 1,4,7` runs a subset.

#include <mpfr.h>

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "../support/oracles.hpp"
#include "tinyrl/config.hpp"
#include "tinyrl/diagnostics.hpp"
#include "tinyrl/flops.hpp"
#include "tinyrl/rewards.hpp"
#include "tinyrl/rollout.hpp"
#include "tinyrl/runner.hpp"
#include "tinyrl/trainer.hpp"

#ifndef TINYRL_SOURCE_DIR
#define TINYRL_SOURCE_DIR "."
#endif

using namespace tinyrl;
using namespace tinyrl::testing;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

LossBuilder with(Variant v, ClipConfig cfg) {
  return [v, cfg](Graph& g, const std::vector<ResponseTerm>& terms) { return variant_loss(g, v, terms, cfg); };
}

LossBuilder reinforce(ClipConfig cfg) {
  return [cfg](Graph& g, const std::vector<ResponseTerm>& terms) { return reinforce_is_loss(g, terms, cfg); };
}

constexpr std::size_t kInstances = 50;

Outcome gradient_oracle() {
  double worst = 0.0;
  std::size_t checks = 0;
  for (std::uint64_t s = 0; s < kInstances; ++s) {
    const auto inst = random_group(10'000 + s);
    for (Variant v : {Variant::ppo_grpo, Variant::cispo, Variant::unified}) {
      worst = std::max(worst, check_gradient(inst, with(v, variant_preset(v)), 2, s).rel_error);
      ++checks;
    }
  }
  return {worst < 1e-4, std::to_string(checks) + " checks, max rel err " + fmt("%.3g", worst)};
}

Outcome reductions() {
  ClipConfig unbounded = variant_preset(Variant::cispo);
  unbounded.is_eps_high = kNoBound;
  const ClipConfig ppo = variant_preset(Variant::ppo_grpo);
  ClipConfig masked = ppo;
  masked.mask_enabled = true;
  masked.mask_eps_low = masked.mask_eps_high = ppo.ppo_epsilon;
  masked.is_eps_low = masked.is_eps_high = kNoBound;
  double e1 = 0.0, e2 = 0.0, e3 = 0.0;
  for (std::uint64_t s = 0; s < kInstances; ++s) {
    const auto inst = random_group(20'000 + s);
    e1 = std::max(e1, relative_error(flatten(loss_gradient(inst, with(Variant::cispo, unbounded))),
                                     flatten(loss_gradient(inst, reinforce(unbounded)))));
    e2 = std::max(e2, relative_error(flatten(loss_gradient(inst, with(Variant::unified, masked))),
                                     flatten(loss_gradient(inst, with(Variant::ppo_grpo, ppo)))));
    const auto on = random_group(30'000 + s, 3, 0.0);
    e3 = std::max(e3, relative_error(flatten(loss_gradient(on, with(Variant::ppo_grpo, ppo))),
                                     flatten(loss_gradient(on, reinforce(ppo)))));
  }
  return {e1 < 1e-6 && e2 < 1e-6 && e3 < 1e-6,
          "cispo~reinforce_is " + fmt("%.2g", e1) + ", masked unified~ppo " + fmt("%.2g", e2) +
              ", on-policy ppo~reinforce " + fmt("%.2g", e3)};
}

// Population-std standardization carried out in 256-bit arithmetic.
std::vector<double> mpfr_advantages(const std::vector<double>& rewards) {
  const mpfr_prec_t prec = 256;
  mpfr_t mean, var, tmp, sd;
  mpfr_inits2(prec, mean, var, tmp, sd, (mpfr_ptr)nullptr);
  mpfr_set_zero(mean, 1);
  for (double r : rewards) mpfr_add_d(mean, mean, r, MPFR_RNDN);
  mpfr_div_ui(mean, mean, rewards.size(), MPFR_RNDN);
  mpfr_set_zero(var, 1);
  for (double r : rewards) {
    mpfr_d_sub(tmp, r, mean, MPFR_RNDN);
    mpfr_sqr(tmp, tmp, MPFR_RNDN);
    mpfr_add(var, var, tmp, MPFR_RNDN);
  }
  mpfr_div_ui(var, var, rewards.size(), MPFR_RNDN);
  mpfr_sqrt(sd, var, MPFR_RNDN);
  std::vector<double> out;
  for (double r : rewards) {
    mpfr_d_sub(tmp, r, mean, MPFR_RNDN);
    mpfr_div(tmp, tmp, sd, MPFR_RNDN);
    out.push_back(mpfr_get_d(tmp, MPFR_RNDN));
  }
  mpfr_clears(mean, var, tmp, sd, (mpfr_ptr)nullptr);
  return out;
}

Outcome advantage_properties() {
  Rng rng(3);
  double max_sum = 0.0, max_shift = 0.0, max_oracle = 0.0;
  std::size_t groups = 0;
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<double> r(2 + rng.index(15));
    const bool binary = trial % 2 == 0;
    for (auto& x : r) x = binary ? double(rng.index(2)) : rng.normal() * std::pow(10.0, rng.uniform(-3, 3));
    const auto a = grpo_advantages(r);
    if (a.degenerate) continue;
    ++groups;
    double sum = 0.0;
    for (double x : a.values) sum += x;
    max_sum = std::max(max_sum, std::abs(sum));
    const double c = rng.uniform(-100, 100);
    std::vector<double> shifted = r;
    for (auto& x : shifted) x += c;
    const auto b = grpo_advantages(shifted);
    for (std::size_t i = 0; i < r.size(); ++i) max_shift = std::max(max_shift, std::abs(a.values[i] - b.values[i]));
    const auto ref = mpfr_advantages(r);
    for (std::size_t i = 0; i < r.size(); ++i) max_oracle = std::max(max_oracle, std::abs(a.values[i] - ref[i]));
  }
  const auto ex = grpo_advantages({1, 0, 0, 0});
  const auto ex_ref = mpfr_advantages({1, 0, 0, 0});
  double ex_err = 0.0, lit_err = std::abs(ex_ref[0] - 1.7320508);
  for (std::size_t i = 0; i < 4; ++i) ex_err = std::max(ex_err, std::abs(ex.values[i] - ex_ref[i]));
  for (std::size_t i = 1; i < 4; ++i) lit_err = std::max(lit_err, std::abs(ex_ref[i] + 0.5773503));
  const bool pass = max_sum <= 1e-9 && max_shift <= 1e-6 && ex_err <= 1e-7 && lit_err <= 1e-7;
  return {pass, std::to_string(groups) + " groups, |sum| " + fmt("%.2g", max_sum) + ", shift drift " +
                    fmt("%.2g", max_shift) + ", [1,0,0,0] vs mpfr " + fmt("%.2g", ex_err) + " (literal " +
                    fmt("%.2g", lit_err) + "), random vs mpfr " + fmt("%.2g", max_oracle)};
}

Outcome paired_study() {
  const CompareConfig study = load_compare_config(TINYRL_SOURCE_DIR "/configs/paired-study.json");
  std::vector<std::vector<std::pair<std::size_t, double>>> cispo, grpo;
  for (std::uint64_t seed : study.seeds) {
    for (Variant v : {Variant::cispo, Variant::ppo_grpo}) {
      ExperimentConfig e = study.base;
      e.seed = seed;
      e.train.variant = v;
      e.train.clip = variant_preset(v);
      auto curve = run_experiment(e).eval_curve;
      (v == Variant::cispo ? cispo : grpo).push_back(std::move(curve));
    }
  }
  std::size_t dominant = 0;
  std::vector<double> reach_fraction;
  std::ostringstream per_seed;
  for (std::size_t s = 0; s < study.seeds.size(); ++s) {
    bool every = true;
    for (std::size_t i = 0; i < cispo[s].size() && i < grpo[s].size(); ++i) {
      if (cispo[s][i].first >= 200 && cispo[s][i].second < grpo[s][i].second) every = false;
    }
    dominant += every;
    const double target = grpo[s].back().second;
    const auto reach = steps_to_threshold(cispo[s], target);
    const double frac = reach ? double(*reach) / double(grpo[s].back().first) : INFINITY;
    reach_fraction.push_back(frac);
    per_seed << " s" << study.seeds[s] << ":C" << fmt("%.3f", cispo[s].back().second) << "/G"
             << fmt("%.3f", grpo[s].back().second) << (every ? "+" : "-");
  }
  std::vector<double> sorted = reach_fraction;
  std::sort(sorted.begin(), sorted.end());
  const double median = sorted[sorted.size() / 2];
  const bool pass = study.seeds.size() >= 5 && study.base.train.steps >= 400 && dominant >= 4 && median <= 0.6;
  return {pass, "dominant on " + std::to_string(dominant) + "/" + std::to_string(study.seeds.size()) +
                    " seeds, median reach fraction " + fmt("%.3f", median) + ";" + per_seed.str()};
}

Outcome fork_tokens() {
  ExperimentConfig cfg;
  cfg.policy.d_model = 16;
  cfg.policy.n_heads = 2;
  cfg.policy.n_layers = 2;
  cfg.policy.max_position = 24;
  cfg.sampling.top_p = 1.0;
  cfg.reward.length_penalty.l_cache = 4;
  cfg.train.group_size = 8;
  cfg.train.batch_groups = 8;
  cfg.train.rounds = 16;
  cfg.train.optimizer.learning_rate = 3e-3;
  CollectContext ctx;
  ctx.window = 12;
  TaskPool pool;
  pool.rule_tasks = generate_pool({{TaskFamily::sequence_sort, 2, 3}}, 64, 11);
  PolicyParams params = init_policy(cfg.policy, 2);
  const Batch batch = collect_batch(params, pool, cfg, ctx, 9);
  OptimizerState opt = make_optimizer_state(params.tensors);
  train_minibatches(batch, params, opt, cfg);

  std::vector<std::vector<double>> behavior, live;
  std::vector<double> adv;
  for (std::size_t g = 0; g < batch.groups.size(); ++g) {
    const auto& grp = batch.groups[g];
    for (std::size_t i = 0; i < grp.responses.size(); ++i) {
      behavior.push_back(grp.responses[i].behavior_logprobs);
      live.push_back(live_response_logprobs(params, grp.prompt, grp.responses[i].tokens));
      adv.push_back(batch.advantages[g][i]);
    }
  }
  const ClipConfig ppo = variant_preset(Variant::ppo_grpo);
  const ClipConfig cispo = variant_preset(Variant::cispo);
  const ForkTokenReport rep = fork_token_report(behavior, live, adv, ppo);

  // Mask level: with log-probs as leaves, PPO's gradient vanishes exactly on
  // the tokens the mask removes and CISPO's never does.
  std::size_t mismatches = 0, cispo_kept = 0, nonzero_adv = 0;
  std::size_t k = 0;
  for (std::size_t i = 0; i < live.size(); ++i) {
    const Tensor value = Tensor::vector(live[i]);
    auto grad_of = [&](Variant v, const ClipConfig& c) {
      Graph g;
      ResponseTerm t;
      t.new_logprobs = g.parameter("lp", value);
      t.old_logprobs = behavior[i];
      t.advantage = adv[i];
      const LossInfo info = variant_loss(g, v, {t}, c);
      g.forward();
      return g.backward(info.loss)[0].grad.values();
    };
    const auto gp = grad_of(Variant::ppo_grpo, ppo);
    const auto gc = grad_of(Variant::cispo, cispo);
    for (std::size_t t = 0; t < live[i].size(); ++t, ++k) {
      if (adv[i] == 0.0) continue;
      ++nonzero_adv;
      if ((gp[t] == 0.0) != rep.records[k].zeroed_under_ppo) ++mismatches;
      cispo_kept += gc[t] != 0.0;
    }
  }
  const double retained = nonzero_adv ? double(cispo_kept) / double(nonzero_adv) : 0.0;
  const bool pass = rep.lowest_decile_zeroed_fraction > 0.0 && rep.cispo_retained_fraction == 1.0 && retained == 1.0 &&
                    mismatches == 0 && nonzero_adv > 0;
  return {pass, std::to_string(rep.records.size()) + " tokens, lowest decile zeroed " +
                    fmt("%.3f", rep.lowest_decile_zeroed_fraction) + ", cispo retained " +
                    fmt("%.3f", rep.cispo_retained_fraction) + " (gradient-level " + fmt("%.3f", retained) +
                    "), ppo gradient/mask mismatches " + std::to_string(mismatches)};
}

// Measured once at 0.98299 with the settings below and frozen.
constexpr double kReducedLo = 0.975, kReducedHi = 0.990;

Outcome precision() {
  PolicyConfig cfg;
  cfg.head_init_scale = 1.0;
  cfg.head_activation_offset = 4e6;
  const PrecisionStudy st = precision_study(cfg, 10'240, 128, 0);
  const double full = st.full_head.pearson, red = st.reduced_head.pearson;
  const bool pass = st.full_head.tokens >= 10'000 && st.reduced_head.tokens >= 10'000 && full >= 0.999 &&
                    red < 0.999 && red >= kReducedLo && red <= kReducedHi;
  return {pass, std::to_string(st.reduced_head.tokens) + " tokens, full r " + fmt("%.6f", full) + ", reduced r " +
                    fmt("%.6f", red) + " (frozen window [0.975, 0.990])"};
}

Outcome lightning_equivalence() {
  Rng rng(7);
  double worst = 0.0;
  for (std::size_t L : {1, 7, 64, 256}) {
    for (int rep = 0; rep < 3; ++rep) {
      const std::size_t H = 1 + rng.index(4), dh = 1 + rng.index(8), D = H * dh;
      const Tensor q = random_matrix(L, D, rng), k = random_matrix(L, D, rng), v = random_matrix(L, D, rng);
      std::vector<double> decays(H);
      for (auto& d : decays) d = rng.uniform(0.5, 1.0);
      if (rep == 0) decays = default_decays(1, H)[0];
      Graph g;
      const NodeId o = g.linear_attention(g.constant(q), g.constant(k), g.constant(v), decays);
      g.forward();
      const Tensor ref = quadratic_decay_attention(q, k, v, decays);
      for (std::size_t i = 0; i < ref.size(); ++i) worst = std::max(worst, std::abs(g.value(o)[i] - ref[i]));
    }
  }
  return {worst <= 1e-5, "L in {1,7,64,256}, max abs err " + fmt("%.3g", worst)};
}

Outcome flops_claims() {
  const ArchSpec m1 = m1_like_preset(), r1 = r1_like_preset();
  const double at64 = flops_ratio(m1, r1, 65'536), at100 = flops_ratio(m1, r1, 102'400);
  bool monotone = true;
  double prev = INFINITY;
  for (double L = 1024; L <= 131'072; L += 1024) {
    const double r = flops_ratio(m1, r1, L);
    if (r > prev) monotone = false;
    prev = r;
  }
  double brute = 0.0;
  for (const ArchSpec* a : {&m1, &r1}) {
    for (std::size_t L : {1, 100, 4096, 65'536}) {
      const double c = generation_flops(*a, double(L)), b = generation_flops_bruteforce(*a, L);
      brute = std::max(brute, std::abs(c - b) / std::abs(b));
    }
  }
  const bool pass = at64 < 0.5 && std::abs(at100 - 0.25) <= 0.10 && monotone && brute <= 1e-12;
  return {pass, "ratio@64K " + fmt("%.4f", at64) + ", ratio@100K " + fmt("%.4f", at100) +
                    (monotone ? ", monotone" : ", NOT monotone") + ", closed vs brute " + fmt("%.2g", brute)};
}

Outcome repetition_rule() {
  const std::vector<int> prompt{26, 6, 7};
  SamplingConfig cfg;
  cfg.max_new_tokens = 100;
  cfg.repetition_window = 30;
  cfg.repetition_threshold = 0.99;
  FixedTokenPolicy exact(tok::vocab_size, tok::digit(3), 1.0);
  const Response on = sample_response(exact, prompt, cfg, 1);
  SamplingConfig off_cfg = cfg;
  off_cfg.repetition_check = false;
  const Response off = sample_response(exact, prompt, off_cfg, 1);
  const bool exact_ok = on.reason == TruncationReason::repetition && prompt.size() + on.tokens.size() == prompt.size() + 30 &&
                        off.reason == TruncationReason::window_limit && off.tokens.size() == 100;

  FixedTokenPolicy peaked(tok::vocab_size, tok::digit(3), 0.9995);
  double len_on = 0.0, len_off = 0.0;
  const int n = 200;
  for (int s = 0; s < n; ++s) {
    len_on += double(sample_response(peaked, prompt, cfg, std::uint64_t(s)).tokens.size());
    len_off += double(sample_response(peaked, prompt, off_cfg, std::uint64_t(s)).tokens.size());
  }
  len_on /= n;
  len_off /= n;
  return {exact_ok && len_on < len_off, "peaked stop at prompt+" + std::to_string(on.tokens.size()) + " (" +
                                            truncation_name(on.reason) + "), off -> " + truncation_name(off.reason) +
                                            ", mean length " + fmt("%.2f", len_on) + " vs " + fmt("%.2f", len_off)};
}

// Independent statement of the rule for three-point histories: the
// least-squares slope over x = 0, 1, 2 is (y2 - y0) / 2.
WindowDecision oracle_decision(const WindowState& s, const WindowConfig& c) {
  if (s.index + 1 >= c.lengths.size()) return WindowDecision::stay;
  if (s.perplexities.size() < c.stats_window) return WindowDecision::cold_start;
  const std::size_t n = s.perplexities.size();
  const double slope = (s.perplexities[n - 1] - s.perplexities[n - 3]) / 2.0;
  const bool long_enough = s.p99 >= c.p99_fraction * double(c.lengths[s.index]);
  return long_enough && std::abs(slope) <= c.slope_bound ? WindowDecision::advance : WindowDecision::stay;
}

Outcome scheduler() {
  WindowConfig c;
  c.lengths = {8, 16, 24};
  c.p99_fraction = 0.9;
  c.slope_bound = 0.01;
  c.stats_window = 3;
  const std::vector<double> ppl{1.0, 1.004, 1.03};
  std::size_t states = 0, mismatches = 0;
  for (std::size_t idx = 0; idx < c.lengths.size(); ++idx) {
    const double w = double(c.lengths[idx]);
    for (double p99 : {0.0, 0.5 * w, 0.9 * w - 1e-9, 0.9 * w, w, 2.0 * w}) {
      for (std::size_t len = 0; len <= 3; ++len) {
        std::size_t combos = 1;
        for (std::size_t i = 0; i < len; ++i) combos *= ppl.size();
        for (std::size_t code = 0; code < combos; ++code) {
          WindowState s;
          s.index = idx;
          s.p99 = p99;
          for (std::size_t i = 0, r = code; i < len; ++i, r /= ppl.size()) s.perplexities.push_back(ppl[r % ppl.size()]);
          ++states;
          if (window_scheduler(s, c) != oracle_decision(s, c)) ++mismatches;
        }
      }
    }
  }
  // Random walks through window_step: never skip, never go back, and advance
  // only when the oracle allowed it on the recorded state.
  Rng rng(5);
  std::size_t skips = 0, bad_advances = 0, advances = 0;
  for (int walk = 0; walk < 2000; ++walk) {
    WindowState s;
    for (int step = 0; step < 12; ++step) {
      const double w = double(c.lengths[s.index]);
      const double p99 = rng.uniform() < 0.5 ? w : 0.5 * w;
      const double p = ppl[rng.index(ppl.size())];
      WindowState probe = s;
      probe.p99 = p99;
      probe.perplexities.push_back(p);
      const WindowDecision expect = oracle_decision(probe, c);
      const std::size_t before = s.index;
      const WindowDecision got = window_step(s, p99, p, c);
      if (s.index > before + 1 || s.index < before) ++skips;
      if ((s.index == before + 1) != (expect == WindowDecision::advance) || got != expect) ++bad_advances;
      advances += s.index == before + 1;
    }
  }
  return {mismatches == 0 && skips == 0 && bad_advances == 0 && advances > 0,
          std::to_string(states) + " states, " + std::to_string(mismatches) + " mismatches; walks: " +
              std::to_string(advances) + " advances, " + std::to_string(skips) + " skips, " +
              std::to_string(bad_advances) + " unexpected"};
}

Outcome length_bias() {
  const LengthBiasScenario sc;
  const LengthBiasResult res = simulate_length_bias_loop(sc);
  if (res.alarm_steps.empty()) return {false, "monitor never fired"};
  const std::size_t first = res.alarm_steps.front();
  const std::size_t tail = 100;
  std::vector<double> lengths;
  for (std::size_t i = res.steps.size() - tail; i < res.steps.size(); ++i) lengths.push_back(res.steps[i].mean_length);
  double mean_len = 0.0;
  for (double x : lengths) mean_len += x;
  mean_len /= double(lengths.size());
  const double rel_slope = least_squares_slope(lengths) / mean_len;
  auto success = [&](std::size_t lo, std::size_t hi) {
    double s = 0.0;
    for (std::size_t i = lo; i < hi; ++i) s += res.steps[i].success_rate;
    return s / double(hi - lo);
  };
  const double early = success(0, 50), late = success(res.steps.size() - 50, res.steps.size());
  const bool pass = first <= 100 && res.final_bias < 0.1 && rel_slope <= 1e-3 && late >= early - 0.05;
  return {pass, "first alarm step " + std::to_string(first) + ", " + std::to_string(res.alarm_steps.size()) +
                    " recalibrations, final bias " + fmt("%.4f", res.final_bias) + ", tail rel slope " +
                    fmt("%.2e", rel_slope) + ", success " + fmt("%.3f", early) + " -> " + fmt("%.3f", late)};
}

Outcome determinism() {
  ExperimentConfig cfg = load_config(TINYRL_SOURCE_DIR "/configs/toy-study.json");
  cfg.train.steps = 6;
  cfg.train.warmstart_steps = 20;
  cfg.train.eval_interval = 3;
  cfg.train.eval_tasks = 8;
  cfg.train.pool_size = 64;
  const RunResult a = run_experiment(cfg), b = run_experiment(cfg);
  bool same = a.metrics.size() == b.metrics.size() && a.metrics.size() == cfg.train.steps;
  for (std::size_t i = 0; same && i < a.metrics.size(); ++i) same = a.metrics[i].dump() == b.metrics[i].dump();
  const bool params = serialize_checkpoint(a.final_params) == serialize_checkpoint(b.final_params);
  return {same && params, std::to_string(a.metrics.size()) + " metrics lines " + (same ? "identical" : "DIFFER") +
                              ", checkpoints " + (params ? "identical" : "DIFFER")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tinyrl acceptance suite"};
  std::vector<int> only;
  app.add_option("--only", only, "criteria to run")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"gradient-oracle", gradient_oracle},   {"reduction-identities", reductions},
      {"advantage-properties", advantage_properties}, {"paired-study", paired_study},
      {"fork-token-mask", fork_tokens},       {"precision-diagnostic", precision},
      {"lightning-equivalence", lightning_equivalence}, {"flops-claims", flops_claims},
      {"repetition-truncation", repetition_rule}, {"window-scheduler", scheduler},
      {"length-bias-loop", length_bias},      {"determinism", determinism},
  };
  const std::set<int> selected(only.begin(), only.end());
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = int(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("[%s] %2d %-22s %s (%.1fs)\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first, o.detail.c_str(), secs);
    std::fflush(stdout);
    failures += !o.pass;
  }
  return failures == 0 ? 0 : 1;
}

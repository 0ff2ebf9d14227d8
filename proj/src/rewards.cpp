#include "tinyrl/rewards.hpp"

#include <algorithm>
#include <cmath>

#include "tinyrl/error.hpp"
#include "tinyrl/rng.hpp"

namespace tinyrl {

void RewardConfig::validate() const {
  if (!std::isfinite(correct_reward) || !std::isfinite(format_bonus)) throw ValueError("reward: values must be finite");
  if (length_penalty.enabled && length_penalty.l_cache >= length_penalty.l_max) {
    throw ValueError("reward: l_cache must be smaller than l_max");
  }
  if (!(genrm_bias >= 0.0) || !std::isfinite(genrm_bias)) throw ValueError("reward: genrm_bias must be >= 0");
  if (!(pairwise_margin > 0.0)) throw ValueError("reward: pairwise_margin must be positive");
  if (!(length_scale > 0.0)) throw ValueError("reward: length_scale must be positive");
  if (!(recalibration_factor >= 0.0 && recalibration_factor < 1.0)) {
    throw ValueError("reward: recalibration_factor must lie in [0, 1)");
  }
}

double length_penalty(std::size_t length, bool truncated, const LengthPenalty& p) {
  if (!p.enabled) return 0.0;
  if (truncated) return -1.0;
  const double start = double(p.l_max - p.l_cache);
  const double len = double(length);
  if (len <= start) return 0.0;
  if (len >= double(p.l_max)) return -1.0;
  return -(len - start) / double(p.l_cache);
}

double rule_reward(const VerifyResult& result, std::size_t length, bool truncated, const RewardConfig& cfg) {
  double r = (result.correct ? cfg.correct_reward : 0.0) + (result.format_ok ? cfg.format_bonus : 0.0);
  return r + length_penalty(length, truncated, cfg.length_penalty);
}

double judge_score(bool correct, std::size_t length, const RewardConfig& cfg) {
  return (correct ? 1.0 : 0.0) + cfg.genrm_bias * double(length) / cfg.length_scale;
}

int pairwise_verdict(double score_response, double score_reference, const RewardConfig& cfg) {
  const double d = score_response - score_reference;
  if (std::abs(d) <= cfg.pairwise_margin) return 0;
  return d > 0.0 ? 1 : -1;
}

int mock_genrm_pairwise(const std::vector<int>& response, const std::vector<int>& reference, const TaskInstance& task,
                        const RewardConfig& cfg) {
  if (reference.empty()) throw ValueError("pairwise judge: reference must be nonempty");
  const double a = judge_score(verify(task, response).correct, response.size(), cfg);
  const double b = judge_score(verify(task, reference).correct, reference.size(), cfg);
  return pairwise_verdict(a, b, cfg);
}

int mock_genrm_graded(const std::vector<int>& response, const std::vector<int>& ground_truth, const RewardConfig&,
                      TaskFamily family) {
  const auto content = extract_answer(response);
  if (!content || ground_truth.empty()) return 0;
  const auto a = canonical_answer(family, *content);
  const auto b = canonical_answer(family, ground_truth);
  if (a == b) return 4;
  std::size_t agree = 0;
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) agree += a[i] == b[i] ? 1 : 0;
  const double f = double(agree) / double(std::max(a.size(), b.size()));
  return std::min(3, static_cast<int>(std::floor(4.0 * f)));
}

void BiasMonitorConfig::validate() const {
  if (min_observations < 2 || window < min_observations) {
    throw ValueError("bias monitor: need 2 <= min_observations <= window");
  }
  if (!(length_growth > 0.0) || !(success_tolerance > 0.0)) throw ValueError("bias monitor: thresholds must be positive");
}

const char* monitor_status_name(MonitorStatus s) {
  switch (s) {
    case MonitorStatus::cold_start: return "cold_start";
    case MonitorStatus::ok: return "ok";
    case MonitorStatus::alarm: return "alarm";
  }
  return "?";
}

BiasMonitor::BiasMonitor(BiasMonitorConfig cfg) : cfg_(cfg) { cfg_.validate(); }

MonitorStatus BiasMonitor::observe(const BiasObservation& obs) {
  history_.push_back(obs);
  while (history_.size() > cfg_.window) history_.pop_front();
  return status();
}

MonitorStatus BiasMonitor::status() const {
  if (history_.size() < cfg_.min_observations) return MonitorStatus::cold_start;
  const std::size_t half = history_.size() / 2;
  const std::size_t old_n = history_.size() - half;
  BiasObservation older, newer;
  for (std::size_t i = 0; i < history_.size(); ++i) {
    BiasObservation& dst = i < old_n ? older : newer;
    dst.mean_length += history_[i].mean_length;
    dst.success_rate += history_[i].success_rate;
    dst.model_reward += history_[i].model_reward;
  }
  auto scale = [](BiasObservation& o, double n) {
    o.mean_length /= n;
    o.success_rate /= n;
    o.model_reward /= n;
  };
  scale(older, double(old_n));
  scale(newer, double(half));
  const bool grew = older.mean_length > 0.0 && (newer.mean_length - older.mean_length) >= cfg_.length_growth * older.mean_length;
  const bool success_flat = (newer.success_rate - older.success_rate) < cfg_.success_tolerance;
  const bool reward_held = newer.model_reward >= older.model_reward;
  return grew && success_flat && reward_held ? MonitorStatus::alarm : MonitorStatus::ok;
}

RewardConfig recalibrate(const RewardConfig& cfg) {
  RewardConfig out = cfg;
  out.genrm_bias = std::max(0.0, cfg.genrm_bias * cfg.recalibration_factor);
  return out;
}

LengthBiasResult simulate_length_bias_loop(const LengthBiasScenario& sc) {
  sc.reward.validate();
  if (sc.batch < 2 || !(sc.length_std > 0.0) || !(sc.initial_mean_length >= 1.0)) {
    throw ValueError("length-bias scenario: need batch >= 2, length_std > 0 and initial_mean_length >= 1");
  }
  Rng rng(sc.seed);
  BiasMonitor monitor(sc.monitor);
  RewardConfig reward = sc.reward;
  double theta = std::log(sc.initial_mean_length);
  LengthBiasResult out;
  std::vector<double> z(sc.batch);
  std::vector<std::size_t> len(sc.batch);
  std::vector<bool> ok(sc.batch);
  for (std::size_t step = 0; step < sc.steps; ++step) {
    LengthBiasStep rec;
    rec.step = step;
    rec.bias_before = reward.genrm_bias;
    double sum_len = 0.0, sum_ok = 0.0, sum_score = 0.0;
    for (std::size_t i = 0; i < sc.batch; ++i) {
      z[i] = rng.normal();
      len[i] = static_cast<std::size_t>(std::max(1.0, std::round(std::exp(theta) + sc.length_std * z[i])));
      ok[i] = rng.uniform() < sc.success_prob;
      sum_len += double(len[i]);
      sum_ok += ok[i] ? 1.0 : 0.0;
      sum_score += judge_score(ok[i], len[i], reward);
    }
    std::vector<double> verdict(sc.batch);
    double mean_v = 0.0;
    for (std::size_t i = 0; i < sc.batch; ++i) {
      const std::size_t j = (i + 1) % sc.batch;
      verdict[i] = pairwise_verdict(judge_score(ok[i], len[i], reward), judge_score(ok[j], len[j], reward), reward);
      mean_v += verdict[i];
    }
    mean_v /= double(sc.batch);
    double grad = 0.0;
    for (std::size_t i = 0; i < sc.batch; ++i) grad += (verdict[i] - mean_v) * z[i];
    theta = std::max(0.0, theta + sc.learning_rate * grad / double(sc.batch));

    rec.mean_length = sum_len / double(sc.batch);
    rec.success_rate = sum_ok / double(sc.batch);
    rec.model_reward = sum_score / double(sc.batch);
    rec.status = monitor.observe({rec.mean_length, rec.success_rate, rec.model_reward});
    if (rec.status == MonitorStatus::alarm) {
      reward = recalibrate(reward);
      monitor.reset();
      out.alarm_steps.push_back(step);
    }
    rec.bias_after = reward.genrm_bias;
    out.steps.push_back(rec);
  }
  out.final_bias = reward.genrm_bias;
  return out;
}

}  // namespace tinyrl

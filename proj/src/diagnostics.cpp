#include "tinyrl/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tinyrl/error.hpp"
#include "tinyrl/rng.hpp"

namespace tinyrl {

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ShapeError("pearson: length mismatch");
  if (a.size() < 2) throw ValueError("pearson: need at least two points");
  double ma = 0.0, mb = 0.0, saa = 0.0, sbb = 0.0, sab = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double n = double(i + 1);
    const double da = a[i] - ma;
    const double db = b[i] - mb;
    ma += da / n;
    mb += db / n;
    saa += da * (a[i] - ma);
    sbb += db * (b[i] - mb);
    sab += da * (b[i] - mb);
  }
  if (!(saa > 0.0) || !(sbb > 0.0)) throw ValueError("pearson: zero-variance input");
  if (a == b) return 1.0;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

CorrelationReport train_infer_correlation(const PolicyParams& params, const std::vector<std::vector<int>>& sequences,
                                          std::optional<Precision> infer_head) {
  const PolicyParams* infer_params = &params;
  PolicyParams copy;
  if (infer_head && *infer_head != params.config.head_precision) {
    copy = params;
    copy.config.head_precision = *infer_head;
    infer_params = &copy;
  }
  CorrelationReport rep;
  for (const auto& seq : sequences) {
    const auto tr = token_logprobs(params, seq, EvalMode::train);
    const auto in = token_logprobs(*infer_params, seq, EvalMode::infer);
    for (std::size_t i = 0; i < tr.size(); ++i) {
      rep.train_probs.push_back(std::exp(tr[i]));
      rep.infer_probs.push_back(std::exp(in[i]));
      rep.max_abs_gap = std::max(rep.max_abs_gap, std::abs(rep.train_probs.back() - rep.infer_probs.back()));
    }
  }
  rep.tokens = rep.train_probs.size();
  rep.pearson = pearson(rep.train_probs, rep.infer_probs);
  return rep;
}

PrecisionStudy precision_study(const PolicyConfig& config, std::size_t min_tokens, std::size_t seq_len,
                               std::uint64_t seed) {
  if (seq_len == 0 || seq_len > config.max_position) throw ValueError("precision_study: seq_len must lie in [1, max_position]");
  const PolicyParams params = init_policy(config, derive_seed(seed, 0));
  Rng rng(derive_seed(seed, 1));
  std::vector<std::vector<int>> seqs;
  for (std::size_t n = 0; n < min_tokens; n += seq_len) {
    std::vector<int> s(seq_len);
    for (auto& t : s) t = int(rng.index(config.vocab_size));
    seqs.push_back(std::move(s));
  }
  PrecisionStudy out;
  out.full_head = train_infer_correlation(params, seqs, Precision::f64);
  out.reduced_head = train_infer_correlation(params, seqs, Precision::f32);
  return out;
}

double row_entropy(const double* lp, std::size_t n) {
  double h = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double p = std::exp(lp[i]);
    if (p > 0.0) h -= p * lp[i];
  }
  return h;
}

EntropyReport entropy_report(const PolicyParams& params, const std::vector<std::vector<int>>& sequences) {
  EntropyReport rep;
  const std::size_t V = params.config.vocab_size;
  for (const auto& seq : sequences) {
    const Tensor lp = position_log_probs(params, seq, EvalMode::train);
    for (std::size_t t = 0; t < seq.size(); ++t) rep.per_position.push_back(row_entropy(&lp[t * V], V));
  }
  if (!rep.per_position.empty()) {
    rep.mean = std::accumulate(rep.per_position.begin(), rep.per_position.end(), 0.0) / double(rep.per_position.size());
  }
  return rep;
}

ForkTokenReport fork_token_report(const std::vector<std::vector<double>>& behavior_logprobs,
                                  const std::vector<std::vector<double>>& new_logprobs,
                                  const std::vector<double>& advantages, const ClipConfig& cfg) {
  if (behavior_logprobs.size() != new_logprobs.size() || behavior_logprobs.size() != advantages.size()) {
    throw ShapeError("fork_token_report: response count mismatch");
  }
  ForkTokenReport rep;
  for (std::size_t i = 0; i < behavior_logprobs.size(); ++i) {
    const auto r = is_weights(new_logprobs[i], behavior_logprobs[i]);
    for (std::size_t t = 0; t < r.size(); ++t) {
      ForkTokenRecord rec;
      rec.behavior_prob = std::exp(behavior_logprobs[i][t]);
      rec.ratio = r[t];
      rec.advantage = advantages[i];
      rec.zeroed_under_ppo = !trust_region_keep(r[t], advantages[i], cfg.mask_eps_low, cfg.mask_eps_high);
      rec.retained_under_cispo = true;
      rep.records.push_back(rec);
    }
  }
  const std::size_t n = rep.records.size();
  if (n == 0) return rep;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return rep.records[a].behavior_prob < rep.records[b].behavior_prob; });
  std::array<std::size_t, 10> zeroed{};
  for (std::size_t rank = 0; rank < n; ++rank) {
    const std::size_t dec = std::min<std::size_t>(9, rank * 10 / n);
    ++rep.decile_count[dec];
    zeroed[dec] += rep.records[order[rank]].zeroed_under_ppo ? 1 : 0;
  }
  for (std::size_t d = 0; d < 10; ++d) {
    rep.decile_zeroed_fraction[d] = rep.decile_count[d] == 0 ? 0.0 : double(zeroed[d]) / double(rep.decile_count[d]);
  }
  rep.lowest_decile_zeroed_fraction = rep.decile_zeroed_fraction[0];
  std::size_t retained = 0;
  for (const auto& rec : rep.records) retained += rec.retained_under_cispo ? 1 : 0;
  rep.cispo_retained_fraction = double(retained) / double(n);
  return rep;
}

ForkTokenReport fork_token_report(const RolloutGroup& group, const std::vector<std::vector<double>>& new_logprobs,
                                  const std::vector<double>& advantages, const ClipConfig& cfg) {
  std::vector<std::vector<double>> behavior;
  for (const auto& r : group.responses) behavior.push_back(r.behavior_logprobs);
  return fork_token_report(behavior, new_logprobs, advantages, cfg);
}

}  // namespace tinyrl

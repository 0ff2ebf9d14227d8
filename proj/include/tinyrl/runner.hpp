#pragma once

// Run directories: resolved_config.json, metrics.jsonl, checkpoint.bin and
// provenance.json. provenance.status is "complete" only when every step ran.

#include <optional>
#include <string>
#include <vector>

#include "tinyrl/config.hpp"
#include "tinyrl/trainer.hpp"

namespace tinyrl {

struct RunSummary {
  std::string directory;
  std::size_t steps_completed = 0;
  std::vector<std::pair<std::size_t, double>> eval_curve;
  double final_eval_pass_rate = 0.0;
};

// Throws after marking provenance.json "incomplete" if the run fails.
RunSummary run_to_directory(const ExperimentConfig& cfg, const std::string& directory);

// First eval step whose pass rate is >= threshold.
std::optional<std::size_t> steps_to_threshold(const std::vector<std::pair<std::size_t, double>>& curve,
                                              double threshold);

struct CompareRow {
  Variant variant;
  std::uint64_t seed;
  RunSummary run;
  std::optional<std::size_t> steps_to_threshold;
};

// One run per (variant, seed) under <output_dir>/<variant>-seed<seed>; also
// writes <output_dir>/summary.csv.
std::vector<CompareRow> run_compare(const CompareConfig& cfg);
std::string compare_summary_csv(const std::vector<CompareRow>& rows);

}  // namespace tinyrl

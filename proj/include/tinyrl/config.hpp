#pragma once

// Strict JSON experiment configs. Unknown keys and wrong types are rejected
// with the dotted path of the offending field; omitted fields take their
// defaults and every field is echoed by config_to_json.

#include <string>
#include <vector>

#include "json.hpp"
#include "tinyrl/trainer.hpp"

namespace tinyrl {

constexpr int kConfigSchemaVersion = 1;

ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::string& path);
nlohmann::ordered_json config_to_json(const ExperimentConfig& cfg);

PolicyConfig policy_config_from_json(const nlohmann::json& j, const std::string& path = "policy");
nlohmann::ordered_json policy_config_to_json(const PolicyConfig& cfg);

// Paired-seed comparison across objective variants on one base experiment.
struct CompareConfig {
  ExperimentConfig base;
  std::vector<Variant> variants{Variant::cispo, Variant::ppo_grpo};
  std::vector<std::uint64_t> seeds{0, 1, 2};
  double threshold = 0.5;  // eval pass rate counted as "reached"
  std::string output_dir = "runs/compare";
};

CompareConfig compare_config_from_json(const nlohmann::json& j);
CompareConfig load_compare_config(const std::string& path);
nlohmann::ordered_json compare_config_to_json(const CompareConfig& cfg);

nlohmann::json read_json_file(const std::string& path);

}  // namespace tinyrl

#include "tinyrl/runner.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "tinyrl/error.hpp"

namespace tinyrl {

namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("cannot write " + path.string());
}

nlohmann::ordered_json provenance(const ExperimentConfig& cfg, const std::string& status, std::size_t steps,
                                  const std::string& error) {
  nlohmann::ordered_json p{{"artifact", "tinyrl"},
                           {"version", TINYRL_VERSION},
                           {"schema_version", cfg.schema_version},
                           {"seed", cfg.seed},
                           {"variant", variant_name(cfg.train.variant)},
                           {"status", status},
                           {"steps_requested", cfg.train.steps},
                           {"steps_completed", steps}};
  if (!error.empty()) p["error"] = error;
  return p;
}

}  // namespace

RunSummary run_to_directory(const ExperimentConfig& cfg, const std::string& directory) {
  cfg.validate();
  const fs::path dir(directory);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("cannot create run directory " + directory + ": " + ec.message());
  write_text(dir / "resolved_config.json", config_to_json(cfg).dump(2) + "\n");
  write_text(dir / "provenance.json", provenance(cfg, "incomplete", 0, "").dump(2) + "\n");

  std::ofstream metrics(dir / "metrics.jsonl", std::ios::binary);
  if (!metrics) throw Error("cannot write metrics.jsonl in " + directory);
  std::size_t steps = 0;
  RunSummary s;
  s.directory = directory;
  try {
    RunResult r = run_experiment(cfg, [&](const nlohmann::ordered_json& rec) {
      metrics << rec.dump() << "\n";
      metrics.flush();
      ++steps;
    });
    save_checkpoint((dir / "checkpoint.bin").string(), r.final_params);
    s.eval_curve = r.eval_curve;
    if (!r.eval_curve.empty()) s.final_eval_pass_rate = r.eval_curve.back().second;
  } catch (const std::exception& e) {
    write_text(dir / "provenance.json", provenance(cfg, "incomplete", steps, e.what()).dump(2) + "\n");
    throw;
  }
  s.steps_completed = steps;
  write_text(dir / "provenance.json", provenance(cfg, "complete", steps, "").dump(2) + "\n");
  return s;
}

std::optional<std::size_t> steps_to_threshold(const std::vector<std::pair<std::size_t, double>>& curve,
                                              double threshold) {
  for (const auto& [step, rate] : curve) {
    if (rate >= threshold) return step;
  }
  return std::nullopt;
}

std::vector<CompareRow> run_compare(const CompareConfig& cfg) {
  std::vector<CompareRow> rows;
  for (Variant v : cfg.variants) {
    for (std::uint64_t seed : cfg.seeds) {
      ExperimentConfig e = cfg.base;
      e.seed = seed;
      e.train.variant = v;
      e.train.clip = variant_preset(v);
      e.train.clip.kl_coef = cfg.base.train.clip.kl_coef;
      const std::string dir = (fs::path(cfg.output_dir) / (std::string(variant_name(v)) + "-seed" + std::to_string(seed))).string();
      e.output_dir = dir;
      CompareRow row{v, seed, run_to_directory(e, dir), std::nullopt};
      row.steps_to_threshold = steps_to_threshold(row.run.eval_curve, cfg.threshold);
      rows.push_back(std::move(row));
    }
  }
  write_text(fs::path(cfg.output_dir) / "summary.csv", compare_summary_csv(rows));
  return rows;
}

std::string compare_summary_csv(const std::vector<CompareRow>& rows) {
  std::ostringstream out;
  out.precision(17);
  out << "variant,seed,final_eval_pass_rate,steps_to_threshold\n";
  for (const auto& r : rows) {
    out << variant_name(r.variant) << "," << r.seed << "," << r.run.final_eval_pass_rate << ",";
    if (r.steps_to_threshold) {
      out << *r.steps_to_threshold;
    } else {
      out << "not reached";
    }
    out << "\n";
  }
  return out.str();
}

}  // namespace tinyrl

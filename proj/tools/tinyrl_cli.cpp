// tinyrl command-line entry point. Exit codes: 0 ok, 1 config error,
// 2 runtime error.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "tinyrl/config.hpp"
#include "tinyrl/diagnostics.hpp"
#include "tinyrl/error.hpp"
#include "tinyrl/flops.hpp"
#include "tinyrl/runner.hpp"
#include "tinyrl/tasks.hpp"

namespace {

using namespace tinyrl;

void emit(const std::string& text, const std::string& path) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out << text;
}

int cmd_train(const std::string& config, const std::optional<std::uint64_t>& seed, const std::string& output) {
  ExperimentConfig cfg = load_config(config);
  if (seed) cfg.seed = *seed;
  if (!output.empty()) cfg.output_dir = output;
  const RunSummary s = run_to_directory(cfg, cfg.output_dir);
  std::cout << "run complete: " << s.steps_completed << " steps, final eval pass rate " << s.final_eval_pass_rate
            << ", outputs in " << s.directory << "\n";
  return 0;
}

int cmd_compare(const std::string& config, const std::string& output) {
  CompareConfig cfg = load_compare_config(config);
  if (!output.empty()) cfg.output_dir = output;
  const auto rows = run_compare(cfg);
  std::cout << compare_summary_csv(rows);
  return 0;
}

int cmd_gen_data(const std::string& family, int dmin, int dmax, std::size_t count, std::uint64_t seed,
                 const std::string& output) {
  FamilySpec f{TaskFamily::sequence_sort, 0, 0};
  try {
    f.family = parse_family(family);
  } catch (const Error& e) {
    throw ConfigError(std::string("--family: ") + e.what());
  }
  const auto r = difficulty_range(f.family);
  f.min_difficulty = dmin < 0 ? r.lo : dmin;
  f.max_difficulty = dmax < 0 ? r.hi : dmax;
  if (f.min_difficulty < r.lo || f.max_difficulty > r.hi || f.min_difficulty > f.max_difficulty) {
    throw ConfigError("difficulty range out of bounds for " + std::string(family_name(f.family)));
  }
  std::ostringstream out;
  for (const auto& t : generate_pool({f}, count, seed)) out << task_to_json_line(t) << "\n";
  emit(out.str(), output);
  return 0;
}

int cmd_flops(const std::string& a, const std::string& b, std::size_t max_len, std::size_t stride,
              const std::vector<std::size_t>& lengths, double prompt, const std::string& output) {
  ArchSpec sa, sb;
  try {
    sa = load_arch(a);
    sb = load_arch(b);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  std::vector<std::size_t> grid = lengths;
  if (grid.empty()) {
    if (stride == 0) throw ConfigError("--stride must be positive");
    for (std::size_t L = stride; L <= max_len; L += stride) grid.push_back(L);
  }
  std::ostringstream out;
  out.precision(17);
  out << "L,flops_" << sa.name << ",flops_" << sb.name << ",ratio\n";
  for (std::size_t L : grid) {
    const double fa = generation_flops(sa, double(L), prompt), fb = generation_flops(sb, double(L), prompt);
    out << L << "," << fa << "," << fb << "," << fa / fb << "\n";
  }
  emit(out.str(), output);
  return 0;
}

int cmd_diagnose_precision(const std::string& config, std::size_t tokens, std::size_t seq_len, std::uint64_t seed,
                           std::optional<double> offset, const std::string& output) {
  PolicyConfig pc;
  pc.head_init_scale = 1.0;
  pc.head_activation_offset = 4e6;
  if (!config.empty()) pc = load_config(config).policy;
  if (offset) pc.head_activation_offset = *offset;
  const PrecisionStudy s = precision_study(pc, tokens, seq_len, seed);
  std::ostringstream out;
  out.precision(17);
  out << "head,tokens,pearson,max_abs_gap\n";
  out << "f64," << s.full_head.tokens << "," << s.full_head.pearson << "," << s.full_head.max_abs_gap << "\n";
  out << "f32," << s.reduced_head.tokens << "," << s.reduced_head.pearson << "," << s.reduced_head.max_abs_gap << "\n";
  emit(out.str(), output);
  return 0;
}

int cmd_diagnose_tokens(const std::string& config, std::size_t tokens, std::size_t seq_len, std::uint64_t seed,
                        const std::string& output) {
  PolicyConfig pc;
  pc.head_init_scale = 1.0;
  pc.head_activation_offset = 4e6;
  if (!config.empty()) pc = load_config(config).policy;
  const PrecisionStudy s = precision_study(pc, tokens, seq_len, seed);
  std::ostringstream out;
  out.precision(17);
  out << "index,train_prob,infer_prob_f64_head,infer_prob_f32_head\n";
  for (std::size_t i = 0; i < s.full_head.tokens; ++i) {
    out << i << "," << s.full_head.train_probs[i] << "," << s.full_head.infer_probs[i] << ","
        << s.reduced_head.infer_probs[i] << "\n";
  }
  emit(out.str(), output);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tinyrl: toy-scale RL objectives, hybrid-attention policies and training diagnostics"};
  app.set_version_flag("--version", TINYRL_VERSION);
  app.require_subcommand(1);

  std::string config, output;
  std::optional<std::uint64_t> seed;

  auto* train = app.add_subcommand("train", "run one experiment into a run directory");
  train->add_option("config", config, "experiment config (JSON)")->required();
  train->add_option("--seed", seed, "override the config seed");
  train->add_option("-o,--output", output, "override the output directory");

  std::string compare_cfg;
  auto* compare = app.add_subcommand("compare", "paired-seed runs across objective variants");
  compare->add_option("config", compare_cfg, "compare config (JSON)")->required();
  compare->add_option("-o,--output", output, "override the output directory");

  std::string family;
  int dmin = -1, dmax = -1;
  std::size_t count = 100;
  std::uint64_t data_seed = 0;
  auto* gen = app.add_subcommand("gen-data", "write a JSON-lines task dataset");
  gen->add_option("--family", family, "task family")->required();
  gen->add_option("--min-difficulty", dmin, "lowest difficulty (default: family minimum)");
  gen->add_option("--max-difficulty", dmax, "highest difficulty (default: family maximum)");
  gen->add_option("--count", count, "number of tasks");
  gen->add_option("--seed", data_seed, "generator seed");
  gen->add_option("-o,--output", output, "output file (default stdout)");

  std::string arch_a = "m1-like", arch_b = "r1-like";
  std::size_t max_len = 131072, stride = 4096;
  std::vector<std::size_t> lengths;
  double prompt = 1024.0;
  auto* flops = app.add_subcommand("flops", "generation FLOPs ratio CSV for two architectures");
  flops->add_option("--a", arch_a, "preset name or JSON file");
  flops->add_option("--b", arch_b, "preset name or JSON file");
  flops->add_option("--max-length", max_len, "largest generation length");
  flops->add_option("--stride", stride, "grid spacing");
  flops->add_option("--lengths", lengths, "explicit generation lengths (overrides the grid)")->delimiter(',');
  flops->add_option("--prompt", prompt, "prompt length");
  flops->add_option("-o,--output", output, "output file (default stdout)");

  std::string mode = "precision";
  std::size_t tokens = 10240, seq_len = 128;
  std::uint64_t diag_seed = 0;
  std::optional<double> offset;
  auto* diag = app.add_subcommand("diagnose", "train/infer precision correlation study");
  diag->add_option("--mode", mode, "precision (summary) or tokens (per-token CSV)")
      ->check(CLI::IsMember({"precision", "tokens"}));
  diag->add_option("--config", config, "experiment config whose policy section is used");
  diag->add_option("--tokens", tokens, "minimum number of scored tokens");
  diag->add_option("--seq-len", seq_len, "sequence length");
  diag->add_option("--seed", diag_seed, "seed");
  diag->add_option("--offset", offset, "head activation offset");
  diag->add_option("-o,--output", output, "output file (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*train) return cmd_train(config, seed, output);
    if (*compare) return cmd_compare(compare_cfg, output);
    if (*gen) return cmd_gen_data(family, dmin, dmax, count, data_seed, output);
    if (*flops) return cmd_flops(arch_a, arch_b, max_len, stride, lengths, prompt, output);
    if (*diag) {
      return mode == "tokens" ? cmd_diagnose_tokens(config, tokens, seq_len, diag_seed, output)
                              : cmd_diagnose_precision(config, tokens, seq_len, diag_seed, offset, output);
    }
  } catch (const ConfigError& e) {
    std::cerr << "{\"error\":\"config\",\"message\":" << nlohmann::json(e.what()).dump() << "}\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "{\"error\":\"runtime\",\"message\":" << nlohmann::json(e.what()).dump() << "}\n";
    return 2;
  }
  return 0;
}

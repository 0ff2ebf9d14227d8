#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "tinyrl/config.hpp"
#include "tinyrl/diagnostics.hpp"
#include "tinyrl/error.hpp"
#include "tinyrl/flops.hpp"
#include "tinyrl/objectives.hpp"
#include "tinyrl/rewards.hpp"
#include "tinyrl/tasks.hpp"
#include "tinyrl/trainer.hpp"

namespace py = pybind11;
using namespace tinyrl;

namespace {

py::dict task_dict(const TaskInstance& t) {
  py::dict d;
  d["id"] = t.id;
  d["family"] = family_name(t.family);
  d["difficulty"] = t.difficulty;
  d["prompt"] = t.prompt;
  d["answer"] = t.answer;
  d["formatted_answer"] = t.formatted_answer();
  return d;
}

}  // namespace

PYBIND11_MODULE(tinyrl, m) {
  m.doc() = "Python access to the tinyrl core: objectives, tasks, FLOPs model, diagnostics and training runs.";
  m.attr("__version__") = TINYRL_VERSION;

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ValueError>(m, "TinyrlValueError", PyExc_ValueError);

  m.def("grpo_advantages", [](const std::vector<double>& rewards) { return grpo_advantages(rewards).values; },
        py::arg("rewards"));
  m.def("is_weights", &is_weights, py::arg("new_logprobs"), py::arg("old_logprobs"));
  m.def("trust_region_keep", &trust_region_keep, py::arg("ratio"), py::arg("advantage"), py::arg("eps_low") = 0.2,
        py::arg("eps_high") = 0.2);

  m.def("generate_task",
        [](const std::string& family, int difficulty, std::uint64_t seed) {
          return task_dict(generate_task(parse_family(family), difficulty, seed));
        },
        py::arg("family"), py::arg("difficulty"), py::arg("seed"));
  m.def("verify",
        [](const std::string& family, int difficulty, std::uint64_t seed, const std::vector<int>& response) {
          const VerifyResult r = verify(generate_task(parse_family(family), difficulty, seed), response);
          return py::make_tuple(r.correct, r.format_ok);
        },
        py::arg("family"), py::arg("difficulty"), py::arg("seed"), py::arg("response"),
        "Returns (correct, format_ok) for a response to the regenerated task.");

  m.def("flops_ratio",
        [](const std::string& a, const std::string& b, double length, double prompt_len) {
          return flops_ratio(load_arch(a), load_arch(b), length, prompt_len);
        },
        py::arg("a"), py::arg("b"), py::arg("length"), py::arg("prompt_len") = 1024.0);
  m.def("generation_flops",
        [](const std::string& arch, double length, double prompt_len) {
          return generation_flops(load_arch(arch), length, prompt_len);
        },
        py::arg("arch"), py::arg("length"), py::arg("prompt_len") = 1024.0);

  m.def("precision_study",
        [](std::size_t tokens, std::size_t seq_len, std::uint64_t seed, double offset) {
          PolicyConfig pc;
          pc.head_init_scale = 1.0;
          pc.head_activation_offset = offset;
          const PrecisionStudy s = precision_study(pc, tokens, seq_len, seed);
          py::dict d;
          d["tokens"] = s.reduced_head.tokens;
          d["full_pearson"] = s.full_head.pearson;
          d["reduced_pearson"] = s.reduced_head.pearson;
          return d;
        },
        py::arg("tokens") = 10240, py::arg("seq_len") = 128, py::arg("seed") = 0, py::arg("offset") = 4e6);

  m.def("length_bias_loop",
        [](std::uint64_t seed) {
          LengthBiasScenario sc;
          sc.seed = seed;
          const LengthBiasResult r = simulate_length_bias_loop(sc);
          std::vector<double> lengths;
          for (const auto& s : r.steps) lengths.push_back(s.mean_length);
          py::dict d;
          d["alarm_steps"] = r.alarm_steps;
          d["final_bias"] = r.final_bias;
          d["mean_length"] = lengths;
          return d;
        },
        py::arg("seed") = 0);

  m.def("resolve_config",
        [](const std::string& text) { return config_to_json(config_from_json(nlohmann::json::parse(text))).dump(); },
        py::arg("config_json"), "Fills defaults and validates; returns the resolved config as JSON text.");
  m.def("run_experiment",
        [](const std::string& text) {
          const ExperimentConfig cfg = config_from_json(nlohmann::json::parse(text));
          RunResult r;
          {
            py::gil_scoped_release release;
            r = run_experiment(cfg);
          }
          std::vector<std::string> lines;
          for (const auto& m : r.metrics) lines.push_back(m.dump());
          py::dict d;
          d["metrics"] = lines;
          d["eval_curve"] = r.eval_curve;
          d["events"] = r.events;
          return d;
        },
        py::arg("config_json"), "Runs a training experiment in memory; metrics are JSON lines.");
}

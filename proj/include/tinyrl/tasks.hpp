#pragma once

// Synthetic verifiable task families, rule-based verification, pass-rate
// estimation and pass-rate band filtering.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tinyrl/rollout.hpp"

namespace tinyrl {

namespace tok {
inline constexpr int pad = 0;
inline constexpr int bos = 1;
inline constexpr int eos = 2;
inline constexpr int ans_open = 3;
inline constexpr int ans_close = 4;
inline constexpr int sep = 5;
inline constexpr int digit0 = 6;  // digits 0..9 -> 6..15
inline constexpr int plus = 16;
inline constexpr int minus = 17;
inline constexpr int times = 18;
inline constexpr int mod = 19;
inline constexpr int lparen = 20;
inline constexpr int rparen = 21;
inline constexpr int lbrack = 22;
inline constexpr int rbrack = 23;
inline constexpr int yes = 24;
inline constexpr int no = 25;
inline constexpr int fam_mod = 26;
inline constexpr int fam_br = 27;
inline constexpr int fam_sort = 28;
inline constexpr int fam_cipher = 29;
inline constexpr int letter_a = 30;  // letters a..l -> 30..41
inline constexpr int letters = 12;
inline constexpr int vocab_size = 42;

inline int digit(int d) { return digit0 + d; }
inline bool is_digit(int t) { return t >= digit0 && t < digit0 + 10; }
inline bool is_letter(int t) { return t >= letter_a && t < letter_a + letters; }
}  // namespace tok

std::string token_name(int token);
std::string render_tokens(const std::vector<int>& tokens);

enum class TaskFamily : std::uint8_t { modular_chain, bracket_balance, sequence_sort, substitution_cipher };

const char* family_name(TaskFamily f);
TaskFamily parse_family(const std::string& name);
const std::vector<TaskFamily>& all_families();

struct DifficultyRange {
  int lo;
  int hi;
};
DifficultyRange difficulty_range(TaskFamily f);

struct TaskInstance {
  TaskFamily family;
  int difficulty;
  std::uint64_t seed;
  std::string id;
  std::vector<int> prompt;
  std::vector<int> answer;  // content between the delimiters

  // OPEN answer CLOSE EOS
  std::vector<int> formatted_answer() const;
};

TaskInstance generate_task(TaskFamily family, int difficulty, std::uint64_t seed);
// Recomputes the expected answer from a prompt alone.
std::vector<int> solve_prompt(const std::vector<int>& prompt);
// Steps a minimal solver performs; non-decreasing in difficulty.
std::size_t solution_length(const TaskInstance& task);

struct VerifyResult {
  bool correct = false;
  bool format_ok = false;
};

// Content between the last OPEN and a final CLOSE, which may only be
// followed by EOS. Empty content is malformed.
std::optional<std::vector<int>> extract_answer(const std::vector<int>& response);
std::vector<int> canonical_answer(TaskFamily family, const std::vector<int>& answer);
VerifyResult verify(const TaskInstance& task, const std::vector<int>& response);

// Emits the formatted expected answer with probability one.
class OraclePolicy : public SequencePolicy {
 public:
  std::size_t vocab_size() const override { return tok::vocab_size; }
  std::size_t max_position() const override { return 4096; }
  std::unique_ptr<DecodeSession> start(const std::vector<int>& prompt) const override;
};

// OPEN, then each answer slot uniformly from the family's candidate tokens
// (the prompt's items for sorting), then CLOSE EOS.
class RandomGuessPolicy : public SequencePolicy {
 public:
  std::size_t vocab_size() const override { return tok::vocab_size; }
  std::size_t max_position() const override { return 4096; }
  std::unique_ptr<DecodeSession> start(const std::vector<int>& prompt) const override;
};

// Candidate tokens per answer slot used by RandomGuessPolicy (with multiplicity).
std::vector<int> guess_candidates(const std::vector<int>& prompt);

struct PassStats {
  std::size_t successes = 0;
  std::size_t attempts = 0;
  double rate() const { return attempts == 0 ? 0.0 : double(successes) / double(attempts); }
  bool any() const { return successes > 0; }
};

// Attempt i is sampled with derive_seed(seed, i).
PassStats estimate_pass_rate(const SequencePolicy& policy, const TaskInstance& task, std::size_t k,
                             const SamplingConfig& cfg, std::uint64_t seed);

// Indices i with lower < rates[i] < upper.
std::vector<std::size_t> band_filter(const std::vector<double>& rates, double lower, double upper);
std::vector<TaskInstance> filter_dataset(const std::vector<TaskInstance>& tasks, const SequencePolicy& policy,
                                         std::size_t k, double lower, double upper, const SamplingConfig& cfg,
                                         std::uint64_t seed);

struct DifficultyBounds {
  std::optional<int> lower;
  std::optional<int> upper;
  bool empty() const { return !lower || !upper || *lower > *upper; }
};

// lower: least difficulty whose mean base pass rate lies in (0, 0.5].
// upper: greatest difficulty where the strong policy succeeds at least once in k.
DifficultyBounds calibrate_difficulty_bounds(TaskFamily family, const SequencePolicy& base,
                                             const SequencePolicy& strong, std::size_t k, std::uint64_t seed,
                                             std::size_t tasks_per_difficulty = 20,
                                             const SamplingConfig* cfg = nullptr);

// JSON-lines dataset records.
inline constexpr int kDatasetSchemaVersion = 1;
std::string task_to_json_line(const TaskInstance& task);
TaskInstance task_from_json_line(const std::string& line);

}  // namespace tinyrl

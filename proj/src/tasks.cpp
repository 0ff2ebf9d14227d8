#include "tinyrl/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "json.hpp"
#include "tinyrl/error.hpp"
#include "tinyrl/rng.hpp"

namespace tinyrl {

std::string token_name(int t) {
  static const char* fixed[] = {"<pad>", "<bos>", "<eos>", "<ans>", "</ans>", "|"};
  if (t >= 0 && t < 6) return fixed[t];
  if (tok::is_digit(t)) return std::string(1, char('0' + (t - tok::digit0)));
  switch (t) {
    case tok::plus: return "+";
    case tok::minus: return "-";
    case tok::times: return "*";
    case tok::mod: return "mod";
    case tok::lparen: return "(";
    case tok::rparen: return ")";
    case tok::lbrack: return "[";
    case tok::rbrack: return "]";
    case tok::yes: return "YES";
    case tok::no: return "NO";
    case tok::fam_mod: return "<modchain>";
    case tok::fam_br: return "<brackets>";
    case tok::fam_sort: return "<sort>";
    case tok::fam_cipher: return "<cipher>";
    default: break;
  }
  if (tok::is_letter(t)) return std::string(1, char('a' + (t - tok::letter_a)));
  return "<" + std::to_string(t) + ">";
}

std::string render_tokens(const std::vector<int>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i > 0) out += ' ';
    out += token_name(tokens[i]);
  }
  return out;
}

const char* family_name(TaskFamily f) {
  switch (f) {
    case TaskFamily::modular_chain: return "modular-arithmetic-chain";
    case TaskFamily::bracket_balance: return "parenthesis-balance";
    case TaskFamily::sequence_sort: return "sequence-sort-trace";
    case TaskFamily::substitution_cipher: return "substitution-cipher";
  }
  return "?";
}

TaskFamily parse_family(const std::string& name) {
  for (TaskFamily f : all_families()) {
    if (name == family_name(f)) return f;
  }
  if (name == "modular") return TaskFamily::modular_chain;
  if (name == "brackets") return TaskFamily::bracket_balance;
  if (name == "sort") return TaskFamily::sequence_sort;
  if (name == "cipher") return TaskFamily::substitution_cipher;
  throw ValueError("unknown task family '" + name + "'");
}

const std::vector<TaskFamily>& all_families() {
  static const std::vector<TaskFamily> v = {TaskFamily::modular_chain, TaskFamily::bracket_balance,
                                            TaskFamily::sequence_sort, TaskFamily::substitution_cipher};
  return v;
}

DifficultyRange difficulty_range(TaskFamily f) {
  switch (f) {
    case TaskFamily::modular_chain: return {1, 8};
    case TaskFamily::bracket_balance: return {1, 12};
    case TaskFamily::sequence_sort: return {1, 8};
    case TaskFamily::substitution_cipher: return {1, 8};
  }
  return {1, 1};
}

std::vector<int> TaskInstance::formatted_answer() const {
  std::vector<int> out{tok::ans_open};
  out.insert(out.end(), answer.begin(), answer.end());
  out.push_back(tok::ans_close);
  out.push_back(tok::eos);
  return out;
}

namespace {

int family_marker(TaskFamily f) {
  switch (f) {
    case TaskFamily::modular_chain: return tok::fam_mod;
    case TaskFamily::bracket_balance: return tok::fam_br;
    case TaskFamily::sequence_sort: return tok::fam_sort;
    case TaskFamily::substitution_cipher: return tok::fam_cipher;
  }
  return tok::pad;
}

TaskFamily family_of_prompt(const std::vector<int>& prompt) {
  if (!prompt.empty()) {
    switch (prompt[0]) {
      case tok::fam_mod: return TaskFamily::modular_chain;
      case tok::fam_br: return TaskFamily::bracket_balance;
      case tok::fam_sort: return TaskFamily::sequence_sort;
      case tok::fam_cipher: return TaskFamily::substitution_cipher;
      default: break;
    }
  }
  throw ValueError("prompt does not start with a task family marker");
}

bool brackets_balanced(const std::vector<int>& seq, std::size_t begin) {
  std::vector<int> stack;
  for (std::size_t i = begin; i < seq.size(); ++i) {
    const int t = seq[i];
    if (t == tok::lparen || t == tok::lbrack) {
      stack.push_back(t);
    } else if (t == tok::rparen || t == tok::rbrack) {
      const int want = t == tok::rparen ? tok::lparen : tok::lbrack;
      if (stack.empty() || stack.back() != want) return false;
      stack.pop_back();
    } else {
      throw ValueError("bracket prompt contains a non-bracket token");
    }
  }
  return stack.empty();
}

int digit_value(int t) {
  if (!tok::is_digit(t)) throw ValueError("expected a digit token, got " + token_name(t));
  return t - tok::digit0;
}

}  // namespace

TaskInstance generate_task(TaskFamily family, int difficulty, std::uint64_t seed) {
  const auto range = difficulty_range(family);
  if (difficulty < range.lo || difficulty > range.hi) {
    throw ValueError(std::string("difficulty ") + std::to_string(difficulty) + " outside [" + std::to_string(range.lo) +
                     ", " + std::to_string(range.hi) + "] for " + family_name(family));
  }
  Rng rng(derive_seed(seed, static_cast<std::uint64_t>(family) * 100 + static_cast<std::uint64_t>(difficulty)));
  TaskInstance t{family, difficulty, seed, "", {family_marker(family)}, {}};
  const int d = difficulty;
  switch (family) {
    case TaskFamily::modular_chain: {
      t.prompt.push_back(tok::digit(int(rng.index(10))));
      static const int ops[3] = {tok::plus, tok::minus, tok::times};
      for (int i = 0; i < d; ++i) {
        t.prompt.push_back(ops[rng.index(3)]);
        t.prompt.push_back(tok::digit(int(rng.index(10))));
      }
      t.prompt.push_back(tok::mod);
      t.prompt.push_back(tok::digit(int(rng.integer(2, 9))));
      break;
    }
    case TaskFamily::bracket_balance: {
      std::vector<int> seq, stack;
      int opens = d;
      while (opens > 0 || !stack.empty()) {
        const bool open = opens > 0 && (stack.empty() || rng.index(2) == 0);
        if (open) {
          const int type = rng.index(2) == 0 ? tok::lparen : tok::lbrack;
          seq.push_back(type);
          stack.push_back(type);
          --opens;
        } else {
          seq.push_back(stack.back() == tok::lparen ? tok::rparen : tok::rbrack);
          stack.pop_back();
        }
      }
      if (rng.index(2) == 0) {
        int& victim = seq[rng.index(seq.size())];
        switch (victim) {
          case tok::lparen: victim = tok::lbrack; break;
          case tok::lbrack: victim = tok::lparen; break;
          case tok::rparen: victim = tok::rbrack; break;
          default: victim = tok::rparen; break;
        }
      }
      t.prompt.insert(t.prompt.end(), seq.begin(), seq.end());
      break;
    }
    case TaskFamily::sequence_sort:
      for (int i = 0; i < d; ++i) t.prompt.push_back(tok::digit(int(rng.index(10))));
      break;
    case TaskFamily::substitution_cipher:
      t.prompt.push_back(tok::digit(int(rng.integer(1, 9))));
      t.prompt.push_back(tok::sep);
      for (int i = 0; i < d; ++i) t.prompt.push_back(tok::letter_a + int(rng.index(tok::letters)));
      break;
  }
  t.answer = solve_prompt(t.prompt);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(seed));
  t.id = std::string(family_name(family)) + "-d" + std::to_string(d) + "-" + buf;
  return t;
}

std::vector<int> solve_prompt(const std::vector<int>& prompt) {
  switch (family_of_prompt(prompt)) {
    case TaskFamily::modular_chain: {
      if (prompt.size() < 6 || prompt.size() % 2 != 0 || prompt[prompt.size() - 2] != tok::mod) {
        throw ValueError("malformed modular-chain prompt");
      }
      const long long m = digit_value(prompt.back());
      if (m < 2) throw ValueError("modulus must be at least 2");
      long long acc = digit_value(prompt[1]) % m;
      for (std::size_t i = 2; i + 2 < prompt.size(); i += 2) {
        const long long b = digit_value(prompt[i + 1]);
        switch (prompt[i]) {
          case tok::plus: acc = acc + b; break;
          case tok::minus: acc = acc - b; break;
          case tok::times: acc = acc * b; break;
          default: throw ValueError("malformed modular-chain operator");
        }
        acc = ((acc % m) + m) % m;
      }
      return {tok::digit(int(acc))};
    }
    case TaskFamily::bracket_balance:
      return {brackets_balanced(prompt, 1) ? tok::yes : tok::no};
    case TaskFamily::sequence_sort: {
      std::vector<int> items(prompt.begin() + 1, prompt.end());
      for (int x : items) digit_value(x);
      std::sort(items.begin(), items.end());
      return items;
    }
    case TaskFamily::substitution_cipher: {
      if (prompt.size() < 4 || prompt[2] != tok::sep) throw ValueError("malformed cipher prompt");
      const int key = digit_value(prompt[1]);
      std::vector<int> out;
      for (std::size_t i = 3; i < prompt.size(); ++i) {
        if (!tok::is_letter(prompt[i])) throw ValueError("cipher text must consist of letters");
        out.push_back(tok::letter_a + ((prompt[i] - tok::letter_a - key) % tok::letters + tok::letters) % tok::letters);
      }
      return out;
    }
  }
  return {};
}

std::size_t solution_length(const TaskInstance& task) {
  switch (task.family) {
    case TaskFamily::bracket_balance: return 2 * std::size_t(task.difficulty);
    default: return std::size_t(task.difficulty);
  }
}

std::optional<std::vector<int>> extract_answer(const std::vector<int>& response) {
  std::size_t end = response.size();
  if (end > 0 && response[end - 1] == tok::eos) --end;
  if (end == 0 || response[end - 1] != tok::ans_close) return std::nullopt;
  const std::size_t close = end - 1;
  std::size_t open = close;
  bool found = false;
  while (open > 0) {
    --open;
    if (response[open] == tok::ans_open) {
      found = true;
      break;
    }
  }
  if (!found || open + 1 == close) return std::nullopt;
  std::vector<int> content(response.begin() + std::ptrdiff_t(open + 1), response.begin() + std::ptrdiff_t(close));
  for (int t : content) {
    if (t == tok::ans_close || t == tok::eos) return std::nullopt;
  }
  return content;
}

std::vector<int> canonical_answer(TaskFamily family, const std::vector<int>& answer) {
  if (family != TaskFamily::modular_chain) return answer;
  if (!std::all_of(answer.begin(), answer.end(), tok::is_digit)) return answer;
  std::size_t i = 0;
  while (i + 1 < answer.size() && answer[i] == tok::digit(0)) ++i;
  return std::vector<int>(answer.begin() + std::ptrdiff_t(i), answer.end());
}

VerifyResult verify(const TaskInstance& task, const std::vector<int>& response) {
  const auto content = extract_answer(response);
  if (!content) return {false, false};
  return {canonical_answer(task.family, *content) == canonical_answer(task.family, task.answer), true};
}

namespace {

std::vector<double> one_hot(int token) {
  std::vector<double> lp(tok::vocab_size, -std::numeric_limits<double>::infinity());
  lp[std::size_t(token)] = 0.0;
  return lp;
}

class ScriptSession : public DecodeSession {
 public:
  explicit ScriptSession(std::vector<std::vector<double>> steps) : steps_(std::move(steps)) {}
  const std::vector<double>& log_probs() const override { return steps_[std::min(i_, steps_.size() - 1)]; }
  void feed(int) override { ++i_; }

 private:
  std::vector<std::vector<double>> steps_;
  std::size_t i_ = 0;
};

}  // namespace

std::unique_ptr<DecodeSession> OraclePolicy::start(const std::vector<int>& prompt) const {
  std::vector<int> target{tok::ans_open};
  const auto ans = solve_prompt(prompt);
  target.insert(target.end(), ans.begin(), ans.end());
  target.push_back(tok::ans_close);
  target.push_back(tok::eos);
  std::vector<std::vector<double>> steps;
  for (int t : target) steps.push_back(one_hot(t));
  return std::make_unique<ScriptSession>(std::move(steps));
}

std::vector<int> guess_candidates(const std::vector<int>& prompt) {
  switch (family_of_prompt(prompt)) {
    case TaskFamily::modular_chain: {
      std::vector<int> c;
      for (int i = 0; i < 10; ++i) c.push_back(tok::digit(i));
      return c;
    }
    case TaskFamily::bracket_balance: return {tok::yes, tok::no};
    case TaskFamily::sequence_sort: return std::vector<int>(prompt.begin() + 1, prompt.end());
    case TaskFamily::substitution_cipher: {
      std::vector<int> c;
      for (int i = 0; i < tok::letters; ++i) c.push_back(tok::letter_a + i);
      return c;
    }
  }
  return {};
}

std::unique_ptr<DecodeSession> RandomGuessPolicy::start(const std::vector<int>& prompt) const {
  const auto candidates = guess_candidates(prompt);
  const std::size_t slots = solve_prompt(prompt).size();
  std::vector<double> guess(tok::vocab_size, 0.0);
  for (int c : candidates) guess[std::size_t(c)] += 1.0 / double(candidates.size());
  for (double& x : guess) x = x > 0.0 ? std::log(x) : -std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> steps{one_hot(tok::ans_open)};
  for (std::size_t i = 0; i < slots; ++i) steps.push_back(guess);
  steps.push_back(one_hot(tok::ans_close));
  steps.push_back(one_hot(tok::eos));
  return std::make_unique<ScriptSession>(std::move(steps));
}

PassStats estimate_pass_rate(const SequencePolicy& policy, const TaskInstance& task, std::size_t k,
                             const SamplingConfig& cfg, std::uint64_t seed) {
  if (k < 1) throw ValueError("estimate_pass_rate: k must be at least 1");
  PassStats s;
  for (std::size_t i = 0; i < k; ++i) {
    const Response r = sample_response(policy, task.prompt, cfg, derive_seed(seed, i));
    s.successes += verify(task, r.tokens).correct ? 1 : 0;
    ++s.attempts;
  }
  return s;
}

std::vector<std::size_t> band_filter(const std::vector<double>& rates, double lower, double upper) {
  if (!(lower >= 0.0 && lower < upper && upper <= 1.0)) throw ValueError("filter: need 0 <= lower < upper <= 1");
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < rates.size(); ++i) {
    if (rates[i] > lower && rates[i] < upper) keep.push_back(i);
  }
  return keep;
}

std::vector<TaskInstance> filter_dataset(const std::vector<TaskInstance>& tasks, const SequencePolicy& policy,
                                         std::size_t k, double lower, double upper, const SamplingConfig& cfg,
                                         std::uint64_t seed) {
  std::vector<double> rates;
  rates.reserve(tasks.size());
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    rates.push_back(estimate_pass_rate(policy, tasks[i], k, cfg, derive_seed(seed, i)).rate());
  }
  std::vector<TaskInstance> out;
  for (auto i : band_filter(rates, lower, upper)) out.push_back(tasks[i]);
  return out;
}

DifficultyBounds calibrate_difficulty_bounds(TaskFamily family, const SequencePolicy& base,
                                             const SequencePolicy& strong, std::size_t k, std::uint64_t seed,
                                             std::size_t tasks_per_difficulty, const SamplingConfig* cfg) {
  SamplingConfig sc;
  sc.top_p = 1.0;
  sc.max_new_tokens = 64;
  sc.repetition_check = false;
  if (cfg != nullptr) sc = *cfg;
  const auto range = difficulty_range(family);
  DifficultyBounds b;
  for (int d = range.lo; d <= range.hi; ++d) {
    double base_rate = 0.0;
    bool strong_any = false;
    for (std::size_t j = 0; j < tasks_per_difficulty; ++j) {
      const std::uint64_t ts = derive_seed(seed, std::uint64_t(d) * 100003 + j);
      const TaskInstance task = generate_task(family, d, ts);
      base_rate += estimate_pass_rate(base, task, k, sc, derive_seed(ts, 1)).rate();
      strong_any = strong_any || estimate_pass_rate(strong, task, k, sc, derive_seed(ts, 2)).any();
    }
    base_rate /= double(std::max<std::size_t>(tasks_per_difficulty, 1));
    if (!b.lower && base_rate > 0.0 && base_rate <= 0.5) b.lower = d;
    if (strong_any) b.upper = d;
  }
  return b;
}

std::string task_to_json_line(const TaskInstance& t) {
  nlohmann::json j;
  j["schema_version"] = kDatasetSchemaVersion;
  j["id"] = t.id;
  j["family"] = family_name(t.family);
  j["difficulty"] = t.difficulty;
  j["seed"] = t.seed;
  j["prompt"] = t.prompt;
  j["answer"] = t.answer;
  return j.dump();
}

TaskInstance task_from_json_line(const std::string& line) {
  const auto j = nlohmann::json::parse(line);
  if (j.at("schema_version").get<int>() != kDatasetSchemaVersion) throw ValueError("dataset: unsupported schema version");
  TaskInstance t{parse_family(j.at("family").get<std::string>()), j.at("difficulty").get<int>(),
                 j.at("seed").get<std::uint64_t>(), j.at("id").get<std::string>(),
                 j.at("prompt").get<std::vector<int>>(), j.at("answer").get<std::vector<int>>()};
  if (solve_prompt(t.prompt) != t.answer) throw ValueError("dataset: record " + t.id + " fails self-verification");
  return t;
}

}  // namespace tinyrl

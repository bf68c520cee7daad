#pragma once

#include <array>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "kp/benchmark.hpp"
#include "kp/gateway.hpp"
#include "kp/prompts.hpp"

namespace kp {

enum class PromptMode { Plain, Cot };

struct McArrangement {
  // option_order[position] = index into task.options for letter A+position.
  std::array<int, kMcOptionCount> option_order{};
  char gold_letter = 'A';
};

struct ResponseRecord {
  std::string task_id;
  std::string model_config_id;
  int sample_index = 0;
  std::string raw_text;
  std::string extracted_answer;
  std::optional<McArrangement> mc_permutation;
  std::vector<std::string> warnings;
};

struct EvalPlan {
  std::vector<ModelConfig> configs;
  int n_samples = 8;
  std::uint64_t seed = 0;

  // |facts| x 10 x n_samples per config.
  long long expected_records(std::size_t fact_count) const;
};

// Instruction text (one of the six bundled variants: three task formats
// times plain/CoT) goes to the system message; the task body (plus lettered
// options for MC tasks) is the user message.
std::pair<std::string, std::string> build_task_prompt(const PromptLibrary& prompts,
                                                      const TaskInstance& task, PromptMode mode,
                                                      const McArrangement* arrangement = nullptr);

// n_samples permutations of n_options with the gold option landing on each
// letter exactly n_samples/n_options times; deterministic in seed.
std::vector<McArrangement> mc_schedule(int n_samples, int n_options, std::uint64_t seed,
                                       int gold_index);

// CoT responses carry the final answer after the last "Answer:" marker; a
// missing marker returns the whole text and flags a warning.
std::string extract_final_answer(const std::string& raw_text, PromptMode mode,
                                 bool* marker_missing = nullptr);

Json response_record_to_json(const ResponseRecord& record);
ResponseRecord response_record_from_json(const Json& j);

struct EvalRunStats {
  long long written = 0;
  long long skipped = 0;
};

// Generates the full response log: per fact, 10 tasks x n samples per model
// configuration at temperature 1. Appends to log_path and skips
// (task, config, sample) triples already present; refuses to resume onto a
// log produced from a different benchmark.
EvalRunStats run_evaluation(const BenchmarkFile& bench, const std::string& benchmark_digest,
                            const EvalPlan& plan, const PromptLibrary& prompts, Gateway& gateway,
                            const std::string& log_path, int parallel_window = 8);

}  // namespace kp

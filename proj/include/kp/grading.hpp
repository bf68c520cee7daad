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

enum class GradeLabel { Correct, Incorrect, Partially, Other };

const std::string& grade_label_name(GradeLabel label);
GradeLabel grade_label_from_name(const std::string& name);

struct GradeRecord {
  std::string task_id;
  std::string model_config_id;
  std::vector<GradeLabel> labels;
  int c = 0;
  int i = 0;
  int p = 0;
  int o = 0;
  std::optional<double> grade;
  std::optional<std::string> error;  // set when the autorater output was unusable

  void tally();
};

// Accuracy over gradable responses: c/(c+i); undefined when c+i = 0.
std::optional<double> question_grade(const std::vector<GradeLabel>& labels);

enum class GraderKind { Completion, Qa };

// Renders the bundled autorater template with the answers numbered 1..n.
std::pair<std::string, std::string> render_grader_prompt(const PromptLibrary& prompts,
                                                         GraderKind kind,
                                                         const std::string& question_or_context,
                                                         const std::string& gold,
                                                         const std::vector<std::string>& responses);

// First standalone A-D character, case-insensitive; nullopt otherwise.
std::optional<char> extract_mc_letter(const std::string& answer);

struct McSampleKey {
  char gold_letter = 'A';
};

struct ResponseForGrading {
  int sample_index = 0;
  std::string extracted_answer;
  std::optional<char> mc_gold_letter;  // present for mc_* tasks
};

// One GradeRecord for a question's n responses. Multiple-choice grading is
// deterministic letter matching; completion uses the completion autorater;
// every question form (contextual included) uses the QA autorater. All n
// responses go out in one batched grader call.
GradeRecord grade_responses(const PromptLibrary& prompts, const TaskInstance& task,
                            const std::vector<ResponseForGrading>& responses, Gateway& gateway,
                            const ModelConfig& grader_cfg, const std::string& model_config_id);

// Parses "<answer_i>LABEL</answer_i>" (or completion_i) blocks; requires one
// label per response index 1..n.
std::vector<GradeLabel> parse_grader_labels(const std::string& raw, GraderKind kind, int n);

struct GraderComparison {
  double agreement = 0.0;
  // confusion[a][b] counts responses labelled a by grader A and b by B.
  std::array<std::array<int, 4>, 4> confusion{};
};

GraderComparison compare_graders(const std::vector<GradeLabel>& labels_a,
                                 const std::vector<GradeLabel>& labels_b);

Json grade_record_to_json(const GradeRecord& record);
GradeRecord grade_record_from_json(const Json& j);
std::vector<GradeRecord> load_grade_records(const std::string& path);

struct GradeLogStats {
  long long records = 0;
  long long errors = 0;
};

// Grades a whole response log in benchmark task order; rewrites out_path so
// re-grading with a warm cache is byte-stable.
GradeLogStats grade_response_log(const BenchmarkFile& bench, const std::string& responses_path,
                                 const PromptLibrary& prompts, Gateway& gateway,
                                 const ModelConfig& grader, const std::string& out_path);

}  // namespace kp

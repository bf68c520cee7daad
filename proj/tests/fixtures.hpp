#pragma once

#include <memory>
#include <string>
#include <vector>

#include "kp/benchmark.hpp"
#include "kp/gateway.hpp"
#include "kp/grading.hpp"
#include "kp/pipeline.hpp"
#include "kp/profiler.hpp"
#include "kp/prompts.hpp"

namespace kp::testfx {

// Fresh directory under ./kp_test_tmp; wiped on creation.
std::string fresh_dir(const std::string& name);

// Per-question scripted behavior for the 24-fact fixture.
enum class Behavior { Gold, Wrong, Idk, Part, Mixed };

struct QuestionPlan {
  Behavior no_think = Behavior::Gold;
  Behavior think = Behavior::Gold;
};

struct FactPlan {
  Behavior completion = Behavior::Gold;
  Behavior contextual = Behavior::Gold;
  // direct, direct_natural, reverse, reverse_natural
  QuestionPlan knowledge[4];
};

// The hand-designed 24-fact fixture behind the end-to-end determinism
// criteria. Expected profile counts per NaN strategy are documented next to
// the plan table in fixtures.cpp.
const std::vector<FactPlan>& acceptance_plan();
BenchmarkFile acceptance_benchmark();
std::vector<ScriptedBackend::Rule> acceptance_rules();
Json rules_to_json(const std::vector<ScriptedBackend::Rule>& rules);

struct AcceptanceSetup {
  std::string dir;
  std::string bench_path;
  std::string benchmark_digest;
  BenchmarkFile bench;
  std::vector<ModelConfig> configs;  // [0] plain, [1] cot
  ModelConfig grader;
  std::shared_ptr<ScriptedBackend> eval_backend;
  std::shared_ptr<ScriptedGraderBackend> grader_backend;
  std::shared_ptr<ResponseCache> cache;
  std::unique_ptr<Gateway> gateway;
};

AcceptanceSetup make_acceptance_setup(const std::string& dir_name);
std::vector<ModelPair> acceptance_pairs();

// evaluate + grade through the real paths; returns the parsed grade log.
std::vector<GradeRecord> run_eval_and_grade(AcceptanceSetup& setup, const PromptLibrary& prompts,
                                            const std::string& responses_path,
                                            const std::string& grades_path);

// Ten-document corpus plus canned stage outputs for the pipeline dry run:
// D10 fails ingestion, D09 dies at verify_difficulty, D08 at
// refine_specificity ("REJECT"), D07 at grounded filtering ("NOT"); D01-D06
// come out as complete facts.
struct DryRunFixture {
  std::string dir;
  std::string corpus_path;
  std::vector<ScriptedBackend::Rule> builder_rules;
  std::vector<ScriptedBackend::Rule> search_rules;
};

DryRunFixture make_dryrun_fixture(const std::string& dir_name);

}  // namespace kp::testfx

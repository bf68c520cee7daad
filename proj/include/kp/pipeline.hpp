#pragma once

#include <array>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "kp/benchmark.hpp"
#include "kp/gateway.hpp"
#include "kp/prompts.hpp"

namespace kp {

struct PageRecord {
  std::string doc_id;
  std::string page_title;
  std::string summary_text;
  long long page_views = 0;
  std::optional<int> creation_year;
};

std::vector<PageRecord> load_corpus(const std::string& path);

enum class StageVerdict { Accepted, Rejected, Revised };

std::string stage_verdict_name(StageVerdict verdict);

struct StageOutcome {
  std::string stage_id;
  StageVerdict verdict = StageVerdict::Rejected;
  std::string reject_reason;  // machine-readable, set when rejected
  Json payload;               // replacement text / structured result when revised
  std::string raw_model_output;
};

// Renders the stage's bundled template, invokes the backend once at the
// stage temperature (0), parses the stage's output grammar. Unparseable
// output comes back as rejected("parse_failure"); a missing template
// variable is a configuration error.
StageOutcome run_stage(const PromptLibrary& prompts, const std::string& stage_id,
                       const PromptVars& inputs, Gateway& gateway, const ModelConfig& model);

const std::vector<std::string>& pipeline_stage_ids();

struct TaggedEntity {
  std::string name;
  std::string type;
  std::size_t offset = 0;  // position in the tag-stripped text
};

struct NerResult {
  std::string plain;  // tagged text with {{name; TYPE}} spans replaced by name
  std::vector<TaggedEntity> entities;
};

// Extracts every {{name; TYPE}} span in order. TYPE must be one of the 19
// entity-type names; a malformed span raises ParseError locating it.
NerResult parse_tagged_text(const std::string& text);
std::vector<std::pair<std::string, std::string>> parse_tagged_entities(const std::string& text);

struct FactDraft {
  std::string candidate_id;
  std::string left_context;
  std::string q_direct;
  std::string q_direct_natural;
  std::string q_reverse;
  std::string q_reverse_natural;
  std::string q_contextual;
};

struct FilterDecision {
  bool keep = true;
  std::string reason;
};

// Length bounds: any closed-book question over 40 words or a left context
// under 30 words drops the fact.
FilterDecision apply_filters(const FactDraft& draft);

struct BalanceItem {
  std::string category;
  std::string entity_type;
};

// Greedy round-robin over (category x entity_type) cells, always serving the
// cell with the fewest selections so far; order within a cell is shuffled
// under the seed. Returns selected indices in input order.
std::vector<std::size_t> downsample_balanced(const std::vector<BalanceItem>& items,
                                             std::size_t target, std::uint64_t seed);

// grade table: fact -> config -> grade per task kind (enum order).
using GradeTable =
    std::map<std::string, std::map<std::string, std::array<std::optional<double>, kTaskKindCount>>>;

// A fact is flagged when every ensemble config fails at least one of its ten
// questions (grade defined and <= tau).
std::set<std::string> flag_ensemble_failures(const GradeTable& grades,
                                             const std::vector<std::string>& ensemble,
                                             double tau);

struct PipelineOptions {
  std::string corpus_path;
  std::string out_dir;
  ModelConfig builder;  // prompted pipeline model
  ModelConfig search;   // grounded-search answering backend
  std::uint64_t seed = 0;
  int min_summary_words = 50;
  int max_objects_per_doc = 3;
  std::size_t target_facts = 5000;
  int parallel_window = 8;
  std::string pipeline_version = "kp-pipeline/0.1";
};

struct StageCounter {
  long long accepted = 0;
  long long rejected = 0;
};

struct PipelineResult {
  BenchmarkFile benchmark;
  std::map<std::string, StageCounter> stage_counts;
  long long stages_run = 0;
  long long stages_replayed = 0;
  std::string benchmark_path;
};

// Runs the whole construction pipeline over a corpus: per-document
// categorization, NER and object selection; per-candidate verification;
// balanced downsampling; per-fact question generation, refinement, grounded
// filtering, length filters and MC derivation. Stage outcomes append to
// pipeline_log.jsonl, which doubles as resumable state: on restart,
// completed stages replay from the log without touching any backend.
PipelineResult run_pipeline(const PipelineOptions& options, const PromptLibrary& prompts,
                            Gateway& gateway);

}  // namespace kp

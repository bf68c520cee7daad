#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "kp/jsonl.hpp"

namespace kp {

enum class TaskKind {
  Completion,
  Contextual,
  Direct,
  DirectNatural,
  Reverse,
  ReverseNatural,
  McDirect,
  McDirectNatural,
  McReverse,
  McReverseNatural,
};

inline constexpr int kTaskKindCount = 10;
inline constexpr int kMcOptionCount = 4;

enum class Direction { Direct, Reverse, None };

// One task set per probing purpose; see task_set_for.
enum class TaskPurpose { Encoding, Knowledge, Verification };

const std::string& task_kind_name(TaskKind kind);
TaskKind task_kind_from_name(const std::string& name);
const std::array<TaskKind, kTaskKindCount>& all_task_kinds();
bool is_mc_kind(TaskKind kind);
// The four closed-book knowledge kinds (direct/reverse x two phrasings).
bool is_closed_book_kind(TaskKind kind);
bool is_encoding_kind(TaskKind kind);
Direction task_kind_direction(TaskKind kind);

// Closed entity-type vocabulary from the NER stage.
const std::vector<std::string>& entity_type_names();  // 19 names
bool is_entity_type(const std::string& name);

// Topic vocabulary from the categorization stage (nine topics plus the
// catch-all).
const std::vector<std::string>& category_names();
bool is_category(const std::string& name);

struct Fact {
  std::string fact_id;
  std::string doc_id;
  std::string page_title;
  std::string subject;
  std::string object_text;  // the gold completion
  std::string object_entity_type;
  std::string category;
  long long page_views = 0;
  std::string left_context;
  std::optional<int> source_year;
};

struct TaskInstance {
  std::string task_id;
  std::string fact_id;
  TaskKind kind = TaskKind::Completion;
  std::string text;
  std::string gold;
  std::vector<std::string> options;  // exactly 4 for MC kinds, empty otherwise
  Direction direction = Direction::None;
};

struct Provenance {
  std::string pipeline_version;
  std::string corpus_digest;
  std::string template_digest;
  std::uint64_t seed = 0;
};

struct BenchmarkFile {
  std::vector<Fact> facts;  // ordered
  std::vector<TaskInstance> tasks;
  Provenance provenance;

  const Fact* find_fact(const std::string& fact_id) const;
  const TaskInstance* find_task(const std::string& fact_id, TaskKind kind) const;
  std::vector<const TaskInstance*> tasks_for(const std::string& fact_id) const;
};

// Ten tasks per fact grouped by purpose, in stable kind-name order:
//   encoding     -> {completion, contextual}
//   knowledge    -> {direct, direct_natural, reverse, reverse_natural}
//   verification -> the four mc_* kinds
std::vector<TaskInstance> task_set_for(const BenchmarkFile& bench, const std::string& fact_id,
                                       TaskPurpose purpose);

struct ValidationReport {
  std::vector<std::string> violations;
  bool ok() const { return violations.empty(); }
};

// Checks every Fact/TaskInstance invariant; violations are reported as data,
// not thrown.
ValidationReport validate_fact(const Fact& fact, const std::vector<TaskInstance>& tasks);

Json fact_to_json(const Fact& fact, const std::vector<TaskInstance>& tasks);

void save_benchmark(const BenchmarkFile& bench, const std::string& path);
BenchmarkFile load_benchmark(const std::string& path);

std::string make_task_id(const std::string& fact_id, TaskKind kind);

}  // namespace kp

#include "kp/benchmark.hpp"

#include <algorithm>
#include <set>

#include "kp/errors.hpp"
#include "kp/text.hpp"

namespace kp {

namespace {

const std::array<std::string, kTaskKindCount> kKindNames = {
    "completion",        "contextual",    "direct",     "direct_natural",
    "reverse",           "reverse_natural", "mc_direct", "mc_direct_natural",
    "mc_reverse",        "mc_reverse_natural"};

constexpr int kMaxQuestionWords = 40;
constexpr int kMinContextWords = 30;

}  // namespace

const std::string& task_kind_name(TaskKind kind) {
  return kKindNames[static_cast<int>(kind)];
}

TaskKind task_kind_from_name(const std::string& name) {
  for (int i = 0; i < kTaskKindCount; ++i) {
    if (kKindNames[i] == name) return static_cast<TaskKind>(i);
  }
  throw ArgumentError("unknown task kind: " + name);
}

const std::array<TaskKind, kTaskKindCount>& all_task_kinds() {
  static const std::array<TaskKind, kTaskKindCount> kinds = [] {
    std::array<TaskKind, kTaskKindCount> out{};
    for (int i = 0; i < kTaskKindCount; ++i) out[i] = static_cast<TaskKind>(i);
    return out;
  }();
  return kinds;
}

bool is_mc_kind(TaskKind kind) {
  switch (kind) {
    case TaskKind::McDirect:
    case TaskKind::McDirectNatural:
    case TaskKind::McReverse:
    case TaskKind::McReverseNatural:
      return true;
    default:
      return false;
  }
}

bool is_closed_book_kind(TaskKind kind) {
  switch (kind) {
    case TaskKind::Direct:
    case TaskKind::DirectNatural:
    case TaskKind::Reverse:
    case TaskKind::ReverseNatural:
      return true;
    default:
      return false;
  }
}

bool is_encoding_kind(TaskKind kind) {
  return kind == TaskKind::Completion || kind == TaskKind::Contextual;
}

Direction task_kind_direction(TaskKind kind) {
  switch (kind) {
    case TaskKind::Completion:
    case TaskKind::Contextual:
    case TaskKind::Direct:
    case TaskKind::DirectNatural:
    case TaskKind::McDirect:
    case TaskKind::McDirectNatural:
      return Direction::Direct;
    case TaskKind::Reverse:
    case TaskKind::ReverseNatural:
    case TaskKind::McReverse:
    case TaskKind::McReverseNatural:
      return Direction::Reverse;
  }
  return Direction::None;
}

const std::vector<std::string>& entity_type_names() {
  static const std::vector<std::string> names = {
      "PERSON",        "ORGANIZATION", "LOCATION",  "EVENT",      "WORK_OF_ART",
      "PRODUCT",       "ORGANISM",     "SUBSTANCE", "DATE",       "NUMERIC_VALUE",
      "CONDITION",     "TITLE",        "LANGUAGE",  "GROUP",      "LAW",
      "IDEA",          "CLASSIFICATION", "IDENTIFIER", "OTHER"};
  return names;
}

bool is_entity_type(const std::string& name) {
  const auto& names = entity_type_names();
  return std::find(names.begin(), names.end(), name) != names.end();
}

const std::vector<std::string>& category_names() {
  static const std::vector<std::string> names = {
      "People",  "History", "Geography", "Arts",       "Philosophy & Religion",
      "Everyday Life", "Society", "Science",   "Technology", "Other"};
  return names;
}

bool is_category(const std::string& name) {
  const auto& names = category_names();
  return std::find(names.begin(), names.end(), name) != names.end();
}

const Fact* BenchmarkFile::find_fact(const std::string& fact_id) const {
  for (const auto& f : facts) {
    if (f.fact_id == fact_id) return &f;
  }
  return nullptr;
}

const TaskInstance* BenchmarkFile::find_task(const std::string& fact_id, TaskKind kind) const {
  for (const auto& t : tasks) {
    if (t.fact_id == fact_id && t.kind == kind) return &t;
  }
  return nullptr;
}

std::vector<const TaskInstance*> BenchmarkFile::tasks_for(const std::string& fact_id) const {
  std::vector<const TaskInstance*> out;
  for (const auto& t : tasks) {
    if (t.fact_id == fact_id) out.push_back(&t);
  }
  return out;
}

std::vector<TaskInstance> task_set_for(const BenchmarkFile& bench, const std::string& fact_id,
                                       TaskPurpose purpose) {
  if (bench.find_fact(fact_id) == nullptr) {
    throw ArgumentError("unknown fact_id: " + fact_id);
  }
  std::vector<TaskKind> wanted;
  for (TaskKind kind : all_task_kinds()) {
    bool take = false;
    switch (purpose) {
      case TaskPurpose::Encoding: take = is_encoding_kind(kind); break;
      case TaskPurpose::Knowledge: take = is_closed_book_kind(kind); break;
      case TaskPurpose::Verification: take = is_mc_kind(kind); break;
    }
    if (take) wanted.push_back(kind);
  }
  std::sort(wanted.begin(), wanted.end(), [](TaskKind a, TaskKind b) {
    return task_kind_name(a) < task_kind_name(b);
  });
  std::vector<TaskInstance> out;
  for (TaskKind kind : wanted) {
    const TaskInstance* task = bench.find_task(fact_id, kind);
    if (task == nullptr) {
      throw IntegrityError("fact " + fact_id + " missing task kind: " + task_kind_name(kind));
    }
    out.push_back(*task);
  }
  return out;
}

ValidationReport validate_fact(const Fact& fact, const std::vector<TaskInstance>& tasks) {
  ValidationReport report;
  auto violate = [&](std::string msg) { report.violations.push_back(std::move(msg)); };

  if (!contains(fact.left_context, fact.subject)) violate("subject not in left_context");
  if (contains(fact.left_context, fact.object_text)) violate("object occurs in left_context");
  if (word_count(fact.left_context) < kMinContextWords) {
    violate("left_context length < " + std::to_string(kMinContextWords));
  }
  if (!is_entity_type(fact.object_entity_type)) {
    violate("unknown object_entity_type: " + fact.object_entity_type);
  }

  std::set<TaskKind> seen;
  for (const auto& task : tasks) {
    if (task.fact_id != fact.fact_id) {
      violate("task " + task.task_id + " references foreign fact " + task.fact_id);
      continue;
    }
    if (!seen.insert(task.kind).second) {
      violate("duplicate kind: " + task_kind_name(task.kind));
      continue;
    }
    if (is_closed_book_kind(task.kind) && word_count(task.text) > kMaxQuestionWords) {
      violate("question length > " + std::to_string(kMaxQuestionWords) + " (" +
              task_kind_name(task.kind) + ")");
    }
    if (is_mc_kind(task.kind)) {
      if (task.options.size() != kMcOptionCount) {
        violate("mc options count != 4 (" + task_kind_name(task.kind) + ")");
      } else {
        std::set<std::string> uniq(task.options.begin(), task.options.end());
        if (uniq.size() != task.options.size()) {
          violate("mc options not distinct (" + task_kind_name(task.kind) + ")");
        }
        int gold_hits = static_cast<int>(
            std::count(task.options.begin(), task.options.end(), task.gold));
        if (gold_hits != 1) {
          violate("mc options must contain gold exactly once (" + task_kind_name(task.kind) + ")");
        }
      }
    } else if (!task.options.empty()) {
      violate("non-mc task carries options (" + task_kind_name(task.kind) + ")");
    }
  }
  for (TaskKind kind : all_task_kinds()) {
    if (!seen.count(kind)) violate("missing kind: " + task_kind_name(kind));
  }
  return report;
}

Json fact_to_json(const Fact& fact, const std::vector<TaskInstance>& tasks) {
  Json j;
  j["fact_id"] = fact.fact_id;
  j["doc_id"] = fact.doc_id;
  j["page_title"] = fact.page_title;
  j["subject"] = fact.subject;
  j["object"] = fact.object_text;
  j["object_entity_type"] = fact.object_entity_type;
  j["category"] = fact.category;
  j["page_views"] = fact.page_views;
  j["left_context"] = fact.left_context;
  if (fact.source_year) j["source_year"] = *fact.source_year;
  Json task_array = Json::array();
  for (const auto& task : tasks) {
    Json t;
    t["kind"] = task_kind_name(task.kind);
    t["text"] = task.text;
    t["gold"] = task.gold;
    if (!task.options.empty()) t["options"] = task.options;
    task_array.push_back(std::move(t));
  }
  j["tasks"] = std::move(task_array);
  return j;
}

void save_benchmark(const BenchmarkFile& bench, const std::string& path) {
  std::string out;
  {
    Json header;
    header["type"] = "header";
    header["pipeline_version"] = bench.provenance.pipeline_version;
    header["corpus_digest"] = bench.provenance.corpus_digest;
    header["template_digest"] = bench.provenance.template_digest;
    header["seed"] = bench.provenance.seed;
    out += header.dump();
    out += '\n';
  }
  for (const auto& fact : bench.facts) {
    std::vector<TaskInstance> fact_tasks;
    for (const auto& task : bench.tasks) {
      if (task.fact_id == fact.fact_id) fact_tasks.push_back(task);
    }
    out += fact_to_json(fact, fact_tasks).dump();
    out += '\n';
  }
  write_file(path, out);
}

BenchmarkFile load_benchmark(const std::string& path) {
  BenchmarkFile bench;
  std::set<std::string> ids;
  for_each_jsonl(path, [&](const Json& j) {
    if (j.value("type", "") == "header") {
      bench.provenance.pipeline_version = j.value("pipeline_version", "");
      bench.provenance.corpus_digest = j.value("corpus_digest", "");
      bench.provenance.template_digest = j.value("template_digest", "");
      bench.provenance.seed = j.value("seed", 0ULL);
      return;
    }
    Fact fact;
    fact.fact_id = j.at("fact_id").get<std::string>();
    fact.doc_id = j.value("doc_id", "");
    fact.page_title = j.value("page_title", "");
    fact.subject = j.value("subject", "");
    fact.object_text = j.at("object").get<std::string>();
    fact.object_entity_type = j.value("object_entity_type", "");
    fact.category = j.value("category", "");
    fact.page_views = j.value("page_views", 0LL);
    fact.left_context = j.value("left_context", "");
    if (j.contains("source_year")) fact.source_year = j.at("source_year").get<int>();
    if (!ids.insert(fact.fact_id).second) {
      throw IntegrityError("duplicate fact_id: " + fact.fact_id);
    }
    for (const auto& t : j.at("tasks")) {
      TaskInstance task;
      task.fact_id = fact.fact_id;
      task.kind = task_kind_from_name(t.at("kind").get<std::string>());
      task.task_id = make_task_id(fact.fact_id, task.kind);
      task.text = t.at("text").get<std::string>();
      task.gold = t.at("gold").get<std::string>();
      if (t.contains("options")) task.options = t.at("options").get<std::vector<std::string>>();
      task.direction = is_encoding_kind(task.kind) ? Direction::None
                                                   : task_kind_direction(task.kind);
      bench.tasks.push_back(std::move(task));
    }
    bench.facts.push_back(std::move(fact));
  });
  return bench;
}

std::string make_task_id(const std::string& fact_id, TaskKind kind) {
  return fact_id + "/" + task_kind_name(kind);
}

}  // namespace kp

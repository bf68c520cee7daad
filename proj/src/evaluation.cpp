#include "kp/evaluation.hpp"

#include <algorithm>
#include <deque>
#include <future>
#include <set>

#include "kp/errors.hpp"
#include "kp/rng.hpp"
#include "kp/text.hpp"

namespace kp {

namespace {

constexpr const char* kAnswerMarker = "Answer:";

std::string instruction_name(TaskKind kind, PromptMode mode) {
  std::string base;
  if (kind == TaskKind::Completion) {
    base = "completion";
  } else if (is_mc_kind(kind)) {
    base = "mc";
  } else {
    base = "question";
  }
  return "instructions/" + base + (mode == PromptMode::Cot ? "_cot" : "_plain");
}

}  // namespace

long long EvalPlan::expected_records(std::size_t fact_count) const {
  return static_cast<long long>(configs.size()) * static_cast<long long>(fact_count) *
         kTaskKindCount * n_samples;
}

std::pair<std::string, std::string> build_task_prompt(const PromptLibrary& prompts,
                                                      const TaskInstance& task, PromptMode mode,
                                                      const McArrangement* arrangement) {
  std::string system_text = prompts.text(instruction_name(task.kind, mode));
  std::string user_text = task.text;
  if (is_mc_kind(task.kind)) {
    if (arrangement == nullptr) {
      throw IntegrityError("mc task without permutation: " + task.task_id);
    }
    if (task.options.size() != kMcOptionCount) {
      throw IntegrityError("mc task without 4 options: " + task.task_id);
    }
    for (int pos = 0; pos < kMcOptionCount; ++pos) {
      user_text += '\n';
      user_text += static_cast<char>('A' + pos);
      user_text += ". ";
      user_text += task.options[static_cast<std::size_t>(arrangement->option_order[pos])];
    }
  }
  return {std::move(system_text), std::move(user_text)};
}

std::vector<McArrangement> mc_schedule(int n_samples, int n_options, std::uint64_t seed,
                                       int gold_index) {
  if (n_options < 1 || n_samples < 1 || n_samples % n_options != 0) {
    throw ArgumentError("mc_schedule: n_options must divide n_samples");
  }
  if (n_options > kMcOptionCount) throw ArgumentError("mc_schedule: too many options");
  if (gold_index < 0 || gold_index >= n_options) throw ArgumentError("mc_schedule: bad gold index");

  DetRng rng(seed);
  // Gold positions: each letter exactly n_samples/n_options times.
  std::vector<int> gold_positions;
  for (int pos = 0; pos < n_options; ++pos) {
    for (int k = 0; k < n_samples / n_options; ++k) gold_positions.push_back(pos);
  }
  rng.shuffle(gold_positions);

  std::vector<McArrangement> schedule;
  schedule.reserve(static_cast<std::size_t>(n_samples));
  for (int s = 0; s < n_samples; ++s) {
    std::vector<int> rest;
    for (int i = 0; i < n_options; ++i) {
      if (i != gold_index) rest.push_back(i);
    }
    rng.shuffle(rest);
    McArrangement arr;
    int gold_pos = gold_positions[static_cast<std::size_t>(s)];
    std::size_t next = 0;
    for (int pos = 0; pos < n_options; ++pos) {
      arr.option_order[static_cast<std::size_t>(pos)] =
          pos == gold_pos ? gold_index : rest[next++];
    }
    arr.gold_letter = static_cast<char>('A' + gold_pos);
    schedule.push_back(arr);
  }
  return schedule;
}

std::string extract_final_answer(const std::string& raw_text, PromptMode mode,
                                 bool* marker_missing) {
  if (marker_missing != nullptr) *marker_missing = false;
  if (mode == PromptMode::Plain) return trim(raw_text);
  std::size_t pos = raw_text.rfind(kAnswerMarker);
  if (pos == std::string::npos) {
    if (marker_missing != nullptr) *marker_missing = true;
    return trim(raw_text);
  }
  return trim(raw_text.substr(pos + std::string(kAnswerMarker).size()));
}

Json response_record_to_json(const ResponseRecord& record) {
  Json j;
  j["task_id"] = record.task_id;
  j["model_config_id"] = record.model_config_id;
  j["sample_index"] = record.sample_index;
  j["raw_text"] = record.raw_text;
  j["extracted_answer"] = record.extracted_answer;
  if (record.mc_permutation) {
    Json perm;
    perm["order"] = record.mc_permutation->option_order;
    perm["gold_letter"] = std::string(1, record.mc_permutation->gold_letter);
    j["mc_permutation"] = std::move(perm);
  }
  j["warnings"] = record.warnings;
  return j;
}

ResponseRecord response_record_from_json(const Json& j) {
  ResponseRecord record;
  record.task_id = j.at("task_id").get<std::string>();
  record.model_config_id = j.at("model_config_id").get<std::string>();
  record.sample_index = j.at("sample_index").get<int>();
  record.raw_text = j.value("raw_text", "");
  record.extracted_answer = j.value("extracted_answer", "");
  if (j.contains("mc_permutation")) {
    McArrangement arr;
    auto order = j.at("mc_permutation").at("order").get<std::vector<int>>();
    std::string letter = j.at("mc_permutation").at("gold_letter").get<std::string>();
    if (order.size() != kMcOptionCount || letter.size() != 1) {
      throw IntegrityError("malformed mc_permutation for " + record.task_id);
    }
    std::copy_n(order.begin(), kMcOptionCount, arr.option_order.begin());
    arr.gold_letter = letter[0];
    record.mc_permutation = arr;
  }
  if (j.contains("warnings")) record.warnings = j.at("warnings").get<std::vector<std::string>>();
  return record;
}

EvalRunStats run_evaluation(const BenchmarkFile& bench, const std::string& benchmark_digest,
                            const EvalPlan& plan, const PromptLibrary& prompts, Gateway& gateway,
                            const std::string& log_path, int parallel_window) {
  if (plan.n_samples < 1) throw ArgumentError("run_evaluation: n_samples must be >= 1");
  for (const auto& cfg : plan.configs) {
    if (!gateway.has_backend(cfg.provider_id)) {
      throw ConfigError("run_evaluation: unregistered provider " + cfg.provider_id);
    }
  }

  // Resume bookkeeping: the header pins the benchmark; existing triples are
  // skipped, a digest mismatch refuses to resume.
  std::set<std::string> done;
  bool has_header = false;
  for_each_jsonl(log_path, [&](const Json& j) {
    if (j.value("type", "") == "header") {
      has_header = true;
      if (j.value("benchmark_digest", "") != benchmark_digest) {
        throw IntegrityError("response log was produced from a different benchmark: " + log_path);
      }
      return;
    }
    done.insert(j.at("task_id").get<std::string>() + "\x1f" +
                j.at("model_config_id").get<std::string>() + "\x1f" +
                std::to_string(j.at("sample_index").get<int>()));
  }, /*must_exist=*/false);

  JsonlWriter writer(log_path);
  if (!has_header) {
    Json header;
    header["type"] = "header";
    header["benchmark_digest"] = benchmark_digest;
    header["n_samples"] = plan.n_samples;
    header["seed"] = plan.seed;
    writer.append(header);
  }

  EvalRunStats stats;

  // One task's worth of records, fetched as a unit.
  auto fetch_task = [&](const ModelConfig& cfg, const TaskInstance& task) {
    std::vector<ResponseRecord> records;
    const PromptMode mode =
        cfg.thinking_mode == ThinkingMode::CotPrompt ? PromptMode::Cot : PromptMode::Plain;
    std::vector<McArrangement> schedule;
    if (is_mc_kind(task.kind)) {
      auto gold_it = std::find(task.options.begin(), task.options.end(), task.gold);
      if (gold_it == task.options.end()) {
        throw IntegrityError("mc task options missing gold: " + task.task_id);
      }
      int gold_index = static_cast<int>(gold_it - task.options.begin());
      schedule = mc_schedule(plan.n_samples, kMcOptionCount,
                             derive_seed(plan.seed, "mc", fnv1a64(task.task_id)), gold_index);
    }
    for (int s = 0; s < plan.n_samples; ++s) {
      std::string key = task.task_id + "\x1f" + cfg.config_id + "\x1f" + std::to_string(s);
      if (done.count(key)) continue;
      ChatRequest req;
      const McArrangement* arr = schedule.empty() ? nullptr : &schedule[static_cast<std::size_t>(s)];
      auto [system_text, user_text] = build_task_prompt(prompts, task, mode, arr);
      req.system_text = std::move(system_text);
      req.user_text = std::move(user_text);
      req.temperature = 1.0;
      req.sample_index = s;
      // Native-thinking runs take the provider's own output budget.
      req.max_output = cfg.thinking_mode == ThinkingMode::NativeOn ? 0 : 1024;
      switch (cfg.thinking_mode) {
        case ThinkingMode::NativeOn: req.thinking = ThinkingRequest::NativeOn; break;
        case ThinkingMode::NativeOff: req.thinking = ThinkingRequest::NativeOff; break;
        default: req.thinking = ThinkingRequest::None; break;
      }
      std::string raw = gateway.complete(cfg, req);

      ResponseRecord record;
      record.task_id = task.task_id;
      record.model_config_id = cfg.config_id;
      record.sample_index = s;
      record.raw_text = raw;
      bool missing = false;
      record.extracted_answer = extract_final_answer(raw, mode, &missing);
      if (missing) record.warnings.push_back("answer_marker_missing");
      if (arr != nullptr) record.mc_permutation = *arr;
      records.push_back(std::move(record));
    }
    return records;
  };

  // Parallel fetch with strictly ordered writes: futures are drained in
  // submission order so the log is a deterministic function of the inputs.
  std::deque<std::future<std::vector<ResponseRecord>>> pending;
  auto drain_one = [&] {
    auto records = pending.front().get();
    pending.pop_front();
    for (const auto& record : records) {
      writer.append(response_record_to_json(record));
      ++stats.written;
    }
  };

  for (const auto& cfg : plan.configs) {
    // A config never fans out past its own in-flight budget.
    const int window = std::max(1, std::min(parallel_window, cfg.max_in_flight));
    for (const auto& fact : bench.facts) {
      for (TaskKind kind : all_task_kinds()) {
        const TaskInstance* task = bench.find_task(fact.fact_id, kind);
        if (task == nullptr) {
          throw IntegrityError("fact " + fact.fact_id + " missing task kind: " +
                               task_kind_name(kind));
        }
        pending.push_back(std::async(std::launch::async, fetch_task, cfg, *task));
        if (static_cast<int>(pending.size()) >= window) drain_one();
      }
    }
    while (!pending.empty()) drain_one();
  }

  stats.skipped = static_cast<long long>(done.size());
  return stats;
}

}  // namespace kp

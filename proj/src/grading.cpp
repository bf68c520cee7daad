#include "kp/grading.hpp"

#include <algorithm>
#include <cctype>
#include <deque>
#include <future>
#include <map>

#include "kp/evaluation.hpp"

#include "kp/errors.hpp"
#include "kp/text.hpp"

namespace kp {

namespace {

const std::array<std::string, 4> kLabelNames = {"CORRECT", "INCORRECT", "PARTIALLY", "OTHER"};

bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

}  // namespace

const std::string& grade_label_name(GradeLabel label) {
  return kLabelNames[static_cast<int>(label)];
}

GradeLabel grade_label_from_name(const std::string& name) {
  for (int i = 0; i < 4; ++i) {
    if (kLabelNames[i] == name) return static_cast<GradeLabel>(i);
  }
  throw ParseError("unknown grade label: " + name);
}

void GradeRecord::tally() {
  c = i = p = o = 0;
  for (GradeLabel label : labels) {
    switch (label) {
      case GradeLabel::Correct: ++c; break;
      case GradeLabel::Incorrect: ++i; break;
      case GradeLabel::Partially: ++p; break;
      case GradeLabel::Other: ++o; break;
    }
  }
  grade = labels.empty() ? std::nullopt : question_grade(labels);
}

std::optional<double> question_grade(const std::vector<GradeLabel>& labels) {
  if (labels.empty()) throw ArgumentError("question_grade: empty label list");
  int correct = 0;
  int incorrect = 0;
  for (GradeLabel label : labels) {
    if (label == GradeLabel::Correct) ++correct;
    if (label == GradeLabel::Incorrect) ++incorrect;
  }
  if (correct + incorrect == 0) return std::nullopt;
  return static_cast<double>(correct) / (correct + incorrect);
}

std::pair<std::string, std::string> render_grader_prompt(
    const PromptLibrary& prompts, GraderKind kind, const std::string& question_or_context,
    const std::string& gold, const std::vector<std::string>& responses) {
  if (responses.empty()) throw ArgumentError("render_grader_prompt: no responses");
  const bool completion = kind == GraderKind::Completion;
  const std::string item = completion ? "Completion " : "Answer ";
  std::string numbered;
  for (std::size_t i = 0; i < responses.size(); ++i) {
    numbered += item + std::to_string(i + 1) + ": " + responses[i];
    if (i + 1 < responses.size()) numbered += '\n';
  }
  std::string system_text =
      prompts.text(completion ? "graders/completion_system" : "graders/qa_system");
  PromptVars vars;
  std::vector<std::string> required;
  if (completion) {
    vars = {{"left_context", question_or_context}, {"gold_target", gold}, {"completions", numbered}};
    required = {"left_context", "gold_target", "completions"};
  } else {
    vars = {{"question", question_or_context}, {"gold_target", gold}, {"answers", numbered}};
    required = {"question", "gold_target", "answers"};
  }
  std::string user_text =
      prompts.render(completion ? "graders/completion_user" : "graders/qa_user", vars, required);
  return {system_text, user_text};
}

std::optional<char> extract_mc_letter(const std::string& answer) {
  for (std::size_t i = 0; i < answer.size(); ++i) {
    char c = answer[i];
    char upper = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    if (upper < 'A' || upper > 'D') continue;
    bool left_ok = i == 0 || !is_word_char(answer[i - 1]);
    bool right_ok = i + 1 == answer.size() || !is_word_char(answer[i + 1]);
    if (left_ok && right_ok) return upper;
  }
  return std::nullopt;
}

std::vector<GradeLabel> parse_grader_labels(const std::string& raw, GraderKind kind, int n) {
  const std::string tag = kind == GraderKind::Completion ? "completion_" : "answer_";
  std::vector<GradeLabel> labels;
  labels.reserve(static_cast<std::size_t>(n));
  for (int i = 1; i <= n; ++i) {
    std::string open = "<" + tag + std::to_string(i) + ">";
    std::string close = "</" + tag + std::to_string(i) + ">";
    std::size_t begin = raw.find(open);
    if (begin == std::string::npos) {
      throw ParseError("grader output missing tag index " + std::to_string(i));
    }
    begin += open.size();
    std::size_t end = raw.find(close, begin);
    if (end == std::string::npos) {
      throw ParseError("grader output missing closing tag for index " + std::to_string(i));
    }
    labels.push_back(grade_label_from_name(trim(raw.substr(begin, end - begin))));
  }
  return labels;
}

GradeRecord grade_responses(const PromptLibrary& prompts, const TaskInstance& task,
                            const std::vector<ResponseForGrading>& responses, Gateway& gateway,
                            const ModelConfig& grader_cfg, const std::string& model_config_id) {
  GradeRecord record;
  record.task_id = task.task_id;
  record.model_config_id = model_config_id;

  if (is_mc_kind(task.kind)) {
    for (const auto& resp : responses) {
      if (!resp.mc_gold_letter) {
        throw IntegrityError("mc response without permutation: " + task.task_id);
      }
      auto letter = extract_mc_letter(resp.extracted_answer);
      if (!letter) {
        record.labels.push_back(GradeLabel::Other);
      } else if (*letter == *resp.mc_gold_letter) {
        record.labels.push_back(GradeLabel::Correct);
      } else {
        record.labels.push_back(GradeLabel::Incorrect);
      }
    }
    record.tally();
    return record;
  }

  const GraderKind kind =
      task.kind == TaskKind::Completion ? GraderKind::Completion : GraderKind::Qa;
  std::vector<std::string> texts;
  texts.reserve(responses.size());
  for (const auto& resp : responses) texts.push_back(resp.extracted_answer);
  auto [system_text, user_text] = render_grader_prompt(prompts, kind, task.text, task.gold, texts);

  ChatRequest req;
  req.system_text = std::move(system_text);
  req.user_text = std::move(user_text);
  req.temperature = 0.0;
  req.thinking = grader_cfg.thinking_mode == ThinkingMode::NativeOn ? ThinkingRequest::NativeOn
                                                                    : ThinkingRequest::None;
  std::string raw = gateway.complete(grader_cfg, req);
  try {
    record.labels = parse_grader_labels(raw, kind, static_cast<int>(responses.size()));
    record.tally();
  } catch (const ParseError& err) {
    record.labels.clear();
    record.tally();
    record.grade = std::nullopt;
    record.error = err.what();
  }
  return record;
}

Json grade_record_to_json(const GradeRecord& record) {
  Json j;
  j["task_id"] = record.task_id;
  j["model_config_id"] = record.model_config_id;
  Json labels = Json::array();
  for (GradeLabel label : record.labels) labels.push_back(grade_label_name(label));
  j["labels"] = std::move(labels);
  j["c"] = record.c;
  j["i"] = record.i;
  j["p"] = record.p;
  j["o"] = record.o;
  j["grade"] = record.grade ? Json(*record.grade) : Json(nullptr);
  if (record.error) j["error"] = *record.error;
  return j;
}

GradeRecord grade_record_from_json(const Json& j) {
  GradeRecord record;
  record.task_id = j.at("task_id").get<std::string>();
  record.model_config_id = j.at("model_config_id").get<std::string>();
  for (const auto& label : j.at("labels")) {
    record.labels.push_back(grade_label_from_name(label.get<std::string>()));
  }
  record.c = j.value("c", 0);
  record.i = j.value("i", 0);
  record.p = j.value("p", 0);
  record.o = j.value("o", 0);
  if (j.contains("grade") && !j.at("grade").is_null()) {
    record.grade = j.at("grade").get<double>();
  }
  if (j.contains("error")) record.error = j.at("error").get<std::string>();
  return record;
}

std::vector<GradeRecord> load_grade_records(const std::string& path) {
  std::vector<GradeRecord> records;
  for_each_jsonl(path, [&](const Json& j) {
    if (j.value("type", "") == "header") return;
    records.push_back(grade_record_from_json(j));
  });
  return records;
}

GradeLogStats grade_response_log(const BenchmarkFile& bench, const std::string& responses_path,
                                 const PromptLibrary& prompts, Gateway& gateway,
                                 const ModelConfig& grader, const std::string& out_path) {
  // responses grouped per (config, task), samples in order.
  std::map<std::string, std::map<std::string, std::vector<ResponseRecord>>> groups;
  for_each_jsonl(responses_path, [&](const Json& j) {
    if (j.value("type", "") == "header") return;
    ResponseRecord record = response_record_from_json(j);
    groups[record.model_config_id][record.task_id].push_back(std::move(record));
  });
  for (auto& [config_id, tasks] : groups) {
    for (auto& [task_id, records] : tasks) {
      std::sort(records.begin(), records.end(),
                [](const ResponseRecord& a, const ResponseRecord& b) {
                  return a.sample_index < b.sample_index;
                });
    }
  }

  // Work items in benchmark task order per config, so the output is
  // byte-stable regardless of grading parallelism.
  struct Item {
    const TaskInstance* task;
    std::string config_id;
    std::vector<ResponseForGrading> responses;
  };
  std::vector<Item> items;
  for (const auto& [config_id, tasks] : groups) {
    for (const auto& task : bench.tasks) {
      auto it = tasks.find(task.task_id);
      if (it == tasks.end()) continue;
      Item item;
      item.task = &task;
      item.config_id = config_id;
      for (const auto& r : it->second) {
        ResponseForGrading rfg;
        rfg.sample_index = r.sample_index;
        rfg.extracted_answer = r.extracted_answer;
        if (r.mc_permutation) rfg.mc_gold_letter = r.mc_permutation->gold_letter;
        item.responses.push_back(std::move(rfg));
      }
      items.push_back(std::move(item));
    }
  }

  std::string out;
  {
    Json header;
    header["type"] = "header";
    header["grader"] = grader.config_id;
    out += header.dump();
    out += '\n';
  }
  GradeLogStats stats;
  // Grader calls run in parallel across questions; records land in order.
  const int window = std::max(1, grader.max_in_flight);
  std::deque<std::future<GradeRecord>> pending;
  std::size_t next = 0;
  auto drain = [&] {
    GradeRecord record = pending.front().get();
    pending.pop_front();
    if (record.error) ++stats.errors;
    out += grade_record_to_json(record).dump();
    out += '\n';
    ++stats.records;
  };
  while (next < items.size()) {
    const Item* item = &items[next];
    pending.push_back(std::async(std::launch::async, [&, item] {
      return grade_responses(prompts, *item->task, item->responses, gateway, grader,
                             item->config_id);
    }));
    ++next;
    if (static_cast<int>(pending.size()) >= window) drain();
  }
  while (!pending.empty()) drain();
  write_file(out_path, out);
  return stats;
}

GraderComparison compare_graders(const std::vector<GradeLabel>& labels_a,
                                 const std::vector<GradeLabel>& labels_b) {
  if (labels_a.size() != labels_b.size()) {
    throw ArgumentError("compare_graders: length mismatch");
  }
  if (labels_a.empty()) throw ArgumentError("compare_graders: empty input");
  GraderComparison out;
  int same = 0;
  for (std::size_t i = 0; i < labels_a.size(); ++i) {
    out.confusion[static_cast<int>(labels_a[i])][static_cast<int>(labels_b[i])] += 1;
    if (labels_a[i] == labels_b[i]) ++same;
  }
  out.agreement = static_cast<double>(same) / static_cast<double>(labels_a.size());
  return out;
}

}  // namespace kp

#include "kp/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <deque>
#include <filesystem>
#include <future>
#include <mutex>
#include <numeric>

#include "kp/digest.hpp"
#include "kp/errors.hpp"
#include "kp/rng.hpp"
#include "kp/text.hpp"

namespace kp {

namespace {

namespace fs = std::filesystem;

struct StageSpec {
  std::string template_name;
  std::vector<std::string> variables;
};

const std::map<std::string, StageSpec>& stage_specs() {
  static const std::map<std::string, StageSpec> specs = {
      {"categorize", {"pipeline/categorize", {"page_title", "summary"}}},
      {"ner", {"pipeline/ner", {"paragraph"}}},
      {"select_objects", {"pipeline/select_objects", {"n_entities", "tagged_paragraph"}}},
      {"verify_with_gold", {"pipeline/verify_with_gold", {"left_context", "object_entity"}}},
      {"verify_without_gold", {"pipeline/verify_without_gold", {"left_context"}}},
      {"verify_difficulty", {"pipeline/verify_difficulty", {"left_context", "object_entity"}}},
      {"gen_direct", {"pipeline/gen_direct", {"left_context", "object_entity"}}},
      {"refine_specificity",
       {"pipeline/refine_specificity", {"question", "gold_answer", "entity_type"}}},
      {"refine_minimalism", {"pipeline/refine_minimalism", {"question", "gold_answer"}}},
      {"filter_grounded", {"pipeline/filter_grounded", {"question", "search_pred"}}},
      {"gen_reverse", {"pipeline/gen_reverse", {"context", "question", "answer"}}},
      {"verify_pair",
       {"pipeline/verify_pair", {"direct", "object_entity", "reverse", "subject_entity"}}},
      {"gen_natural", {"pipeline/gen_natural", {"question", "answer"}}},
      {"gen_contextual", {"pipeline/gen_contextual", {"context", "question", "answer"}}},
      {"gen_mc", {"pipeline/gen_mc", {"context", "question", "gold_answer"}}},
      {"answer_ner", {"pipeline/answer_ner", {"question", "answer"}}},
  };
  return specs;
}

std::string strip_emphasis(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c != '*' && c != '`') out.push_back(c);
  }
  return trim(out);
}

StageOutcome accepted_outcome(std::string stage_id, std::string raw = "") {
  StageOutcome o;
  o.stage_id = std::move(stage_id);
  o.verdict = StageVerdict::Accepted;
  o.raw_model_output = std::move(raw);
  return o;
}

StageOutcome rejected_outcome(std::string stage_id, std::string reason, std::string raw = "") {
  StageOutcome o;
  o.stage_id = std::move(stage_id);
  o.verdict = StageVerdict::Rejected;
  o.reject_reason = std::move(reason);
  o.raw_model_output = std::move(raw);
  return o;
}

StageOutcome revised_outcome(std::string stage_id, Json payload, std::string raw) {
  StageOutcome o;
  o.stage_id = std::move(stage_id);
  o.verdict = StageVerdict::Revised;
  o.payload = std::move(payload);
  o.raw_model_output = std::move(raw);
  return o;
}

StageOutcome parse_binary_verdict(const std::string& stage_id, const std::string& raw,
                                  const std::string& reject_token) {
  std::string word = to_upper(strip_emphasis(raw));
  if (word == "SUITABLE") return accepted_outcome(stage_id, raw);
  if (word == reject_token) return rejected_outcome(stage_id, "model_reject", raw);
  return rejected_outcome(stage_id, "parse_failure", raw);
}

StageOutcome parse_stage_output(const std::string& stage_id, const PromptVars& inputs,
                                const std::string& raw) {
  if (stage_id == "categorize") {
    std::string name = trim(raw);
    if (is_category(name)) return revised_outcome(stage_id, Json(name), raw);
    return rejected_outcome(stage_id, "parse_failure", raw);
  }
  if (stage_id == "ner") {
    try {
      NerResult ner = parse_tagged_text(trim(raw));
      if (ner.entities.empty()) return rejected_outcome(stage_id, "no_entities", raw);
      Json payload;
      payload["plain"] = ner.plain;
      Json entities = Json::array();
      for (const auto& e : ner.entities) {
        entities.push_back({{"name", e.name}, {"type", e.type}, {"offset", e.offset}});
      }
      payload["entities"] = std::move(entities);
      payload["tagged"] = trim(raw);
      return revised_outcome(stage_id, std::move(payload), raw);
    } catch (const ParseError&) {
      return rejected_outcome(stage_id, "parse_failure", raw);
    }
  }
  if (stage_id == "select_objects") {
    // A list of quoted {{name}} items; order carries the suitability ranking.
    std::vector<std::string> names;
    std::size_t pos = 0;
    while ((pos = raw.find("{{", pos)) != std::string::npos) {
      std::size_t end = raw.find("}}", pos + 2);
      if (end == std::string::npos) break;
      std::string name = trim(raw.substr(pos + 2, end - pos - 2));
      if (!name.empty()) names.push_back(name);
      pos = end + 2;
    }
    if (names.empty()) return rejected_outcome(stage_id, "no_objects", raw);
    return revised_outcome(stage_id, Json(names), raw);
  }
  if (stage_id == "verify_with_gold" || stage_id == "verify_without_gold" ||
      stage_id == "verify_difficulty" || stage_id == "verify_pair") {
    return parse_binary_verdict(stage_id, raw, "NO");
  }
  if (stage_id == "filter_grounded") {
    return parse_binary_verdict(stage_id, raw, "NOT");
  }
  if (stage_id == "refine_specificity" || stage_id == "refine_minimalism") {
    std::string text = trim(raw);
    if (stage_id == "refine_specificity" && text == "REJECT") {
      return rejected_outcome(stage_id, "model_reject", raw);
    }
    if (text.empty()) return rejected_outcome(stage_id, "parse_failure", raw);
    if (text == inputs.at("question")) return accepted_outcome(stage_id, raw);
    return revised_outcome(stage_id, Json(text), raw);
  }
  if (stage_id == "gen_reverse") {
    std::string text = trim(raw);
    if (text == "REJECT") return rejected_outcome(stage_id, "model_reject", raw);
    auto grab = [&](const std::string& tag) -> std::optional<std::string> {
      std::string open = "<" + tag + ">";
      std::string close = "</" + tag + ">";
      std::size_t begin = text.find(open);
      if (begin == std::string::npos) return std::nullopt;
      begin += open.size();
      std::size_t end = text.find(close, begin);
      if (end == std::string::npos) return std::nullopt;
      return trim(text.substr(begin, end - begin));
    };
    auto question = grab("reverse");
    auto subject = grab("subject");
    if (!question || !subject || question->empty() || subject->empty()) {
      return rejected_outcome(stage_id, "parse_failure", raw);
    }
    Json payload;
    payload["question"] = *question;
    payload["subject"] = *subject;
    return revised_outcome(stage_id, std::move(payload), raw);
  }
  if (stage_id == "gen_direct" || stage_id == "gen_natural" || stage_id == "gen_contextual") {
    std::string text = trim(raw);
    if (text.empty()) return rejected_outcome(stage_id, "parse_failure", raw);
    return revised_outcome(stage_id, Json(text), raw);
  }
  if (stage_id == "gen_mc") {
    std::vector<std::string> options;
    for (const std::string& line : split_lines(trim(raw))) {
      std::string opt = trim(line);
      if (!opt.empty()) options.push_back(opt);
    }
    const std::string& gold = inputs.at("gold_answer");
    std::set<std::string> uniq(options.begin(), options.end());
    if (options.size() != kMcOptionCount || uniq.size() != options.size() ||
        options.front() != gold) {
      return rejected_outcome(stage_id, "parse_failure", raw);
    }
    return revised_outcome(stage_id, Json(options), raw);
  }
  if (stage_id == "answer_ner") {
    std::string type = to_upper(strip_emphasis(trim(raw)));
    if (is_entity_type(type)) return revised_outcome(stage_id, Json(type), raw);
    return rejected_outcome(stage_id, "parse_failure", raw);
  }
  throw ConfigError("unknown stage: " + stage_id);
}

}  // namespace

std::vector<PageRecord> load_corpus(const std::string& path) {
  std::vector<PageRecord> records;
  for_each_jsonl(path, [&](const Json& j) {
    PageRecord rec;
    rec.doc_id = j.at("doc_id").get<std::string>();
    rec.page_title = j.value("page_title", "");
    rec.summary_text = j.at("summary_text").get<std::string>();
    rec.page_views = j.value("page_views", 0LL);
    if (j.contains("creation_year")) rec.creation_year = j.at("creation_year").get<int>();
    records.push_back(std::move(rec));
  });
  return records;
}

std::string stage_verdict_name(StageVerdict verdict) {
  switch (verdict) {
    case StageVerdict::Accepted: return "accepted";
    case StageVerdict::Rejected: return "rejected";
    case StageVerdict::Revised: return "revised";
  }
  return "rejected";
}

const std::vector<std::string>& pipeline_stage_ids() {
  static const std::vector<std::string> ids = [] {
    std::vector<std::string> out;
    for (const auto& [id, spec] : stage_specs()) out.push_back(id);
    return out;
  }();
  return ids;
}

StageOutcome run_stage(const PromptLibrary& prompts, const std::string& stage_id,
                       const PromptVars& inputs, Gateway& gateway, const ModelConfig& model) {
  auto it = stage_specs().find(stage_id);
  if (it == stage_specs().end()) throw ConfigError("unknown stage: " + stage_id);
  const StageSpec& spec = it->second;

  ChatRequest req;
  req.user_text = prompts.render(spec.template_name, inputs, spec.variables);
  req.temperature = 0.0;  // construction stages are single-sample, deterministic
  req.sample_index = 0;
  std::string raw = gateway.complete(model, req);
  return parse_stage_output(stage_id, inputs, raw);
}

NerResult parse_tagged_text(const std::string& text) {
  NerResult result;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t open = text.find("{{", pos);
    if (open == std::string::npos) {
      result.plain += text.substr(pos);
      break;
    }
    result.plain += text.substr(pos, open - pos);
    std::size_t close = text.find("}}", open + 2);
    if (close == std::string::npos) {
      throw ParseError("unterminated entity tag at offset " + std::to_string(open));
    }
    std::string span = text.substr(open + 2, close - open - 2);
    std::size_t semi = span.rfind(';');
    if (semi == std::string::npos) {
      throw ParseError("entity tag missing semicolon: {{" + span + "}}");
    }
    TaggedEntity entity;
    entity.name = trim(span.substr(0, semi));
    entity.type = trim(span.substr(semi + 1));
    if (entity.name.empty() || !is_entity_type(entity.type)) {
      throw ParseError("entity tag with unknown type: {{" + span + "}}");
    }
    entity.offset = result.plain.size();
    result.plain += entity.name;
    result.entities.push_back(std::move(entity));
    pos = close + 2;
  }
  return result;
}

std::vector<std::pair<std::string, std::string>> parse_tagged_entities(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& e : parse_tagged_text(text).entities) out.emplace_back(e.name, e.type);
  return out;
}

FilterDecision apply_filters(const FactDraft& draft) {
  if (word_count(draft.left_context) < 30) return {false, "short_context"};
  for (const std::string* q : {&draft.q_direct, &draft.q_direct_natural, &draft.q_reverse,
                               &draft.q_reverse_natural}) {
    if (word_count(*q) > 40) return {false, "long_question"};
  }
  return {true, ""};
}

std::vector<std::size_t> downsample_balanced(const std::vector<BalanceItem>& items,
                                             std::size_t target, std::uint64_t seed) {
  if (items.size() <= target) {
    std::vector<std::size_t> all(items.size());
    std::iota(all.begin(), all.end(), 0);
    return all;
  }
  std::map<std::string, std::vector<std::size_t>> cells;
  for (std::size_t i = 0; i < items.size(); ++i) {
    cells[items[i].category + "\x1f" + items[i].entity_type].push_back(i);
  }
  for (auto& [key, indices] : cells) {
    DetRng rng(derive_seed(seed, "downsample", fnv1a64(key)));
    rng.shuffle(indices);
  }
  std::map<std::string, std::size_t> taken;
  std::vector<std::size_t> selected;
  while (selected.size() < target) {
    // Serve the non-exhausted cell with the fewest selections so far.
    const std::string* best = nullptr;
    for (const auto& [key, indices] : cells) {
      if (taken[key] >= indices.size()) continue;
      if (best == nullptr || taken[key] < taken[*best]) best = &key;
    }
    if (best == nullptr) break;
    selected.push_back(cells[*best][taken[*best]]);
    taken[*best] += 1;
  }
  std::sort(selected.begin(), selected.end());
  return selected;
}

std::set<std::string> flag_ensemble_failures(const GradeTable& grades,
                                             const std::vector<std::string>& ensemble,
                                             double tau) {
  std::set<std::string> flagged;
  for (const auto& [fact_id, by_config] : grades) {
    bool unanimous = true;
    for (const std::string& config : ensemble) {
      auto it = by_config.find(config);
      if (it == by_config.end()) {
        throw IntegrityError("flag_ensemble_failures: missing grades for fact " + fact_id +
                             " under " + config);
      }
      bool failed_some_question = false;
      for (const auto& grade : it->second) {
        if (grade && *grade <= tau) {
          failed_some_question = true;
          break;
        }
      }
      if (!failed_some_question) {
        unanimous = false;
        break;
      }
    }
    if (unanimous) flagged.insert(fact_id);
  }
  return flagged;
}

namespace {

// Shared run state. The replay map is loaded once from the log and is
// read-only while workers run; fresh outcomes are recorded only by the
// ordered sink thread.
struct PipelineContext {
  const PipelineOptions* options = nullptr;
  const PromptLibrary* prompts = nullptr;
  Gateway* gateway = nullptr;
  std::map<std::string, StageOutcome> replay;
  std::map<std::string, StageOutcome> fresh;
  JsonlWriter* log = nullptr;
  std::atomic<long long> stages_run{0};
  std::atomic<long long> stages_replayed{0};

  static std::string key(const std::string& candidate, const std::string& stage_key) {
    return candidate + "\x1f" + stage_key;
  }

  const StageOutcome* replayed(const std::string& candidate, const std::string& stage_key) const {
    auto it = replay.find(key(candidate, stage_key));
    return it == replay.end() ? nullptr : &it->second;
  }
};

// Outcomes produced while processing one candidate, flushed in candidate
// order so the log stays deterministic.
struct CandidateTrace {
  std::string candidate_id;
  std::vector<std::pair<std::string, StageOutcome>> outcomes;  // (stage_key, outcome)
};

StageOutcome exec_stage(PipelineContext& ctx, CandidateTrace& trace, const std::string& stage_key,
                        const std::string& stage_id, const PromptVars& inputs) {
  if (const StageOutcome* past = ctx.replayed(trace.candidate_id, stage_key)) {
    ctx.stages_replayed.fetch_add(1);
    return *past;
  }
  StageOutcome outcome =
      run_stage(*ctx.prompts, stage_id, inputs, *ctx.gateway, ctx.options->builder);
  ctx.stages_run.fetch_add(1);
  trace.outcomes.emplace_back(stage_key, outcome);
  return outcome;
}

// Backend-free decisions recorded through the same trace machinery.
StageOutcome exec_local(PipelineContext& ctx, CandidateTrace& trace, const std::string& stage_key,
                        StageOutcome outcome) {
  if (const StageOutcome* past = ctx.replayed(trace.candidate_id, stage_key)) {
    ctx.stages_replayed.fetch_add(1);
    return *past;
  }
  trace.outcomes.emplace_back(stage_key, outcome);
  return outcome;
}

void flush_trace(PipelineContext& ctx, const CandidateTrace& trace) {
  for (const auto& [stage_key, outcome] : trace.outcomes) {
    Json j;
    j["candidate"] = trace.candidate_id;
    j["stage"] = stage_key;
    j["stage_id"] = outcome.stage_id;
    j["verdict"] = stage_verdict_name(outcome.verdict);
    if (outcome.verdict == StageVerdict::Rejected) j["reason"] = outcome.reject_reason;
    if (!outcome.payload.is_null()) j["payload"] = outcome.payload;
    j["raw"] = outcome.raw_model_output;
    ctx.log->append(j);
    ctx.fresh[PipelineContext::key(trace.candidate_id, stage_key)] = outcome;
  }
}

struct Candidate {
  std::string candidate_id;
  PageRecord page;
  std::string category;
  std::string object_text;
  std::string object_entity_type;
  std::string left_context;
};

struct BuiltFact {
  Fact fact;
  std::vector<TaskInstance> tasks;
  bool alive = false;
};

// Ordered-window parallel map: fn runs concurrently, sink sees results in
// submission order.
template <typename Item, typename Fn, typename Sink>
void ordered_parallel(const std::vector<Item>& items, int window, Fn fn, Sink sink) {
  using Result = std::invoke_result_t<Fn, const Item&>;
  std::deque<std::future<Result>> pending;
  std::size_t next = 0;
  auto drain = [&] {
    sink(pending.front().get());
    pending.pop_front();
  };
  while (next < items.size()) {
    const Item* item = &items[next];
    pending.push_back(std::async(std::launch::async, [&fn, item] { return fn(*item); }));
    ++next;
    if (static_cast<int>(pending.size()) >= std::max(1, window)) drain();
  }
  while (!pending.empty()) drain();
}

struct DocResult {
  std::vector<CandidateTrace> traces;
  std::vector<Candidate> candidates;
};

}  // namespace

PipelineResult run_pipeline(const PipelineOptions& options, const PromptLibrary& prompts,
                            Gateway& gateway) {
  fs::create_directories(options.out_dir);
  const std::string log_path = (fs::path(options.out_dir) / "pipeline_log.jsonl").string();
  const std::string state_path = (fs::path(options.out_dir) / "pipeline_state.json").string();
  const std::string bench_path = (fs::path(options.out_dir) / "benchmark.jsonl").string();

  const std::string corpus_digest = sha256_file_hex(options.corpus_path);

  PipelineContext ctx;
  ctx.options = &options;
  ctx.prompts = &prompts;
  ctx.gateway = &gateway;

  // Replay any previous progress; a log from different inputs is refused.
  bool has_header = false;
  for_each_jsonl(log_path, [&](const Json& j) {
    if (j.value("type", "") == "header") {
      has_header = true;
      if (j.value("corpus_digest", "") != corpus_digest ||
          j.value("template_digest", "") != prompts.digest() ||
          j.value("seed", 0ULL) != options.seed) {
        throw IntegrityError("pipeline log belongs to different inputs: " + log_path);
      }
      return;
    }
    StageOutcome outcome;
    outcome.stage_id = j.value("stage_id", "");
    std::string verdict = j.value("verdict", "rejected");
    outcome.verdict = verdict == "accepted"   ? StageVerdict::Accepted
                      : verdict == "revised" ? StageVerdict::Revised
                                             : StageVerdict::Rejected;
    outcome.reject_reason = j.value("reason", "");
    if (j.contains("payload")) outcome.payload = j.at("payload");
    outcome.raw_model_output = j.value("raw", "");
    ctx.replay[PipelineContext::key(j.at("candidate").get<std::string>(),
                                    j.at("stage").get<std::string>())] = outcome;
  }, /*must_exist=*/false);

  JsonlWriter log(log_path);
  ctx.log = &log;
  if (!has_header) {
    Json header;
    header["type"] = "header";
    header["corpus_digest"] = corpus_digest;
    header["template_digest"] = prompts.digest();
    header["seed"] = options.seed;
    log.append(header);
  }

  const std::vector<PageRecord> corpus = load_corpus(options.corpus_path);

  // Phase A: per-document categorization, NER and object selection.
  auto doc_phase = [&](const PageRecord& page) {
    DocResult result;
    CandidateTrace trace;
    trace.candidate_id = page.doc_id;

    if (word_count(page.summary_text) < options.min_summary_words) {
      exec_local(ctx, trace, "ingest", rejected_outcome("ingest", "short_summary"));
      result.traces.push_back(std::move(trace));
      return result;
    }
    exec_local(ctx, trace, "ingest", accepted_outcome("ingest"));

    StageOutcome cat = exec_stage(ctx, trace, "categorize", "categorize",
                                  {{"page_title", page.page_title},
                                   {"summary", page.summary_text}});
    if (cat.verdict == StageVerdict::Rejected) {
      result.traces.push_back(std::move(trace));
      return result;
    }
    const std::string category = cat.payload.get<std::string>();

    StageOutcome ner = exec_stage(ctx, trace, "ner", "ner", {{"paragraph", page.summary_text}});
    if (ner.verdict == StageVerdict::Rejected) {
      result.traces.push_back(std::move(trace));
      return result;
    }

    StageOutcome selection =
        exec_stage(ctx, trace, "select_objects", "select_objects",
                   {{"n_entities", std::to_string(options.max_objects_per_doc)},
                    {"tagged_paragraph", ner.payload.at("tagged").get<std::string>()}});
    result.traces.push_back(std::move(trace));
    if (selection.verdict == StageVerdict::Rejected) return result;

    const std::string plain = ner.payload.at("plain").get<std::string>();
    const std::size_t sentence_end = first_sentence_end(plain);
    int ordinal = 0;
    for (const auto& name_json : selection.payload) {
      if (ordinal >= options.max_objects_per_doc) break;
      const std::string name = name_json.get<std::string>();
      ++ordinal;
      CandidateTrace sub;
      sub.candidate_id = page.doc_id + "#" + std::to_string(ordinal);

      const Json* entity = nullptr;
      for (const auto& e : ner.payload.at("entities")) {
        if (e.at("name").get<std::string>() == name) {
          entity = &e;
          break;
        }
      }
      StageOutcome eligibility = accepted_outcome("object_eligibility");
      std::string left_context;
      if (entity == nullptr) {
        eligibility = rejected_outcome("object_eligibility", "unknown_entity");
      } else {
        std::size_t offset = (*entity).at("offset").get<std::size_t>();
        left_context = trim(plain.substr(0, offset));
        if (sentence_end == std::string::npos || offset <= sentence_end) {
          // Objects may not come from the first sentence of the summary.
          eligibility = rejected_outcome("object_eligibility", "first_sentence");
        } else if (left_context.empty()) {
          eligibility = rejected_outcome("object_eligibility", "empty_left_context");
        } else if (contains(left_context, name)) {
          eligibility = rejected_outcome("object_eligibility", "object_in_context");
        }
      }
      StageOutcome decided = exec_local(ctx, sub, "object_eligibility", eligibility);
      if (decided.verdict == StageVerdict::Accepted) {
        Candidate cand;
        cand.candidate_id = sub.candidate_id;
        cand.page = page;
        cand.category = category;
        cand.object_text = name;
        cand.object_entity_type = (*entity).at("type").get<std::string>();
        cand.left_context = left_context;
        result.candidates.push_back(std::move(cand));
      }
      result.traces.push_back(std::move(sub));
    }
    return result;
  };

  std::vector<Candidate> candidates;
  ordered_parallel(corpus, options.parallel_window, doc_phase, [&](DocResult result) {
    for (const auto& trace : result.traces) flush_trace(ctx, trace);
    for (auto& cand : result.candidates) candidates.push_back(std::move(cand));
  });

  // Phase B: three verification prompts, sequential with short-circuit.
  auto verify_phase = [&](const Candidate& cand) {
    CandidateTrace trace;
    trace.candidate_id = cand.candidate_id;
    bool alive = exec_stage(ctx, trace, "verify_with_gold", "verify_with_gold",
                            {{"left_context", cand.left_context},
                             {"object_entity", cand.object_text}})
                     .verdict == StageVerdict::Accepted;
    if (alive) {
      alive = exec_stage(ctx, trace, "verify_without_gold", "verify_without_gold",
                         {{"left_context", cand.left_context}})
                  .verdict == StageVerdict::Accepted;
    }
    if (alive) {
      alive = exec_stage(ctx, trace, "verify_difficulty", "verify_difficulty",
                         {{"left_context", cand.left_context},
                          {"object_entity", cand.object_text}})
                  .verdict == StageVerdict::Accepted;
    }
    return std::make_pair(std::move(trace), alive);
  };

  std::vector<Candidate> verified;
  {
    std::size_t index = 0;
    ordered_parallel(candidates, options.parallel_window, verify_phase,
                     [&](std::pair<CandidateTrace, bool> result) {
                       flush_trace(ctx, result.first);
                       if (result.second) verified.push_back(candidates[index]);
                       ++index;
                     });
  }

  // Phase C: balance (category x entity_type) cells down to the target.
  std::vector<BalanceItem> balance_items;
  balance_items.reserve(verified.size());
  for (const auto& cand : verified) {
    balance_items.push_back({cand.category, cand.object_entity_type});
  }
  std::vector<std::size_t> kept =
      downsample_balanced(balance_items, options.target_facts, options.seed);
  std::vector<Candidate> sampled;
  sampled.reserve(kept.size());
  for (std::size_t idx : kept) sampled.push_back(verified[idx]);

  // Phase D: question generation, refinement, grounded filtering, MC.
  auto question_phase = [&](const Candidate& cand) {
    CandidateTrace trace;
    trace.candidate_id = cand.candidate_id;
    BuiltFact built;
    auto dead = [&] { return std::make_pair(std::move(trace), std::move(built)); };

    auto grounded_filter = [&](const std::string& role, const std::string& question) {
      const std::string stage_key = "filter_grounded:" + role;
      if (const StageOutcome* past = ctx.replayed(cand.candidate_id, stage_key)) {
        ctx.stages_replayed.fetch_add(1);
        return past->verdict == StageVerdict::Accepted;
      }
      // Answer with the grounded-search backend, then judge the question
      // against that answer.
      ChatRequest search_req;
      search_req.user_text = question;
      search_req.temperature = 0.0;
      std::string search_pred = gateway.complete(options.search, search_req);
      StageOutcome outcome = exec_stage(ctx, trace, stage_key, "filter_grounded",
                                        {{"question", question}, {"search_pred", search_pred}});
      return outcome.verdict == StageVerdict::Accepted;
    };

    auto refine = [&](const std::string& role, std::string question, const std::string& gold,
                      const std::string& entity_type) -> std::optional<std::string> {
      StageOutcome spec_outcome =
          exec_stage(ctx, trace, "refine_specificity:" + role, "refine_specificity",
                     {{"question", question},
                      {"gold_answer", gold},
                      {"entity_type", entity_type}});
      if (spec_outcome.verdict == StageVerdict::Rejected) return std::nullopt;
      if (spec_outcome.verdict == StageVerdict::Revised) {
        question = spec_outcome.payload.get<std::string>();
      }
      StageOutcome min_outcome =
          exec_stage(ctx, trace, "refine_minimalism:" + role, "refine_minimalism",
                     {{"question", question}, {"gold_answer", gold}});
      if (min_outcome.verdict == StageVerdict::Rejected) return std::nullopt;
      if (min_outcome.verdict == StageVerdict::Revised) {
        question = min_outcome.payload.get<std::string>();
      }
      return question;
    };

    FactDraft draft;
    draft.candidate_id = cand.candidate_id;
    draft.left_context = cand.left_context;

    StageOutcome direct = exec_stage(ctx, trace, "gen_direct", "gen_direct",
                                     {{"left_context", cand.left_context},
                                      {"object_entity", cand.object_text}});
    if (direct.verdict == StageVerdict::Rejected) return dead();
    auto q_direct = refine("direct", direct.payload.get<std::string>(), cand.object_text,
                           cand.object_entity_type);
    if (!q_direct) return dead();
    draft.q_direct = *q_direct;
    if (!grounded_filter("direct", draft.q_direct)) return dead();

    StageOutcome reverse = exec_stage(ctx, trace, "gen_reverse", "gen_reverse",
                                      {{"context", cand.left_context},
                                       {"question", draft.q_direct},
                                       {"answer", cand.object_text}});
    if (reverse.verdict == StageVerdict::Rejected) return dead();
    const std::string subject = reverse.payload.at("subject").get<std::string>();
    const std::string q_reverse_raw = reverse.payload.at("question").get<std::string>();
    if (!contains(cand.left_context, subject)) {
      exec_local(ctx, trace, "subject_check",
                 rejected_outcome("subject_check", "subject_not_in_context"));
      return dead();
    }

    StageOutcome subject_type = exec_stage(ctx, trace, "answer_ner", "answer_ner",
                                           {{"question", q_reverse_raw}, {"answer", subject}});
    if (subject_type.verdict == StageVerdict::Rejected) return dead();

    auto q_reverse =
        refine("reverse", q_reverse_raw, subject, subject_type.payload.get<std::string>());
    if (!q_reverse) return dead();
    draft.q_reverse = *q_reverse;

    StageOutcome pair_check = exec_stage(ctx, trace, "verify_pair", "verify_pair",
                                         {{"direct", draft.q_direct},
                                          {"object_entity", cand.object_text},
                                          {"reverse", draft.q_reverse},
                                          {"subject_entity", subject}});
    if (pair_check.verdict != StageVerdict::Accepted) return dead();
    if (!grounded_filter("reverse", draft.q_reverse)) return dead();

    StageOutcome direct_natural =
        exec_stage(ctx, trace, "gen_natural:direct", "gen_natural",
                   {{"question", draft.q_direct}, {"answer", cand.object_text}});
    if (direct_natural.verdict == StageVerdict::Rejected) return dead();
    draft.q_direct_natural = direct_natural.payload.get<std::string>();
    if (!grounded_filter("direct_natural", draft.q_direct_natural)) return dead();

    StageOutcome reverse_natural =
        exec_stage(ctx, trace, "gen_natural:reverse", "gen_natural",
                   {{"question", draft.q_reverse}, {"answer", subject}});
    if (reverse_natural.verdict == StageVerdict::Rejected) return dead();
    draft.q_reverse_natural = reverse_natural.payload.get<std::string>();
    if (!grounded_filter("reverse_natural", draft.q_reverse_natural)) return dead();

    StageOutcome contextual = exec_stage(ctx, trace, "gen_contextual", "gen_contextual",
                                         {{"context", cand.left_context},
                                          {"question", draft.q_direct},
                                          {"answer", cand.object_text}});
    if (contextual.verdict == StageVerdict::Rejected) return dead();
    draft.q_contextual = contextual.payload.get<std::string>();
    if (!grounded_filter("contextual", draft.q_contextual)) return dead();

    FilterDecision lengths = apply_filters(draft);
    StageOutcome length_outcome = lengths.keep
                                      ? accepted_outcome("apply_filters")
                                      : rejected_outcome("apply_filters", lengths.reason);
    if (exec_local(ctx, trace, "apply_filters", length_outcome).verdict !=
        StageVerdict::Accepted) {
      return dead();
    }

    StageOutcome mc_direct = exec_stage(ctx, trace, "gen_mc:direct", "gen_mc",
                                        {{"context", cand.left_context},
                                         {"question", draft.q_direct},
                                         {"gold_answer", cand.object_text}});
    if (mc_direct.verdict == StageVerdict::Rejected) return dead();
    StageOutcome mc_reverse = exec_stage(ctx, trace, "gen_mc:reverse", "gen_mc",
                                         {{"context", cand.left_context},
                                          {"question", draft.q_reverse},
                                          {"gold_answer", subject}});
    if (mc_reverse.verdict == StageVerdict::Rejected) return dead();

    Fact fact;
    fact.fact_id = cand.candidate_id;
    fact.doc_id = cand.page.doc_id;
    fact.page_title = cand.page.page_title;
    fact.subject = subject;
    fact.object_text = cand.object_text;
    fact.object_entity_type = cand.object_entity_type;
    fact.category = cand.category;
    fact.page_views = cand.page.page_views;
    fact.left_context = cand.left_context;
    fact.source_year = cand.page.creation_year;

    auto mc_direct_options = mc_direct.payload.get<std::vector<std::string>>();
    auto mc_reverse_options = mc_reverse.payload.get<std::vector<std::string>>();

    auto add_task = [&](TaskKind kind, const std::string& text, const std::string& gold,
                        std::vector<std::string> options = {}) {
      TaskInstance task;
      task.fact_id = fact.fact_id;
      task.kind = kind;
      task.task_id = make_task_id(fact.fact_id, kind);
      task.text = text;
      task.gold = gold;
      task.options = std::move(options);
      task.direction = is_encoding_kind(kind) ? Direction::None : task_kind_direction(kind);
      built.tasks.push_back(std::move(task));
    };
    add_task(TaskKind::Completion, fact.left_context, fact.object_text);
    add_task(TaskKind::Contextual, draft.q_contextual, fact.object_text);
    add_task(TaskKind::Direct, draft.q_direct, fact.object_text);
    add_task(TaskKind::DirectNatural, draft.q_direct_natural, fact.object_text);
    add_task(TaskKind::Reverse, draft.q_reverse, fact.subject);
    add_task(TaskKind::ReverseNatural, draft.q_reverse_natural, fact.subject);
    add_task(TaskKind::McDirect, draft.q_direct, fact.object_text, mc_direct_options);
    add_task(TaskKind::McDirectNatural, draft.q_direct_natural, fact.object_text,
             mc_direct_options);
    add_task(TaskKind::McReverse, draft.q_reverse, fact.subject, mc_reverse_options);
    add_task(TaskKind::McReverseNatural, draft.q_reverse_natural, fact.subject,
             mc_reverse_options);

    ValidationReport report = validate_fact(fact, built.tasks);
    StageOutcome validation = report.ok()
                                  ? accepted_outcome("validate_fact")
                                  : rejected_outcome("validate_fact", "validation_failure");
    if (!report.ok()) validation.payload = Json(report.violations);
    if (exec_local(ctx, trace, "validate_fact", validation).verdict != StageVerdict::Accepted) {
      built.tasks.clear();
      return dead();
    }

    built.fact = std::move(fact);
    built.alive = true;
    return std::make_pair(std::move(trace), std::move(built));
  };

  PipelineResult result;
  ordered_parallel(sampled, options.parallel_window, question_phase,
                   [&](std::pair<CandidateTrace, BuiltFact> r) {
                     flush_trace(ctx, r.first);
                     if (r.second.alive) {
                       result.benchmark.facts.push_back(std::move(r.second.fact));
                       for (auto& task : r.second.tasks) {
                         result.benchmark.tasks.push_back(std::move(task));
                       }
                     }
                   });

  result.benchmark.provenance.pipeline_version = options.pipeline_version;
  result.benchmark.provenance.corpus_digest = corpus_digest;
  result.benchmark.provenance.template_digest = prompts.digest();
  result.benchmark.provenance.seed = options.seed;
  save_benchmark(result.benchmark, bench_path);
  result.benchmark_path = bench_path;

  std::map<std::string, StageOutcome> all_outcomes = ctx.replay;
  for (const auto& [key, outcome] : ctx.fresh) all_outcomes[key] = outcome;
  for (const auto& [key, outcome] : all_outcomes) {
    std::string stage_key = key.substr(key.find('\x1f') + 1);
    if (outcome.verdict == StageVerdict::Rejected) {
      result.stage_counts[stage_key].rejected += 1;
    } else {
      result.stage_counts[stage_key].accepted += 1;
    }
  }
  result.stages_run = ctx.stages_run.load();
  result.stages_replayed = ctx.stages_replayed.load();

  // Summary state: per-candidate cursor plus per-stage accept/reject rates.
  Json state;
  state["corpus_digest"] = corpus_digest;
  state["template_digest"] = prompts.digest();
  state["seed"] = options.seed;
  state["facts_retained"] = result.benchmark.facts.size();
  Json counters = Json::object();
  for (const auto& [stage_key, counter] : result.stage_counts) {
    Json c;
    c["accepted"] = counter.accepted;
    c["rejected"] = counter.rejected;
    long long total = counter.accepted + counter.rejected;
    c["reject_pct"] = total > 0 ? 100.0 * static_cast<double>(counter.rejected) /
                                      static_cast<double>(total)
                                : 0.0;
    counters[stage_key] = std::move(c);
  }
  state["stages"] = std::move(counters);
  Json cursors = Json::object();
  {
    std::map<std::string, int> per_candidate;
    for (const auto& [key, outcome] : all_outcomes) {
      per_candidate[key.substr(0, key.find('\x1f'))] += 1;
    }
    for (const auto& [candidate, n] : per_candidate) cursors[candidate] = n;
  }
  state["cursors"] = std::move(cursors);
  write_file(state_path, state.dump(2) + "\n");
  return result;
}

}  // namespace kp

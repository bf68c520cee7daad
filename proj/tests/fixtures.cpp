#include "fixtures.hpp"

#include <filesystem>

#include "kp/digest.hpp"
#include "kp/evaluation.hpp"
#include "kp/text.hpp"

namespace kp::testfx {

namespace fs = std::filesystem;

std::string fresh_dir(const std::string& name) {
  fs::path dir = fs::path("kp_test_tmp") / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir.string();
}

namespace {

std::string fact_id_of(int n) {
  char buf[8];
  std::snprintf(buf, sizeof(buf), "F%02d", n);
  return buf;
}

std::string left_context_of(const std::string& id) {
  // 38 words, subject first, object absent, unique ALPHA marker.
  return "Subject " + id + " is a catalogued specimen first described in the northern registry"
         " of ALPHA-" + id + " and repeatedly cited by early field surveys across the region"
         " for its unusual markings, its long documented history among collectors, and its"
         " association with";
}

}  // namespace

const std::vector<FactPlan>& acceptance_plan() {
  using B = Behavior;
  auto q = [](B both) { return QuestionPlan{both, both}; };
  // Expected outcomes per NaN strategy (NG = non-gradable, DI = direct
  // inference exclusion):
  //   pair:    NG {F22,F23,F24}, DI {F21}, EF 4, RF 6, DR 7, RT 2, IW 1
  //   any:     NG {F05,F11,F12,F22,F23,F24}, DI {F21}, EF 4, RF 5, DR 5, RT 2, IW 1
  //   partial: NG {F22,F23}, DI {F21}, EF 4, RF 6, DR 8 (F24 resolves), RT 2, IW 1
  static const std::vector<FactPlan> plan = [&] {
    std::vector<FactPlan> p;
    for (int i = 0; i < 4; ++i) {  // F01-F04 encoding failure
      p.push_back({B::Wrong, B::Wrong, {q(B::Wrong), q(B::Wrong), q(B::Wrong), q(B::Wrong)}});
    }
    // F05 recall failure with a lone NaN inside the direct pair
    p.push_back({B::Gold, B::Wrong, {q(B::Gold), q(B::Idk), q(B::Wrong), q(B::Gold)}});
    for (int i = 0; i < 5; ++i) {  // F06-F10 recall failure
      p.push_back({B::Gold, B::Wrong, {q(B::Gold), q(B::Gold), q(B::Wrong), q(B::Gold)}});
    }
    // F11, F12 direct recall with a lone NaN in the encoding pair
    p.push_back({B::Gold, B::Idk, {q(B::Gold), q(B::Gold), q(B::Gold), q(B::Gold)}});
    p.push_back({B::Gold, B::Idk, {q(B::Gold), q(B::Gold), q(B::Gold), q(B::Gold)}});
    // F13 direct recall with the worked-example label mix on its direct question
    p.push_back({B::Gold, B::Gold, {q(B::Mixed), q(B::Gold), q(B::Gold), q(B::Gold)}});
    for (int i = 0; i < 4; ++i) {  // F14-F17 direct recall
      p.push_back({B::Gold, B::Gold, {q(B::Gold), q(B::Gold), q(B::Gold), q(B::Gold)}});
    }
    for (int i = 0; i < 2; ++i) {  // F18, F19 recall with thinking
      p.push_back({B::Gold, B::Gold,
                   {q(B::Gold), q(B::Gold), QuestionPlan{B::Wrong, B::Gold}, q(B::Gold)}});
    }
    // F20 inference without encoding
    p.push_back({B::Wrong, B::Wrong,
                 {QuestionPlan{B::Wrong, B::Gold}, q(B::Gold), q(B::Gold), q(B::Gold)}});
    // F21 direct inference (excluded)
    p.push_back({B::Wrong, B::Wrong, {q(B::Gold), q(B::Gold), q(B::Gold), q(B::Gold)}});
    // F22-F24 non-gradable encoding pairs
    p.push_back({B::Idk, B::Idk, {q(B::Gold), q(B::Gold), q(B::Gold), q(B::Gold)}});
    p.push_back({B::Idk, B::Idk, {q(B::Wrong), q(B::Wrong), q(B::Wrong), q(B::Wrong)}});
    p.push_back({B::Part, B::Part, {q(B::Gold), q(B::Gold), q(B::Gold), q(B::Gold)}});
    return p;
  }();
  return plan;
}

BenchmarkFile acceptance_benchmark() {
  BenchmarkFile bench;
  bench.provenance.pipeline_version = "fixture";
  bench.provenance.corpus_digest = "fixture-corpus";
  const auto& plan = acceptance_plan();
  for (std::size_t n = 1; n <= plan.size(); ++n) {
    const std::string id = fact_id_of(static_cast<int>(n));
    Fact fact;
    fact.fact_id = id;
    fact.doc_id = "doc-" + id;
    fact.page_title = "Page " + id;
    fact.subject = "Subject " + id;
    fact.object_text = "Object-" + id;
    fact.object_entity_type = "PRODUCT";
    fact.category = "People";
    fact.page_views = static_cast<long long>(n) * 10;
    fact.left_context = left_context_of(id);
    bench.facts.push_back(fact);

    auto add = [&](TaskKind kind, const std::string& text, const std::string& gold,
                   std::vector<std::string> options = {}) {
      TaskInstance task;
      task.fact_id = id;
      task.kind = kind;
      task.task_id = make_task_id(id, kind);
      task.text = text;
      task.gold = gold;
      task.options = std::move(options);
      task.direction = is_encoding_kind(kind) ? Direction::None : task_kind_direction(kind);
      bench.tasks.push_back(std::move(task));
    };
    const std::string obj = fact.object_text;
    const std::string subj = fact.subject;
    std::vector<std::string> mc_direct = {obj, "Object-X1-" + id, "Object-X2-" + id,
                                          "Object-X3-" + id};
    std::vector<std::string> mc_reverse = {subj, "Subject X1-" + id, "Subject X2-" + id,
                                           "Subject X3-" + id};
    add(TaskKind::Completion, fact.left_context, obj);
    add(TaskKind::Contextual,
        "Subject " + id + " appears in the northern registry. Which object is catalogued by"
        " the key Q-CTX-" + id + "?",
        obj);
    add(TaskKind::Direct, "Which object is linked to record Q-DIR-" + id + " in the registry?",
        obj);
    add(TaskKind::DirectNatural, "So what object goes with Q-DIRNAT-" + id + " anyway?", obj);
    add(TaskKind::Reverse, "Which subject is linked to record Q-REV-" + id + " in the registry?",
        subj);
    add(TaskKind::ReverseNatural, "And who matches Q-REVNAT-" + id + " then?", subj);
    add(TaskKind::McDirect, "Which object is linked to record Q-DIR-" + id + " in the registry?",
        obj, mc_direct);
    add(TaskKind::McDirectNatural, "So what object goes with Q-DIRNAT-" + id + " anyway?", obj,
        mc_direct);
    add(TaskKind::McReverse,
        "Which subject is linked to record Q-REV-" + id + " in the registry?", subj, mc_reverse);
    add(TaskKind::McReverseNatural, "And who matches Q-REVNAT-" + id + " then?", subj,
        mc_reverse);
  }
  return bench;
}

namespace {

std::vector<std::string> answers_for(Behavior behavior, const std::string& id,
                                     const std::string& gold) {
  switch (behavior) {
    case Behavior::Gold: return {gold};
    case Behavior::Wrong: return {"WRONG-" + id};
    case Behavior::Idk: return {"IDK"};
    case Behavior::Part: return {"~near-" + id};
    case Behavior::Mixed:
      return {gold, gold, gold, "WRONG-" + id, "~near-" + id, "~near-" + id, "IDK", "IDK"};
  }
  return {gold};
}

}  // namespace

std::vector<ScriptedBackend::Rule> acceptance_rules() {
  std::vector<ScriptedBackend::Rule> rules;
  const auto& plan = acceptance_plan();
  const char* tokens[4] = {"Q-DIR-", "Q-DIRNAT-", "Q-REV-", "Q-REVNAT-"};
  for (std::size_t n = 1; n <= plan.size(); ++n) {
    const std::string id = fact_id_of(static_cast<int>(n));
    const FactPlan& fp = plan[n - 1];
    const std::string obj = "Object-" + id;
    const std::string subj = "Subject " + id;

    rules.push_back({{"ALPHA-" + id}, answers_for(fp.completion, id, obj)});
    rules.push_back({{"Q-CTX-" + id}, answers_for(fp.contextual, id, obj)});
    for (int k = 0; k < 4; ++k) {
      const std::string token = tokens[k] + id;
      const std::string gold = k < 2 ? obj : subj;
      if (fp.knowledge[k].think != fp.knowledge[k].no_think) {
        // CoT prompts carry the step-by-step instruction; match them first.
        rules.push_back({{token, "Think step by step"},
                         answers_for(fp.knowledge[k].think, id, gold)});
      }
      rules.push_back({{token}, answers_for(fp.knowledge[k].no_think, id, gold)});
    }
  }
  return rules;
}

Json rules_to_json(const std::vector<ScriptedBackend::Rule>& rules) {
  Json out;
  out["rules"] = Json::array();
  for (const auto& rule : rules) {
    Json j;
    j["match"] = rule.match;
    j["answers"] = rule.answers;
    out["rules"].push_back(std::move(j));
  }
  return out;
}

AcceptanceSetup make_acceptance_setup(const std::string& dir_name) {
  AcceptanceSetup setup;
  setup.dir = fresh_dir(dir_name);
  setup.bench = acceptance_benchmark();
  setup.bench_path = setup.dir + "/benchmark.jsonl";
  save_benchmark(setup.bench, setup.bench_path);
  setup.benchmark_digest = sha256_file_hex(setup.bench_path);

  ModelConfig plain;
  plain.config_id = "alpha@plain";
  plain.model_id = "alpha";
  plain.provider_id = "sim";
  plain.model_name = "alpha-v1";
  plain.thinking_mode = ThinkingMode::Plain;
  ModelConfig cot = plain;
  cot.config_id = "alpha@cot";
  cot.thinking_mode = ThinkingMode::CotPrompt;
  setup.configs = {plain, cot};

  setup.grader.config_id = "grader";
  setup.grader.model_id = "grader";
  setup.grader.provider_id = "judge";
  setup.grader.model_name = "judge-v1";
  setup.grader.thinking_mode = ThinkingMode::Plain;

  setup.eval_backend = std::make_shared<ScriptedBackend>(acceptance_rules(), 7);
  setup.grader_backend = std::make_shared<ScriptedGraderBackend>();
  setup.cache = std::make_shared<ResponseCache>(setup.dir + "/cache.jsonl");
  setup.gateway = std::make_unique<Gateway>(setup.cache, RetryPolicy{5, 0, 0});
  setup.gateway->register_backend("sim", setup.eval_backend, 8);
  setup.gateway->register_backend("judge", setup.grader_backend, 8);
  return setup;
}

std::vector<ModelPair> acceptance_pairs() {
  return {ModelPair{"alpha", "alpha@plain", "alpha@cot"}};
}

std::vector<GradeRecord> run_eval_and_grade(AcceptanceSetup& setup, const PromptLibrary& prompts,
                                            const std::string& responses_path,
                                            const std::string& grades_path) {
  EvalPlan plan;
  plan.configs = setup.configs;
  plan.n_samples = 8;
  plan.seed = 11;
  run_evaluation(setup.bench, setup.benchmark_digest, plan, prompts, *setup.gateway,
                 responses_path);
  grade_response_log(setup.bench, responses_path, prompts, *setup.gateway, setup.grader,
                     grades_path);
  return load_grade_records(grades_path);
}

namespace {

std::string doc_id_of(int n) {
  char buf[8];
  std::snprintf(buf, sizeof(buf), "D%02d", n);
  return buf;
}

std::string doc_summary(const std::string& id) {
  // >= 50 words; subject opens the first sentence, object sits near the end.
  return "Subject " + id + " is a noted specimen of the coastal registry and it appears in"
         " many of the early catalogues compiled by the survey. The specimen Subject " + id +
         " was formally archived with reference HANDLE-" + id + " by the expedition of 1901"
         " after collectors across the region documented its unusual markings and its long"
         " association with the catalogued object known as Object-" + id + ".";
}

std::string doc_tagged(const std::string& id) {
  std::string tagged = doc_summary(id);
  auto replace_once = [&](const std::string& from, const std::string& to) {
    std::size_t pos = tagged.find(from);
    tagged.replace(pos, from.size(), to);
  };
  replace_once("Subject " + id, "{{Subject " + id + "; PERSON}}");
  replace_once("HANDLE-" + id, "{{HANDLE-" + id + "; IDENTIFIER}}");
  replace_once("Object-" + id, "{{Object-" + id + "; PRODUCT}}");
  return tagged;
}

std::string direct_question(const std::string& id) {
  return "What is the name of the catalogued object that Subject " + id +
         " archived under reference HANDLE-" + id + "?";
}

std::string reverse_question(const std::string& id) {
  return "Which subject archived the catalogued object Object-" + id +
         " under reference HANDLE-" + id + "?";
}

}  // namespace

DryRunFixture make_dryrun_fixture(const std::string& dir_name) {
  DryRunFixture fx;
  fx.dir = fresh_dir(dir_name);
  fx.corpus_path = fx.dir + "/corpus.jsonl";

  std::string corpus;
  for (int n = 1; n <= 10; ++n) {
    const std::string id = doc_id_of(n);
    Json j;
    j["doc_id"] = id;
    j["page_title"] = "Doc " + id;
    j["page_views"] = 100 * n;
    j["creation_year"] = 2000 + n;
    // D10 is too short to pass ingestion.
    j["summary_text"] = n == 10 ? "Subject D10 is a very short stub entry." : doc_summary(id);
    corpus += j.dump();
    corpus += '\n';
  }
  write_file(fx.corpus_path, corpus);

  auto& rules = fx.builder_rules;
  // Stage-specific rejections come first so they shadow the generic rules.
  rules.push_back({{"not trivially easy to guess", "HANDLE-D09"}, {"NO"}});
  rules.push_back({{"evaluate the question's specificity", "HANDLE-D08"}, {"REJECT"}});
  rules.push_back({{"based on the provided expert answer", "HANDLE-D07"}, {"NOT"}});

  for (int n = 1; n <= 9; ++n) {
    const std::string id = doc_id_of(n);
    rules.push_back({{"Named Entity Recognition", "HANDLE-" + id}, {doc_tagged(id)}});
    rules.push_back({{"pre-training completion task", "HANDLE-" + id},
                     {"[\"{{Object-" + id + "}}\"]"}});
    rules.push_back({{"evaluate the question's specificity",
                      "What is the name of the catalogued object that Subject " + id},
                     {direct_question(id)}});
    rules.push_back({{"evaluate the question's specificity",
                      "Which subject archived the catalogued object Object-" + id},
                     {reverse_question(id)}});
    rules.push_back({{"evaluate the question's minimalism",
                      "What is the name of the catalogued object that Subject " + id},
                     {direct_question(id)}});
    rules.push_back({{"evaluate the question's minimalism",
                      "Which subject archived the catalogued object Object-" + id},
                     {reverse_question(id)}});
    rules.push_back({{"design a unambiguous question", "HANDLE-" + id}, {direct_question(id)}});
    rules.push_back({{"generate a *reverse question*", "HANDLE-" + id},
                     {"<reverse> " + reverse_question(id) + " </reverse>\n<subject> Subject " +
                      id + " </subject>"}});
    rules.push_back({{"sound natural and conversational",
                      "What is the name of the catalogued object that Subject " + id},
                     {"What object did Subject " + id + " file under HANDLE-" + id + "?"}});
    rules.push_back({{"sound natural and conversational",
                      "Which subject archived the catalogued object Object-" + id},
                     {"Who filed Object-" + id + " under HANDLE-" + id + "?"}});
    rules.push_back({{"augment the question with the context", "HANDLE-" + id},
                     {"Subject " + id + " is a noted specimen of the coastal registry. " +
                      direct_question(id)}});
    rules.push_back({{"three additional plausible but incorrect answers",
                      "What is the name of the catalogued object that Subject " + id},
                     {"Object-" + id + "\nObject-A-" + id + "\nObject-B-" + id + "\nObject-C-" +
                      id}});
    rules.push_back({{"three additional plausible but incorrect answers",
                      "Which subject archived the catalogued object Object-" + id},
                     {"Subject " + id + "\nSubject A-" + id + "\nSubject B-" + id +
                      "\nSubject C-" + id}});
  }
  // Generic verdicts for everything without a doc-specific rule.
  rules.push_back({{"**Categories and Descriptions:**"}, {"People"}});
  rules.push_back({{"which is the OBJECT entity"}, {"SUITABLE"}});
  rules.push_back({{"suitable factual completion task**"}, {"SUITABLE"}});
  rules.push_back({{"not trivially easy to guess"}, {"SUITABLE"}});
  rules.push_back({{"suitable factual evaluation pair"}, {"SUITABLE"}});
  rules.push_back({{"based on the provided expert answer"}, {"SUITABLE"}});
  rules.push_back({{"categorize the answer by assigning the most appropriate entity type"},
                   {"PERSON"}});

  fx.search_rules.push_back(
      {{""}, {"A single clear answer: the registry lists exactly one match."}});
  return fx;
}

}  // namespace kp::testfx

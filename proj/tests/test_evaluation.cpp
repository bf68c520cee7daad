#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <map>
#include <set>

#include "fixtures.hpp"
#include "kp/digest.hpp"
#include "kp/errors.hpp"
#include "kp/evaluation.hpp"
#include "kp/text.hpp"

using namespace kp;

namespace {

BenchmarkFile two_fact_bench() {
  BenchmarkFile bench = testfx::acceptance_benchmark();
  bench.facts.resize(2);
  std::erase_if(bench.tasks, [&](const TaskInstance& t) {
    return t.fact_id != "F01" && t.fact_id != "F02";
  });
  return bench;
}

struct EvalHarness {
  std::string dir;
  BenchmarkFile bench;
  std::string bench_path;
  std::string digest;
  std::shared_ptr<ScriptedBackend> backend;
  std::shared_ptr<ResponseCache> cache;
  std::unique_ptr<Gateway> gateway;
  EvalPlan plan;

  explicit EvalHarness(const std::string& name, BenchmarkFile b) : bench(std::move(b)) {
    dir = testfx::fresh_dir(name);
    bench_path = dir + "/bench.jsonl";
    save_benchmark(bench, bench_path);
    digest = sha256_file_hex(bench_path);
    backend = std::make_shared<ScriptedBackend>(testfx::acceptance_rules(), 3);
    cache = std::make_shared<ResponseCache>(dir + "/cache.jsonl");
    gateway = std::make_unique<Gateway>(cache, RetryPolicy{5, 0, 0});
    gateway->register_backend("sim", backend, 8);
    ModelConfig cfg;
    cfg.config_id = "alpha@plain";
    cfg.model_id = "alpha";
    cfg.provider_id = "sim";
    cfg.model_name = "alpha-v1";
    cfg.thinking_mode = ThinkingMode::Plain;
    plan.configs = {cfg};
    plan.n_samples = 8;
    plan.seed = 5;
  }
};

}  // namespace

TEST_CASE("build_task_prompt selects the right instruction variant") {
  PromptLibrary prompts;
  BenchmarkFile bench = testfx::acceptance_benchmark();

  const TaskInstance* completion = bench.find_task("F01", TaskKind::Completion);
  auto [sys_c, usr_c] = build_task_prompt(prompts, *completion, PromptMode::Plain);
  CHECK(sys_c == "Respond only with the completion of the last sentence");
  CHECK(usr_c == completion->text);

  const TaskInstance* direct = bench.find_task("F01", TaskKind::Direct);
  auto [sys_d, usr_d] = build_task_prompt(prompts, *direct, PromptMode::Cot);
  CHECK(contains(sys_d, "Think step by step"));
  CHECK(contains(sys_d, "Answer: [Your Answer]"));
  CHECK(usr_d == direct->text);

  const TaskInstance* mc = bench.find_task("F01", TaskKind::McDirect);
  McArrangement arr;
  arr.option_order = {2, 0, 3, 1};
  arr.gold_letter = 'B';
  auto [sys_m, usr_m] = build_task_prompt(prompts, *mc, PromptMode::Plain, &arr);
  CHECK(sys_m == "Respond only with the letter of the correct answer");
  auto lines = split_lines(usr_m);
  REQUIRE(lines.size() == 5);
  CHECK(lines[0] == mc->text);
  CHECK(lines[1] == "A. " + mc->options[2]);
  CHECK(lines[2] == "B. " + mc->options[0]);
  CHECK(lines[3] == "C. " + mc->options[3]);
  CHECK(lines[4] == "D. " + mc->options[1]);

  CHECK_THROWS_AS(build_task_prompt(prompts, *mc, PromptMode::Plain, nullptr), IntegrityError);
}

TEST_CASE("mc_schedule balances the gold letter exactly") {
  SUBCASE("8 samples over 4 options puts gold on each letter twice") {
    auto schedule = mc_schedule(8, 4, 123, 1);
    REQUIRE(schedule.size() == 8);
    std::map<char, int> histogram;
    for (const auto& arr : schedule) {
      histogram[arr.gold_letter] += 1;
      // gold letter indeed points at the gold option
      CHECK(arr.option_order[arr.gold_letter - 'A'] == 1);
      // each arrangement is a permutation
      std::set<int> seen(arr.option_order.begin(), arr.option_order.end());
      CHECK(seen.size() == 4);
    }
    CHECK(histogram['A'] == 2);
    CHECK(histogram['B'] == 2);
    CHECK(histogram['C'] == 2);
    CHECK(histogram['D'] == 2);
  }

  SUBCASE("4 samples put gold on each letter once") {
    auto schedule = mc_schedule(4, 4, 9, 0);
    std::set<char> letters;
    for (const auto& arr : schedule) letters.insert(arr.gold_letter);
    CHECK(letters.size() == 4);
  }

  SUBCASE("same seed, same schedule") {
    auto a = mc_schedule(8, 4, 77, 2);
    auto b = mc_schedule(8, 4, 77, 2);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].gold_letter == b[i].gold_letter);
      CHECK(a[i].option_order == b[i].option_order);
    }
  }

  SUBCASE("non-dividing sample count is an argument error") {
    CHECK_THROWS_AS(mc_schedule(6, 4, 1, 0), ArgumentError);
  }
}

TEST_CASE("extract_final_answer follows the marker contract") {
  bool missing = false;
  CHECK(extract_final_answer("step by step... Answer: Bobby Paterson", PromptMode::Cot,
                             &missing) == "Bobby Paterson");
  CHECK_FALSE(missing);

  CHECK(extract_final_answer("Oasis", PromptMode::Plain, &missing) == "Oasis");
  CHECK_FALSE(missing);

  CHECK(extract_final_answer("no marker here", PromptMode::Cot, &missing) == "no marker here");
  CHECK(missing);

  SUBCASE("the last marker wins") {
    CHECK(extract_final_answer("Answer: draft. More words. Answer: final", PromptMode::Cot) ==
          "final");
  }

  SUBCASE("plain extraction is idempotent") {
    for (const std::string s : {"  padded  ", "x", "", "Answer: y"}) {
      std::string once = extract_final_answer(s, PromptMode::Plain);
      CHECK(extract_final_answer(once, PromptMode::Plain) == once);
    }
  }
}

TEST_CASE("run_evaluation writes facts x kinds x samples records") {
  EvalHarness h("eval_counts", two_fact_bench());
  CHECK(h.plan.expected_records(h.bench.facts.size()) == 160);
  auto stats = run_evaluation(h.bench, h.digest, h.plan, PromptLibrary(), *h.gateway,
                              h.dir + "/responses.jsonl");
  CHECK(stats.written == 160);

  std::set<std::string> keys;
  long long mc_with_permutation = 0;
  for_each_jsonl(h.dir + "/responses.jsonl", [&](const Json& j) {
    if (j.value("type", "") == "header") return;
    ResponseRecord r = response_record_from_json(j);
    CHECK(keys
              .insert(r.task_id + "|" + r.model_config_id + "|" +
                      std::to_string(r.sample_index))
              .second);
    if (r.mc_permutation) ++mc_with_permutation;
  });
  CHECK(keys.size() == 160);
  CHECK(mc_with_permutation == 2 * 4 * 8);  // 2 facts x 4 mc kinds x 8 samples
}

TEST_CASE("per-task gold letter histogram is exactly uniform") {
  EvalHarness h("eval_mc_balance", two_fact_bench());
  run_evaluation(h.bench, h.digest, h.plan, PromptLibrary(), *h.gateway,
                 h.dir + "/responses.jsonl");
  std::map<std::string, std::map<char, int>> histograms;
  for_each_jsonl(h.dir + "/responses.jsonl", [&](const Json& j) {
    if (j.value("type", "") == "header") return;
    ResponseRecord r = response_record_from_json(j);
    if (r.mc_permutation) histograms[r.task_id][r.mc_permutation->gold_letter] += 1;
  });
  REQUIRE(histograms.size() == 8);
  for (const auto& [task_id, histogram] : histograms) {
    REQUIRE(histogram.size() == 4);
    for (const auto& [letter, count] : histogram) CHECK(count == 2);
  }
}

TEST_CASE("interrupted evaluation resumes without duplicates") {
  EvalHarness h("eval_resume", two_fact_bench());
  const std::string log = h.dir + "/responses.jsonl";

  // First pass: only config section of fact F01 (simulate an interrupt by
  // evaluating a truncated benchmark).
  BenchmarkFile half = h.bench;
  half.facts.resize(1);
  std::erase_if(half.tasks, [](const TaskInstance& t) { return t.fact_id != "F01"; });
  run_evaluation(half, h.digest, h.plan, PromptLibrary(), *h.gateway, log);
  long long calls_after_half = h.backend->call_count();
  CHECK(calls_after_half == 80);

  auto stats = run_evaluation(h.bench, h.digest, h.plan, PromptLibrary(), *h.gateway, log);
  CHECK(stats.written == 80);   // only the missing fact
  CHECK(stats.skipped == 80);   // F01 triples were already logged

  std::set<std::string> keys;
  long long records = 0;
  for_each_jsonl(log, [&](const Json& j) {
    if (j.value("type", "") == "header") return;
    ++records;
    keys.insert(j.at("task_id").get<std::string>() + "|" +
                std::to_string(j.at("sample_index").get<int>()));
  });
  CHECK(records == 160);
  CHECK(keys.size() == 160);
}

TEST_CASE("resume refuses a mismatched benchmark digest") {
  EvalHarness h("eval_refuse", two_fact_bench());
  const std::string log = h.dir + "/responses.jsonl";
  run_evaluation(h.bench, h.digest, h.plan, PromptLibrary(), *h.gateway, log);
  CHECK_THROWS_AS(
      run_evaluation(h.bench, "different-digest", h.plan, PromptLibrary(), *h.gateway, log),
      IntegrityError);
}

TEST_CASE("response log is deterministic given benchmark, plan and seed") {
  EvalHarness a("eval_det_a", two_fact_bench());
  EvalHarness b("eval_det_b", two_fact_bench());
  run_evaluation(a.bench, a.digest, a.plan, PromptLibrary(), *a.gateway,
                 a.dir + "/responses.jsonl");
  run_evaluation(b.bench, b.digest, b.plan, PromptLibrary(), *b.gateway,
                 b.dir + "/responses.jsonl");
  CHECK(read_file(a.dir + "/responses.jsonl") == read_file(b.dir + "/responses.jsonl"));

  SUBCASE("a different seed moves the mc permutations") {
    EvalHarness c("eval_det_c", two_fact_bench());
    c.plan.seed = 6;
    run_evaluation(c.bench, c.digest, c.plan, PromptLibrary(), *c.gateway,
                   c.dir + "/responses.jsonl");
    CHECK(read_file(a.dir + "/responses.jsonl") != read_file(c.dir + "/responses.jsonl"));
  }
}

TEST_CASE("warm cache re-run is byte-identical with zero backend calls") {
  EvalHarness h("eval_warm", two_fact_bench());
  run_evaluation(h.bench, h.digest, h.plan, PromptLibrary(), *h.gateway,
                 h.dir + "/first.jsonl");
  long long calls = h.backend->call_count();

  Gateway warm(std::make_shared<ResponseCache>(h.dir + "/cache.jsonl"), RetryPolicy{5, 0, 0});
  warm.register_backend("sim", h.backend, 8);
  run_evaluation(h.bench, h.digest, h.plan, PromptLibrary(), warm, h.dir + "/second.jsonl");
  CHECK(h.backend->call_count() == calls);
  CHECK(warm.stats().backend_calls == 0);
  CHECK(read_file(h.dir + "/first.jsonl") == read_file(h.dir + "/second.jsonl"));
}

TEST_CASE("paper-scale plan arithmetic") {
  EvalPlan plan;
  plan.configs.resize(26);
  plan.n_samples = 8;
  CHECK(plan.expected_records(2150) == 4472000);
}

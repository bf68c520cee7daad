#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "fixtures.hpp"
#include "kp/cli.hpp"
#include "kp/config.hpp"
#include "kp/errors.hpp"
#include "kp/gateway.hpp"
#include "kp/prompts.hpp"
#include "kp/report.hpp"
#include "kp/text.hpp"

using namespace kp;

namespace {

namespace fs = std::filesystem;

struct CliWorkspace {
  std::string dir;
  std::string config_path;
  std::string bench_path;

  explicit CliWorkspace(const std::string& name) {
    dir = testfx::fresh_dir(name);
    BenchmarkFile bench = testfx::acceptance_benchmark();
    bench_path = dir + "/benchmark.jsonl";
    save_benchmark(bench, bench_path);
    write_file(dir + "/eval_rules.json",
               testfx::rules_to_json(testfx::acceptance_rules()).dump() + "\n");

    config_path = dir + "/kp.conf";
    std::string conf;
    conf += "[run]\n";
    conf += "seed = 11\n";
    conf += "cache = " + dir + "/cache.jsonl\n";
    conf += "\n[providers]\n";
    conf += "provider = id=sim kind=scripted script=" + dir + "/eval_rules.json seed=7\n";
    conf += "provider = id=judge kind=scripted-grader\n";
    conf += "\n[models]\n";
    conf += "model = id=alpha@plain model=alpha provider=sim name=alpha-v1 thinking=plain\n";
    conf += "model = id=alpha@cot model=alpha provider=sim name=alpha-v1 thinking=cot_prompt\n";
    conf += "\n[grader]\n";
    conf += "model = id=grader provider=judge name=judge-v1\n";
    conf += "\n[profiler]\n";
    conf += "tau = 0.5\n";
    conf += "nan_strategy = pair\n";
    conf += "\n[analysis]\n";
    conf += "fraction = 0.25\n";
    conf += "fdr_q = 0.05\n";
    conf += "bootstrap_B = 50\n";
    write_file(config_path, conf);
  }

  int run(std::vector<std::string> args) { return run_cli(args); }
};

}  // namespace

TEST_CASE("config document parsing") {
  ConfigDoc doc = ConfigDoc::parse(
      "# comment\n[run]\nseed = 42\n\n[models]\nmodel = a\nmodel = b\n");
  CHECK(doc.get("run", "seed") == std::optional<std::string>("42"));
  CHECK(doc.get_all("models", "model") == std::vector<std::string>{"a", "b"});
  CHECK_FALSE(doc.get("run", "missing").has_value());
  CHECK(doc.has_section("models"));
  CHECK_THROWS_AS(ConfigDoc::parse("[broken\nx = 1\n"), ConfigError);
  CHECK_THROWS_AS(ConfigDoc::parse("[ok]\nno equals sign\n"), ConfigError);
}

TEST_CASE("attribute list parsing") {
  auto attrs = parse_attrs("id=alpha provider=sim thinking=plain n_samples=8");
  CHECK(attrs.at("id") == "alpha");
  CHECK(attrs.at("provider") == "sim");
  CHECK(attrs.at("n_samples") == "8");
  auto quoted = parse_attrs("id=x name=\"two words\" k=v");
  CHECK(quoted.at("name") == "two words");
  CHECK(quoted.at("k") == "v");
  CHECK_THROWS_AS(parse_attrs("novalue"), ConfigError);
}

TEST_CASE("model pairs require one thinking and one non-thinking config") {
  CliWorkspace ws("cli_pairs");
  RunConfig config = RunConfig::load(ws.config_path);
  auto pairs = config.model_pairs();
  REQUIRE(pairs.size() == 1);
  CHECK(pairs[0].model_id == "alpha");
  CHECK(pairs[0].config_no_think == "alpha@plain");
  CHECK(pairs[0].config_think == "alpha@cot");
  CHECK(config.profiler.tau == 0.5);
  CHECK(config.fraction == 0.25);
  CHECK(config.bootstrap_resamples == 50);
}

TEST_CASE("cli end to end: evaluate, grade, profile, analyze, report") {
  CliWorkspace ws(std::string("cli_e2e"));
  const std::string responses = ws.dir + "/responses.jsonl";
  const std::string grades = ws.dir + "/grades.jsonl";
  const std::string profiles = ws.dir + "/profiles.jsonl";

  REQUIRE(ws.run({"--config", ws.config_path, "evaluate", "--benchmark", ws.bench_path, "--out",
                  responses, "--n-samples", "8", "--seed", "11"}) == 0);
  CHECK(fs::exists(responses));

  REQUIRE(ws.run({"--config", ws.config_path, "grade", "--benchmark", ws.bench_path,
                  "--responses", responses, "--out", grades}) == 0);
  CHECK(fs::exists(grades));

  REQUIRE(ws.run({"--config", ws.config_path, "profile", "--benchmark", ws.bench_path,
                  "--grades", grades, "--out", profiles, "--tau", "0.5", "--nan-strategy",
                  "pair", "--tau-sweep", "0.3,0.5,0.7,0.9,0.99"}) == 0);
  CHECK(fs::exists(profiles));
  CHECK(fs::exists(profiles + ".tau_sweep.json"));

  const std::string report_dir = ws.dir + "/analysis";
  REQUIRE(ws.run({"--config", ws.config_path, "analyze", "--benchmark", ws.bench_path,
                  "--grades", grades, "--profiles", profiles, "--report-dir", report_dir,
                  "--fraction", "0.25", "--bootstrap-B", "50"}) == 0);
  CHECK(fs::exists(report_dir + "/recall_analysis.csv"));
  CHECK(fs::exists(report_dir + "/phrasing_tests.csv"));
  CHECK(fs::exists(report_dir + "/bootstrap_width.csv"));
  CHECK(fs::exists(report_dir + "/summary.json"));

  const std::string report_csv = ws.dir + "/report.csv";
  REQUIRE(ws.run({"report", "--profiles", profiles, "--format", "csv", "--out", report_csv}) ==
          0);
  std::string csv = read_file(report_csv);
  CHECK(csv.rfind("Model,Encodes,Knows (+Think),Knows,Encoding Failure,Recall Failure,"
                  "Direct Recall,Recall w/ Thinking,Inference w/o Encoding,Excluded,"
                  "OTHER-or-PARTIALLY,Direct Inference",
                  0) == 0);

  SUBCASE("agreement of a grade log with itself is 1.0") {
    REQUIRE(ws.run({"agreement", "--grades-a", grades, "--grades-b", grades, "--out",
                    ws.dir + "/agreement.json"}) == 0);
    Json j = Json::parse(read_file(ws.dir + "/agreement.json"));
    CHECK(j.at("agreement") == 1.0);
  }

  SUBCASE("flag-review emits the unanimously failed facts") {
    REQUIRE(ws.run({"flag-review", "--benchmark", ws.bench_path, "--grades", grades,
                    "--ensemble", "alpha@plain,alpha@cot", "--tau", "0.5", "--out",
                    ws.dir + "/flagged.txt"}) == 0);
    std::string flagged = read_file(ws.dir + "/flagged.txt");
    // F01 fails everything under both configs; F14 fails nothing.
    CHECK(contains(flagged, "F01"));
    CHECK_FALSE(contains(flagged, "F14"));
  }

  SUBCASE("idempotence: warm re-runs change no output bytes") {
    std::string responses2 = ws.dir + "/responses2.jsonl";
    std::string grades2 = ws.dir + "/grades2.jsonl";
    REQUIRE(ws.run({"--config", ws.config_path, "evaluate", "--benchmark", ws.bench_path,
                    "--out", responses2, "--n-samples", "8", "--seed", "11"}) == 0);
    REQUIRE(ws.run({"--config", ws.config_path, "grade", "--benchmark", ws.bench_path,
                    "--responses", responses2, "--out", grades2}) == 0);
    CHECK(read_file(responses) == read_file(responses2));
    CHECK(read_file(grades) == read_file(grades2));

    std::string manifest_before = read_file(grades + ".manifest.json");
    REQUIRE(ws.run({"--config", ws.config_path, "grade", "--benchmark", ws.bench_path,
                    "--responses", responses, "--out", grades}) == 0);
    CHECK(read_file(grades + ".manifest.json") == manifest_before);
  }

  SUBCASE("report and profile are offline: no providers needed") {
    // A config whose script file is missing would fail at gateway
    // construction; report/profile must not build a gateway at all.
    REQUIRE(ws.run({"report", "--profiles", profiles, "--format", "table", "--out",
                    ws.dir + "/table.txt"}) == 0);
    CHECK(contains(read_file(ws.dir + "/table.txt"), "alpha"));
  }
}

TEST_CASE("cli build runs the construction pipeline from a config file") {
  auto fx = testfx::make_dryrun_fixture("cli_build");
  write_file(fx.dir + "/builder_rules.json",
             testfx::rules_to_json(fx.builder_rules).dump() + "\n");
  write_file(fx.dir + "/search_rules.json",
             testfx::rules_to_json(fx.search_rules).dump() + "\n");

  std::string conf;
  conf += "[run]\nseed = 13\ncache = " + fx.dir + "/cache.jsonl\n";
  conf += "\n[providers]\n";
  conf += "provider = id=builder kind=scripted script=" + fx.dir + "/builder_rules.json\n";
  conf += "provider = id=searcher kind=scripted script=" + fx.dir + "/search_rules.json\n";
  conf += "\n[corpus]\npath = " + fx.corpus_path + "\ntarget_facts = 100\n";
  conf += "\n[pipeline]\n";
  conf += "model = id=builder provider=builder name=builder-v1\n";
  conf += "search = id=searcher provider=searcher name=search-v1\n";
  write_file(fx.dir + "/kp.conf", conf);

  REQUIRE(run_cli({"--config", fx.dir + "/kp.conf", "build", "--out-dir", fx.dir + "/out"}) ==
          0);
  BenchmarkFile bench = load_benchmark(fx.dir + "/out/benchmark.jsonl");
  CHECK(bench.facts.size() == 6);
  CHECK(fs::exists(fx.dir + "/out/pipeline_log.jsonl"));
  CHECK(fs::exists(fx.dir + "/out/pipeline_state.json"));
  CHECK(fs::exists(fx.dir + "/out/manifest.json"));

  SUBCASE("a second build replays from the log and keeps all bytes") {
    std::string bench_bytes = read_file(fx.dir + "/out/benchmark.jsonl");
    std::string manifest_bytes = read_file(fx.dir + "/out/manifest.json");
    REQUIRE(run_cli({"--config", fx.dir + "/kp.conf", "build", "--out-dir", fx.dir + "/out"}) ==
            0);
    CHECK(read_file(fx.dir + "/out/benchmark.jsonl") == bench_bytes);
    CHECK(read_file(fx.dir + "/out/manifest.json") == manifest_bytes);
  }

  SUBCASE("a built benchmark feeds evaluate, grade and profile") {
    // Evaluation model answers through the seeded default reply; every fact
    // classifies as an encoding failure, which pins the whole chain.
    std::string conf = read_file(fx.dir + "/kp.conf");
    conf += "\n[models]\n";
    conf += "model = id=m@plain model=m provider=builder name=m-v1 thinking=plain\n";
    conf += "model = id=m@cot model=m provider=builder name=m-v1 thinking=cot_prompt\n";
    conf += "\n[grader]\nmodel = id=grader provider=grader-judge name=judge-v1\n";
    conf += "\n[providers]\nprovider = id=grader-judge kind=scripted-grader\n";
    write_file(fx.dir + "/kp_eval.conf", conf);

    REQUIRE(run_cli({"--config", fx.dir + "/kp_eval.conf", "evaluate", "--benchmark",
                     fx.dir + "/out/benchmark.jsonl", "--out", fx.dir + "/responses.jsonl"}) ==
            0);
    REQUIRE(run_cli({"--config", fx.dir + "/kp_eval.conf", "grade", "--benchmark",
                     fx.dir + "/out/benchmark.jsonl", "--responses", fx.dir + "/responses.jsonl",
                     "--out", fx.dir + "/grades.jsonl"}) == 0);
    REQUIRE(run_cli({"--config", fx.dir + "/kp_eval.conf", "profile", "--benchmark",
                     fx.dir + "/out/benchmark.jsonl", "--grades", fx.dir + "/grades.jsonl",
                     "--out", fx.dir + "/profiles.jsonl"}) == 0);

    int encoding_failures = 0;
    int total = 0;
    for_each_jsonl(fx.dir + "/profiles.jsonl", [&](const Json& j) {
      if (j.value("type", "") == "header") return;
      ++total;
      if (j.at("outcome") == "encoding_failure") ++encoding_failures;
    });
    CHECK(total == 6);
    CHECK(encoding_failures == 6);
  }
}

TEST_CASE("cli exit codes map error classes") {
  CliWorkspace ws("cli_errors");

  SUBCASE("missing config file is a config error (2)") {
    CHECK(ws.run({"--config", ws.dir + "/nope.conf", "evaluate", "--benchmark", ws.bench_path,
                  "--out", ws.dir + "/r.jsonl"}) == 2);
  }

  SUBCASE("subcommand without required --config is a config error (2)") {
    CHECK(ws.run({"evaluate", "--benchmark", ws.bench_path, "--out", ws.dir + "/r.jsonl"}) == 2);
  }

  SUBCASE("unknown flags are a usage error (2)") {
    CHECK(ws.run({"report", "--nonsense"}) == 2);
  }

  SUBCASE("benchmark digest mismatch on resume is a data error (3)") {
    const std::string responses = ws.dir + "/responses.jsonl";
    REQUIRE(ws.run({"--config", ws.config_path, "evaluate", "--benchmark", ws.bench_path,
                    "--out", responses}) == 0);
    // Tamper with the benchmark: drop one fact.
    BenchmarkFile bench = load_benchmark(ws.bench_path);
    bench.facts.pop_back();
    std::erase_if(bench.tasks,
                  [](const TaskInstance& t) { return t.fact_id == "F24"; });
    save_benchmark(bench, ws.bench_path);
    CHECK(ws.run({"--config", ws.config_path, "evaluate", "--benchmark", ws.bench_path, "--out",
                  responses}) == 3);
  }

  SUBCASE("empty profile set is a data error (3)") {
    write_file(ws.dir + "/empty.jsonl", "");
    CHECK(ws.run({"report", "--profiles", ws.dir + "/empty.jsonl"}) == 3);
  }
}

TEST_CASE("provider registration covers every configured kind") {
  std::string dir = testfx::fresh_dir("cli_providers");
  write_file(dir + "/rules.json", "{\"rules\":[]}\n");
  std::string conf;
  conf += "[providers]\n";
  conf += "provider = id=sim kind=scripted script=" + dir + "/rules.json seed=1\n";
  conf += "provider = id=judge kind=scripted-grader\n";
  conf += "provider = id=api kind=openai-chat base_url=http://localhost:1 max_in_flight=2\n";
  write_file(dir + "/kp.conf", conf);

  RunConfig config = RunConfig::load(dir + "/kp.conf");
  REQUIRE(config.providers.size() == 3);
  Gateway gateway;
  register_providers(gateway, config);
  CHECK(gateway.has_backend("sim"));
  CHECK(gateway.has_backend("judge"));
  CHECK(gateway.has_backend("api"));

  SUBCASE("unknown provider kinds are a config error") {
    write_file(dir + "/bad.conf", "[providers]\nprovider = id=x kind=quantum\n");
    RunConfig bad = RunConfig::load(dir + "/bad.conf");
    Gateway g2;
    CHECK_THROWS_AS(register_providers(g2, bad), ConfigError);
  }

  SUBCASE("a missing prompt directory is a config error") {
    CHECK_THROWS_AS(PromptLibrary(dir + "/no_such_dir"), ConfigError);
  }
}

TEST_CASE("manifest rewrites only when content changes") {
  std::string dir = testfx::fresh_dir("cli_manifest");
  RunManifest manifest;
  manifest.command = "evaluate";
  manifest.config_digest = "cfg";
  manifest.benchmark_digest = "bench";
  manifest.seed = 1;
  manifest.started_at = "2026-01-01T00:00:00Z";
  manifest.finished_at = "2026-01-01T00:00:01Z";
  manifest.counts["responses_written"] = 160;
  write_manifest(manifest, dir + "/m.json");
  std::string first = read_file(dir + "/m.json");

  manifest.started_at = "2026-01-01T09:00:00Z";
  manifest.finished_at = "2026-01-01T09:00:01Z";
  write_manifest(manifest, dir + "/m.json");
  CHECK(read_file(dir + "/m.json") == first);  // timestamps alone never rewrite

  manifest.counts["responses_written"] = 0;
  write_manifest(manifest, dir + "/m.json");
  CHECK(read_file(dir + "/m.json") != first);
}

#include "kp/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>

#include <CLI11.hpp>

#include "kp/analysis.hpp"
#include "kp/benchmark.hpp"
#include "kp/config.hpp"
#include "kp/digest.hpp"
#include "kp/errors.hpp"
#include "kp/evaluation.hpp"
#include "kp/gateway.hpp"
#include "kp/pipeline.hpp"
#include "kp/profiler.hpp"
#include "kp/prompts.hpp"
#include "kp/report.hpp"
#include "kp/rng.hpp"
#include "kp/text.hpp"

namespace kp {

namespace {

namespace fs = std::filesystem;

struct Runtime {
  RunConfig config;
  PromptLibrary prompts;
  std::shared_ptr<ResponseCache> cache;
  Gateway gateway;

  Runtime(const std::string& config_path, const std::string& cache_override)
      : config(RunConfig::load(config_path)),
        prompts(config.prompt_dir),
        cache(make_cache(config, cache_override)),
        gateway(cache) {
    register_providers(gateway, config);
  }

  static std::shared_ptr<ResponseCache> make_cache(const RunConfig& config,
                                                   const std::string& override_path) {
    std::string path = override_path.empty() ? config.cache_path : override_path;
    if (path.empty()) return nullptr;
    return std::make_shared<ResponseCache>(path);
  }
};

RunManifest start_manifest(const std::string& command, const Runtime& rt) {
  RunManifest manifest;
  manifest.command = command;
  manifest.config_digest = rt.config.config_digest;
  manifest.seed = rt.config.seed;
  manifest.started_at = iso8601_now();
  return manifest;
}

std::vector<ProfileAssignment> load_profiles(const std::string& path, ProfilerConfig* cfg_out) {
  std::vector<ProfileAssignment> assignments;
  for_each_jsonl(path, [&](const Json& j) {
    if (j.value("type", "") == "header") {
      if (cfg_out != nullptr) {
        cfg_out->tau = j.value("tau", 0.5);
        cfg_out->nan_strategy = nan_strategy_from_name(j.value("nan_strategy", "pair"));
        cfg_out->partial_weight = j.value("partial_weight", 0.51);
      }
      return;
    }
    assignments.push_back(profile_assignment_from_json(j));
  });
  return assignments;
}

void write_profiles(const std::vector<ProfileAssignment>& assignments, const ProfilerConfig& cfg,
                    const std::string& path) {
  std::string out;
  Json header;
  header["type"] = "header";
  header["tau"] = cfg.tau;
  header["nan_strategy"] = nan_strategy_name(cfg.nan_strategy);
  header["partial_weight"] = cfg.partial_weight;
  out += header.dump();
  out += '\n';
  for (const auto& a : assignments) {
    out += profile_assignment_to_json(a).dump();
    out += '\n';
  }
  write_file(path, out);
}

std::vector<std::pair<std::string, ProfileDistribution>> distributions_by_model(
    const std::vector<ProfileAssignment>& assignments) {
  std::map<std::string, std::vector<ProfileAssignment>> by_model;
  for (const auto& a : assignments) by_model[a.model_id].push_back(a);
  std::vector<std::pair<std::string, ProfileDistribution>> rows;
  for (const auto& [model_id, list] : by_model) {
    rows.emplace_back(model_id, profile_distribution(list));
  }
  return rows;
}

int cmd_build(const std::string& config_path, const std::string& cache_override,
              const std::string& out_dir) {
  Runtime rt(config_path, cache_override);
  if (rt.config.corpus_path.empty()) throw ConfigError("[corpus] path is required for build");
  if (rt.config.builder.provider_id.empty()) {
    throw ConfigError("[pipeline] model is required for build");
  }
  if (rt.config.search.provider_id.empty()) {
    throw ConfigError("[pipeline] search is required for build");
  }

  RunManifest manifest = start_manifest("build", rt);

  PipelineOptions options;
  options.corpus_path = rt.config.corpus_path;
  options.out_dir = out_dir;
  options.builder = rt.config.builder;
  options.search = rt.config.search;
  options.seed = rt.config.seed;
  options.min_summary_words = rt.config.min_summary_words;
  options.max_objects_per_doc = rt.config.max_objects_per_doc;
  options.target_facts = rt.config.target_facts;

  PipelineResult result = run_pipeline(options, rt.prompts, rt.gateway);

  std::cerr << "facts retained: " << result.benchmark.facts.size() << "\n";
  for (const auto& [stage, counter] : result.stage_counts) {
    long long total = counter.accepted + counter.rejected;
    double reject_pct = total > 0 ? 100.0 * static_cast<double>(counter.rejected) /
                                        static_cast<double>(total)
                                  : 0.0;
    std::fprintf(stderr, "  %-32s accepted %6lld  rejected %6lld  (%.1f%% rejected)\n",
                 stage.c_str(), counter.accepted, counter.rejected, reject_pct);
  }

  manifest.benchmark_digest = sha256_file_hex(result.benchmark_path);
  manifest.finished_at = iso8601_now();
  manifest.counts["facts"] = static_cast<long long>(result.benchmark.facts.size());
  write_manifest(manifest, (fs::path(out_dir) / "manifest.json").string());
  return 0;
}

int cmd_evaluate(const std::string& config_path, const std::string& cache_override,
                 const std::string& benchmark_path, const std::string& out_path, int n_samples,
                 std::uint64_t seed, bool seed_set) {
  Runtime rt(config_path, cache_override);
  BenchmarkFile bench = load_benchmark(benchmark_path);
  for (const auto& fact : bench.facts) {
    std::vector<TaskInstance> tasks;
    for (const auto* t : bench.tasks_for(fact.fact_id)) tasks.push_back(*t);
    ValidationReport report = validate_fact(fact, tasks);
    if (!report.ok()) {
      throw IntegrityError("benchmark fact " + fact.fact_id +
                           " fails validation: " + report.violations.front());
    }
  }

  RunManifest manifest = start_manifest("evaluate", rt);
  manifest.benchmark_digest = sha256_file_hex(benchmark_path);

  EvalPlan plan;
  plan.configs = rt.config.models;
  plan.n_samples = n_samples;
  plan.seed = seed_set ? seed : rt.config.seed;
  if (plan.configs.empty()) throw ConfigError("[models] section has no model configs");

  EvalRunStats stats =
      run_evaluation(bench, manifest.benchmark_digest, plan, rt.prompts, rt.gateway, out_path);
  std::cerr << "responses written: " << stats.written << " (skipped pre-existing: "
            << stats.skipped << ")\n";
  std::cerr << "backend calls: " << rt.gateway.stats().backend_calls
            << ", cache hits: " << rt.gateway.stats().cache_hits << "\n";

  manifest.finished_at = iso8601_now();
  // Totals only: live telemetry (calls, skips) varies across warm re-runs
  // and lives on stderr instead.
  manifest.counts["responses_total"] = stats.written + stats.skipped;
  write_manifest(manifest, out_path + ".manifest.json");
  return 0;
}

int cmd_grade(const std::string& config_path, const std::string& cache_override,
              const std::string& benchmark_path, const std::string& responses_path,
              const std::string& out_path, const std::string& grader_id) {
  Runtime rt(config_path, cache_override);
  ModelConfig grader = rt.config.grader;
  if (!grader_id.empty() && grader_id != grader.config_id) {
    grader = rt.config.config_by_id(grader_id);
  }
  if (grader.provider_id.empty()) {
    throw ConfigError("[grader] model (or --grader) is required for grade");
  }
  BenchmarkFile bench = load_benchmark(benchmark_path);

  RunManifest manifest = start_manifest("grade", rt);
  manifest.benchmark_digest = sha256_file_hex(benchmark_path);

  GradeLogStats stats =
      grade_response_log(bench, responses_path, rt.prompts, rt.gateway, grader, out_path);
  std::cerr << "grade records: " << stats.records << ", grading errors: " << stats.errors
            << "\n";
  if (stats.errors > 0) {
    std::cerr << "warning: " << stats.errors
              << " question(s) ungraded (autorater output unusable)\n";
  }

  manifest.finished_at = iso8601_now();
  manifest.counts["grade_records"] = stats.records;
  manifest.counts["grading_errors"] = stats.errors;
  write_manifest(manifest, out_path + ".manifest.json");
  return 0;
}

int cmd_profile(const std::string& config_path, const std::string& benchmark_path,
                const std::string& grades_path, const std::string& out_path, double tau,
                const std::string& nan_strategy, const std::string& tau_sweep) {
  RunConfig config = RunConfig::load(config_path);
  BenchmarkFile bench = load_benchmark(benchmark_path);
  std::vector<GradeRecord> grades = load_grade_records(grades_path);
  std::vector<ModelPair> pairs = config.model_pairs();
  std::vector<FactGrades> fact_grades = assemble_fact_grades(bench, grades, pairs);

  ProfilerConfig cfg = config.profiler;
  cfg.tau = tau;
  cfg.nan_strategy = nan_strategy_from_name(nan_strategy);

  std::vector<ProfileAssignment> assignments;
  assignments.reserve(fact_grades.size());
  for (const auto& fg : fact_grades) assignments.push_back(classify_fact(fg, cfg));
  write_profiles(assignments, cfg, out_path);

  auto rows = distributions_by_model(assignments);
  std::cout << render_profile_report(rows, ReportFormat::Table);

  if (!tau_sweep.empty()) {
    Json sweep = Json::array();
    std::size_t pos = 0;
    while (pos <= tau_sweep.size()) {
      std::size_t comma = tau_sweep.find(',', pos);
      std::string token = tau_sweep.substr(
          pos, comma == std::string::npos ? std::string::npos : comma - pos);
      pos = comma == std::string::npos ? tau_sweep.size() + 1 : comma + 1;
      if (trim(token).empty()) continue;
      ProfilerConfig sweep_cfg = cfg;
      sweep_cfg.tau = std::stod(trim(token));
      std::vector<ProfileAssignment> sweep_assignments;
      for (const auto& fg : fact_grades) {
        sweep_assignments.push_back(classify_fact(fg, sweep_cfg));
      }
      for (const auto& [model, dist] : distributions_by_model(sweep_assignments)) {
        Json j;
        j["tau"] = sweep_cfg.tau;
        j["model"] = model;
        j["encodes"] = dist.encodes_pct;
        j["knows"] = dist.knows_pct;
        j["knows_think"] = dist.knows_think_pct;
        j["encoding_failure"] = dist.profile_pct[0];
        j["recall_failure"] = dist.profile_pct[1];
        j["direct_recall"] = dist.profile_pct[2];
        j["recall_with_thinking"] = dist.profile_pct[3];
        j["inference_without_encoding"] = dist.profile_pct[4];
        sweep.push_back(std::move(j));
      }
    }
    write_file(out_path + ".tau_sweep.json", sweep.dump(2) + "\n");
  }
  return 0;
}

int cmd_analyze(const std::string& config_path, const std::string& benchmark_path,
                const std::string& grades_path, const std::string& profiles_path,
                const std::string& report_dir, double fraction, double fdr_q, int bootstrap_b) {
  RunConfig config = RunConfig::load(config_path);
  BenchmarkFile bench = load_benchmark(benchmark_path);
  std::vector<GradeRecord> grades = load_grade_records(grades_path);
  ProfilerConfig cfg = config.profiler;
  std::vector<ProfileAssignment> assignments = load_profiles(profiles_path, &cfg);
  std::vector<ModelPair> pairs = config.model_pairs();
  std::vector<FactGrades> fact_grades = assemble_fact_grades(bench, grades, pairs);

  fs::create_directories(report_dir);

  std::vector<std::pair<std::string, long long>> views;
  for (const auto& fact : bench.facts) views.emplace_back(fact.fact_id, fact.page_views);
  auto tiers = popularity_tiers(views, fraction);

  // Per logical model: recall/popularity/direction/thinking report.
  std::map<std::string, std::vector<ProfileAssignment>> assignments_by_model;
  for (const auto& a : assignments) assignments_by_model[a.model_id].push_back(a);
  std::map<std::string, std::vector<FactGrades>> grades_by_model;
  for (const auto& fg : fact_grades) grades_by_model[fg.model_id].push_back(fg);

  std::vector<RecallReport> recall_reports;
  for (const auto& [model_id, model_assignments] : assignments_by_model) {
    auto it = grades_by_model.find(model_id);
    if (it == grades_by_model.end()) {
      throw IntegrityError("analyze: profiles reference unknown model " + model_id);
    }
    recall_reports.push_back(recall_analysis(model_assignments, it->second, tiers, cfg));
  }
  write_file((fs::path(report_dir) / "recall_analysis.csv").string(),
             render_recall_report_csv(recall_reports));

  std::vector<PhrasingInput> phrasing_inputs = build_phrasing_inputs(fact_grades, cfg);
  std::vector<TestResult> phrasing_results = phrasing_tests(phrasing_inputs, fdr_q);
  write_file((fs::path(report_dir) / "phrasing_tests.csv").string(),
             render_phrasing_csv(phrasing_results));

  // Bootstrap n-sensitivity per config over the four single-question kinds.
  std::vector<std::pair<std::string, BootstrapResult>> bootstrap_rows;
  {
    std::map<std::string, std::map<TaskKind, std::vector<std::vector<GradeLabel>>>> label_sets;
    std::map<std::string, const TaskInstance*> tasks_by_id;
    for (const auto& task : bench.tasks) tasks_by_id[task.task_id] = &task;
    for (const auto& g : grades) {
      auto task_it = tasks_by_id.find(g.task_id);
      if (task_it == tasks_by_id.end() || g.labels.empty()) continue;
      TaskKind kind = task_it->second->kind;
      if (kind == TaskKind::Completion || kind == TaskKind::Contextual ||
          kind == TaskKind::Direct || kind == TaskKind::Reverse) {
        label_sets[g.model_config_id][kind].push_back(g.labels);
      }
    }
    for (const auto& [config_id, kinds] : label_sets) {
      for (const auto& [kind, labels] : kinds) {
        int max_n = 0;
        for (const auto& l : labels) {
          max_n = max_n == 0 ? static_cast<int>(l.size())
                             : std::min(max_n, static_cast<int>(l.size()));
        }
        for (int n : std::set<int>{2, 4, max_n}) {
          if (n < 1 || n > max_n) continue;
          BootstrapResult r = bootstrap_width(
              labels, n, bootstrap_b,
              derive_seed(config.seed, "bootstrap-" + task_kind_name(kind), fnv1a64(config_id)),
              cfg.tau);
          r.task_kind = task_kind_name(kind);
          bootstrap_rows.emplace_back(config_id, r);
        }
      }
    }
  }
  write_file((fs::path(report_dir) / "bootstrap_width.csv").string(),
             render_bootstrap_csv(bootstrap_rows));

  // Summary JSON glues the pieces together for machine consumption.
  Json summary;
  summary["fraction"] = fraction;
  summary["fdr_q"] = fdr_q;
  summary["bootstrap_B"] = bootstrap_b;
  summary["n_phrasing_tests"] = phrasing_results.size();
  int rejected = 0;
  for (const auto& r : phrasing_results) rejected += r.rejected ? 1 : 0;
  summary["n_phrasing_rejected"] = rejected;
  summary["models"] = Json::array();
  for (const auto& r : recall_reports) summary["models"].push_back(r.model_id);
  write_file((fs::path(report_dir) / "summary.json").string(), summary.dump(2) + "\n");

  std::cerr << "analysis written to " << report_dir << "\n";
  return 0;
}

int cmd_report(const std::string& profiles_path, const std::string& format,
               const std::string& out_path) {
  std::vector<ProfileAssignment> assignments = load_profiles(profiles_path, nullptr);
  if (assignments.empty()) {
    throw ArgumentError("report: no profile assignments in " + profiles_path +
                        "; run `profile` first");
  }
  std::string rendered =
      render_profile_report(distributions_by_model(assignments), report_format_from_name(format));
  if (out_path.empty()) {
    std::cout << rendered;
  } else {
    write_file(out_path, rendered);
  }
  return 0;
}

int cmd_agreement(const std::string& grades_a_path, const std::string& grades_b_path,
                  const std::string& out_path) {
  std::vector<GradeRecord> a = load_grade_records(grades_a_path);
  std::vector<GradeRecord> b = load_grade_records(grades_b_path);
  std::map<std::string, const GradeRecord*> b_by_key;
  for (const auto& g : b) b_by_key[g.task_id + "\x1f" + g.model_config_id] = &g;

  std::vector<GradeLabel> labels_a;
  std::vector<GradeLabel> labels_b;
  for (const auto& g : a) {
    auto it = b_by_key.find(g.task_id + "\x1f" + g.model_config_id);
    if (it == b_by_key.end()) continue;
    const GradeRecord& other = *it->second;
    if (g.labels.size() != other.labels.size()) {
      throw IntegrityError("agreement: label count mismatch for " + g.task_id);
    }
    labels_a.insert(labels_a.end(), g.labels.begin(), g.labels.end());
    labels_b.insert(labels_b.end(), other.labels.begin(), other.labels.end());
  }
  GraderComparison comparison = compare_graders(labels_a, labels_b);

  Json j;
  j["agreement"] = comparison.agreement;
  j["n_responses"] = labels_a.size();
  // Published cross-family agreement between two frontier graders, for
  // side-by-side annotation in reports.
  j["reference_cross_family_agreement"] = 0.982;
  Json matrix = Json::array();
  for (int row = 0; row < 4; ++row) {
    Json r = Json::array();
    for (int col = 0; col < 4; ++col) r.push_back(comparison.confusion[row][col]);
    matrix.push_back(std::move(r));
  }
  j["confusion"] = std::move(matrix);
  j["labels"] = {"CORRECT", "INCORRECT", "PARTIALLY", "OTHER"};

  std::printf("agreement: %.4f over %zu responses (cross-family reference: 0.982)\n",
              comparison.agreement, labels_a.size());
  for (int row = 0; row < 4; ++row) {
    std::printf("  %-10s", grade_label_name(static_cast<GradeLabel>(row)).c_str());
    for (int col = 0; col < 4; ++col) std::printf(" %6d", comparison.confusion[row][col]);
    std::printf("\n");
  }
  if (!out_path.empty()) write_file(out_path, j.dump(2) + "\n");
  return 0;
}

int cmd_flag_review(const std::string& benchmark_path, const std::string& grades_path,
                    const std::string& ensemble_csv, double tau, const std::string& out_path) {
  BenchmarkFile bench = load_benchmark(benchmark_path);
  std::vector<GradeRecord> grades = load_grade_records(grades_path);

  std::vector<std::string> ensemble;
  std::size_t pos = 0;
  while (pos <= ensemble_csv.size()) {
    std::size_t comma = ensemble_csv.find(',', pos);
    std::string token = trim(ensemble_csv.substr(
        pos, comma == std::string::npos ? std::string::npos : comma - pos));
    pos = comma == std::string::npos ? ensemble_csv.size() + 1 : comma + 1;
    if (!token.empty()) ensemble.push_back(token);
  }
  if (ensemble.empty()) throw ArgumentError("flag-review: empty ensemble");

  std::map<std::string, const GradeRecord*> by_key;
  std::set<std::string> config_ids;
  for (const auto& g : grades) {
    by_key[g.task_id + "\x1f" + g.model_config_id] = &g;
    config_ids.insert(g.model_config_id);
  }
  GradeTable table;
  for (const auto& fact : bench.facts) {
    for (const std::string& config : ensemble) {
      if (!config_ids.count(config)) {
        throw IntegrityError("flag-review: no grades for ensemble config " + config);
      }
      auto& row = table[fact.fact_id][config];
      for (TaskKind kind : all_task_kinds()) {
        auto it = by_key.find(make_task_id(fact.fact_id, kind) + "\x1f" + config);
        if (it == by_key.end()) {
          throw IntegrityError("flag-review: missing grade for " +
                               make_task_id(fact.fact_id, kind) + " under " + config);
        }
        row[static_cast<std::size_t>(kind)] = it->second->grade;
      }
    }
  }
  std::set<std::string> flagged = flag_ensemble_failures(table, ensemble, tau);
  std::string out;
  for (const auto& fact_id : flagged) {
    out += fact_id;
    out += '\n';
  }
  write_file(out_path, out);
  std::cerr << "flagged " << flagged.size() << " of " << bench.facts.size()
            << " facts for review\n";
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"knowledge-profile: benchmark construction, evaluation and profiling"};
  app.require_subcommand(1);

  std::string config_path;
  std::string cache_override;
  app.add_option("--config", config_path, "run configuration file");
  app.add_option("--cache", cache_override, "response cache path override");

  // build
  auto* build = app.add_subcommand("build", "run the benchmark construction pipeline");
  std::string build_out_dir;
  build->add_option("--out-dir", build_out_dir, "output directory")->required();

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "generate the response log");
  std::string eval_benchmark, eval_out;
  int eval_n_samples = 8;
  std::uint64_t eval_seed = 0;
  evaluate->add_option("--benchmark", eval_benchmark, "benchmark.jsonl")->required();
  evaluate->add_option("--out", eval_out, "responses.jsonl output")->required();
  evaluate->add_option("--n-samples", eval_n_samples, "samples per task (default 8)");
  auto* seed_opt = evaluate->add_option("--seed", eval_seed, "evaluation seed");

  // grade
  auto* grade = app.add_subcommand("grade", "grade a response log");
  std::string grade_benchmark, grade_responses, grade_out, grade_grader;
  grade->add_option("--benchmark", grade_benchmark, "benchmark.jsonl")->required();
  grade->add_option("--responses", grade_responses, "responses.jsonl")->required();
  grade->add_option("--out", grade_out, "grades.jsonl output")->required();
  grade->add_option("--grader", grade_grader, "grader config id (default from [grader])");

  // profile
  auto* profile = app.add_subcommand("profile", "classify facts into knowledge profiles");
  std::string profile_benchmark, profile_grades, profile_out, profile_strategy = "pair";
  std::string tau_sweep;
  double profile_tau = 0.5;
  profile->add_option("--benchmark", profile_benchmark, "benchmark.jsonl")->required();
  profile->add_option("--grades", profile_grades, "grades.jsonl")->required();
  profile->add_option("--out", profile_out, "profiles.jsonl output")->required();
  profile->add_option("--tau", profile_tau, "grade threshold (default 0.5)");
  profile->add_option("--nan-strategy", profile_strategy, "any | pair | partial");
  profile->add_option("--tau-sweep", tau_sweep, "comma-separated taus, one distribution each");

  // analyze
  auto* analyze = app.add_subcommand("analyze", "run the statistical analysis suite");
  std::string an_benchmark, an_grades, an_profiles, an_report_dir;
  double an_fraction = 0.2, an_q = 0.05;
  int an_bootstrap = 1000;
  analyze->add_option("--benchmark", an_benchmark, "benchmark.jsonl")->required();
  analyze->add_option("--grades", an_grades, "grades.jsonl")->required();
  analyze->add_option("--profiles", an_profiles, "profiles.jsonl")->required();
  analyze->add_option("--report-dir", an_report_dir, "output directory")->required();
  analyze->add_option("--fraction", an_fraction, "popularity tier fraction (default 0.2)");
  analyze->add_option("--fdr-q", an_q, "FDR level (default 0.05)");
  analyze->add_option("--bootstrap-B", an_bootstrap, "bootstrap resamples (default 1000)");

  // report
  auto* report = app.add_subcommand("report", "emit the profile distribution report");
  std::string report_profiles, report_format = "table", report_out;
  report->add_option("--profiles", report_profiles, "profiles.jsonl")->required();
  report->add_option("--format", report_format, "table | csv | json");
  report->add_option("--out", report_out, "output file (stdout when omitted)");

  // agreement
  auto* agreement = app.add_subcommand("agreement", "compare two grade logs");
  std::string agree_a, agree_b, agree_out;
  agreement->add_option("--grades-a", agree_a, "first grades.jsonl")->required();
  agreement->add_option("--grades-b", agree_b, "second grades.jsonl")->required();
  agreement->add_option("--out", agree_out, "JSON report output");

  // flag-review
  auto* flag = app.add_subcommand("flag-review", "flag facts the ensemble unanimously fails");
  std::string flag_benchmark, flag_grades, flag_ensemble, flag_out;
  double flag_tau = 0.5;
  flag->add_option("--benchmark", flag_benchmark, "benchmark.jsonl")->required();
  flag->add_option("--grades", flag_grades, "grades.jsonl")->required();
  flag->add_option("--ensemble", flag_ensemble, "comma-separated config ids")->required();
  flag->add_option("--out", flag_out, "flagged fact-id list output")->required();
  flag->add_option("--tau", flag_tau, "failure threshold (default 0.5)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    auto need_config = [&]() -> const std::string& {
      if (config_path.empty()) throw ConfigError("--config is required for this subcommand");
      return config_path;
    };
    if (build->parsed()) return cmd_build(need_config(), cache_override, build_out_dir);
    if (evaluate->parsed()) {
      return cmd_evaluate(need_config(), cache_override, eval_benchmark, eval_out, eval_n_samples,
                          eval_seed, seed_opt->count() > 0);
    }
    if (grade->parsed()) {
      return cmd_grade(need_config(), cache_override, grade_benchmark, grade_responses,
                       grade_out, grade_grader);
    }
    if (profile->parsed()) {
      return cmd_profile(need_config(), profile_benchmark, profile_grades, profile_out,
                         profile_tau, profile_strategy, tau_sweep);
    }
    if (analyze->parsed()) {
      return cmd_analyze(need_config(), an_benchmark, an_grades, an_profiles, an_report_dir,
                         an_fraction, an_q, an_bootstrap);
    }
    if (report->parsed()) return cmd_report(report_profiles, report_format, report_out);
    if (agreement->parsed()) return cmd_agreement(agree_a, agree_b, agree_out);
    if (flag->parsed()) {
      return cmd_flag_review(flag_benchmark, flag_grades, flag_ensemble, flag_tau, flag_out);
    }
    throw ConfigError("no subcommand");
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const TransportError& e) {
    std::cerr << "backend error: " << e.what() << "\n";
    return 4;
  } catch (const BackendError& e) {
    std::cerr << "backend error: " << e.what() << "\n";
    return 4;
  } catch (const IntegrityError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const ArgumentError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const ParseError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace kp

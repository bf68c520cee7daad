#include "kp/profiler.hpp"

#include <algorithm>

#include "kp/errors.hpp"

namespace kp {

namespace {

const std::array<std::string, 7> kOutcomeNames = {
    "encoding_failure",     "recall_failure",
    "direct_recall",        "recall_with_thinking",
    "inference_without_encoding", "excluded_direct_inference",
    "excluded_non_gradable"};

std::optional<bool> json_opt_bool(const Json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<bool>();
}

}  // namespace

std::string nan_strategy_name(NanStrategy s) {
  switch (s) {
    case NanStrategy::ExcludeAnyNaN: return "any";
    case NanStrategy::ExcludePairNaN: return "pair";
    case NanStrategy::PartialWeight: return "partial";
  }
  return "pair";
}

NanStrategy nan_strategy_from_name(const std::string& name) {
  if (name == "any") return NanStrategy::ExcludeAnyNaN;
  if (name == "pair") return NanStrategy::ExcludePairNaN;
  if (name == "partial") return NanStrategy::PartialWeight;
  throw ConfigError("unknown nan strategy: " + name);
}

std::optional<double> strategy_grade(const QuestionCounts& counts, const ProfilerConfig& cfg) {
  if (cfg.nan_strategy == NanStrategy::PartialWeight) {
    int denom = counts.c + counts.i + counts.p;
    if (denom == 0) return std::nullopt;
    return (counts.c + cfg.partial_weight * counts.p) / denom;
  }
  int denom = counts.c + counts.i;
  if (denom == 0) return std::nullopt;
  return static_cast<double>(counts.c) / denom;
}

std::optional<bool> encodes(const std::array<std::optional<double>, 2>& grades,
                            const ProfilerConfig& cfg) {
  if (cfg.nan_strategy == NanStrategy::ExcludeAnyNaN) {
    if (!grades[0] || !grades[1]) return std::nullopt;
  } else if (!grades[0] && !grades[1]) {
    return std::nullopt;  // the entire pair is non-gradable
  }
  for (const auto& g : grades) {
    if (g && *g > cfg.tau) return true;
  }
  return false;
}

std::optional<bool> knows(const std::array<std::optional<double>, 4>& grades,
                          const ProfilerConfig& cfg) {
  if (cfg.nan_strategy == NanStrategy::ExcludeAnyNaN) {
    for (const auto& g : grades) {
      if (!g) return std::nullopt;
    }
  } else {
    // Pairs: [0] direct / [1] direct_natural, [2] reverse / [3] reverse_natural.
    if (!grades[0] && !grades[1]) return std::nullopt;
    if (!grades[2] && !grades[3]) return std::nullopt;
  }
  for (const auto& g : grades) {
    if (g && !(*g > cfg.tau)) return false;
  }
  return true;
}

std::string profile_outcome_name(ProfileOutcome outcome) {
  return kOutcomeNames[static_cast<int>(outcome)];
}

ProfileOutcome profile_outcome_from_name(const std::string& name) {
  for (int i = 0; i < static_cast<int>(kOutcomeNames.size()); ++i) {
    if (kOutcomeNames[static_cast<std::size_t>(i)] == name) {
      return static_cast<ProfileOutcome>(i);
    }
  }
  throw ArgumentError("unknown profile outcome: " + name);
}

bool is_excluded(ProfileOutcome outcome) {
  return outcome == ProfileOutcome::ExcludedDirectInference ||
         outcome == ProfileOutcome::ExcludedNonGradable;
}

ProfileAssignment classify_fact(const FactGrades& fg, const ProfilerConfig& cfg) {
  ProfileAssignment out;
  out.fact_id = fg.fact_id;
  out.model_id = fg.model_id;

  auto grade2 = [&](const std::array<QuestionCounts, 2>& counts) {
    std::array<std::optional<double>, 2> grades;
    for (std::size_t i = 0; i < 2; ++i) grades[i] = strategy_grade(counts[i], cfg);
    return grades;
  };
  auto grade4 = [&](const std::array<QuestionCounts, 4>& counts) {
    std::array<std::optional<double>, 4> grades;
    for (std::size_t i = 0; i < 4; ++i) grades[i] = strategy_grade(counts[i], cfg);
    return grades;
  };

  out.encodes = encodes(grade2(fg.encoding), cfg);
  out.knows = knows(grade4(fg.knowledge), cfg);
  out.knows_thinking = knows(grade4(fg.knowledge_thinking), cfg);

  if (!out.encodes || !out.knows || !out.knows_thinking) {
    out.outcome = ProfileOutcome::ExcludedNonGradable;
    return out;
  }
  const bool e = *out.encodes;
  const bool k = *out.knows;
  const bool kt = *out.knows_thinking;
  if (!e && k) {
    out.outcome = ProfileOutcome::ExcludedDirectInference;
  } else if (e && k) {
    out.outcome = ProfileOutcome::DirectRecall;
  } else if (e && kt) {
    out.outcome = ProfileOutcome::RecallWithThinking;
  } else if (e) {
    out.outcome = ProfileOutcome::RecallFailure;
  } else if (kt) {
    out.outcome = ProfileOutcome::InferenceWithoutEncoding;
  } else {
    out.outcome = ProfileOutcome::EncodingFailure;
  }
  return out;
}

ProfileDistribution profile_distribution(const std::vector<ProfileAssignment>& assignments) {
  if (assignments.empty()) throw ArgumentError("profile_distribution: empty input");
  ProfileDistribution dist;
  dist.n_total = static_cast<int>(assignments.size());

  int gradable = 0;           // excludes only non-gradable facts
  int encodes_count = 0;      // over the gradable base
  int knows_count = 0;        // known without thinking, Direct Inference included
  int knows_think_count = 0;  // known with or without thinking
  for (const auto& a : assignments) {
    if (a.outcome == ProfileOutcome::ExcludedNonGradable) {
      ++dist.n_excluded_non_gradable;
      continue;
    }
    ++gradable;
    if (a.encodes && *a.encodes) ++encodes_count;
    if (a.knows && *a.knows) ++knows_count;
    bool known_any = (a.knows && *a.knows) || (a.knows_thinking && *a.knows_thinking);
    if (known_any) ++knows_think_count;
    if (a.outcome == ProfileOutcome::ExcludedDirectInference) {
      ++dist.n_excluded_direct_inference;
    } else {
      dist.profile_counts[static_cast<int>(a.outcome)] += 1;
    }
  }

  int profile_base = gradable - dist.n_excluded_direct_inference;
  if (gradable > 0) {
    dist.encodes_pct = 100.0 * encodes_count / gradable;
    dist.knows_pct = 100.0 * knows_count / gradable;
    dist.knows_think_pct = 100.0 * knows_think_count / gradable;
  }
  if (profile_base > 0) {
    for (int i = 0; i < 5; ++i) {
      dist.profile_pct[i] = 100.0 * dist.profile_counts[i] / profile_base;
    }
    dist.potential_knowledge_pct =
        dist.profile_pct[static_cast<int>(ProfileOutcome::DirectRecall)] +
        dist.profile_pct[static_cast<int>(ProfileOutcome::RecallWithThinking)] +
        dist.profile_pct[static_cast<int>(ProfileOutcome::InferenceWithoutEncoding)];
  }
  dist.excluded_pct =
      100.0 * (dist.n_excluded_non_gradable + dist.n_excluded_direct_inference) / dist.n_total;
  dist.other_or_partially_pct = 100.0 * dist.n_excluded_non_gradable / dist.n_total;
  dist.direct_inference_pct = 100.0 * dist.n_excluded_direct_inference / dist.n_total;
  return dist;
}

std::vector<FactGrades> assemble_fact_grades(const BenchmarkFile& bench,
                                             const std::vector<GradeRecord>& grades,
                                             const std::vector<ModelPair>& pairs) {
  std::map<std::string, const GradeRecord*> by_key;
  for (const auto& g : grades) {
    by_key[g.task_id + "\x1f" + g.model_config_id] = &g;
  }
  auto counts_for = [&](const std::string& fact_id, TaskKind kind,
                        const std::string& config_id) -> QuestionCounts {
    auto it = by_key.find(make_task_id(fact_id, kind) + "\x1f" + config_id);
    if (it == by_key.end()) {
      throw IntegrityError("missing grade record for " + make_task_id(fact_id, kind) + " under " +
                           config_id);
    }
    const GradeRecord& g = *it->second;
    return QuestionCounts{g.c, g.i, g.p, g.o};
  };

  static const std::array<TaskKind, 4> kKnowledgeKinds = {
      TaskKind::Direct, TaskKind::DirectNatural, TaskKind::Reverse, TaskKind::ReverseNatural};
  static const std::array<TaskKind, 4> kMcKinds = {
      TaskKind::McDirect, TaskKind::McDirectNatural, TaskKind::McReverse,
      TaskKind::McReverseNatural};

  std::vector<FactGrades> out;
  for (const auto& pair : pairs) {
    for (const auto& fact : bench.facts) {
      FactGrades fg;
      fg.fact_id = fact.fact_id;
      fg.model_id = pair.model_id;
      fg.encoding[0] = counts_for(fact.fact_id, TaskKind::Completion, pair.config_no_think);
      fg.encoding[1] = counts_for(fact.fact_id, TaskKind::Contextual, pair.config_no_think);
      for (std::size_t i = 0; i < 4; ++i) {
        fg.knowledge[i] = counts_for(fact.fact_id, kKnowledgeKinds[i], pair.config_no_think);
        fg.knowledge_thinking[i] =
            counts_for(fact.fact_id, kKnowledgeKinds[i], pair.config_think);
      }
      bool has_mc = true;
      for (TaskKind kind : kMcKinds) {
        if (!by_key.count(make_task_id(fact.fact_id, kind) + "\x1f" + pair.config_no_think) ||
            !by_key.count(make_task_id(fact.fact_id, kind) + "\x1f" + pair.config_think)) {
          has_mc = false;
        }
      }
      if (has_mc) {
        std::array<QuestionCounts, 4> mc{};
        std::array<QuestionCounts, 4> mc_think{};
        for (std::size_t i = 0; i < 4; ++i) {
          mc[i] = counts_for(fact.fact_id, kMcKinds[i], pair.config_no_think);
          mc_think[i] = counts_for(fact.fact_id, kMcKinds[i], pair.config_think);
        }
        fg.mc = mc;
        fg.mc_thinking = mc_think;
      }
      out.push_back(std::move(fg));
    }
  }
  return out;
}

Json profile_assignment_to_json(const ProfileAssignment& a) {
  Json j;
  j["fact_id"] = a.fact_id;
  j["model_id"] = a.model_id;
  j["outcome"] = profile_outcome_name(a.outcome);
  j["encodes"] = a.encodes ? Json(*a.encodes) : Json(nullptr);
  j["knows"] = a.knows ? Json(*a.knows) : Json(nullptr);
  j["knows_thinking"] = a.knows_thinking ? Json(*a.knows_thinking) : Json(nullptr);
  return j;
}

ProfileAssignment profile_assignment_from_json(const Json& j) {
  ProfileAssignment a;
  a.fact_id = j.at("fact_id").get<std::string>();
  a.model_id = j.at("model_id").get<std::string>();
  a.outcome = profile_outcome_from_name(j.at("outcome").get<std::string>());
  a.encodes = json_opt_bool(j, "encodes");
  a.knows = json_opt_bool(j, "knows");
  a.knows_thinking = json_opt_bool(j, "knows_thinking");
  return a;
}

}  // namespace kp

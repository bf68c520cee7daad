#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "kp/benchmark.hpp"
#include "kp/grading.hpp"

namespace kp {

enum class NanStrategy { ExcludeAnyNaN, ExcludePairNaN, PartialWeight };

std::string nan_strategy_name(NanStrategy s);
NanStrategy nan_strategy_from_name(const std::string& name);

struct ProfilerConfig {
  double tau = 0.5;
  NanStrategy nan_strategy = NanStrategy::ExcludePairNaN;
  double partial_weight = 0.51;
};

// Per-question label tallies; grades are recomputed per NaN strategy.
struct QuestionCounts {
  int c = 0;
  int i = 0;
  int p = 0;
  int o = 0;

  int total() const { return c + i + p + o; }
};

// c/(c+i), or (c + w*p)/(c+i+p) under PartialWeight; nullopt when the
// denominator is zero.
std::optional<double> strategy_grade(const QuestionCounts& counts, const ProfilerConfig& cfg);

// Grades feeding one (fact, model) classification. Encoding is always
// measured without thinking, so encoding tasks carry no thinking variant.
struct FactGrades {
  std::string fact_id;
  std::string model_id;
  // Encoding kinds, no thinking: [completion, contextual].
  std::array<QuestionCounts, 2> encoding{};
  // Knowledge kinds, no thinking: [direct, direct_natural, reverse, reverse_natural].
  std::array<QuestionCounts, 4> knowledge{};
  // Same four kinds, thinking-mode runs.
  std::array<QuestionCounts, 4> knowledge_thinking{};
  // Optional MC grades (same kind order as knowledge), per mode.
  std::optional<std::array<QuestionCounts, 4>> mc;
  std::optional<std::array<QuestionCounts, 4>> mc_thinking;
};

// Existential over the two encoding grades; nullopt when the strategy rules
// the pair non-gradable.
std::optional<bool> encodes(const std::array<std::optional<double>, 2>& grades,
                            const ProfilerConfig& cfg);

// Universal over the four knowledge grades; pairs {direct, direct_natural}
// and {reverse, reverse_natural} drive non-gradability under the pair rule.
std::optional<bool> knows(const std::array<std::optional<double>, 4>& grades,
                          const ProfilerConfig& cfg);

enum class ProfileOutcome {
  EncodingFailure,
  RecallFailure,
  DirectRecall,
  RecallWithThinking,
  InferenceWithoutEncoding,
  ExcludedDirectInference,
  ExcludedNonGradable,
};

std::string profile_outcome_name(ProfileOutcome outcome);
ProfileOutcome profile_outcome_from_name(const std::string& name);
bool is_excluded(ProfileOutcome outcome);

struct ProfileAssignment {
  std::string fact_id;
  std::string model_id;
  ProfileOutcome outcome = ProfileOutcome::ExcludedNonGradable;
  std::optional<bool> encodes;
  std::optional<bool> knows;
  std::optional<bool> knows_thinking;
};

ProfileAssignment classify_fact(const FactGrades& fg, const ProfilerConfig& cfg);

struct ProfileDistribution {
  int n_total = 0;
  int n_excluded_non_gradable = 0;
  int n_excluded_direct_inference = 0;
  int profile_counts[5] = {0, 0, 0, 0, 0};  // indexed by ProfileOutcome 0..4

  // Over facts that are not excluded for non-gradability (Direct Inference
  // stays in this base and counts as known).
  double encodes_pct = 0.0;
  double knows_think_pct = 0.0;  // known with or without thinking
  double knows_pct = 0.0;        // known without thinking

  // Five profile percentages over the non-excluded base; sum to 100.
  double profile_pct[5] = {0, 0, 0, 0, 0};
  double potential_knowledge_pct = 0.0;

  // Exclusion shares over all assignments.
  double excluded_pct = 0.0;
  double other_or_partially_pct = 0.0;
  double direct_inference_pct = 0.0;
};

ProfileDistribution profile_distribution(const std::vector<ProfileAssignment>& assignments);

// Groups grade records into FactGrades per (fact, logical model). The model
// pair maps a logical model to its no-thinking and thinking run configs.
struct ModelPair {
  std::string model_id;
  std::string config_no_think;
  std::string config_think;
};

std::vector<FactGrades> assemble_fact_grades(const BenchmarkFile& bench,
                                             const std::vector<GradeRecord>& grades,
                                             const std::vector<ModelPair>& pairs);

Json profile_assignment_to_json(const ProfileAssignment& a);
ProfileAssignment profile_assignment_from_json(const Json& j);

}  // namespace kp

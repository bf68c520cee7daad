#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "kp/grading.hpp"
#include "kp/profiler.hpp"

namespace kp {

enum class TierLabel { Bottom, Middle, Top };

std::string tier_label_name(TierLabel tier);

// Bottom/top fraction of facts by page views; ties broken by fact_id so the
// split is deterministic.
std::map<std::string, TierLabel> popularity_tiers(
    const std::vector<std::pair<std::string, long long>>& facts, double fraction);

// Numerator/denominator kept alongside the rate; empty strata stay undefined
// rather than reading as zero.
struct RateCell {
  int num = 0;
  int den = 0;
  std::optional<double> rate;

  static RateCell of(int num, int den);
};

struct DirectionRates {
  RateCell generation_direct;
  RateCell generation_reverse;
  RateCell verification_direct;
  RateCell verification_reverse;
};

struct ErrorDecomposition {
  RateCell only_direct;
  RateCell only_reverse;
  RateCell both;
};

// Per-model report over non-excluded facts mirroring the popularity,
// direction, thinking-recovery and error-attribution quantities.
struct RecallReport {
  std::string model_id;

  RateCell encoding_rate_by_tier[3];
  RateCell recall_given_encoded_by_tier[3];       // known without thinking
  RateCell recall_think_given_encoded_by_tier[3]; // known with thinking
  std::optional<double> tier_gap;        // top - bottom, no thinking
  std::optional<double> tier_gap_think;  // top - bottom, with thinking

  DirectionRates direction;              // recall given encoded, no thinking
  DirectionRates direction_think;
  std::optional<double> direction_gap_generation;        // direct - reverse
  std::optional<double> direction_gap_generation_think;
  std::optional<double> direction_gap_verification;

  RateCell recovered_given_encoded;      // not known -> known with thinking
  RateCell recovered_given_not_encoded;

  ErrorDecomposition decomposition_all;      // over all not-known facts
  ErrorDecomposition decomposition_encoded;  // restricted to encoded facts
};

RecallReport recall_analysis(const std::vector<ProfileAssignment>& assignments,
                             const std::vector<FactGrades>& fact_grades,
                             const std::map<std::string, TierLabel>& tiers,
                             const ProfilerConfig& cfg);

// Benjamini-Yekutieli step-up: reject the k* smallest p-values where
// k* = max{k : p_(k) <= k*q/(m*c(m))} with c(m) the harmonic sum. Returns
// indices into the input list.
std::vector<std::size_t> by_fdr(const std::vector<double>& p_values, double q);

// Exact two-sided binomial test on discordant pair counts (McNemar form).
double mcnemar_exact_p(int b, int c);

struct TestResult {
  std::string pair_id;
  double p_value = 1.0;
  bool rejected = false;
  int discordant_b = 0;
  int discordant_c = 0;
};

struct PhrasingInput {
  std::string pair_id;  // e.g. "gpt-x/think/direct"
  std::vector<bool> verbatim_success;
  std::vector<bool> natural_success;
};

// One paired exact test per input, then BY-FDR across all of them.
std::vector<TestResult> phrasing_tests(const std::vector<PhrasingInput>& inputs, double q);

// The four phrasing pairs tested per (model, thinking) cell.
struct PhrasingPairKinds {
  std::string name;
  TaskKind verbatim;
  TaskKind natural;
};
const std::vector<PhrasingPairKinds>& phrasing_pairs();

// Builds the standard (model x mode x pair) inputs from fact grades. Facts
// with an undefined grade on either side of a pair are dropped from that
// test's pairing.
std::vector<PhrasingInput> build_phrasing_inputs(const std::vector<FactGrades>& fact_grades,
                                                 const ProfilerConfig& cfg);

struct BootstrapResult {
  std::string task_kind;
  int n = 0;
  int resamples = 0;
  double width = 0.0;  // 95th minus 5th percentile of the resampled statistic
};

// Draws n_sub labels per question with replacement B times and recomputes
// the fraction of questions with grade > tau; width is the 95th minus 5th
// nearest-rank percentile of the B statistics.
//
// Draw discipline (stable for oracle re-derivation): resample b has base
// seed derive_seed(seed, "bootstrap", b); each question draws from its
// sorted label multiset with an engine seeded by
// splitmix64(splitmix64(base ^ multiset_hash) + occurrence_index), where
// occurrence_index counts duplicate multisets. The width is therefore
// exactly invariant under permutation of questions and of labels within a
// question.
BootstrapResult bootstrap_width(const std::vector<std::vector<GradeLabel>>& labels, int n_sub,
                                int resamples, std::uint64_t seed, double tau);

// Canonical multiset hash used by the bootstrap draw discipline.
std::uint64_t label_multiset_hash(const std::vector<GradeLabel>& labels);

// Nearest-rank percentile of a sample (P in (0,100]).
double nearest_rank_percentile(std::vector<double> values, double percentile);

}  // namespace kp

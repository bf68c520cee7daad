#include "kp/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "kp/errors.hpp"
#include "kp/rng.hpp"

namespace kp {

namespace {

bool pass(const std::optional<double>& grade, double tau) { return grade && *grade > tau; }

std::optional<double> gap(const RateCell& a, const RateCell& b) {
  if (!a.rate || !b.rate) return std::nullopt;
  return *a.rate - *b.rate;
}

}  // namespace

std::string tier_label_name(TierLabel tier) {
  switch (tier) {
    case TierLabel::Bottom: return "bottom";
    case TierLabel::Middle: return "middle";
    case TierLabel::Top: return "top";
  }
  return "middle";
}

std::map<std::string, TierLabel> popularity_tiers(
    const std::vector<std::pair<std::string, long long>>& facts, double fraction) {
  if (facts.empty()) throw ArgumentError("popularity_tiers: empty input");
  if (!(fraction > 0.0) || fraction > 0.5) {
    throw ArgumentError("popularity_tiers: fraction must be in (0, 0.5]");
  }
  std::vector<std::pair<std::string, long long>> sorted = facts;
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second < b.second;
    return a.first < b.first;
  });
  const std::size_t k =
      static_cast<std::size_t>(std::floor(fraction * static_cast<double>(sorted.size())));
  std::map<std::string, TierLabel> out;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    TierLabel tier = TierLabel::Middle;
    if (i < k) tier = TierLabel::Bottom;
    if (i >= sorted.size() - k) tier = TierLabel::Top;
    out[sorted[i].first] = tier;
  }
  return out;
}

RateCell RateCell::of(int num, int den) {
  RateCell cell;
  cell.num = num;
  cell.den = den;
  if (den > 0) cell.rate = static_cast<double>(num) / den;
  return cell;
}

RecallReport recall_analysis(const std::vector<ProfileAssignment>& assignments,
                             const std::vector<FactGrades>& fact_grades,
                             const std::map<std::string, TierLabel>& tiers,
                             const ProfilerConfig& cfg) {
  if (assignments.empty()) throw ArgumentError("recall_analysis: empty assignments");

  std::map<std::string, const FactGrades*> grades_by_fact;
  std::string model_id;
  for (const auto& fg : fact_grades) {
    grades_by_fact[fg.fact_id] = &fg;
    model_id = fg.model_id;
  }

  struct FactView {
    bool encoded = false;
    bool known = false;
    bool known_think = false;
    TierLabel tier = TierLabel::Middle;
    bool gen_direct = false;  // both direct-phrasing questions pass
    bool gen_reverse = false;
    bool gen_direct_think = false;
    bool gen_reverse_think = false;
    std::optional<bool> ver_direct;
    std::optional<bool> ver_reverse;
  };

  std::vector<FactView> views;
  for (const auto& a : assignments) {
    if (is_excluded(a.outcome)) continue;  // excluded facts contribute to no rate
    auto it = grades_by_fact.find(a.fact_id);
    if (it == grades_by_fact.end()) {
      throw IntegrityError("recall_analysis: no grades for fact " + a.fact_id);
    }
    const FactGrades& fg = *it->second;
    FactView view;
    view.encoded = a.encodes.value_or(false);
    view.known = a.knows.value_or(false);
    view.known_think = a.knows_thinking.value_or(false);
    auto tier_it = tiers.find(a.fact_id);
    if (tier_it != tiers.end()) view.tier = tier_it->second;

    auto both_pass = [&](const std::array<QuestionCounts, 4>& counts, int first, int second) {
      return pass(strategy_grade(counts[static_cast<std::size_t>(first)], cfg), cfg.tau) &&
             pass(strategy_grade(counts[static_cast<std::size_t>(second)], cfg), cfg.tau);
    };
    view.gen_direct = both_pass(fg.knowledge, 0, 1);
    view.gen_reverse = both_pass(fg.knowledge, 2, 3);
    view.gen_direct_think = both_pass(fg.knowledge_thinking, 0, 1);
    view.gen_reverse_think = both_pass(fg.knowledge_thinking, 2, 3);
    if (fg.mc) {
      view.ver_direct = both_pass(*fg.mc, 0, 1);
      view.ver_reverse = both_pass(*fg.mc, 2, 3);
    }
    views.push_back(view);
  }

  RecallReport report;
  report.model_id = model_id;

  for (int t = 0; t < 3; ++t) {
    TierLabel tier = static_cast<TierLabel>(t);
    int in_tier = 0;
    int encoded = 0;
    int known_given_encoded = 0;
    int known_think_given_encoded = 0;
    for (const auto& v : views) {
      if (v.tier != tier) continue;
      ++in_tier;
      if (!v.encoded) continue;
      ++encoded;
      if (v.known) ++known_given_encoded;
      if (v.known || v.known_think) ++known_think_given_encoded;
    }
    report.encoding_rate_by_tier[t] = RateCell::of(encoded, in_tier);
    report.recall_given_encoded_by_tier[t] = RateCell::of(known_given_encoded, encoded);
    report.recall_think_given_encoded_by_tier[t] =
        RateCell::of(known_think_given_encoded, encoded);
  }
  report.tier_gap = gap(report.recall_given_encoded_by_tier[2],
                        report.recall_given_encoded_by_tier[0]);
  report.tier_gap_think = gap(report.recall_think_given_encoded_by_tier[2],
                              report.recall_think_given_encoded_by_tier[0]);

  {
    int encoded = 0;
    int gd = 0, gr = 0, gdt = 0, grt = 0;
    int ver_base = 0, vd = 0, vr = 0;
    for (const auto& v : views) {
      if (!v.encoded) continue;
      ++encoded;
      if (v.gen_direct) ++gd;
      if (v.gen_reverse) ++gr;
      if (v.gen_direct || v.gen_direct_think) ++gdt;
      if (v.gen_reverse || v.gen_reverse_think) ++grt;
      if (v.ver_direct.has_value()) {
        ++ver_base;
        if (*v.ver_direct) ++vd;
        if (*v.ver_reverse) ++vr;
      }
    }
    report.direction.generation_direct = RateCell::of(gd, encoded);
    report.direction.generation_reverse = RateCell::of(gr, encoded);
    report.direction.verification_direct = RateCell::of(vd, ver_base);
    report.direction.verification_reverse = RateCell::of(vr, ver_base);
    report.direction_think.generation_direct = RateCell::of(gdt, encoded);
    report.direction_think.generation_reverse = RateCell::of(grt, encoded);
    report.direction_gap_generation =
        gap(report.direction.generation_direct, report.direction.generation_reverse);
    report.direction_gap_generation_think =
        gap(report.direction_think.generation_direct, report.direction_think.generation_reverse);
    report.direction_gap_verification =
        gap(report.direction.verification_direct, report.direction.verification_reverse);
  }

  {
    int not_known_encoded = 0, recovered_encoded = 0;
    int not_known_not_encoded = 0, recovered_not_encoded = 0;
    for (const auto& v : views) {
      if (v.known) continue;
      if (v.encoded) {
        ++not_known_encoded;
        if (v.known_think) ++recovered_encoded;
      } else {
        ++not_known_not_encoded;
        if (v.known_think) ++recovered_not_encoded;
      }
    }
    report.recovered_given_encoded = RateCell::of(recovered_encoded, not_known_encoded);
    report.recovered_given_not_encoded =
        RateCell::of(recovered_not_encoded, not_known_not_encoded);
  }

  auto decompose = [&](bool encoded_only) {
    ErrorDecomposition decomp;
    int only_direct = 0, only_reverse = 0, both = 0, base = 0;
    for (const auto& v : views) {
      if (v.known) continue;
      if (encoded_only && !v.encoded) continue;
      ++base;
      const bool fails_direct = !v.gen_direct;
      const bool fails_reverse = !v.gen_reverse;
      if (fails_direct && fails_reverse) {
        ++both;
      } else if (fails_direct) {
        ++only_direct;
      } else {
        ++only_reverse;
      }
    }
    decomp.only_direct = RateCell::of(only_direct, base);
    decomp.only_reverse = RateCell::of(only_reverse, base);
    decomp.both = RateCell::of(both, base);
    return decomp;
  };
  report.decomposition_all = decompose(false);
  report.decomposition_encoded = decompose(true);
  return report;
}

std::vector<std::size_t> by_fdr(const std::vector<double>& p_values, double q) {
  if (!(q > 0.0) || !(q < 1.0)) throw ArgumentError("by_fdr: q must be in (0,1)");
  for (double p : p_values) {
    if (!(p >= 0.0) || !(p <= 1.0)) throw ArgumentError("by_fdr: p-values must be in [0,1]");
  }
  if (p_values.empty()) return {};

  const std::size_t m = p_values.size();
  double harmonic = 0.0;
  for (std::size_t j = 1; j <= m; ++j) harmonic += 1.0 / static_cast<double>(j);

  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return p_values[a] < p_values[b]; });

  std::size_t k_star = 0;  // 1-based; 0 means nothing rejected
  for (std::size_t k = 1; k <= m; ++k) {
    double threshold = static_cast<double>(k) * q / (static_cast<double>(m) * harmonic);
    if (p_values[order[k - 1]] <= threshold) k_star = k;
  }
  if (k_star == 0) return {};
  // Step-up: every hypothesis at or below the critical p-value is rejected.
  const double critical = p_values[order[k_star - 1]];
  std::vector<std::size_t> rejected;
  for (std::size_t i = 0; i < m; ++i) {
    if (p_values[i] <= critical) rejected.push_back(i);
  }
  return rejected;
}

double mcnemar_exact_p(int b, int c) {
  if (b < 0 || c < 0) throw ArgumentError("mcnemar_exact_p: negative counts");
  const int n = b + c;
  if (n == 0) return 1.0;
  const int k = std::min(b, c);
  // One tail of Binomial(n, 1/2) via log binomial coefficients.
  double tail = 0.0;
  for (int j = 0; j <= k; ++j) {
    double log_choose = std::lgamma(n + 1.0) - std::lgamma(j + 1.0) - std::lgamma(n - j + 1.0);
    tail += std::exp(log_choose - n * std::log(2.0));
  }
  return std::min(1.0, 2.0 * tail);
}

std::vector<TestResult> phrasing_tests(const std::vector<PhrasingInput>& inputs, double q) {
  std::vector<TestResult> results;
  std::vector<double> p_values;
  for (const auto& input : inputs) {
    if (input.verbatim_success.size() != input.natural_success.size()) {
      throw ArgumentError("phrasing_tests: unpaired vectors for " + input.pair_id);
    }
    TestResult result;
    result.pair_id = input.pair_id;
    for (std::size_t i = 0; i < input.verbatim_success.size(); ++i) {
      if (input.verbatim_success[i] && !input.natural_success[i]) ++result.discordant_b;
      if (!input.verbatim_success[i] && input.natural_success[i]) ++result.discordant_c;
    }
    result.p_value = mcnemar_exact_p(result.discordant_b, result.discordant_c);
    p_values.push_back(result.p_value);
    results.push_back(std::move(result));
  }
  for (std::size_t idx : by_fdr(p_values, q)) results[idx].rejected = true;
  return results;
}

const std::vector<PhrasingPairKinds>& phrasing_pairs() {
  static const std::vector<PhrasingPairKinds> pairs = {
      {"direct", TaskKind::Direct, TaskKind::DirectNatural},
      {"reverse", TaskKind::Reverse, TaskKind::ReverseNatural},
      {"mc_direct", TaskKind::McDirect, TaskKind::McDirectNatural},
      {"mc_reverse", TaskKind::McReverse, TaskKind::McReverseNatural},
  };
  return pairs;
}

std::vector<PhrasingInput> build_phrasing_inputs(const std::vector<FactGrades>& fact_grades,
                                                 const ProfilerConfig& cfg) {
  // kind -> index into the knowledge/mc arrays.
  auto slot = [](TaskKind kind) -> std::pair<bool, std::size_t> {
    switch (kind) {
      case TaskKind::Direct: return {false, 0};
      case TaskKind::DirectNatural: return {false, 1};
      case TaskKind::Reverse: return {false, 2};
      case TaskKind::ReverseNatural: return {false, 3};
      case TaskKind::McDirect: return {true, 0};
      case TaskKind::McDirectNatural: return {true, 1};
      case TaskKind::McReverse: return {true, 2};
      case TaskKind::McReverseNatural: return {true, 3};
      default: throw ArgumentError("not a phrasing kind");
    }
  };

  std::map<std::string, std::vector<const FactGrades*>> by_model;
  for (const auto& fg : fact_grades) by_model[fg.model_id].push_back(&fg);

  std::vector<PhrasingInput> inputs;
  for (const auto& [model_id, facts] : by_model) {
    for (bool thinking : {false, true}) {
      for (const auto& pair : phrasing_pairs()) {
        PhrasingInput input;
        input.pair_id = model_id + "/" + (thinking ? "think" : "no_think") + "/" + pair.name;
        for (const FactGrades* fg : facts) {
          auto [v_mc, v_idx] = slot(pair.verbatim);
          auto [n_mc, n_idx] = slot(pair.natural);
          std::optional<double> g_verbatim;
          std::optional<double> g_natural;
          if (v_mc) {
            const auto& mc = thinking ? fg->mc_thinking : fg->mc;
            if (!mc) continue;
            g_verbatim = strategy_grade((*mc)[v_idx], cfg);
            g_natural = strategy_grade((*mc)[n_idx], cfg);
          } else {
            const auto& know = thinking ? fg->knowledge_thinking : fg->knowledge;
            g_verbatim = strategy_grade(know[v_idx], cfg);
            g_natural = strategy_grade(know[n_idx], cfg);
          }
          if (!g_verbatim || !g_natural) continue;  // unpaired fact
          input.verbatim_success.push_back(*g_verbatim > cfg.tau);
          input.natural_success.push_back(*g_natural > cfg.tau);
        }
        inputs.push_back(std::move(input));
      }
    }
  }
  return inputs;
}

double nearest_rank_percentile(std::vector<double> values, double percentile) {
  if (values.empty()) throw ArgumentError("nearest_rank_percentile: empty sample");
  if (!(percentile > 0.0) || percentile > 100.0) {
    throw ArgumentError("nearest_rank_percentile: percentile out of range");
  }
  std::sort(values.begin(), values.end());
  std::size_t rank = static_cast<std::size_t>(
      std::ceil(percentile / 100.0 * static_cast<double>(values.size())));
  rank = std::max<std::size_t>(1, std::min(rank, values.size()));
  return values[rank - 1];
}

std::uint64_t label_multiset_hash(const std::vector<GradeLabel>& labels) {
  std::string canonical;
  canonical.reserve(labels.size());
  for (GradeLabel label : labels) canonical.push_back(static_cast<char>('0' + static_cast<int>(label)));
  std::sort(canonical.begin(), canonical.end());
  return fnv1a64(canonical);
}

BootstrapResult bootstrap_width(const std::vector<std::vector<GradeLabel>>& labels, int n_sub,
                                int resamples, std::uint64_t seed, double tau) {
  if (labels.empty()) throw ArgumentError("bootstrap_width: no questions");
  if (resamples < 1) throw ArgumentError("bootstrap_width: B must be >= 1");
  for (const auto& question : labels) {
    if (static_cast<int>(question.size()) < n_sub || n_sub < 1) {
      throw ArgumentError("bootstrap_width: n_sub exceeds available responses");
    }
  }

  // Canonical per-question multisets; draws never depend on input order.
  std::vector<std::vector<GradeLabel>> sorted_labels = labels;
  std::vector<std::uint64_t> hashes(labels.size());
  for (std::size_t q = 0; q < sorted_labels.size(); ++q) {
    std::sort(sorted_labels[q].begin(), sorted_labels[q].end(),
              [](GradeLabel a, GradeLabel b) { return static_cast<int>(a) < static_cast<int>(b); });
    hashes[q] = label_multiset_hash(labels[q]);
  }

  std::vector<double> stats;
  stats.reserve(static_cast<std::size_t>(resamples));
  for (int b = 0; b < resamples; ++b) {
    const std::uint64_t base = derive_seed(seed, "bootstrap", static_cast<std::uint64_t>(b));
    std::map<std::uint64_t, std::uint64_t> occurrence;
    int above = 0;
    for (std::size_t q = 0; q < sorted_labels.size(); ++q) {
      const std::uint64_t k = occurrence[hashes[q]]++;
      DetRng rng(splitmix64(splitmix64(base ^ hashes[q]) + k));
      const auto& question = sorted_labels[q];
      int correct = 0;
      int incorrect = 0;
      for (int j = 0; j < n_sub; ++j) {
        const GradeLabel label = question[rng.next_below(question.size())];
        if (label == GradeLabel::Correct) ++correct;
        if (label == GradeLabel::Incorrect) ++incorrect;
      }
      if (correct + incorrect > 0 &&
          static_cast<double>(correct) / (correct + incorrect) > tau) {
        ++above;
      }
    }
    stats.push_back(static_cast<double>(above) / static_cast<double>(labels.size()));
  }

  BootstrapResult result;
  result.n = n_sub;
  result.resamples = resamples;
  result.width = nearest_rank_percentile(stats, 95.0) - nearest_rank_percentile(stats, 5.0);
  return result;
}

}  // namespace kp

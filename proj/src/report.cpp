#include "kp/report.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <sstream>

#include "kp/errors.hpp"
#include "kp/jsonl.hpp"
#include "kp/text.hpp"

namespace kp {

namespace {

std::string fmt1(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f", v);
  return buf;
}

std::string fmt_cell(const std::optional<double>& v) {
  return v ? fmt1(*v * 100.0) : std::string("n/a");
}

std::vector<std::string> row_values(const ProfileDistribution& d) {
  return {
      fmt1(d.encodes_pct),
      fmt1(d.knows_think_pct),
      fmt1(d.knows_pct),
      fmt1(d.profile_pct[static_cast<int>(ProfileOutcome::EncodingFailure)]),
      fmt1(d.profile_pct[static_cast<int>(ProfileOutcome::RecallFailure)]),
      fmt1(d.profile_pct[static_cast<int>(ProfileOutcome::DirectRecall)]),
      fmt1(d.profile_pct[static_cast<int>(ProfileOutcome::RecallWithThinking)]),
      fmt1(d.profile_pct[static_cast<int>(ProfileOutcome::InferenceWithoutEncoding)]),
      fmt1(d.excluded_pct),
      fmt1(d.other_or_partially_pct),
      fmt1(d.direct_inference_pct),
  };
}

}  // namespace

ReportFormat report_format_from_name(const std::string& name) {
  if (name == "table") return ReportFormat::Table;
  if (name == "csv") return ReportFormat::Csv;
  if (name == "json") return ReportFormat::JsonFormat;
  throw ConfigError("unknown report format: " + name);
}

const std::vector<std::string>& profile_report_columns() {
  static const std::vector<std::string> columns = {
      "Encodes",
      "Knows (+Think)",
      "Knows",
      "Encoding Failure",
      "Recall Failure",
      "Direct Recall",
      "Recall w/ Thinking",
      "Inference w/o Encoding",
      "Excluded",
      "OTHER-or-PARTIALLY",
      "Direct Inference",
  };
  return columns;
}

std::string render_profile_report(
    const std::vector<std::pair<std::string, ProfileDistribution>>& rows, ReportFormat format) {
  if (rows.empty()) {
    throw ArgumentError("render_profile_report: no profile assignments; run `profile` first");
  }
  const auto& columns = profile_report_columns();

  if (format == ReportFormat::JsonFormat) {
    Json out = Json::array();
    for (const auto& [model, dist] : rows) {
      Json j;
      j["model"] = model;
      j["encodes"] = dist.encodes_pct;
      j["knows_think"] = dist.knows_think_pct;
      j["knows"] = dist.knows_pct;
      j["encoding_failure"] = dist.profile_pct[0];
      j["recall_failure"] = dist.profile_pct[1];
      j["direct_recall"] = dist.profile_pct[2];
      j["recall_with_thinking"] = dist.profile_pct[3];
      j["inference_without_encoding"] = dist.profile_pct[4];
      j["potential_knowledge"] = dist.potential_knowledge_pct;
      j["excluded"] = dist.excluded_pct;
      j["other_or_partially"] = dist.other_or_partially_pct;
      j["direct_inference"] = dist.direct_inference_pct;
      j["n_total"] = dist.n_total;
      out.push_back(std::move(j));
    }
    return out.dump(2) + "\n";
  }

  if (format == ReportFormat::Csv) {
    std::string out = "Model";
    for (const auto& col : columns) out += "," + col;
    out += "\n";
    for (const auto& [model, dist] : rows) {
      out += model;
      for (const auto& value : row_values(dist)) out += "," + value;
      out += "\n";
    }
    return out;
  }

  // Plain text table.
  std::vector<std::vector<std::string>> cells;
  std::vector<std::string> header = {"Model"};
  header.insert(header.end(), columns.begin(), columns.end());
  cells.push_back(header);
  for (const auto& [model, dist] : rows) {
    std::vector<std::string> row = {model};
    auto values = row_values(dist);
    row.insert(row.end(), values.begin(), values.end());
    cells.push_back(std::move(row));
  }
  std::vector<std::size_t> widths(header.size(), 0);
  for (const auto& row : cells) {
    for (std::size_t i = 0; i < row.size(); ++i) widths[i] = std::max(widths[i], row[i].size());
  }
  std::string out;
  for (std::size_t r = 0; r < cells.size(); ++r) {
    for (std::size_t i = 0; i < cells[r].size(); ++i) {
      if (i > 0) out += "  ";
      out += cells[r][i];
      out.append(widths[i] - cells[r][i].size(), ' ');
    }
    out += "\n";
    if (r == 0) {
      for (std::size_t i = 0; i < widths.size(); ++i) {
        if (i > 0) out += "  ";
        out.append(widths[i], '-');
      }
      out += "\n";
    }
  }
  return out;
}

std::string render_recall_report_csv(const std::vector<RecallReport>& reports) {
  std::string out =
      "model,encoding_bottom,encoding_top,recall_bottom,recall_top,tier_gap,"
      "recall_think_bottom,recall_think_top,tier_gap_think,"
      "gen_direct,gen_reverse,gap_generation,gen_direct_think,gen_reverse_think,"
      "gap_generation_think,ver_direct,ver_reverse,gap_verification,"
      "recovered_given_encoded,recovered_given_not_encoded,"
      "err_only_direct,err_only_reverse,err_both,"
      "err_enc_only_direct,err_enc_only_reverse,err_enc_both\n";
  auto pct_gap = [](const std::optional<double>& g) {
    return g ? fmt1(*g * 100.0) : std::string("n/a");
  };
  for (const auto& r : reports) {
    out += r.model_id;
    out += "," + fmt_cell(r.encoding_rate_by_tier[0].rate);
    out += "," + fmt_cell(r.encoding_rate_by_tier[2].rate);
    out += "," + fmt_cell(r.recall_given_encoded_by_tier[0].rate);
    out += "," + fmt_cell(r.recall_given_encoded_by_tier[2].rate);
    out += "," + pct_gap(r.tier_gap);
    out += "," + fmt_cell(r.recall_think_given_encoded_by_tier[0].rate);
    out += "," + fmt_cell(r.recall_think_given_encoded_by_tier[2].rate);
    out += "," + pct_gap(r.tier_gap_think);
    out += "," + fmt_cell(r.direction.generation_direct.rate);
    out += "," + fmt_cell(r.direction.generation_reverse.rate);
    out += "," + pct_gap(r.direction_gap_generation);
    out += "," + fmt_cell(r.direction_think.generation_direct.rate);
    out += "," + fmt_cell(r.direction_think.generation_reverse.rate);
    out += "," + pct_gap(r.direction_gap_generation_think);
    out += "," + fmt_cell(r.direction.verification_direct.rate);
    out += "," + fmt_cell(r.direction.verification_reverse.rate);
    out += "," + pct_gap(r.direction_gap_verification);
    out += "," + fmt_cell(r.recovered_given_encoded.rate);
    out += "," + fmt_cell(r.recovered_given_not_encoded.rate);
    out += "," + fmt_cell(r.decomposition_all.only_direct.rate);
    out += "," + fmt_cell(r.decomposition_all.only_reverse.rate);
    out += "," + fmt_cell(r.decomposition_all.both.rate);
    out += "," + fmt_cell(r.decomposition_encoded.only_direct.rate);
    out += "," + fmt_cell(r.decomposition_encoded.only_reverse.rate);
    out += "," + fmt_cell(r.decomposition_encoded.both.rate);
    out += "\n";
  }
  return out;
}

std::string render_phrasing_csv(const std::vector<TestResult>& results) {
  std::string out = "pair_id,discordant_b,discordant_c,p_value,rejected\n";
  for (const auto& r : results) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.10g", r.p_value);
    out += r.pair_id + "," + std::to_string(r.discordant_b) + "," +
           std::to_string(r.discordant_c) + "," + buf + "," + (r.rejected ? "1" : "0") + "\n";
  }
  return out;
}

std::string render_bootstrap_csv(
    const std::vector<std::pair<std::string, BootstrapResult>>& results) {
  std::string out = "config,task_kind,n,resamples,width\n";
  for (const auto& [config, r] : results) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.10g", r.width);
    out += config + "," + r.task_kind + "," + std::to_string(r.n) + "," +
           std::to_string(r.resamples) + "," + buf + "\n";
  }
  return out;
}

std::string iso8601_now() {
  auto now = std::chrono::system_clock::now();
  std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_manifest(const RunManifest& manifest, const std::string& path) {
  Json j;
  j["command"] = manifest.command;
  j["config_digest"] = manifest.config_digest;
  j["benchmark_digest"] = manifest.benchmark_digest;
  j["seed"] = manifest.seed;
  j["started_at"] = manifest.started_at;
  j["finished_at"] = manifest.finished_at;
  j["counts"] = manifest.counts;

  if (std::filesystem::exists(path)) {
    Json old = Json::parse(read_file(path), nullptr, false);
    if (!old.is_discarded()) {
      Json a = old;
      Json b = j;
      a.erase("started_at");
      a.erase("finished_at");
      b.erase("started_at");
      b.erase("finished_at");
      if (a == b) return;  // identical run: keep old bytes
    }
  }
  write_file(path, j.dump(2) + "\n");
}

}  // namespace kp

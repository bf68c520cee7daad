#pragma once

#include <map>
#include <string>
#include <vector>

#include "kp/analysis.hpp"
#include "kp/profiler.hpp"

namespace kp {

enum class ReportFormat { Table, Csv, JsonFormat };

ReportFormat report_format_from_name(const std::string& name);

// Profile-distribution report rows in fixed column order: Encodes,
// Knows (+Think), Knows, the five profiles, then the exclusion breakdown.
// Output is byte-stable for identical inputs.
std::string render_profile_report(
    const std::vector<std::pair<std::string, ProfileDistribution>>& rows, ReportFormat format);

const std::vector<std::string>& profile_report_columns();

std::string render_recall_report_csv(const std::vector<RecallReport>& reports);
std::string render_phrasing_csv(const std::vector<TestResult>& results);
std::string render_bootstrap_csv(
    const std::vector<std::pair<std::string, BootstrapResult>>& results);

struct RunManifest {
  std::string command;
  std::string config_digest;
  std::string benchmark_digest;
  std::uint64_t seed = 0;
  std::string started_at;
  std::string finished_at;
  std::map<std::string, long long> counts;
};

// Writes the manifest next to a step's outputs. When an existing manifest
// matches on everything except timestamps the old file is kept, so re-runs
// with a warm cache leave all output bytes unchanged.
void write_manifest(const RunManifest& manifest, const std::string& path);

std::string iso8601_now();

}  // namespace kp

#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "kp/gateway.hpp"
#include "kp/profiler.hpp"

namespace kp {

// Declarative key/value document with [section] headers; keys may repeat.
class ConfigDoc {
 public:
  static ConfigDoc parse(const std::string& text);
  static ConfigDoc load(const std::string& path);

  std::optional<std::string> get(const std::string& section, const std::string& key) const;
  std::string get_or(const std::string& section, const std::string& key,
                     const std::string& fallback) const;
  std::vector<std::string> get_all(const std::string& section, const std::string& key) const;
  bool has_section(const std::string& section) const;

  const std::string& source_digest() const { return digest_; }

 private:
  std::map<std::string, std::vector<std::pair<std::string, std::string>>> sections_;
  std::string digest_;
};

// "id=builder kind=scripted script=rules.json" -> attribute map.
std::map<std::string, std::string> parse_attrs(const std::string& value);

struct ProviderSpec {
  std::string id;
  std::string kind;  // scripted | scripted-grader | openai-chat
  std::string script_path;
  std::string base_url;
  std::string api_path = "/v1/chat/completions";
  std::uint64_t seed = 0;
  int max_in_flight = 4;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string cache_path;
  std::string prompt_dir;

  std::vector<ProviderSpec> providers;
  std::vector<ModelConfig> models;  // evaluation configs
  ModelConfig grader;

  // [corpus]
  std::string corpus_path;
  int min_summary_words = 50;
  int max_objects_per_doc = 3;
  std::size_t target_facts = 5000;

  // [pipeline]
  ModelConfig builder;
  ModelConfig search;

  // [profiler]
  ProfilerConfig profiler;

  // [analysis]
  double fraction = 0.2;
  double fdr_q = 0.05;
  int bootstrap_resamples = 1000;

  std::string config_digest;

  static RunConfig load(const std::string& path);

  // Logical-model pairs (no-thinking + thinking config per model id).
  std::vector<ModelPair> model_pairs() const;
  const ModelConfig& config_by_id(const std::string& config_id) const;
};

// Registers every configured provider backend on a gateway.
void register_providers(Gateway& gateway, const RunConfig& config);

}  // namespace kp

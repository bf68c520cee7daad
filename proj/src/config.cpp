#include "kp/config.hpp"

#include <algorithm>

#include "kp/digest.hpp"
#include "kp/errors.hpp"
#include "kp/http_backend.hpp"
#include "kp/text.hpp"

namespace kp {

ConfigDoc ConfigDoc::parse(const std::string& text) {
  ConfigDoc doc;
  doc.digest_ = sha256_hex(text);
  std::string section;
  int line_no = 0;
  for (const std::string& raw_line : split_lines(text)) {
    ++line_no;
    std::string line = trim(raw_line);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw ConfigError("bad section header at line " + std::to_string(line_no) + ": " + line);
      }
      section = trim(line.substr(1, line.size() - 2));
      doc.sections_[section];
      continue;
    }
    std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("expected key = value at line " + std::to_string(line_no) + ": " + line);
    }
    doc.sections_[section].emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return doc;
}

ConfigDoc ConfigDoc::load(const std::string& path) { return parse(read_file(path)); }

std::optional<std::string> ConfigDoc::get(const std::string& section,
                                          const std::string& key) const {
  auto it = sections_.find(section);
  if (it == sections_.end()) return std::nullopt;
  std::optional<std::string> value;
  for (const auto& [k, v] : it->second) {
    if (k == key) value = v;
  }
  return value;
}

std::string ConfigDoc::get_or(const std::string& section, const std::string& key,
                              const std::string& fallback) const {
  return get(section, key).value_or(fallback);
}

std::vector<std::string> ConfigDoc::get_all(const std::string& section,
                                            const std::string& key) const {
  std::vector<std::string> out;
  auto it = sections_.find(section);
  if (it == sections_.end()) return out;
  for (const auto& [k, v] : it->second) {
    if (k == key) out.push_back(v);
  }
  return out;
}

bool ConfigDoc::has_section(const std::string& section) const {
  return sections_.count(section) > 0;
}

std::map<std::string, std::string> parse_attrs(const std::string& value) {
  std::map<std::string, std::string> attrs;
  std::size_t pos = 0;
  while (pos < value.size()) {
    while (pos < value.size() && value[pos] == ' ') ++pos;
    if (pos >= value.size()) break;
    std::size_t eq = value.find('=', pos);
    if (eq == std::string::npos) throw ConfigError("bad attribute list: " + value);
    std::string key = trim(value.substr(pos, eq - pos));
    std::size_t end;
    std::string val;
    if (eq + 1 < value.size() && value[eq + 1] == '"') {
      end = value.find('"', eq + 2);
      if (end == std::string::npos) throw ConfigError("unterminated quote in: " + value);
      val = value.substr(eq + 2, end - eq - 2);
      ++end;
    } else {
      end = value.find(' ', eq);
      val = value.substr(eq + 1, end == std::string::npos ? std::string::npos : end - eq - 1);
    }
    attrs[key] = val;
    if (end == std::string::npos) break;
    pos = end;
  }
  return attrs;
}

namespace {

std::string require_attr(const std::map<std::string, std::string>& attrs, const std::string& key,
                         const std::string& context) {
  auto it = attrs.find(key);
  if (it == attrs.end()) throw ConfigError(context + " requires attribute '" + key + "'");
  return it->second;
}

ModelConfig model_from_attrs(const std::map<std::string, std::string>& attrs,
                             const std::string& context) {
  ModelConfig cfg;
  cfg.config_id = require_attr(attrs, "id", context);
  cfg.provider_id = require_attr(attrs, "provider", context);
  cfg.model_id = attrs.count("model") ? attrs.at("model") : cfg.config_id;
  cfg.model_name = attrs.count("name") ? attrs.at("name") : cfg.model_id;
  cfg.thinking_mode = thinking_mode_from_name(attrs.count("thinking") ? attrs.at("thinking")
                                                                      : "plain");
  if (attrs.count("n_samples")) cfg.n_samples = std::stoi(attrs.at("n_samples"));
  if (attrs.count("max_in_flight")) cfg.max_in_flight = std::stoi(attrs.at("max_in_flight"));
  if (cfg.n_samples < 1) throw ConfigError(context + ": n_samples must be >= 1");
  return cfg;
}

}  // namespace

RunConfig RunConfig::load(const std::string& path) {
  ConfigDoc doc = ConfigDoc::load(path);
  RunConfig config;
  config.config_digest = doc.source_digest();

  config.seed = std::stoull(doc.get_or("run", "seed", "0"));
  config.cache_path = doc.get_or("run", "cache", "");
  config.prompt_dir = doc.get_or("run", "prompts", "");

  for (const std::string& line : doc.get_all("providers", "provider")) {
    auto attrs = parse_attrs(line);
    ProviderSpec spec;
    spec.id = require_attr(attrs, "id", "[providers] provider");
    spec.kind = require_attr(attrs, "kind", "[providers] provider");
    if (attrs.count("script")) spec.script_path = attrs.at("script");
    if (attrs.count("base_url")) spec.base_url = attrs.at("base_url");
    if (attrs.count("path")) spec.api_path = attrs.at("path");
    if (attrs.count("seed")) spec.seed = std::stoull(attrs.at("seed"));
    if (attrs.count("max_in_flight")) spec.max_in_flight = std::stoi(attrs.at("max_in_flight"));
    config.providers.push_back(std::move(spec));
  }

  for (const std::string& line : doc.get_all("models", "model")) {
    config.models.push_back(model_from_attrs(parse_attrs(line), "[models] model"));
  }

  if (auto grader_line = doc.get("grader", "model")) {
    config.grader = model_from_attrs(parse_attrs(*grader_line), "[grader] model");
  }

  config.corpus_path = doc.get_or("corpus", "path", "");
  config.min_summary_words = std::stoi(doc.get_or("corpus", "min_summary_words", "50"));
  config.max_objects_per_doc = std::stoi(doc.get_or("corpus", "max_objects_per_doc", "3"));
  config.target_facts = std::stoull(doc.get_or("corpus", "target_facts", "5000"));

  if (auto builder_line = doc.get("pipeline", "model")) {
    config.builder = model_from_attrs(parse_attrs(*builder_line), "[pipeline] model");
  }
  if (auto search_line = doc.get("pipeline", "search")) {
    config.search = model_from_attrs(parse_attrs(*search_line), "[pipeline] search");
  }

  config.profiler.tau = std::stod(doc.get_or("profiler", "tau", "0.5"));
  config.profiler.nan_strategy =
      nan_strategy_from_name(doc.get_or("profiler", "nan_strategy", "pair"));
  config.profiler.partial_weight = std::stod(doc.get_or("profiler", "partial_weight", "0.51"));

  config.fraction = std::stod(doc.get_or("analysis", "fraction", "0.2"));
  config.fdr_q = std::stod(doc.get_or("analysis", "fdr_q", "0.05"));
  config.bootstrap_resamples = std::stoi(doc.get_or("analysis", "bootstrap_B", "1000"));
  return config;
}

std::vector<ModelPair> RunConfig::model_pairs() const {
  std::map<std::string, ModelPair> pairs;
  for (const auto& cfg : models) {
    ModelPair& pair = pairs[cfg.model_id];
    pair.model_id = cfg.model_id;
    if (is_thinking_mode(cfg.thinking_mode)) {
      if (!pair.config_think.empty()) {
        throw ConfigError("model " + cfg.model_id + " has two thinking configs");
      }
      pair.config_think = cfg.config_id;
    } else {
      if (!pair.config_no_think.empty()) {
        throw ConfigError("model " + cfg.model_id + " has two non-thinking configs");
      }
      pair.config_no_think = cfg.config_id;
    }
  }
  std::vector<ModelPair> out;
  for (const auto& [model_id, pair] : pairs) {
    if (pair.config_no_think.empty() || pair.config_think.empty()) {
      throw ConfigError("model " + model_id +
                        " needs one thinking and one non-thinking config for profiling");
    }
    out.push_back(pair);
  }
  return out;
}

const ModelConfig& RunConfig::config_by_id(const std::string& config_id) const {
  for (const auto& cfg : models) {
    if (cfg.config_id == config_id) return cfg;
  }
  throw ConfigError("unknown model config id: " + config_id);
}

void register_providers(Gateway& gateway, const RunConfig& config) {
  for (const auto& spec : config.providers) {
    std::shared_ptr<Backend> backend;
    if (spec.kind == "scripted") {
      if (!spec.script_path.empty()) {
        backend = std::make_shared<ScriptedBackend>(ScriptedBackend::load_rules(spec.script_path),
                                                    spec.seed);
      } else {
        backend = std::make_shared<ScriptedBackend>(spec.seed);
      }
    } else if (spec.kind == "scripted-grader") {
      backend = std::make_shared<ScriptedGraderBackend>();
    } else if (spec.kind == "openai-chat") {
      HttpProviderOptions options;
      options.provider_id = spec.id;
      options.base_url = spec.base_url;
      options.path = spec.api_path;
      backend = std::make_shared<HttpChatBackend>(options);
    } else {
      throw ConfigError("unknown provider kind: " + spec.kind);
    }
    gateway.register_backend(spec.id, std::move(backend), spec.max_in_flight);
  }
}

}  // namespace kp

#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "kp/jsonl.hpp"

namespace kp {

enum class ThinkingRequest { NativeOn, NativeOff, None };

std::string thinking_request_name(ThinkingRequest t);

struct ChatRequest {
  std::string system_text;
  std::string user_text;
  double temperature = 1.0;
  int max_output = 1024;
  ThinkingRequest thinking = ThinkingRequest::None;
  int sample_index = 0;
};

enum class ThinkingMode { NativeOn, NativeOff, CotPrompt, Plain };

std::string thinking_mode_name(ThinkingMode mode);
ThinkingMode thinking_mode_from_name(const std::string& name);

// True when responses from this configuration involve thinking (native or
// prompt-elicited chain of thought).
bool is_thinking_mode(ThinkingMode mode);

struct ModelConfig {
  std::string config_id;    // unique per (model, thinking) run
  std::string model_id;     // logical model; pairs thinking variants
  std::string provider_id;
  std::string model_name;
  ThinkingMode thinking_mode = ThinkingMode::Plain;
  int n_samples = 8;
  int max_in_flight = 4;
};

// Pure function of the listed request identity fields and nothing else.
std::string cache_key(const ModelConfig& cfg, const ChatRequest& req);

// Append-only key -> value store persisted on disk as JSONL. Reads are
// concurrent; writes append under an exclusive lock.
class ResponseCache {
 public:
  explicit ResponseCache(std::string path);

  std::optional<std::string> get(const std::string& key) const;
  void put(const std::string& key, const std::string& value);
  std::size_t size() const;

 private:
  std::string path_;
  mutable std::shared_mutex mu_;
  std::map<std::string, std::string> entries_;
  std::unique_ptr<JsonlWriter> writer_;
};

class Backend {
 public:
  virtual ~Backend() = default;
  virtual std::string complete(const ModelConfig& cfg, const ChatRequest& req) = 0;
};

// Deterministic offline backend. A request is answered by the first rule
// whose substrings all occur in the prompt; the rule's answers are cycled by
// sample_index. Unmatched requests get a reply that is a pure function of
// (request digest, seed). When a rule's answer matches one of the lettered
// options of a multiple-choice prompt, the backend replies with that letter.
class ScriptedBackend : public Backend {
 public:
  struct Rule {
    std::vector<std::string> match;  // all substrings must occur
    std::vector<std::string> answers;
  };

  explicit ScriptedBackend(std::uint64_t seed = 0) : seed_(seed) {}
  ScriptedBackend(std::vector<Rule> rules, std::uint64_t seed = 0)
      : rules_(std::move(rules)), seed_(seed) {}

  static std::vector<Rule> load_rules(const std::string& path);

  std::string complete(const ModelConfig& cfg, const ChatRequest& req) override;

  long long call_count() const { return calls_.load(); }

 private:
  std::vector<Rule> rules_;
  std::uint64_t seed_;
  std::atomic<long long> calls_{0};
};

// Offline grader stand-in: parses the rendered autorater prompt and labels
// each numbered answer by exact comparison against the gold line. "IDK"
// grades OTHER, a "~" prefix grades PARTIALLY, any other mismatch INCORRECT.
class ScriptedGraderBackend : public Backend {
 public:
  std::string complete(const ModelConfig& cfg, const ChatRequest& req) override;
  long long call_count() const { return calls_.load(); }

 private:
  std::atomic<long long> calls_{0};
};

struct RetryPolicy {
  int max_attempts = 5;
  int base_delay_ms = 500;
  int max_delay_ms = 8000;
};

struct GatewayStats {
  long long backend_calls = 0;
  long long cache_hits = 0;
};

// Uniform access to chat backends with retries, bounded per-backend
// concurrency and a content-addressed response cache.
class Gateway {
 public:
  explicit Gateway(std::shared_ptr<ResponseCache> cache = nullptr, RetryPolicy retry = {});
  ~Gateway();

  void register_backend(const std::string& provider_id, std::shared_ptr<Backend> backend,
                        int max_in_flight = 4);
  bool has_backend(const std::string& provider_id) const;

  // Exactly n texts in sample_index order 0..n-1. Cached samples cost zero
  // backend calls.
  std::vector<std::string> sample_responses(const ModelConfig& cfg, const ChatRequest& req_template,
                                            int n);

  // Single completion through the same cache/retry path.
  std::string complete(const ModelConfig& cfg, const ChatRequest& req);

  GatewayStats stats() const;

 private:
  struct Slot;
  Slot& slot_for(const std::string& provider_id);
  std::string invoke(Slot& slot, const ModelConfig& cfg, const ChatRequest& req);

  std::shared_ptr<ResponseCache> cache_;
  RetryPolicy retry_;
  mutable std::mutex mu_;
  std::map<std::string, std::unique_ptr<Slot>> slots_;
  std::atomic<long long> backend_calls_{0};
  std::atomic<long long> cache_hits_{0};
};

// Environment variable that must hold the API key for a provider.
std::string api_key_env_var(const std::string& provider_id);

}  // namespace kp

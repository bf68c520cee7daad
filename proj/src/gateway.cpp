#include "kp/gateway.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <condition_variable>
#include <thread>

#include "kp/digest.hpp"
#include "kp/errors.hpp"
#include "kp/rng.hpp"
#include "kp/text.hpp"

namespace kp {

namespace {

// Bounded counting guard; per-backend in-flight limit.
class Semaphore {
 public:
  explicit Semaphore(int count) : count_(count) {}

  void acquire() {
    std::unique_lock<std::mutex> lock(mu_);
    cv_.wait(lock, [&] { return count_ > 0; });
    --count_;
  }

  void release() {
    {
      std::lock_guard<std::mutex> lock(mu_);
      ++count_;
    }
    cv_.notify_one();
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  int count_;
};

struct SemaphoreGuard {
  explicit SemaphoreGuard(Semaphore& sem) : sem_(sem) { sem_.acquire(); }
  ~SemaphoreGuard() { sem_.release(); }
  Semaphore& sem_;
};

std::optional<char> letter_of_option(const std::string& user_text, const std::string& answer) {
  for (const std::string& line : split_lines(user_text)) {
    if (line.size() >= 3 && line[0] >= 'A' && line[0] <= 'D' && line[1] == '.' &&
        line[2] == ' ') {
      if (trim(line.substr(3)) == trim(answer)) return line[0];
    }
  }
  return std::nullopt;
}

}  // namespace

std::string thinking_request_name(ThinkingRequest t) {
  switch (t) {
    case ThinkingRequest::NativeOn: return "native_on";
    case ThinkingRequest::NativeOff: return "native_off";
    case ThinkingRequest::None: return "none";
  }
  return "none";
}

std::string thinking_mode_name(ThinkingMode mode) {
  switch (mode) {
    case ThinkingMode::NativeOn: return "native_on";
    case ThinkingMode::NativeOff: return "native_off";
    case ThinkingMode::CotPrompt: return "cot_prompt";
    case ThinkingMode::Plain: return "plain";
  }
  return "plain";
}

ThinkingMode thinking_mode_from_name(const std::string& name) {
  if (name == "native_on") return ThinkingMode::NativeOn;
  if (name == "native_off") return ThinkingMode::NativeOff;
  if (name == "cot_prompt") return ThinkingMode::CotPrompt;
  if (name == "plain") return ThinkingMode::Plain;
  throw ConfigError("unknown thinking mode: " + name);
}

bool is_thinking_mode(ThinkingMode mode) {
  return mode == ThinkingMode::NativeOn || mode == ThinkingMode::CotPrompt;
}

std::string cache_key(const ModelConfig& cfg, const ChatRequest& req) {
  Json j;
  j["provider_id"] = cfg.provider_id;
  j["model_name"] = cfg.model_name;
  j["thinking_mode"] = thinking_mode_name(cfg.thinking_mode);
  j["temperature"] = req.temperature;
  j["system_text"] = req.system_text;
  j["user_text"] = req.user_text;
  j["sample_index"] = req.sample_index;
  return sha256_hex(j.dump());
}

ResponseCache::ResponseCache(std::string path) : path_(std::move(path)) {
  for_each_jsonl(path_, [&](const Json& j) {
    entries_[j.at("k").get<std::string>()] = j.at("v").get<std::string>();
  }, /*must_exist=*/false);
  writer_ = std::make_unique<JsonlWriter>(path_);
}

std::optional<std::string> ResponseCache::get(const std::string& key) const {
  std::shared_lock lock(mu_);
  auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void ResponseCache::put(const std::string& key, const std::string& value) {
  {
    std::unique_lock lock(mu_);
    auto [it, inserted] = entries_.emplace(key, value);
    if (!inserted) return;
  }
  Json j;
  j["k"] = key;
  j["v"] = value;
  j["ts"] = std::chrono::duration_cast<std::chrono::seconds>(
                std::chrono::system_clock::now().time_since_epoch())
                .count();
  writer_->append(j);
}

std::size_t ResponseCache::size() const {
  std::shared_lock lock(mu_);
  return entries_.size();
}

std::vector<ScriptedBackend::Rule> ScriptedBackend::load_rules(const std::string& path) {
  Json j = Json::parse(read_file(path));
  std::vector<Rule> rules;
  for (const auto& r : j.at("rules")) {
    Rule rule;
    if (r.at("match").is_string()) {
      rule.match.push_back(r.at("match").get<std::string>());
    } else {
      rule.match = r.at("match").get<std::vector<std::string>>();
    }
    if (r.at("answers").is_string()) {
      rule.answers.push_back(r.at("answers").get<std::string>());
    } else {
      rule.answers = r.at("answers").get<std::vector<std::string>>();
    }
    rules.push_back(std::move(rule));
  }
  return rules;
}

std::string ScriptedBackend::complete(const ModelConfig&, const ChatRequest& req) {
  calls_.fetch_add(1);
  for (const auto& rule : rules_) {
    bool hit = true;
    for (const auto& needle : rule.match) {
      if (!contains(req.user_text, needle) && !contains(req.system_text, needle)) {
        hit = false;
        break;
      }
    }
    if (!hit || rule.answers.empty()) continue;
    const std::string& answer = rule.answers[req.sample_index % rule.answers.size()];
    if (auto letter = letter_of_option(req.user_text, answer)) {
      return std::string(1, *letter);
    }
    return answer;
  }
  // Pure function of (request digest, seed).
  std::string digest = sha256_hex(req.system_text + "\x1f" + req.user_text + "\x1f" +
                                  std::to_string(req.sample_index));
  return "scripted-" + digest.substr(0, 12) + "-" +
         std::to_string(splitmix64(fnv1a64(digest) ^ seed_) % 100000);
}

std::string ScriptedGraderBackend::complete(const ModelConfig&, const ChatRequest& req) {
  calls_.fetch_add(1);
  const bool completion_task = contains(req.user_text, "Gold completion:");
  const std::string gold_marker = completion_task ? "Gold completion: " : "Gold target: ";
  const std::string answer_marker = completion_task ? "Completion " : "Answer ";
  const std::string tag = completion_task ? "completion_" : "answer_";

  std::string gold;
  std::vector<std::string> answers;
  for (const std::string& line : split_lines(req.user_text)) {
    if (line.rfind(gold_marker, 0) == 0) {
      gold = trim(line.substr(gold_marker.size()));
    } else if (line.rfind(answer_marker, 0) == 0) {
      std::size_t colon = line.find(": ");
      if (colon != std::string::npos) answers.push_back(trim(line.substr(colon + 2)));
    }
  }
  std::string out;
  for (std::size_t i = 0; i < answers.size(); ++i) {
    const std::string& a = answers[i];
    std::string label;
    if (a == gold) {
      label = "CORRECT";
    } else if (a == "IDK" || a.empty()) {
      label = "OTHER";
    } else if (!a.empty() && a[0] == '~') {
      label = "PARTIALLY";
    } else {
      label = "INCORRECT";
    }
    std::string idx = std::to_string(i + 1);
    out += "<" + tag + idx + ">" + label + "</" + tag + idx + ">";
  }
  return out;
}

struct Gateway::Slot {
  std::shared_ptr<Backend> backend;
  Semaphore sem;
  Slot(std::shared_ptr<Backend> b, int max_in_flight)
      : backend(std::move(b)), sem(max_in_flight) {}
};

Gateway::Gateway(std::shared_ptr<ResponseCache> cache, RetryPolicy retry)
    : cache_(std::move(cache)), retry_(retry) {}

Gateway::~Gateway() = default;

void Gateway::register_backend(const std::string& provider_id, std::shared_ptr<Backend> backend,
                               int max_in_flight) {
  std::lock_guard<std::mutex> lock(mu_);
  slots_[provider_id] = std::make_unique<Slot>(std::move(backend), std::max(1, max_in_flight));
}

bool Gateway::has_backend(const std::string& provider_id) const {
  std::lock_guard<std::mutex> lock(mu_);
  return slots_.count(provider_id) > 0;
}

Gateway::Slot& Gateway::slot_for(const std::string& provider_id) {
  std::lock_guard<std::mutex> lock(mu_);
  auto it = slots_.find(provider_id);
  if (it == slots_.end()) throw ConfigError("no backend registered for provider: " + provider_id);
  return *it->second;
}

std::string Gateway::invoke(Slot& slot, const ModelConfig& cfg, const ChatRequest& req) {
  int attempt = 0;
  std::uint64_t jitter_state = fnv1a64(req.user_text) ^ fnv1a64(req.system_text);
  while (true) {
    ++attempt;
    try {
      SemaphoreGuard guard(slot.sem);
      std::string out = slot.backend->complete(cfg, req);
      backend_calls_.fetch_add(1);
      return out;
    } catch (const TransportError& err) {
      backend_calls_.fetch_add(1);
      if (attempt >= retry_.max_attempts) {
        throw TransportError(std::string("backend exhausted after retries: ") + err.what(),
                             attempt);
      }
      jitter_state = splitmix64(jitter_state);
      int delay = retry_.base_delay_ms << (attempt - 1);
      delay = std::min(delay, retry_.max_delay_ms);
      if (delay > 0) {
        delay += static_cast<int>(jitter_state % static_cast<std::uint64_t>(delay + 1)) / 2;
        std::this_thread::sleep_for(std::chrono::milliseconds(delay));
      }
    }
  }
}

std::vector<std::string> Gateway::sample_responses(const ModelConfig& cfg,
                                                   const ChatRequest& req_template, int n) {
  if (n < 1) throw ArgumentError("sample_responses: n must be >= 1");
  std::vector<std::string> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    ChatRequest req = req_template;
    req.sample_index = i;
    out[static_cast<std::size_t>(i)] = complete(cfg, req);
  }
  return out;
}

std::string Gateway::complete(const ModelConfig& cfg, const ChatRequest& req) {
  Slot& slot = slot_for(cfg.provider_id);
  std::string key = cache_key(cfg, req);
  if (cache_) {
    if (auto hit = cache_->get(key)) {
      cache_hits_.fetch_add(1);
      return *hit;
    }
  }
  std::string resp = invoke(slot, cfg, req);
  if (cache_) cache_->put(key, resp);
  return resp;
}

GatewayStats Gateway::stats() const {
  return GatewayStats{backend_calls_.load(), cache_hits_.load()};
}

std::string api_key_env_var(const std::string& provider_id) {
  std::string var = "KP_API_KEY_";
  for (char c : provider_id) {
    var.push_back(std::isalnum(static_cast<unsigned char>(c))
                      ? static_cast<char>(std::toupper(static_cast<unsigned char>(c)))
                      : '_');
  }
  return var;
}

}  // namespace kp

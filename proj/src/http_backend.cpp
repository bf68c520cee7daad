#include "kp/http_backend.hpp"

#include <cstdlib>

#include <httplib.h>

#include "kp/errors.hpp"

namespace kp {

HttpChatBackend::HttpChatBackend(HttpProviderOptions options) : options_(std::move(options)) {
  if (const char* key = std::getenv(api_key_env_var(options_.provider_id).c_str())) {
    api_key_ = key;
  }
}

Json HttpChatBackend::request_body(const std::string& model_name, const ChatRequest& req) {
  Json body;
  body["model"] = model_name;
  body["temperature"] = req.temperature;
  if (req.max_output > 0) body["max_tokens"] = req.max_output;
  body["n"] = 1;
  Json messages = Json::array();
  if (!req.system_text.empty()) {
    messages.push_back({{"role", "system"}, {"content", req.system_text}});
  }
  messages.push_back({{"role", "user"}, {"content", req.user_text}});
  body["messages"] = std::move(messages);
  // Thinking-capable providers take an effort knob; zero effort disables it.
  if (req.thinking == ThinkingRequest::NativeOff) {
    body["reasoning_effort"] = "none";
  } else if (req.thinking == ThinkingRequest::NativeOn) {
    body["reasoning_effort"] = "default";
  }
  return body;
}

std::string HttpChatBackend::complete(const ModelConfig& cfg, const ChatRequest& req) {
  httplib::Client client(options_.base_url);
  client.set_connection_timeout(options_.timeout_seconds);
  client.set_read_timeout(options_.timeout_seconds);
  httplib::Headers headers;
  if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

  auto result = client.Post(options_.path, headers,
                            request_body(cfg.model_name, req).dump(), "application/json");
  if (!result) {
    throw TransportError("http request to " + options_.provider_id + " failed: " +
                             httplib::to_string(result.error()),
                         1);
  }
  if (result->status == 408 || result->status == 429 || result->status >= 500) {
    throw TransportError("http " + std::to_string(result->status) + " from " +
                             options_.provider_id,
                         1);
  }
  if (result->status != 200) {
    throw BackendError("http " + std::to_string(result->status) + " from " +
                       options_.provider_id + ": " + result->body);
  }
  Json payload = Json::parse(result->body, nullptr, false);
  if (payload.is_discarded() || !payload.contains("choices") || payload["choices"].empty()) {
    throw BackendError("malformed response from " + options_.provider_id);
  }
  const Json& choice = payload["choices"][0];
  if (choice.contains("message")) return choice["message"].value("content", "");
  return choice.value("text", "");
}

}  // namespace kp

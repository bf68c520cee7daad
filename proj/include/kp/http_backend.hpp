#pragma once

#include <memory>
#include <string>

#include "kp/gateway.hpp"

namespace kp {

// Chat-completion provider spoken over HTTP in the common OpenAI-style wire
// format. Credentials come from the environment only (KP_API_KEY_<PROVIDER>).
struct HttpProviderOptions {
  std::string provider_id;
  std::string base_url;              // e.g. "https://api.example.com"
  std::string path = "/v1/chat/completions";
  int timeout_seconds = 120;
};

class HttpChatBackend : public Backend {
 public:
  explicit HttpChatBackend(HttpProviderOptions options);

  std::string complete(const ModelConfig& cfg, const ChatRequest& req) override;

  // Request body for a ChatRequest; exposed for wire-format tests.
  static Json request_body(const std::string& model_name, const ChatRequest& req);

 private:
  HttpProviderOptions options_;
  std::string api_key_;
};

}  // namespace kp

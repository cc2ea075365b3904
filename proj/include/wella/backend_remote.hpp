#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <optional>
#include <string>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "wella/trajectory.hpp"

namespace wella {

// ---------------------------------------------------------------------------
// Remote backend speaking the chat-completion wire shape:
//   POST {path} {"model", "messages":[{"role","content"}...],
//                "temperature", "max_tokens", "seed"?}
//   -> 200 {"choices":[{"message":{"content": "..."}}]}
// Credentials come from the environment, never from config files, and are
// never echoed into errors, logs, or snapshots.
// ---------------------------------------------------------------------------

inline constexpr std::string_view kDefaultApiKeyEnv = "WELLA_API_KEY";

class AuthError : public BackendError {
 public:
  explicit AuthError(const std::string& message)
      : BackendError("auth_error", message) {}
};

class QuotaError : public BackendError {
 public:
  explicit QuotaError(const std::string& message)
      : BackendError("quota_exhausted", message) {}
};

// The service answered, but not in the wire shape (or with a non-retryable
// client error). Retrying the identical request would not help.
class RemoteProtocolError : public BackendError {
 public:
  explicit RemoteProtocolError(const std::string& message)
      : BackendError("remote_protocol_error", message) {}
};

struct RemoteBackendConfig {
  std::string base_url = "http://localhost:8000";  // scheme://host[:port]
  std::string path = "/v1/chat/completions";
  std::string model;
  std::string api_key_env{kDefaultApiKeyEnv};
  int max_retries = 3;          // extra attempts on transport, 5xx, or 429
  int initial_backoff_ms = 200; // doubles per retry, capped below
  int max_backoff_ms = 5000;
  int timeout_sec = 60;

  friend bool operator==(const RemoteBackendConfig&,
                         const RemoteBackendConfig&) = default;
};

class RemoteChatBackend : public GenerationBackend {
 public:
  struct Result {
    std::string text;
    int attempts = 0;
  };

  explicit RemoteChatBackend(RemoteBackendConfig config)
      : config_(std::move(config)) {
    if (config_.model.empty())
      throw Error("invalid_config", "remote backend requires a model name");
  }

  // Injectable delay for tests; defaults to a real sleep.
  void set_sleeper(std::function<void(int)> sleeper) {
    sleeper_ = std::move(sleeper);
  }

  std::string generate(const PromptBundle& bundle) override {
    return generate_detailed(bundle).text;
  }

  std::string id() const override { return "remote:" + config_.model; }

  const RemoteBackendConfig& config() const noexcept { return config_; }

  // Full retry loop. Transport failures, 5xx, and 429 are retried with
  // bounded exponential backoff; 401/403 raise AuthError immediately and
  // other 4xx raise RemoteProtocolError immediately, since resending the
  // same request cannot succeed.
  Result generate_detailed(const PromptBundle& bundle) {
    const std::string body = request_body(bundle);
    const int max_attempts = 1 + std::max(0, config_.max_retries);

    int last_status = 0;
    std::string last_detail = "no attempt made";
    for (int attempt = 1; attempt <= max_attempts; ++attempt) {
      if (attempt > 1) backoff(attempt - 1);

      // A fresh client per request keeps concurrent sessions independent.
      httplib::Client client(config_.base_url);
      client.set_connection_timeout(config_.timeout_sec, 0);
      client.set_read_timeout(config_.timeout_sec, 0);
      client.set_write_timeout(config_.timeout_sec, 0);

      httplib::Headers headers;
      const char* key = std::getenv(config_.api_key_env.c_str());
      if (key != nullptr && *key != '\0')
        headers.emplace("Authorization", std::string("Bearer ") + key);

      auto res = client.Post(config_.path, headers, body, "application/json");
      if (!res) {
        last_status = 0;
        last_detail = "transport error: " + httplib::to_string(res.error());
        continue;
      }
      last_status = res->status;
      last_detail = "HTTP " + std::to_string(res->status);

      if (res->status == 200) return Result{parse_reply(res->body), attempt};
      if (res->status == 401 || res->status == 403)
        throw AuthError("authentication rejected (HTTP " +
                        std::to_string(res->status) + "); check the " +
                        config_.api_key_env + " environment variable");
      if (res->status == 429 || res->status >= 500) continue;
      throw RemoteProtocolError("backend rejected request with HTTP " +
                                std::to_string(res->status));
    }

    const std::string summary = "backend still failing after " +
                                std::to_string(max_attempts) +
                                " attempts (last: " + last_detail + ")";
    if (last_status == 429) throw QuotaError(summary);
    throw BackendUnavailable(summary);
  }

 private:
  std::string request_body(const PromptBundle& bundle) const {
    nlohmann::json req;
    req["model"] = config_.model;
    req["messages"] = nlohmann::json::array(
        {{{"role", "system"}, {"content", bundle.system_text}},
         {{"role", "user"}, {"content", bundle.user_text}}});
    req["temperature"] = bundle.params.temperature;
    req["max_tokens"] = bundle.params.max_tokens;
    if (bundle.params.seed) req["seed"] = *bundle.params.seed;
    return req.dump();
  }

  static std::string parse_reply(const std::string& body) {
    nlohmann::json doc = nlohmann::json::parse(body, nullptr, false);
    if (doc.is_discarded())
      throw RemoteProtocolError("reply body is not valid JSON");
    const auto* cursor = &doc;
    auto choices = cursor->find("choices");
    if (choices == cursor->end() || !choices->is_array() || choices->empty())
      throw RemoteProtocolError("reply lacks a non-empty 'choices' array");
    const auto& first = (*choices)[0];
    if (!first.contains("message") || !first["message"].is_object())
      throw RemoteProtocolError("reply choice lacks 'message'");
    const auto& message = first["message"];
    auto content = message.find("content");
    if (content == message.end() || !content->is_string() ||
        content->get<std::string>().empty())
      throw RemoteProtocolError("reply message lacks non-empty 'content'");
    return content->get<std::string>();
  }

  void backoff(int retry_no) const {
    const double exact =
        config_.initial_backoff_ms * std::pow(2.0, retry_no - 1);
    const int delay_ms = static_cast<int>(std::min<double>(
        exact, static_cast<double>(config_.max_backoff_ms)));
    if (sleeper_) {
      sleeper_(delay_ms);
    } else {
      std::this_thread::sleep_for(std::chrono::milliseconds(delay_ms));
    }
  }

  RemoteBackendConfig config_;
  std::function<void(int)> sleeper_;
};

}  // namespace wella

#include <catch2/catch_amalgamated.hpp>

#include <atomic>
#include <cstdlib>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "wella/backend_remote.hpp"
#include "wella/scenario.hpp"
#include "wella/trajectory.hpp"

using namespace wella;

namespace {

// Minimal loopback chat-completion stub. Each test instance owns its port;
// the handler runs on the server thread, so shared state sits behind a mutex.
class StubServer {
 public:
  using Handler = std::function<void(const httplib::Request&,
                                     httplib::Response&, int call_no)>;

  explicit StubServer(Handler handler) : handler_(std::move(handler)) {
    server_.Post("/v1/chat/completions",
                 [this](const httplib::Request& req, httplib::Response& res) {
                   int call_no;
                   {
                     std::lock_guard<std::mutex> lock(mutex_);
                     call_no = ++calls_;
                     last_body_ = req.body;
                     if (req.has_header("Authorization"))
                       last_auth_ = req.get_header_value("Authorization");
                     else
                       last_auth_.clear();
                   }
                   handler_(req, res, call_no);
                 });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  ~StubServer() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  std::string base_url() const {
    return "http://127.0.0.1:" + std::to_string(port_);
  }
  int calls() {
    std::lock_guard<std::mutex> lock(mutex_);
    return calls_;
  }
  std::string last_body() {
    std::lock_guard<std::mutex> lock(mutex_);
    return last_body_;
  }
  std::string last_auth() {
    std::lock_guard<std::mutex> lock(mutex_);
    return last_auth_;
  }

 private:
  httplib::Server server_;
  Handler handler_;
  std::thread thread_;
  int port_ = 0;
  std::mutex mutex_;
  int calls_ = 0;
  std::string last_body_;
  std::string last_auth_;
};

void reply_ok(httplib::Response& res, const std::string& content) {
  nlohmann::json body;
  body["choices"] = {{{"message", {{"content", content}}}}};
  res.set_content(body.dump(), "application/json");
}

PromptBundle sample_bundle() {
  const ScenarioSpec scenario =
      load_scenario_file(WELLA_SAMPLES_DIR "/scenarios/accident-001.json");
  return build_prompt(scenario, Role::RO1, Instrument::Both);
}

RemoteBackendConfig config_for(const StubServer& server) {
  RemoteBackendConfig config;
  config.base_url = server.base_url();
  config.model = "test-model";
  config.api_key_env = "WELLA_TEST_KEY";
  config.max_retries = 0;
  config.initial_backoff_ms = 200;
  config.max_backoff_ms = 5000;
  return config;
}

}  // namespace

TEST_CASE("a healthy endpoint round-trips the chat wire shape") {
  StubServer server([](const httplib::Request&, httplib::Response& res,
                       int) { reply_ok(res, "assessment text"); });
  RemoteChatBackend backend(config_for(server));
  ::unsetenv("WELLA_TEST_KEY");

  PromptBundle bundle = sample_bundle();
  bundle.params.temperature = 0.25;
  bundle.params.max_tokens = 512;

  SECTION("without a seed") {
    const auto result = backend.generate_detailed(bundle);
    CHECK(result.text == "assessment text");
    CHECK(result.attempts == 1);
    CHECK(server.calls() == 1);

    const auto body = nlohmann::json::parse(server.last_body());
    CHECK(body.at("model") == "test-model");
    REQUIRE(body.at("messages").size() == 2);
    CHECK(body["messages"][0].at("role") == "system");
    CHECK(body["messages"][0].at("content") == bundle.system_text);
    CHECK(body["messages"][1].at("role") == "user");
    CHECK(body["messages"][1].at("content") == bundle.user_text);
    CHECK(body.at("temperature").get<double>() == 0.25);
    CHECK(body.at("max_tokens").get<int>() == 512);
    CHECK_FALSE(body.contains("seed"));
    CHECK(server.last_auth().empty());  // no key in the environment
  }

  SECTION("with a seed") {
    bundle.params.seed = 11;
    CHECK(backend.generate(bundle) == "assessment text");
    const auto body = nlohmann::json::parse(server.last_body());
    CHECK(body.at("seed").get<std::uint64_t>() == 11);
  }
}

TEST_CASE("the bearer token comes from the configured environment variable") {
  StubServer server([](const httplib::Request&, httplib::Response& res,
                       int) { reply_ok(res, "ok"); });
  RemoteChatBackend backend(config_for(server));

  ::setenv("WELLA_TEST_KEY", "sk-unit-test-secret", 1);
  backend.generate(sample_bundle());
  CHECK(server.last_auth() == "Bearer sk-unit-test-secret");

  // An empty value is treated as absent.
  ::setenv("WELLA_TEST_KEY", "", 1);
  backend.generate(sample_bundle());
  CHECK(server.last_auth().empty());
  ::unsetenv("WELLA_TEST_KEY");
}

TEST_CASE("authentication failures are terminal and never retried") {
  StubServer server([](const httplib::Request&, httplib::Response& res, int) {
    res.status = 401;
    res.set_content("{}", "application/json");
  });
  auto config = config_for(server);
  config.max_retries = 5;  // must be ignored for auth failures
  RemoteChatBackend backend(config);
  ::setenv("WELLA_TEST_KEY", "sk-unit-test-secret", 1);

  try {
    backend.generate(sample_bundle());
    FAIL("expected AuthError");
  } catch (const AuthError& e) {
    const std::string what = e.what();
    CHECK(what.find("WELLA_TEST_KEY") != std::string::npos);
    // The message points at the variable, never the credential itself.
    CHECK(what.find("sk-unit-test-secret") == std::string::npos);
    CHECK(e.code() == "auth_error");
  }
  CHECK(server.calls() == 1);
  ::unsetenv("WELLA_TEST_KEY");
}

TEST_CASE("transient server errors are retried with exponential backoff") {
  StubServer server([](const httplib::Request&, httplib::Response& res,
                       int call_no) {
    if (call_no <= 2) {
      res.status = 500;
      res.set_content("boom", "text/plain");
    } else {
      reply_ok(res, "eventually fine");
    }
  });
  auto config = config_for(server);
  config.max_retries = 3;
  RemoteChatBackend backend(config);
  std::vector<int> sleeps;
  backend.set_sleeper([&sleeps](int ms) { sleeps.push_back(ms); });

  const auto result = backend.generate_detailed(sample_bundle());
  CHECK(result.text == "eventually fine");
  CHECK(result.attempts == 3);
  CHECK(server.calls() == 3);
  CHECK(sleeps == std::vector<int>{200, 400});
}

TEST_CASE("persistent rate limiting surfaces as a quota error") {
  StubServer server([](const httplib::Request&, httplib::Response& res, int) {
    res.status = 429;
    res.set_content("slow down", "text/plain");
  });
  auto config = config_for(server);
  config.max_retries = 2;
  RemoteChatBackend backend(config);
  std::vector<int> sleeps;
  backend.set_sleeper([&sleeps](int ms) { sleeps.push_back(ms); });

  CHECK_THROWS_AS(backend.generate(sample_bundle()), QuotaError);
  CHECK(server.calls() == 3);  // 1 + 2 retries
  CHECK(sleeps.size() == 2);
}

TEST_CASE("non-retryable client errors fail on the first attempt") {
  StubServer server([](const httplib::Request&, httplib::Response& res, int) {
    res.status = 404;
    res.set_content("nope", "text/plain");
  });
  auto config = config_for(server);
  config.max_retries = 5;
  RemoteChatBackend backend(config);

  CHECK_THROWS_AS(backend.generate(sample_bundle()), RemoteProtocolError);
  CHECK(server.calls() == 1);
}

TEST_CASE("malformed replies are protocol errors, not retries") {
  SECTION("non-JSON body") {
    StubServer server([](const httplib::Request&, httplib::Response& res,
                         int) { res.set_content("not json", "text/plain"); });
    RemoteChatBackend backend(config_for(server));
    CHECK_THROWS_AS(backend.generate(sample_bundle()), RemoteProtocolError);
    CHECK(server.calls() == 1);
  }
  SECTION("empty choices") {
    StubServer server([](const httplib::Request&, httplib::Response& res,
                         int) {
      res.set_content("{\"choices\":[]}", "application/json");
    });
    RemoteChatBackend backend(config_for(server));
    CHECK_THROWS_AS(backend.generate(sample_bundle()), RemoteProtocolError);
  }
  SECTION("empty content") {
    StubServer server([](const httplib::Request&, httplib::Response& res,
                         int) { reply_ok(res, ""); });
    RemoteChatBackend backend(config_for(server));
    CHECK_THROWS_AS(backend.generate(sample_bundle()), RemoteProtocolError);
  }
}

TEST_CASE("backoff delays are capped") {
  StubServer server([](const httplib::Request&, httplib::Response& res, int) {
    res.status = 500;
    res.set_content("down", "text/plain");
  });
  auto config = config_for(server);
  config.max_retries = 3;
  config.initial_backoff_ms = 200;
  config.max_backoff_ms = 300;
  RemoteChatBackend backend(config);
  std::vector<int> sleeps;
  backend.set_sleeper([&sleeps](int ms) { sleeps.push_back(ms); });

  try {
    backend.generate(sample_bundle());
    FAIL("expected BackendUnavailable");
  } catch (const BackendUnavailable& e) {
    CHECK(std::string(e.what()).find("after 4 attempts") != std::string::npos);
  }
  CHECK(sleeps == std::vector<int>{200, 300, 300});
  CHECK(server.calls() == 4);
}

TEST_CASE("an unreachable host exhausts transport retries") {
  RemoteBackendConfig config;
  config.base_url = "http://127.0.0.1:9";  // nothing listens here
  config.model = "test-model";
  config.max_retries = 1;
  config.timeout_sec = 2;
  RemoteChatBackend backend(config);
  backend.set_sleeper([](int) {});

  CHECK_THROWS_AS(backend.generate(sample_bundle()), BackendUnavailable);
}

TEST_CASE("configuration is validated up front") {
  RemoteBackendConfig config;
  config.base_url = "http://127.0.0.1:9";
  try {
    RemoteChatBackend backend(config);  // no model
    FAIL("expected Error");
  } catch (const Error& e) {
    CHECK(e.code() == "invalid_config");
  }

  config.model = "gpt-4o";
  RemoteChatBackend named(config);
  CHECK(named.id() == "remote:gpt-4o");
}

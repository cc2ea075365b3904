#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "wella/backend_remote.hpp"
#include "wella/errors.hpp"
#include "wella/orchestrator.hpp"
#include "wella/trajectory.hpp"

namespace wella {

// ---------------------------------------------------------------------------
// Harness configuration: one JSON document selects the backend and the
// session policy. Snapshots of the effective config are written next to run
// outputs; they identify the API-key environment variable by name but never
// contain key material.
// ---------------------------------------------------------------------------

class InvalidConfig : public Error {
 public:
  explicit InvalidConfig(const std::string& message)
      : Error("invalid_config", message) {}
};

enum class BackendKind { Mock, Remote };

inline constexpr std::string_view to_string(BackendKind kind) noexcept {
  return kind == BackendKind::Mock ? "mock" : "remote";
}

inline BackendKind backend_kind_from_string(const std::string& text) {
  if (text == "mock") return BackendKind::Mock;
  if (text == "remote") return BackendKind::Remote;
  throw InvalidConfig("unknown backend '" + text + "' (use mock or remote)");
}

struct HarnessConfig {
  BackendKind backend = BackendKind::Mock;
  std::uint64_t mock_seed = 0;
  RemoteBackendConfig remote;
  Instrument instrument = Instrument::Both;
  GenerationParams params;
  int max_parse_retries = 2;
  bool parallel = false;
  std::string run_dir = "runs";

  friend bool operator==(const HarnessConfig&, const HarnessConfig&) = default;
};

inline void validate_config(const HarnessConfig& config) {
  if (config.backend == BackendKind::Remote && config.remote.model.empty())
    throw InvalidConfig("remote backend requires remote.model");
  if (config.max_parse_retries < 0)
    throw InvalidConfig("max_parse_retries must be >= 0");
  if (config.run_dir.empty()) throw InvalidConfig("run_dir must not be empty");
  if (config.params.max_tokens <= 0)
    throw InvalidConfig("max_tokens must be > 0");
  if (config.params.temperature < 0.0)
    throw InvalidConfig("temperature must be >= 0");
  if (config.backend == BackendKind::Remote) {
    const auto& r = config.remote;
    if (r.base_url.empty()) throw InvalidConfig("remote.base_url is required");
    if (r.max_retries < 0)
      throw InvalidConfig("remote.max_retries must be >= 0");
    if (r.initial_backoff_ms <= 0 || r.max_backoff_ms < r.initial_backoff_ms)
      throw InvalidConfig("remote backoff bounds are inconsistent");
    if (r.timeout_sec <= 0) throw InvalidConfig("remote.timeout_sec must be > 0");
  }
}

inline HarnessConfig config_from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw InvalidConfig("config must be a JSON object");
  HarnessConfig config;

  auto get_string = [&](const nlohmann::json& obj, const char* name,
                        std::string& into) {
    if (auto it = obj.find(name); it != obj.end()) {
      if (!it->is_string())
        throw InvalidConfig(std::string("'") + name + "' must be a string");
      into = it->get<std::string>();
    }
  };
  auto get_int = [&](const nlohmann::json& obj, const char* name, int& into) {
    if (auto it = obj.find(name); it != obj.end()) {
      if (!it->is_number_integer())
        throw InvalidConfig(std::string("'") + name + "' must be an integer");
      into = it->get<int>();
    }
  };

  if (auto it = doc.find("backend"); it != doc.end()) {
    if (!it->is_string()) throw InvalidConfig("'backend' must be a string");
    config.backend = backend_kind_from_string(it->get<std::string>());
  }
  if (auto it = doc.find("mock"); it != doc.end()) {
    if (!it->is_object()) throw InvalidConfig("'mock' must be an object");
    if (auto seed = it->find("seed"); seed != it->end()) {
      if (!seed->is_number_unsigned())
        throw InvalidConfig("'mock.seed' must be a non-negative integer");
      config.mock_seed = seed->get<std::uint64_t>();
    }
  }
  if (auto it = doc.find("remote"); it != doc.end()) {
    if (!it->is_object()) throw InvalidConfig("'remote' must be an object");
    get_string(*it, "base_url", config.remote.base_url);
    get_string(*it, "path", config.remote.path);
    get_string(*it, "model", config.remote.model);
    get_string(*it, "api_key_env", config.remote.api_key_env);
    get_int(*it, "max_retries", config.remote.max_retries);
    get_int(*it, "initial_backoff_ms", config.remote.initial_backoff_ms);
    get_int(*it, "max_backoff_ms", config.remote.max_backoff_ms);
    get_int(*it, "timeout_sec", config.remote.timeout_sec);
  }
  if (auto it = doc.find("instrument"); it != doc.end()) {
    if (!it->is_string()) throw InvalidConfig("'instrument' must be a string");
    try {
      config.instrument = instrument_from_string(it->get<std::string>());
    } catch (const MalformedDocument& e) {
      throw InvalidConfig(e.what());
    }
  }
  if (auto it = doc.find("temperature"); it != doc.end()) {
    if (!it->is_number()) throw InvalidConfig("'temperature' must be a number");
    config.params.temperature = it->get<double>();
  }
  get_int(doc, "max_tokens", config.params.max_tokens);
  if (auto it = doc.find("seed"); it != doc.end()) {
    if (!it->is_number_unsigned())
      throw InvalidConfig("'seed' must be a non-negative integer");
    config.params.seed = it->get<std::uint64_t>();
  }
  get_int(doc, "max_parse_retries", config.max_parse_retries);
  if (auto it = doc.find("parallel"); it != doc.end()) {
    if (!it->is_boolean()) throw InvalidConfig("'parallel' must be a boolean");
    config.parallel = it->get<bool>();
  }
  get_string(doc, "run_dir", config.run_dir);

  validate_config(config);
  return config;
}

inline HarnessConfig parse_config(const std::string& text) {
  nlohmann::json doc = nlohmann::json::parse(text, nullptr, false);
  if (doc.is_discarded()) throw InvalidConfig("config is not valid JSON");
  return config_from_json(doc);
}

inline HarnessConfig load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  try {
    return parse_config(buffer.str());
  } catch (const InvalidConfig& e) {
    throw InvalidConfig(path.string() + ": " + e.what());
  }
}

// Effective-config snapshot; round-trips through config_from_json. Secrets
// never appear here: the remote block names the env var, not its value.
inline nlohmann::json config_to_json(const HarnessConfig& config) {
  nlohmann::json doc;
  doc["backend"] = std::string(to_string(config.backend));
  doc["mock"] = {{"seed", config.mock_seed}};
  doc["remote"] = {{"base_url", config.remote.base_url},
                   {"path", config.remote.path},
                   {"model", config.remote.model},
                   {"api_key_env", config.remote.api_key_env},
                   {"max_retries", config.remote.max_retries},
                   {"initial_backoff_ms", config.remote.initial_backoff_ms},
                   {"max_backoff_ms", config.remote.max_backoff_ms},
                   {"timeout_sec", config.remote.timeout_sec}};
  doc["instrument"] = std::string(to_string(config.instrument));
  doc["temperature"] = config.params.temperature;
  doc["max_tokens"] = config.params.max_tokens;
  if (config.params.seed) doc["seed"] = *config.params.seed;
  doc["max_parse_retries"] = config.max_parse_retries;
  doc["parallel"] = config.parallel;
  doc["run_dir"] = config.run_dir;
  return doc;
}

inline void write_config_snapshot(const HarnessConfig& config,
                                  const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << config_to_json(config).dump(2) << '\n';
  out.flush();
  if (!out) throw IoError("failed writing " + path.string());
}

inline std::unique_ptr<GenerationBackend> make_backend(
    const HarnessConfig& config) {
  validate_config(config);
  if (config.backend == BackendKind::Mock)
    return std::make_unique<MockBackend>(config.mock_seed);
  return std::make_unique<RemoteChatBackend>(config.remote);
}

inline SessionOptions session_options(const HarnessConfig& config) {
  SessionOptions opts;
  opts.instrument = config.instrument;
  opts.params = config.params;
  opts.max_parse_retries = config.max_parse_retries;
  opts.parallel = config.parallel;
  return opts;
}

}  // namespace wella

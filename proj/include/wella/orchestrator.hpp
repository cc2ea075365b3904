#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "wella/errors.hpp"
#include "wella/rng.hpp"
#include "wella/scenario.hpp"
#include "wella/survey.hpp"
#include "wella/trajectory.hpp"

namespace wella {

// ---------------------------------------------------------------------------
// Crew orchestrator: runs the five-role crew against a generation backend for
// one scenario, applying the bounded regeneration policy on response-grammar
// violations, and (de)serializes sessions as JSONL.
// ---------------------------------------------------------------------------

inline constexpr std::string_view to_string(Instrument instrument) noexcept {
  switch (instrument) {
    case Instrument::Tlx: return "tlx";
    case Instrument::Sart: return "sart";
    case Instrument::Both: return "both";
  }
  return "both";
}

inline Instrument instrument_from_string(const std::string& text) {
  if (text == "tlx") return Instrument::Tlx;
  if (text == "sart") return Instrument::Sart;
  if (text == "both") return Instrument::Both;
  throw MalformedDocument("unknown instrument '" + text + "'");
}

struct WorkloadEstimate {
  std::string scenario_id;
  Role role = Role::RO1;
  std::string backend_id;
  Instrument instrument = Instrument::Both;
  CognitiveTrajectory trajectory;
  std::optional<TlxRating> tlx;
  std::optional<SartRating> sart;
  // Derived scores, present exactly when the matching rating is. `workload`
  // is the unweighted TLX mean in [0,100]; `sa` the SART score in [-14,46].
  std::optional<double> workload;
  std::optional<double> sa;
  std::string raw_response;  // verbatim backend text the estimate came from
  int attempt_count = 1;     // 1 = first try, capped by the retry policy
  std::string created_at;    // ISO-8601 UTC

  friend bool operator==(const WorkloadEstimate&,
                         const WorkloadEstimate&) = default;
};

// Thrown by estimate_role when the regeneration budget is exhausted; carries
// everything needed to turn it into a session FailureRecord.
class EstimationFailed : public Error {
 public:
  EstimationFailed(std::string parse_code, const std::string& message,
                   int attempt_count, std::string last_response)
      : Error("estimation_failed",
              message + " (after " + std::to_string(attempt_count) +
                  " attempts)"),
        parse_code_(std::move(parse_code)),
        attempt_count_(attempt_count),
        last_response_(std::move(last_response)) {}

  const std::string& parse_code() const noexcept { return parse_code_; }
  int attempt_count() const noexcept { return attempt_count_; }
  const std::string& last_response() const noexcept { return last_response_; }

 private:
  std::string parse_code_;
  int attempt_count_;
  std::string last_response_;
};

// A role that exhausted its regeneration budget (or hit a backend failure).
// Failures are data, not exceptions: the rest of the crew still runs.
struct FailureRecord {
  std::string scenario_id;
  Role role = Role::RO1;
  std::string backend_id;
  std::string error_code;
  std::string message;
  int attempt_count = 0;
  std::string last_response;  // last raw text, empty if none was produced
  std::string created_at;

  friend bool operator==(const FailureRecord&, const FailureRecord&) = default;
};

using RoleOutcome = std::variant<WorkloadEstimate, FailureRecord>;

inline bool is_estimate(const RoleOutcome& outcome) noexcept {
  return std::holds_alternative<WorkloadEstimate>(outcome);
}

inline Role role_of(const RoleOutcome& outcome) noexcept {
  return is_estimate(outcome) ? std::get<WorkloadEstimate>(outcome).role
                              : std::get<FailureRecord>(outcome).role;
}

struct CrewSession {
  std::string scenario_id;
  std::string backend_id;
  Instrument instrument = Instrument::Both;
  std::optional<std::uint64_t> session_seed;
  std::array<RoleOutcome, 5> outcomes;  // canonical role order

  std::size_t estimate_count() const {
    std::size_t n = 0;
    for (const auto& outcome : outcomes)
      if (is_estimate(outcome)) ++n;
    return n;
  }

  friend bool operator==(const CrewSession&, const CrewSession&) = default;
};

inline std::string now_utc_iso8601() {
  const std::time_t t =
      std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[72];
  std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:%02d:%02dZ",
                tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday, tm.tm_hour,
                tm.tm_min, tm.tm_sec);
  return buf;
}

struct SessionOptions {
  Instrument instrument = Instrument::Both;
  // params.seed is the session seed; each role then generates with
  // mix64(session_seed, fnv1a64(role_name)) so role streams are independent
  // yet fully reproducible.
  GenerationParams params;
  int max_parse_retries = 2;  // regenerations after the first attempt
  bool parallel = false;      // run the five roles on separate threads
  PromptTemplate prompt_template = default_prompt_template();
  // Injectable for reproducible records in tests; defaults to the wall clock.
  std::function<std::string()> timestamper;
};

namespace detail {

inline std::string stamp(const SessionOptions& opts) {
  return opts.timestamper ? opts.timestamper() : now_utc_iso8601();
}

}  // namespace detail

// Runs one role to completion. `opts.params.seed` is used as-is (callers
// running whole sessions derive the per-role seed first; see estimate_crew).
// Grammar violations trigger up to opts.max_parse_retries regenerations, each
// with the rejection appended to the prompt; a role whose budget runs out
// raises EstimationFailed, and backend transport failures propagate as
// BackendError. estimate_crew converts both into FailureRecords.
inline WorkloadEstimate estimate_role(GenerationBackend& backend,
                                      const ScenarioSpec& scenario, Role role,
                                      const SessionOptions& opts) {
  const PromptBundle base =
      build_prompt(scenario, role, opts.instrument, opts.prompt_template);

  std::string corrections;
  std::string last_response;
  std::string last_code;
  std::string last_message;
  const int max_attempts = 1 + std::max(0, opts.max_parse_retries);
  for (int attempt = 1; attempt <= max_attempts; ++attempt) {
    PromptBundle bundle = base;
    bundle.params = opts.params;
    bundle.user_text += corrections;
    std::string raw = backend.generate(bundle);
    try {
      ParsedResponse parsed = parse_response(raw, opts.instrument);
      WorkloadEstimate estimate;
      estimate.scenario_id = scenario.id;
      estimate.role = role;
      estimate.backend_id = backend.id();
      estimate.instrument = opts.instrument;
      estimate.trajectory = std::move(parsed.trajectory);
      estimate.tlx = parsed.tlx;
      estimate.sart = parsed.sart;
      if (estimate.tlx) estimate.workload = tlx_workload(*estimate.tlx);
      if (estimate.sart) estimate.sa = sart_sa(*estimate.sart);
      estimate.raw_response = std::move(raw);
      estimate.attempt_count = attempt;
      estimate.created_at = detail::stamp(opts);
      return estimate;
    } catch (const ResponseParseError& e) {
      last_response = std::move(raw);
      last_code = e.code();
      last_message = e.what();
      corrections += "\n## Correction (after attempt " +
                     std::to_string(attempt) + ")\nYour previous reply was "
                     "rejected: " + last_message +
                     ". Reply again, following the output format exactly.\n";
    }
  }
  throw EstimationFailed(last_code, last_message, max_attempts, last_response);
}

// Runs all five roles (RO1, RO2, RO3, CO, SO). With opts.parallel the roles
// run on separate threads; because each role draws from its own derived seed,
// the resulting session is identical to a sequential run.
inline CrewSession estimate_crew(GenerationBackend& backend,
                                 const ScenarioSpec& scenario,
                                 const SessionOptions& opts = {}) {
  validate_scenario(scenario);

  CrewSession session;
  session.scenario_id = scenario.id;
  session.backend_id = backend.id();
  session.instrument = opts.instrument;
  session.session_seed = opts.params.seed;

  auto run_role = [&](std::size_t i) -> RoleOutcome {
    const Role role = kCrewRoles[i];
    SessionOptions role_opts = opts;
    if (opts.params.seed)
      role_opts.params.seed =
          mix64(*opts.params.seed, fnv1a64(to_string(role)));
    try {
      return estimate_role(backend, scenario, role, role_opts);
    } catch (const EstimationFailed& e) {
      FailureRecord failure;
      failure.scenario_id = scenario.id;
      failure.role = role;
      failure.backend_id = backend.id();
      failure.error_code = e.parse_code();
      failure.message = e.what();
      failure.attempt_count = e.attempt_count();
      failure.last_response = e.last_response();
      failure.created_at = detail::stamp(role_opts);
      return failure;
    } catch (const BackendError& e) {
      FailureRecord failure;
      failure.scenario_id = scenario.id;
      failure.role = role;
      failure.backend_id = backend.id();
      failure.error_code = e.code();
      failure.message = e.what();
      failure.attempt_count = 0;  // no parse attempt completed
      failure.created_at = detail::stamp(role_opts);
      return failure;
    }
  };

  if (!opts.parallel) {
    for (std::size_t i = 0; i < kCrewRoles.size(); ++i)
      session.outcomes[i] = run_role(i);
    return session;
  }

  std::array<std::exception_ptr, 5> errors{};
  std::array<std::thread, 5> workers;
  for (std::size_t i = 0; i < kCrewRoles.size(); ++i) {
    workers[i] = std::thread([&, i] {
      try {
        session.outcomes[i] = run_role(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    });
  }
  for (auto& worker : workers) worker.join();
  for (const auto& error : errors)
    if (error) std::rethrow_exception(error);
  return session;
}

// --- session JSONL ---------------------------------------------------------
//
// One line per role outcome, in canonical role order, each line a JSON object
// discriminated by "kind" ("estimate" | "failure"). Field names are stable;
// downstream tooling may consume these files directly.

namespace detail {

inline nlohmann::json tlx_to_json(const TlxRating& tlx) {
  nlohmann::json out;
  out["mental_demand"] = tlx.mental_demand;
  out["physical_demand"] = tlx.physical_demand;
  out["temporal_demand"] = tlx.temporal_demand;
  out["effort"] = tlx.effort;
  out["performance"] = tlx.performance;
  out["frustration"] = tlx.frustration;
  return out;
}

inline TlxRating tlx_from_json(const nlohmann::json& spec) {
  auto field = [&](const char* name) -> double {
    auto it = spec.find(name);
    if (it == spec.end() || !it->is_number())
      throw MalformedDocument(std::string("tlx record lacks numeric '") +
                              name + "'");
    return it->get<double>();
  };
  return TlxRating{field("mental_demand"), field("physical_demand"),
                   field("temporal_demand"), field("effort"),
                   field("performance"),    field("frustration")};
}

inline SartRating sart_from_json(const nlohmann::json& spec) {
  if (!spec.is_array() || spec.size() != 10)
    throw MalformedDocument("sart record must be an array of 10 numbers");
  SartRating rating;
  for (std::size_t i = 0; i < 10; ++i) {
    if (!spec[i].is_number())
      throw MalformedDocument("sart record must be an array of 10 numbers");
    rating.items[i] = spec[i].get<double>();
  }
  return rating;
}

}  // namespace detail

inline nlohmann::json outcome_to_json(const RoleOutcome& outcome,
                                      const CrewSession& session) {
  nlohmann::json line;
  if (session.session_seed) line["session_seed"] = *session.session_seed;
  line["instrument"] = std::string(to_string(session.instrument));
  if (is_estimate(outcome)) {
    const auto& e = std::get<WorkloadEstimate>(outcome);
    line["kind"] = "estimate";
    line["scenario_id"] = e.scenario_id;
    line["role"] = std::string(to_string(e.role));
    line["backend_id"] = e.backend_id;
    line["trajectory"] = trajectory_to_json(e.trajectory);
    if (e.tlx) line["tlx"] = detail::tlx_to_json(*e.tlx);
    if (e.sart) {
      auto items = nlohmann::json::array();
      for (double v : e.sart->items) items.push_back(v);
      line["sart"] = std::move(items);
    }
    if (e.workload) line["workload"] = *e.workload;
    if (e.sa) line["sa"] = *e.sa;
    line["raw_response"] = e.raw_response;
    line["attempt_count"] = e.attempt_count;
    line["created_at"] = e.created_at;
  } else {
    const auto& f = std::get<FailureRecord>(outcome);
    line["kind"] = "failure";
    line["scenario_id"] = f.scenario_id;
    line["role"] = std::string(to_string(f.role));
    line["backend_id"] = f.backend_id;
    line["error_code"] = f.error_code;
    line["message"] = f.message;
    line["attempt_count"] = f.attempt_count;
    if (!f.last_response.empty()) line["last_response"] = f.last_response;
    line["created_at"] = f.created_at;
  }
  return line;
}

inline std::string session_to_jsonl(const CrewSession& session) {
  std::ostringstream out;
  for (const auto& outcome : session.outcomes)
    out << outcome_to_json(outcome, session).dump() << '\n';
  return out.str();
}

inline CrewSession session_from_jsonl(const std::string& text,
                                      const std::string& source = "session") {
  CrewSession session;
  std::array<bool, 5> seen{};
  std::istringstream in(text);
  std::string raw_line;
  std::size_t parsed_lines = 0;
  while (std::getline(in, raw_line)) {
    if (!raw_line.empty() && raw_line.back() == '\r') raw_line.pop_back();
    if (raw_line.empty()) continue;
    nlohmann::json line = nlohmann::json::parse(raw_line, nullptr, false);
    if (line.is_discarded() || !line.is_object())
      throw MalformedDocument(source + ": line is not a JSON object");
    auto str = [&](const char* name) -> std::string {
      auto it = line.find(name);
      if (it == line.end() || !it->is_string())
        throw MalformedDocument(source + ": record lacks string '" +
                                std::string(name) + "'");
      return it->get<std::string>();
    };
    const Role role = role_from_string(str("role"));
    const std::size_t slot = role_index(role);
    if (seen[slot])
      throw MalformedDocument(source + ": duplicate record for role " +
                              std::string(to_string(role)));
    seen[slot] = true;

    if (parsed_lines == 0) {
      session.scenario_id = str("scenario_id");
      session.backend_id = str("backend_id");
      session.instrument = instrument_from_string(str("instrument"));
      if (auto it = line.find("session_seed");
          it != line.end() && it->is_number_unsigned())
        session.session_seed = it->get<std::uint64_t>();
    } else if (str("scenario_id") != session.scenario_id) {
      throw MalformedDocument(source + ": records span multiple scenarios");
    }
    ++parsed_lines;

    const std::string kind = str("kind");
    if (kind == "estimate") {
      WorkloadEstimate e;
      e.scenario_id = str("scenario_id");
      e.role = role;
      e.backend_id = str("backend_id");
      e.instrument = instrument_from_string(str("instrument"));
      auto traj_it = line.find("trajectory");
      if (traj_it == line.end())
        throw MalformedDocument(source + ": estimate lacks 'trajectory'");
      try {
        e.trajectory = trajectory_from_json(*traj_it);
      } catch (const ResponseParseError& err) {
        throw MalformedDocument(source + ": " + err.what());
      }
      if (auto it = line.find("tlx"); it != line.end())
        e.tlx = detail::tlx_from_json(*it);
      if (auto it = line.find("sart"); it != line.end())
        e.sart = detail::sart_from_json(*it);
      if (auto it = line.find("workload"); it != line.end() && it->is_number())
        e.workload = it->get<double>();
      if (auto it = line.find("sa"); it != line.end() && it->is_number())
        e.sa = it->get<double>();
      if (auto it = line.find("raw_response");
          it != line.end() && it->is_string())
        e.raw_response = it->get<std::string>();
      if (auto it = line.find("attempt_count");
          it != line.end() && it->is_number_integer())
        e.attempt_count = it->get<int>();
      if (auto it = line.find("created_at"); it != line.end() && it->is_string())
        e.created_at = it->get<std::string>();
      session.outcomes[slot] = std::move(e);
    } else if (kind == "failure") {
      FailureRecord f;
      f.scenario_id = str("scenario_id");
      f.role = role;
      f.backend_id = str("backend_id");
      f.error_code = str("error_code");
      f.message = str("message");
      if (auto it = line.find("attempt_count");
          it != line.end() && it->is_number_integer())
        f.attempt_count = it->get<int>();
      if (auto it = line.find("last_response");
          it != line.end() && it->is_string())
        f.last_response = it->get<std::string>();
      if (auto it = line.find("created_at"); it != line.end() && it->is_string())
        f.created_at = it->get<std::string>();
      session.outcomes[slot] = std::move(f);
    } else {
      throw MalformedDocument(source + ": unknown record kind '" + kind + "'");
    }
  }
  if (parsed_lines != 5)
    throw MalformedDocument(source + ": expected 5 role records, found " +
                            std::to_string(parsed_lines));
  return session;
}

// Writes `<dir>/<scenario_id>.jsonl`, creating directories as needed, and
// returns the path written.
inline std::filesystem::path write_session_file(
    const CrewSession& session, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec)
    throw IoError("cannot create directory " + dir.string() + ": " +
                  ec.message());
  const std::filesystem::path path = dir / (session.scenario_id + ".jsonl");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << session_to_jsonl(session);
  out.flush();
  if (!out) throw IoError("failed writing " + path.string());
  return path;
}

inline CrewSession load_session_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return session_from_jsonl(buffer.str(), path.filename().string());
}

}  // namespace wella

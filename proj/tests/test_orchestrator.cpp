#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <filesystem>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "wella/orchestrator.hpp"
#include "wella/scenario.hpp"
#include "wella/survey.hpp"
#include "wella/trajectory.hpp"

using namespace wella;

namespace {

ScenarioSpec sample_scenario() {
  return load_scenario_file(WELLA_SAMPLES_DIR "/scenarios/startup-001.json");
}

CognitiveTrajectory make_trajectory() {
  CognitiveTrajectory t;
  for (std::size_t i = 0; i < kPhaseOrder.size(); ++i) {
    t.phases[i].phase = kPhaseOrder[i];
    t.phases[i].narrative = "narrative " + std::string(to_string(kPhaseOrder[i]));
  }
  return t;
}

const TlxRating kTlx{60, 30, 70, 55, 80, 25};
const SartRating kSart =
    make_sart_rating(std::vector<double>{3, 3, 4, 5, 5, 5, 5, 5, 5, 5});

std::string valid_reply() {
  return render_response(make_trajectory(), kTlx, kSart);
}

// Replays a fixed script; once exhausted it repeats the last entry. Records
// every bundle it was asked to answer.
class ScriptedBackend : public GenerationBackend {
 public:
  explicit ScriptedBackend(std::vector<std::string> replies)
      : replies_(std::move(replies)) {}

  std::string generate(const PromptBundle& bundle) override {
    bundles.push_back(bundle);
    const std::size_t index = std::min(calls, replies_.size() - 1);
    ++calls;
    return replies_[index];
  }
  std::string id() const override { return "scripted"; }

  std::vector<PromptBundle> bundles;
  std::size_t calls = 0;

 private:
  std::vector<std::string> replies_;
};

// Delegates to a function; lets a test key behavior off the prompt text.
class FnBackend : public GenerationBackend {
 public:
  explicit FnBackend(std::function<std::string(const PromptBundle&)> fn)
      : fn_(std::move(fn)) {}
  std::string generate(const PromptBundle& bundle) override {
    ++calls;
    return fn_(bundle);
  }
  std::string id() const override { return "scripted"; }
  std::size_t calls = 0;

 private:
  std::function<std::string(const PromptBundle&)> fn_;
};

SessionOptions fixed_clock_options() {
  SessionOptions opts;
  opts.timestamper = [] { return std::string("2025-01-01T00:00:00Z"); };
  return opts;
}

}  // namespace

TEST_CASE("instrument names round-trip") {
  for (Instrument i : {Instrument::Tlx, Instrument::Sart, Instrument::Both})
    CHECK(instrument_from_string(std::string(to_string(i))) == i);
  CHECK(to_string(Instrument::Tlx) == "tlx");
  CHECK(to_string(Instrument::Sart) == "sart");
  CHECK(to_string(Instrument::Both) == "both");
  CHECK_THROWS_AS(instrument_from_string("nasa-tlx"), MalformedDocument);
}

TEST_CASE("a clean first reply produces a complete estimate") {
  ScriptedBackend backend({valid_reply()});
  const ScenarioSpec scenario = sample_scenario();
  SessionOptions opts = fixed_clock_options();

  const WorkloadEstimate estimate =
      estimate_role(backend, scenario, Role::RO2, opts);

  CHECK(estimate.scenario_id == scenario.id);
  CHECK(estimate.role == Role::RO2);
  CHECK(estimate.backend_id == "scripted");
  CHECK(estimate.instrument == Instrument::Both);
  CHECK(estimate.attempt_count == 1);
  CHECK(estimate.created_at == "2025-01-01T00:00:00Z");
  CHECK(estimate.raw_response == valid_reply());
  CHECK(estimate.trajectory == make_trajectory());
  REQUIRE(estimate.tlx.has_value());
  REQUIRE(estimate.workload.has_value());
  CHECK(*estimate.workload == tlx_workload(kTlx));
  REQUIRE(estimate.sart.has_value());
  REQUIRE(estimate.sa.has_value());
  CHECK(*estimate.sa == sart_sa(kSart));
  CHECK(backend.calls == 1);
}

TEST_CASE("rejected replies trigger corrected regeneration") {
  ScriptedBackend backend({"first garbage", "second garbage", valid_reply()});
  SessionOptions opts = fixed_clock_options();  // max_parse_retries defaults 2

  const WorkloadEstimate estimate =
      estimate_role(backend, sample_scenario(), Role::RO1, opts);

  CHECK(estimate.attempt_count == 3);
  REQUIRE(backend.bundles.size() == 3);
  CHECK(backend.bundles[0].user_text.find("## Correction") ==
        std::string::npos);
  CHECK(backend.bundles[1].user_text.find("## Correction (after attempt 1)") !=
        std::string::npos);
  CHECK(backend.bundles[1].user_text.find("rejected:") != std::string::npos);
  // Corrections accumulate: attempt 3 sees both rejection notes.
  CHECK(backend.bundles[2].user_text.find("## Correction (after attempt 1)") !=
        std::string::npos);
  CHECK(backend.bundles[2].user_text.find("## Correction (after attempt 2)") !=
        std::string::npos);
}

TEST_CASE("exhausted retries raise a diagnosable failure") {
  ScriptedBackend backend({"still not JSON"});
  SessionOptions opts = fixed_clock_options();
  opts.max_parse_retries = 2;

  try {
    estimate_role(backend, sample_scenario(), Role::CO, opts);
    FAIL("expected EstimationFailed");
  } catch (const EstimationFailed& e) {
    CHECK(e.attempt_count() == 3);
    CHECK(e.parse_code() == "malformed_response");
    CHECK(e.last_response() == "still not JSON");
    CHECK(e.code() == "estimation_failed");
  }
  CHECK(backend.calls == 3);

  SECTION("zero retries means exactly one attempt") {
    ScriptedBackend one_shot({"still not JSON"});
    SessionOptions strict = fixed_clock_options();
    strict.max_parse_retries = 0;
    CHECK_THROWS_AS(
        estimate_role(one_shot, sample_scenario(), Role::CO, strict),
        EstimationFailed);
    CHECK(one_shot.calls == 1);
  }
}

TEST_CASE("crew estimation turns failures into data, not exceptions") {
  // Only the supervisor prompt carries crew context; fail exactly there.
  FnBackend backend([](const PromptBundle& bundle) {
    if (bundle.user_text.find("## Crew context") != std::string::npos)
      return std::string("no dice");
    return valid_reply();
  });
  SessionOptions opts = fixed_clock_options();

  const CrewSession session =
      estimate_crew(backend, sample_scenario(), opts);

  CHECK(session.estimate_count() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    INFO("outcome " << i);
    CHECK(is_estimate(session.outcomes[i]));
  }
  REQUIRE_FALSE(is_estimate(session.outcomes[4]));
  const auto& failure = std::get<FailureRecord>(session.outcomes[4]);
  CHECK(failure.role == Role::SO);
  CHECK(failure.error_code == "malformed_response");
  CHECK(failure.attempt_count == 3);
  CHECK(failure.last_response == "no dice");
  CHECK(failure.created_at == "2025-01-01T00:00:00Z");

  SECTION("mixed sessions survive the JSONL round trip byte-for-byte") {
    const std::string text = session_to_jsonl(session);
    const CrewSession reloaded = session_from_jsonl(text);
    CHECK(session_to_jsonl(reloaded) == text);
    CHECK(reloaded.estimate_count() == 4);
    CHECK(role_of(reloaded.outcomes[4]) == Role::SO);
  }
}

TEST_CASE("transport failures bypass the regeneration loop") {
  FnBackend backend([](const PromptBundle&) -> std::string {
    throw BackendUnavailable("socket closed");
  });

  SECTION("estimate_role propagates the transport error") {
    CHECK_THROWS_AS(estimate_role(backend, sample_scenario(), Role::RO1,
                                  fixed_clock_options()),
                    BackendUnavailable);
    CHECK(backend.calls == 1);  // no retry on transport errors
  }

  SECTION("estimate_crew records it with a zero attempt count") {
    const CrewSession session =
        estimate_crew(backend, sample_scenario(), fixed_clock_options());
    CHECK(session.estimate_count() == 0);
    for (const RoleOutcome& outcome : session.outcomes) {
      const auto& failure = std::get<FailureRecord>(outcome);
      CHECK(failure.error_code == "backend_unavailable");
      CHECK(failure.attempt_count == 0);
      CHECK(failure.last_response.empty());
    }
  }
}

TEST_CASE("a TLX-only session never mentions situational awareness") {
  ScriptedBackend backend(
      {render_response(make_trajectory(), kTlx, std::nullopt)});
  SessionOptions opts = fixed_clock_options();
  opts.instrument = Instrument::Tlx;

  const WorkloadEstimate estimate =
      estimate_role(backend, sample_scenario(), Role::RO3, opts);
  CHECK(estimate.tlx.has_value());
  CHECK(estimate.workload.has_value());
  CHECK_FALSE(estimate.sart.has_value());
  CHECK_FALSE(estimate.sa.has_value());

  MockBackend mock(5);
  const CrewSession session = estimate_crew(mock, sample_scenario(), opts);
  REQUIRE(session.estimate_count() == 5);
  const std::string text = session_to_jsonl(session);
  CHECK(text.find("\"sa\"") == std::string::npos);
  CHECK(text.find("\"sart\"") == std::string::npos);
  CHECK(text.find("\"workload\"") != std::string::npos);
  CHECK(session_to_jsonl(session_from_jsonl(text)) == text);
}

TEST_CASE("parallel and sequential crews are byte-identical") {
  const ScenarioSpec scenario = sample_scenario();
  SessionOptions opts = fixed_clock_options();
  opts.params.seed = 42;

  MockBackend backend(0);
  const CrewSession sequential = estimate_crew(backend, scenario, opts);

  opts.parallel = true;
  const CrewSession parallel = estimate_crew(backend, scenario, opts);

  CHECK(session_to_jsonl(sequential) == session_to_jsonl(parallel));
  CHECK(sequential.session_seed == 42);

  // The session seed is recorded on every line.
  const std::string text = session_to_jsonl(sequential);
  std::istringstream in(text);
  std::string line;
  std::size_t lines = 0;
  while (std::getline(in, line)) {
    ++lines;
    const auto record = nlohmann::json::parse(line);
    CHECK(record.at("session_seed").get<std::uint64_t>() == 42);
    CHECK(record.at("kind") == "estimate");
    CHECK(record.at("instrument") == "both");
  }
  CHECK(lines == 5);
}

TEST_CASE("roles draw distinct seeds from the session seed") {
  SessionOptions opts = fixed_clock_options();
  opts.params.seed = 42;
  MockBackend backend(0);
  const CrewSession session =
      estimate_crew(backend, sample_scenario(), opts);

  std::set<std::string> raws;
  for (const RoleOutcome& outcome : session.outcomes)
    raws.insert(std::get<WorkloadEstimate>(outcome).raw_response);
  CHECK(raws.size() == 5);  // no two roles share a response
}

TEST_CASE("session files land under the scenario id") {
  MockBackend backend(1);
  const ScenarioSpec scenario = sample_scenario();
  const CrewSession session =
      estimate_crew(backend, scenario, fixed_clock_options());

  const auto dir = std::filesystem::temp_directory_path() /
                   ("wella-orchestrator-test-" +
                    std::to_string(std::random_device{}()));
  const auto path = write_session_file(session, dir);
  CHECK(path == dir / (scenario.id + ".jsonl"));
  REQUIRE(std::filesystem::exists(path));

  const CrewSession reloaded = load_session_file(path);
  CHECK(session_to_jsonl(reloaded) == session_to_jsonl(session));
  std::filesystem::remove_all(dir);
}

TEST_CASE("session parsing rejects structural corruption") {
  MockBackend backend(2);
  const CrewSession session =
      estimate_crew(backend, sample_scenario(), fixed_clock_options());
  const std::string text = session_to_jsonl(session);

  std::vector<std::string> lines;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  REQUIRE(lines.size() == 5);

  auto join = [](const std::vector<std::string>& ls) {
    std::string out;
    for (const auto& l : ls) out += l + "\n";
    return out;
  };

  SECTION("duplicate role") {
    auto mutated = lines;
    mutated[1] = mutated[0];
    CHECK_THROWS_AS(session_from_jsonl(join(mutated)), MalformedDocument);
  }
  SECTION("missing role") {
    auto mutated = lines;
    mutated.pop_back();
    CHECK_THROWS_AS(session_from_jsonl(join(mutated)), MalformedDocument);
  }
  SECTION("mixed scenarios") {
    auto mutated = lines;
    auto record = nlohmann::json::parse(mutated[2]);
    record["scenario_id"] = "someone-else";
    mutated[2] = record.dump();
    CHECK_THROWS_AS(session_from_jsonl(join(mutated)), MalformedDocument);
  }
  SECTION("unknown outcome kind") {
    auto mutated = lines;
    auto record = nlohmann::json::parse(mutated[0]);
    record["kind"] = "novel";
    mutated[0] = record.dump();
    CHECK_THROWS_AS(session_from_jsonl(join(mutated)), MalformedDocument);
  }
  SECTION("non-JSON line") {
    auto mutated = lines;
    mutated[3] = "not json at all";
    CHECK_THROWS_AS(session_from_jsonl(join(mutated)), MalformedDocument);
  }
}

TEST_CASE("an invalid scenario is rejected before any backend call") {
  ScenarioSpec scenario = sample_scenario();
  scenario.plant_state[1].module_no = scenario.plant_state[0].module_no;

  ScriptedBackend backend({valid_reply()});
  CHECK_THROWS_AS(estimate_crew(backend, scenario, fixed_clock_options()),
                  DuplicateModule);
  CHECK(backend.calls == 0);
}

TEST_CASE("default timestamps look like ISO-8601 UTC") {
  SessionOptions opts;  // no timestamper injected
  ScriptedBackend backend({valid_reply()});
  const WorkloadEstimate estimate =
      estimate_role(backend, sample_scenario(), Role::RO1, opts);
  REQUIRE(estimate.created_at.size() == 20);
  CHECK(estimate.created_at[4] == '-');
  CHECK(estimate.created_at[10] == 'T');
  CHECK(estimate.created_at.back() == 'Z');
}

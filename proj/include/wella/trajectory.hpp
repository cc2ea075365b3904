#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "wella/errors.hpp"
#include "wella/rng.hpp"
#include "wella/scenario.hpp"
#include "wella/survey.hpp"

namespace wella {

// ---------------------------------------------------------------------------
// Trajectory engine: builds role-scoped prompts, defines the structured
// response grammar any text-generation backend must emit, and parses raw
// responses into a five-phase macro-cognitive trajectory plus instrument
// answers.
// ---------------------------------------------------------------------------

enum class Phase {
  Detection,
  Understanding,
  DecisionMaking,
  ActionExecution,
  InterTeamCoordination
};

inline constexpr std::array<Phase, 5> kPhaseOrder = {
    Phase::Detection, Phase::Understanding, Phase::DecisionMaking,
    Phase::ActionExecution, Phase::InterTeamCoordination};

inline constexpr std::string_view to_string(Phase phase) noexcept {
  switch (phase) {
    case Phase::Detection: return "detection";
    case Phase::Understanding: return "understanding";
    case Phase::DecisionMaking: return "decision_making";
    case Phase::ActionExecution: return "action_execution";
    case Phase::InterTeamCoordination: return "inter_team_coordination";
  }
  return "detection";
}

struct PhaseEntry {
  Phase phase = Phase::Detection;
  std::string narrative;               // non-empty
  std::vector<std::string> cues;       // cited scenario cues, optional

  friend bool operator==(const PhaseEntry&, const PhaseEntry&) = default;
};

// Exactly five entries in fixed phase order.
struct CognitiveTrajectory {
  std::array<PhaseEntry, 5> phases;

  const PhaseEntry& at(Phase phase) const {
    return phases[static_cast<std::size_t>(phase)];
  }

  friend bool operator==(const CognitiveTrajectory&,
                         const CognitiveTrajectory&) = default;
};

enum class Instrument { Tlx, Sart, Both };

inline bool wants_tlx(Instrument i) noexcept { return i != Instrument::Sart; }
inline bool wants_sart(Instrument i) noexcept { return i != Instrument::Tlx; }

// --- errors ------------------------------------------------------------------

// Family of recoverable response-grammar violations; the orchestrator
// retries generation when it catches one of these.
class ResponseParseError : public Error {
 public:
  using Error::Error;
};

class MissingPhase : public ResponseParseError {
 public:
  explicit MissingPhase(std::string phase)
      : ResponseParseError("missing_phase",
                           "response lacks phase '" + phase + "'"),
        phase_(std::move(phase)) {}

  const std::string& phase() const noexcept { return phase_; }

 private:
  std::string phase_;
};

class MalformedResponse : public ResponseParseError {
 public:
  explicit MalformedResponse(const std::string& message)
      : ResponseParseError("malformed_response", message) {}
};

class OutOfRangeAnswer : public ResponseParseError {
 public:
  OutOfRangeAnswer(std::string field, double value)
      : ResponseParseError("out_of_range_answer",
                           "answer '" + field + "' = " +
                               std::to_string(value) + " is out of range"),
        field_(std::move(field)),
        value_(value) {}

  const std::string& field() const noexcept { return field_; }
  double value() const noexcept { return value_; }

 private:
  std::string field_;
  double value_;
};

// Family of backend transport failures. Never retried by the orchestrator's
// regeneration loop; remote implementations apply their own transport retry
// policy before throwing.
class BackendError : public Error {
 public:
  using Error::Error;
};

class BackendUnavailable : public BackendError {
 public:
  explicit BackendUnavailable(const std::string& message)
      : BackendError("backend_unavailable", message) {}
};

// --- prompt bundle -------------------------------------------------------------

struct GenerationParams {
  double temperature = 0.0;  // reproducibility default
  int max_tokens = 1024;
  std::optional<std::uint64_t> seed;

  friend bool operator==(const GenerationParams&,
                         const GenerationParams&) = default;
};

struct PromptBundle {
  std::string system_text;
  std::string user_text;
  GenerationParams params;

  friend bool operator==(const PromptBundle&, const PromptBundle&) = default;
};

// Behavioral contract for any text-generation backend. Implementations must
// be safe to call from concurrent sessions, surface transport failures as
// BackendError (never as empty text), and honor params.seed when they can.
class GenerationBackend {
 public:
  virtual ~GenerationBackend() = default;

  // Returns raw model text; never an empty string on success.
  virtual std::string generate(const PromptBundle& bundle) = 0;

  // Stable identifier recorded with every estimate (e.g. "mock",
  // "remote:gpt-4o").
  virtual std::string id() const = 0;
};

// --- prompt template -------------------------------------------------------------

inline constexpr std::string_view kPromptTemplateId = "crew-v1";

// All text surrounding the scenario excerpt. The wording ships as overridable
// configuration; the defaults are an original, provisional design.
struct PromptTemplate {
  std::string template_id = std::string(kPromptTemplateId);
  std::string system_preamble =
      "You are {role}, the {duty} in the main control room of a six-module "
      "high-temperature gas-cooled reactor plant. Work through the scenario "
      "as that operator, narrate your cognitive process, rate your own "
      "workload honestly, and reply strictly in the requested JSON format.";
  std::string phase_instructions =
      "Describe your response as exactly five phases, in order: detection, "
      "understanding, decision_making, action_execution, "
      "inter_team_coordination. Each phase needs a non-empty narrative and "
      "may cite scenario cues.";
  std::array<std::string, 6> tlx_items = default_tlx_subscale_texts();
  std::array<std::string, 10> sart_items = default_sart_item_texts();
};

inline const PromptTemplate& default_prompt_template() {
  static const PromptTemplate tpl;
  return tpl;
}

namespace detail {

inline std::string format_number(double value) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%g", value);
  return buf;
}

inline std::string replace_all(std::string text, std::string_view token,
                               std::string_view value) {
  std::size_t pos = 0;
  while ((pos = text.find(token, pos)) != std::string::npos) {
    text.replace(pos, token.size(), value);
    pos += value.size();
  }
  return text;
}

// Stable one-line rendering of a module state; prompt-scoping tests key on
// the "- NSSS module N" prefix.
inline std::string render_module_line(const NsssModuleState& state) {
  std::ostringstream out;
  out << "- NSSS module " << state.module_no << " [status="
      << to_string(state.status)
      << ", water_flow_rate=" << format_number(state.water_flow_rate)
      << " kg/s";
  for (const auto& [name, value] : state.extra_params)
    out << ", " << name << "=" << format_number(value);
  out << "]";
  return out.str();
}

inline void render_view_body(std::ostringstream& out, const RoleView& view) {
  if (view.modules.empty()) {
    out << "No NSSS modules are assigned to you.\n";
  } else {
    for (const auto& state : view.modules)
      out << render_module_line(state) << '\n';
  }
  if (view.conventional_island.has_value() || view.role == Role::CO ||
      view.role == Role::SO) {
    out << "Conventional island: "
        << (view.conventional_island ? *view.conventional_island
                                     : "(no state provided)")
        << '\n';
  }
}

}  // namespace detail

// Deterministic function of (scenario, role, instrument, template). The
// user_text embeds role_view(scenario, role) only: reactor operators never
// see plant states outside their own modules. The SO prompt additionally
// carries the other four crew members' views as coordination context.
inline PromptBundle build_prompt(const ScenarioSpec& scenario, Role role,
                                 Instrument instrument,
                                 const PromptTemplate& tpl =
                                     default_prompt_template()) {
  validate_scenario(scenario);
  const RoleView view = role_view(scenario, role);

  PromptBundle bundle;
  bundle.system_text =
      detail::replace_all(
          detail::replace_all(tpl.system_preamble, "{role}", to_string(role)),
          "{duty}", role_description(role)) +
      " Prompt template: " + tpl.template_id + ".";

  std::ostringstream user;
  user << "## Scenario\n"
       << "id: " << view.scenario_id << '\n'
       << "category: " << to_string(view.category) << '\n'
       << "narrative: " << view.narrative << '\n';

  user << "\n## Your station view\n";
  detail::render_view_body(user, view);

  user << "\n## Your assignment\n"
       << (view.job_note ? *view.job_note
                         : "You are the " + role_description(role) + ".")
       << '\n';

  if (role == Role::SO) {
    user << "\n## Crew context\n";
    for (Role other : kCrewRoles) {
      if (other == Role::SO) continue;
      const RoleView other_view = role_view(scenario, other);
      user << "### " << to_string(other) << " ("
           << role_description(other) << ")\n";
      detail::render_view_body(user, other_view);
      if (other_view.job_note)
        user << "Assignment note: " << *other_view.job_note << '\n';
    }
  }

  user << "\n## Questionnaire\n" << tpl.phase_instructions << '\n';
  if (wants_tlx(instrument)) {
    user << "\nInstrument: NASA-TLX\n"
         << "Rate each subscale as an integer from 0 to 100:\n";
    for (std::size_t i = 0; i < tpl.tlx_items.size(); ++i)
      user << "- " << kTlxSubscaleNames[i] << " — " << tpl.tlx_items[i]
           << '\n';
  }
  if (wants_sart(instrument)) {
    user << "\nInstrument: SART\n"
         << "Rate each item as an integer from 1 to 7:\n";
    for (std::size_t i = 0; i < tpl.sart_items.size(); ++i)
      user << i + 1 << ". " << tpl.sart_items[i] << '\n';
  }

  user << "\n## Output format\n"
       << "Reply with exactly one fenced JSON code block holding a single "
          "object with two keys:\n"
       << "- \"phases\": an array of exactly five objects, in the order "
          "detection, understanding, decision_making, action_execution, "
          "inter_team_coordination; each has \"phase\", a non-empty "
          "\"narrative\", and optionally \"cues\" (array of strings).\n";
  if (instrument == Instrument::Tlx) {
    user << "- \"answers\": an object with key \"tlx\" holding the six "
            "subscale integers.\n";
  } else if (instrument == Instrument::Sart) {
    user << "- \"answers\": an object with key \"sart\" holding an array of "
            "the ten item integers in order.\n";
  } else {
    user << "- \"answers\": an object with keys \"tlx\" (the six subscale "
            "integers) and \"sart\" (array of the ten item integers in "
            "order).\n";
  }
  bundle.user_text = user.str();
  return bundle;
}

// --- response grammar ------------------------------------------------------------
//
// Contract with any backend: one JSON object (optionally inside a ```json
// fence) shaped as
//   { "phases": [ {"phase": "...", "narrative": "...", "cues": [...]} x5 ],
//     "answers": { "tlx": {six named numbers 0-100},
//                  "sart": [ten numbers 1-7] } }
// Phases must appear in canonical order. Backends are instructed to emit
// integers; the parser accepts any number within range so that real-valued
// ground truth survives a round trip.

struct ParsedResponse {
  CognitiveTrajectory trajectory;
  std::optional<TlxRating> tlx;
  std::optional<SartRating> sart;

  friend bool operator==(const ParsedResponse&,
                         const ParsedResponse&) = default;
};

namespace detail {

// Pulls the payload out of the first fenced code block, or returns the whole
// text when no fence is present.
inline std::string extract_payload(const std::string& raw) {
  const std::size_t fence = raw.find("```");
  if (fence == std::string::npos) return raw;
  std::size_t body = raw.find('\n', fence);
  if (body == std::string::npos)
    throw MalformedResponse("unterminated code fence");
  ++body;
  const std::size_t close = raw.find("```", body);
  if (close == std::string::npos)
    throw MalformedResponse("unterminated code fence");
  return raw.substr(body, close - body);
}

inline double answer_number(const nlohmann::json& value,
                            const std::string& field) {
  if (!value.is_number())
    throw MalformedResponse("answer '" + field + "' is not a number");
  return value.get<double>();
}

inline TlxRating parse_tlx_answers(const nlohmann::json& spec) {
  if (!spec.is_object())
    throw MalformedResponse("'answers.tlx' must be an object");
  double values[6];
  for (std::size_t i = 0; i < kTlxSubscaleNames.size(); ++i) {
    const std::string key(kTlxSubscaleNames[i]);
    auto it = spec.find(key);
    if (it == spec.end())
      throw MalformedResponse("'answers.tlx' lacks '" + key + "'");
    values[i] = answer_number(*it, "tlx." + key);
    if (!(values[i] >= 0.0 && values[i] <= 100.0))
      throw OutOfRangeAnswer(key, values[i]);
  }
  return TlxRating{values[0], values[1], values[2],
                   values[3], values[4], values[5]};
}

inline SartRating parse_sart_answers(const nlohmann::json& spec) {
  if (!spec.is_array() || spec.size() != 10)
    throw MalformedResponse("'answers.sart' must be an array of 10 numbers");
  SartRating rating;
  for (std::size_t i = 0; i < 10; ++i) {
    const std::string field = "sart_" + std::to_string(i + 1);
    const double value = answer_number(spec[i], field);
    if (!(value >= 1.0 && value <= 7.0)) throw OutOfRangeAnswer(field, value);
    rating.items[i] = value;
  }
  return rating;
}

}  // namespace detail

namespace detail {

// Shared by response parsing and session-file loading: validates the phase
// array against the canonical five-phase grammar.
inline CognitiveTrajectory parse_phases(const nlohmann::json& phases) {
  if (!phases.is_array()) throw MalformedResponse("'phases' array is missing");

  // Missing phases are reported by name before any order/count complaint so
  // a retry prompt can say exactly what was absent.
  std::vector<std::string> names;
  for (const auto& entry : phases) {
    if (!entry.is_object() || !entry.contains("phase") ||
        !entry["phase"].is_string())
      throw MalformedResponse("each phase entry needs a string 'phase'");
    names.push_back(entry["phase"].get<std::string>());
  }
  for (Phase phase : kPhaseOrder) {
    const std::string expected(to_string(phase));
    if (std::find(names.begin(), names.end(), expected) == names.end())
      throw MissingPhase(expected);
  }
  if (names.size() != 5)
    throw MalformedResponse("expected exactly 5 phases, got " +
                            std::to_string(names.size()));
  for (std::size_t i = 0; i < 5; ++i) {
    if (names[i] != to_string(kPhaseOrder[i]))
      throw MalformedResponse("phases out of order: expected '" +
                              std::string(to_string(kPhaseOrder[i])) +
                              "' at position " + std::to_string(i + 1) +
                              ", got '" + names[i] + "'");
  }

  CognitiveTrajectory trajectory;
  for (std::size_t i = 0; i < 5; ++i) {
    const auto& entry = phases[i];
    PhaseEntry phase_entry;
    phase_entry.phase = kPhaseOrder[i];
    if (!entry.contains("narrative") || !entry["narrative"].is_string() ||
        entry["narrative"].get<std::string>().empty())
      throw MalformedResponse("phase '" + names[i] +
                              "' needs a non-empty 'narrative'");
    phase_entry.narrative = entry["narrative"].get<std::string>();
    if (auto it = entry.find("cues"); it != entry.end()) {
      if (!it->is_array())
        throw MalformedResponse("phase '" + names[i] +
                                "': 'cues' must be an array");
      for (const auto& cue : *it) {
        if (!cue.is_string())
          throw MalformedResponse("phase '" + names[i] +
                                  "': cues must be strings");
        phase_entry.cues.push_back(cue.get<std::string>());
      }
    }
    trajectory.phases[i] = std::move(phase_entry);
  }
  return trajectory;
}

}  // namespace detail

inline nlohmann::json trajectory_to_json(const CognitiveTrajectory& t) {
  auto phases = nlohmann::json::array();
  for (const auto& entry : t.phases) {
    nlohmann::json phase;
    phase["phase"] = std::string(to_string(entry.phase));
    phase["narrative"] = entry.narrative;
    if (!entry.cues.empty()) phase["cues"] = entry.cues;
    phases.push_back(std::move(phase));
  }
  return phases;
}

// Inverse of trajectory_to_json; throws the response-grammar errors.
inline CognitiveTrajectory trajectory_from_json(const nlohmann::json& phases) {
  return detail::parse_phases(phases);
}

inline ParsedResponse parse_response(const std::string& raw,
                                     Instrument instrument) {
  if (raw.empty()) throw MalformedResponse("empty response");
  const std::string payload = detail::extract_payload(raw);
  nlohmann::json doc = nlohmann::json::parse(payload, nullptr, false);
  if (doc.is_discarded())
    throw MalformedResponse("response payload is not valid JSON");
  if (!doc.is_object())
    throw MalformedResponse("response payload must be a JSON object");

  ParsedResponse parsed;
  auto phases_it = doc.find("phases");
  parsed.trajectory = detail::parse_phases(
      phases_it == doc.end() ? nlohmann::json() : *phases_it);

  auto answers_it = doc.find("answers");
  if (answers_it == doc.end() || !answers_it->is_object())
    throw MalformedResponse("'answers' object is missing");
  if (auto it = answers_it->find("tlx"); it != answers_it->end())
    parsed.tlx = detail::parse_tlx_answers(*it);
  if (auto it = answers_it->find("sart"); it != answers_it->end())
    parsed.sart = detail::parse_sart_answers(*it);
  if (wants_tlx(instrument) && !parsed.tlx)
    throw MalformedResponse("'answers.tlx' is required but missing");
  if (wants_sart(instrument) && !parsed.sart)
    throw MalformedResponse("'answers.sart' is required but missing");
  return parsed;
}

// Canonical renderer for the response grammar; the inverse of
// parse_response. Integral values are written as JSON integers.
inline std::string render_response(const CognitiveTrajectory& trajectory,
                                   const std::optional<TlxRating>& tlx,
                                   const std::optional<SartRating>& sart) {
  auto number = [](double v) -> nlohmann::json {
    if (v == static_cast<double>(static_cast<long long>(v)))
      return static_cast<long long>(v);
    return v;
  };

  nlohmann::json body;
  body["phases"] = trajectory_to_json(trajectory);
  auto& answers = body["answers"] = nlohmann::json::object();
  if (tlx) {
    nlohmann::json t;
    t["mental_demand"] = number(tlx->mental_demand);
    t["physical_demand"] = number(tlx->physical_demand);
    t["temporal_demand"] = number(tlx->temporal_demand);
    t["effort"] = number(tlx->effort);
    t["performance"] = number(tlx->performance);
    t["frustration"] = number(tlx->frustration);
    answers["tlx"] = std::move(t);
  }
  if (sart) {
    auto items = nlohmann::json::array();
    for (double v : sart->items) items.push_back(number(v));
    answers["sart"] = std::move(items);
  }
  return "```json\n" + body.dump(2) + "\n```";
}

// --- mock backend ------------------------------------------------------------------

namespace detail {

inline const std::array<std::vector<std::string>, 5>& mock_phrase_banks() {
  static const std::array<std::vector<std::string>, 5> banks = {{
      {"Scanning the overview panel, a deviation on my assigned modules "
       "stands out against the expected trend.",
       "An annunciator draws my eye to the flow indication; I cross-check "
       "the redundant channel before reacting.",
       "Routine board walk-down; the status lamps and flow readouts flag "
       "where the situation is moving."},
      {"Comparing flow rate against the expected band for this plant mode, "
       "I form a picture of which module is driving the change.",
       "The pattern of statuses tells me whether this is a planned "
       "evolution or an upset demanding intervention.",
       "I weigh the narrative against procedure entry conditions to judge "
       "severity and the time available."},
      {"I select the governing procedure and decide the order of actions, "
       "balancing speed against verification steps.",
       "Given the state, I choose to stabilize the affected module first "
       "and defer secondary adjustments.",
       "I rule out the aggressive option; a staged response keeps margins "
       "while the cause is confirmed."},
      {"Executing the selected steps at my station, verifying each control "
       "action takes effect before the next.",
       "I drive the setpoint changes and watch the response; deviations "
       "from expected response would halt the sequence.",
       "Actions go in deliberately: operate, observe, confirm, then log the "
       "change."},
      {"I brief the shift supervisor on my status and confirm the adjacent "
       "operators see no knock-on effects.",
       "Coordination call: I announce my actions, request conventional "
       "island status, and align on the next checkpoint.",
       "I sync with the crew so nobody acts on stale information; the "
       "supervisor acknowledges the plan."},
  }};
  return banks;
}

inline const std::vector<std::string>& mock_cue_bank() {
  static const std::vector<std::string> cues = {
      "water_flow_rate trend", "module status change", "alarm annunciator",
      "procedure entry condition", "shift briefing note"};
  return cues;
}

}  // namespace detail

// Deterministic testing backend: a pure function of (bundle bytes, seed) that
// always emits a grammatically valid response. Instrument selection is read
// off the "Instrument:" markers the prompt template writes.
inline std::string mock_generate(const PromptBundle& bundle,
                                 std::uint64_t seed) {
  std::uint64_t digest = fnv1a64(bundle.system_text);
  digest = mix64(digest, fnv1a64(bundle.user_text));
  digest = mix64(digest, static_cast<std::uint64_t>(bundle.params.max_tokens));
  digest = mix64(digest, fnv1a64(detail::format_number(
                             bundle.params.temperature)));
  if (bundle.params.seed) digest = mix64(digest, *bundle.params.seed);
  SplitMix64 rng(mix64(digest, seed));

  const bool answer_tlx =
      bundle.user_text.find("Instrument: NASA-TLX") != std::string::npos;
  const bool answer_sart =
      bundle.user_text.find("Instrument: SART") != std::string::npos;

  CognitiveTrajectory trajectory;
  const auto& banks = detail::mock_phrase_banks();
  const auto& cues = detail::mock_cue_bank();
  for (std::size_t i = 0; i < kPhaseOrder.size(); ++i) {
    PhaseEntry entry;
    entry.phase = kPhaseOrder[i];
    entry.narrative = banks[i][rng.bounded(banks[i].size())];
    entry.cues.push_back(cues[rng.bounded(cues.size())]);
    trajectory.phases[i] = std::move(entry);
  }

  std::optional<TlxRating> tlx;
  if (answer_tlx || !answer_sart) {  // default to TLX when no marker found
    tlx = TlxRating{static_cast<double>(rng.bounded(101)),
                    static_cast<double>(rng.bounded(101)),
                    static_cast<double>(rng.bounded(101)),
                    static_cast<double>(rng.bounded(101)),
                    static_cast<double>(rng.bounded(101)),
                    static_cast<double>(rng.bounded(101))};
  }
  std::optional<SartRating> sart;
  if (answer_sart) {
    SartRating rating;
    for (auto& item : rating.items)
      item = static_cast<double>(1 + rng.bounded(7));
    sart = rating;
  }

  return "Assessment follows.\n" + render_response(trajectory, tlx, sart);
}

class MockBackend : public GenerationBackend {
 public:
  explicit MockBackend(std::uint64_t default_seed = 0)
      : default_seed_(default_seed) {}

  std::string generate(const PromptBundle& bundle) override {
    return mock_generate(bundle, bundle.params.seed.value_or(default_seed_));
  }

  std::string id() const override { return "mock"; }

 private:
  std::uint64_t default_seed_;
};

}  // namespace wella

#pragma once

#include <array>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "wella/errors.hpp"

namespace wella {

// ---------------------------------------------------------------------------
// Control-room data model: a six-module HTGR plant operated by a five-person
// crew. Scenarios are declarative input documents; nothing here simulates
// plant physics.
// ---------------------------------------------------------------------------

enum class Role { RO1, RO2, RO3, CO, SO };

// Canonical crew ordering. Session records, prompts and reports all follow it.
inline constexpr std::array<Role, 5> kCrewRoles = {Role::RO1, Role::RO2,
                                                   Role::RO3, Role::CO,
                                                   Role::SO};

inline constexpr std::string_view to_string(Role role) noexcept {
  switch (role) {
    case Role::RO1: return "RO1";
    case Role::RO2: return "RO2";
    case Role::RO3: return "RO3";
    case Role::CO: return "CO";
    case Role::SO: return "SO";
  }
  return "RO1";
}

inline constexpr std::size_t role_index(Role role) noexcept {
  return static_cast<std::size_t>(role);
}

enum class ScenarioCategory { Startup, Shutdown, Accident };

inline constexpr std::array<ScenarioCategory, 3> kScenarioCategories = {
    ScenarioCategory::Startup, ScenarioCategory::Shutdown,
    ScenarioCategory::Accident};

inline constexpr std::string_view to_string(ScenarioCategory c) noexcept {
  switch (c) {
    case ScenarioCategory::Startup: return "Startup";
    case ScenarioCategory::Shutdown: return "Shutdown";
    case ScenarioCategory::Accident: return "Accident";
  }
  return "Startup";
}

enum class ModuleStatus { Running, ShuttingDown, Shutdown, StartingUp };

inline constexpr std::string_view to_string(ModuleStatus s) noexcept {
  switch (s) {
    case ModuleStatus::Running: return "Running";
    case ModuleStatus::ShuttingDown: return "ShuttingDown";
    case ModuleStatus::Shutdown: return "Shutdown";
    case ModuleStatus::StartingUp: return "StartingUp";
  }
  return "Running";
}

// --- parse errors ----------------------------------------------------------

class MalformedDocument : public Error {
 public:
  MalformedDocument(std::string field, const std::string& message)
      : Error("malformed_document", "field '" + field + "': " + message),
        field_(std::move(field)) {}

  // For document-level complaints not tied to a single field.
  explicit MalformedDocument(const std::string& message)
      : Error("malformed_document", message) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

class UnknownCategory : public Error {
 public:
  explicit UnknownCategory(const std::string& value)
      : Error("unknown_category",
              "field 'category': unknown scenario category '" + value + "'") {}
};

class DuplicateModule : public Error {
 public:
  explicit DuplicateModule(int module_no)
      : Error("duplicate_module",
              "field 'nsss_modules': module " + std::to_string(module_no) +
                  " listed more than once"),
        module_no_(module_no) {}

  int module_no() const noexcept { return module_no_; }

 private:
  int module_no_;
};

class MissingModule : public Error {
 public:
  explicit MissingModule(int module_no)
      : Error("missing_module",
              "field 'nsss_modules': module " + std::to_string(module_no) +
                  " is missing"),
        module_no_(module_no) {}

  int module_no() const noexcept { return module_no_; }

 private:
  int module_no_;
};

inline Role role_from_string(const std::string& name) {
  for (Role r : kCrewRoles) {
    if (name == to_string(r)) return r;
  }
  throw MalformedDocument("role", "unknown role '" + name + "'");
}

inline ScenarioCategory category_from_string(const std::string& name) {
  for (ScenarioCategory c : kScenarioCategories) {
    if (name == to_string(c)) return c;
  }
  throw UnknownCategory(name);
}

inline ModuleStatus module_status_from_string(const std::string& name) {
  for (ModuleStatus s : {ModuleStatus::Running, ModuleStatus::ShuttingDown,
                         ModuleStatus::Shutdown, ModuleStatus::StartingUp}) {
    if (name == to_string(s)) return s;
  }
  throw MalformedDocument("status", "unknown module status '" + name + "'");
}

// --- types -----------------------------------------------------------------

struct NsssModuleState {
  int module_no = 0;                     // 1..6
  double water_flow_rate = 0.0;          // kg/s, >= 0
  ModuleStatus status = ModuleStatus::Running;
  std::map<std::string, double> extra_params;  // open map, e.g. pressure

  friend bool operator==(const NsssModuleState&,
                         const NsssModuleState&) = default;
};

struct ScenarioSpec {
  std::string id;
  ScenarioCategory category = ScenarioCategory::Startup;
  std::string narrative;
  std::vector<NsssModuleState> plant_state;  // exactly six, modules 1..6
  std::optional<std::string> conventional_island;
  std::map<Role, std::string> crew_notes;

  friend bool operator==(const ScenarioSpec&, const ScenarioSpec&) = default;
};

// Enforces every ScenarioSpec invariant; throws the matching error type.
inline void validate_scenario(const ScenarioSpec& scenario) {
  if (scenario.id.empty())
    throw MalformedDocument("id", "scenario id must be non-empty");
  if (scenario.narrative.empty())
    throw MalformedDocument("narrative", "narrative must be non-empty");
  std::set<int> seen;
  for (const auto& module : scenario.plant_state) {
    if (module.module_no < 1 || module.module_no > 6)
      throw MalformedDocument("module_no",
                              "module_no must be in [1,6], got " +
                                  std::to_string(module.module_no));
    if (!seen.insert(module.module_no).second)
      throw DuplicateModule(module.module_no);
    if (module.water_flow_rate < 0.0)
      throw MalformedDocument("water_flow_rate",
                              "water_flow_rate must be >= 0");
  }
  for (int m = 1; m <= 6; ++m) {
    if (!seen.contains(m)) throw MissingModule(m);
  }
}

// --- JSON schema -----------------------------------------------------------
//
// One UTF-8 JSON document per scenario:
//   { "id": str, "category": "Startup"|"Shutdown"|"Accident",
//     "narrative": str,
//     "nsss_modules": [ { "module_no": 1..6, "water_flow_rate": num,
//                         "status": str, "extra_params": {str: num} } x6 ],
//     "conventional_island": str (optional),
//     "crew_notes": { "RO1": str, ... } (optional) }

namespace detail {

inline const nlohmann::json& require_key(const nlohmann::json& obj,
                                         const std::string& key) {
  auto it = obj.find(key);
  if (it == obj.end())
    throw MalformedDocument(key, "required key is missing");
  return *it;
}

inline std::string require_string(const nlohmann::json& obj,
                                  const std::string& key) {
  const auto& v = require_key(obj, key);
  if (!v.is_string())
    throw MalformedDocument(key, "expected a string");
  return v.get<std::string>();
}

inline double require_number(const nlohmann::json& obj,
                             const std::string& key) {
  const auto& v = require_key(obj, key);
  if (!v.is_number())
    throw MalformedDocument(key, "expected a number");
  return v.get<double>();
}

}  // namespace detail

inline ScenarioSpec scenario_from_json(const nlohmann::json& doc) {
  if (!doc.is_object())
    throw MalformedDocument("document", "top-level value must be an object");

  ScenarioSpec scenario;
  scenario.id = detail::require_string(doc, "id");
  scenario.category = category_from_string(detail::require_string(doc, "category"));
  scenario.narrative = detail::require_string(doc, "narrative");

  const auto& modules = detail::require_key(doc, "nsss_modules");
  if (!modules.is_array())
    throw MalformedDocument("nsss_modules", "expected an array");
  for (const auto& entry : modules) {
    if (!entry.is_object())
      throw MalformedDocument("nsss_modules", "expected module objects");
    NsssModuleState state;
    const auto& module_no = detail::require_key(entry, "module_no");
    if (!module_no.is_number_integer())
      throw MalformedDocument("module_no", "expected an integer");
    state.module_no = module_no.get<int>();
    state.water_flow_rate = detail::require_number(entry, "water_flow_rate");
    state.status =
        module_status_from_string(detail::require_string(entry, "status"));
    if (auto it = entry.find("extra_params"); it != entry.end()) {
      if (!it->is_object())
        throw MalformedDocument("extra_params", "expected an object");
      for (const auto& [name, value] : it->items()) {
        if (!value.is_number())
          throw MalformedDocument("extra_params",
                                  "parameter '" + name + "' must be numeric");
        state.extra_params[name] = value.get<double>();
      }
    }
    scenario.plant_state.push_back(std::move(state));
  }

  if (auto it = doc.find("conventional_island"); it != doc.end()) {
    if (!it->is_string())
      throw MalformedDocument("conventional_island", "expected a string");
    scenario.conventional_island = it->get<std::string>();
  }
  if (auto it = doc.find("crew_notes"); it != doc.end()) {
    if (!it->is_object())
      throw MalformedDocument("crew_notes", "expected an object");
    for (const auto& [name, note] : it->items()) {
      if (!note.is_string())
        throw MalformedDocument("crew_notes", "note for '" + name +
                                                  "' must be a string");
      scenario.crew_notes[role_from_string(name)] = note.get<std::string>();
    }
  }

  validate_scenario(scenario);
  return scenario;
}

inline ScenarioSpec parse_scenario(const std::string& document) {
  nlohmann::json doc = nlohmann::json::parse(document, nullptr, false);
  if (doc.is_discarded())
    throw MalformedDocument("document", "not valid JSON");
  return scenario_from_json(doc);
}

inline nlohmann::json scenario_to_json(const ScenarioSpec& scenario) {
  nlohmann::json doc;
  doc["id"] = scenario.id;
  doc["category"] = std::string(to_string(scenario.category));
  doc["narrative"] = scenario.narrative;
  auto& modules = doc["nsss_modules"] = nlohmann::json::array();
  for (const auto& state : scenario.plant_state) {
    nlohmann::json entry;
    entry["module_no"] = state.module_no;
    entry["water_flow_rate"] = state.water_flow_rate;
    entry["status"] = std::string(to_string(state.status));
    if (!state.extra_params.empty()) {
      entry["extra_params"] = state.extra_params;
    }
    modules.push_back(std::move(entry));
  }
  if (scenario.conventional_island)
    doc["conventional_island"] = *scenario.conventional_island;
  if (!scenario.crew_notes.empty()) {
    auto& notes = doc["crew_notes"] = nlohmann::json::object();
    for (const auto& [role, note] : scenario.crew_notes)
      notes[std::string(to_string(role))] = note;
  }
  return doc;
}

inline std::string serialize_scenario(const ScenarioSpec& scenario) {
  return scenario_to_json(scenario).dump(2);
}

inline ScenarioSpec load_scenario_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open scenario file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_scenario(buf.str());
}

// --- role responsibility ---------------------------------------------------

// Reactor operators split the six NSSS modules pairwise; the secondary loop
// operator and the shift supervisor hold no NSSS modules of their own.
inline std::set<int> responsible_modules(Role role) {
  switch (role) {
    case Role::RO1: return {1, 2};
    case Role::RO2: return {3, 4};
    case Role::RO3: return {5, 6};
    case Role::CO:
    case Role::SO: return {};
  }
  return {};
}

// One-line duty statement used for prompts and defaults.
inline std::string role_description(Role role) {
  switch (role) {
    case Role::RO1:
      return "reactor operator responsible for NSSS modules 1 and 2";
    case Role::RO2:
      return "reactor operator responsible for NSSS modules 3 and 4";
    case Role::RO3:
      return "reactor operator responsible for NSSS modules 5 and 6";
    case Role::CO:
      return "secondary loop operator in charge of the conventional island";
    case Role::SO:
      return "shift supervisor coordinating the overall activities of the "
             "control room";
  }
  return {};
}

// Role-scoped scenario excerpt. Reactor operators see exactly their two
// modules, CO sees the conventional island and no NSSS modules, SO sees
// everything.
struct RoleView {
  Role role = Role::RO1;
  std::string scenario_id;
  ScenarioCategory category = ScenarioCategory::Startup;
  std::string narrative;
  std::vector<NsssModuleState> modules;
  std::optional<std::string> conventional_island;
  std::optional<std::string> job_note;

  friend bool operator==(const RoleView&, const RoleView&) = default;
};

inline RoleView role_view(const ScenarioSpec& scenario, Role role) {
  RoleView view;
  view.role = role;
  view.scenario_id = scenario.id;
  view.category = scenario.category;
  view.narrative = scenario.narrative;
  if (auto it = scenario.crew_notes.find(role); it != scenario.crew_notes.end())
    view.job_note = it->second;

  const std::set<int> owned = responsible_modules(role);
  for (const auto& state : scenario.plant_state) {
    if (role == Role::SO || owned.contains(state.module_no))
      view.modules.push_back(state);
  }
  if (role == Role::CO || role == Role::SO)
    view.conventional_island = scenario.conventional_island;
  return view;
}

}  // namespace wella

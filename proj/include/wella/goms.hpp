#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "wella/errors.hpp"
#include "wella/rng.hpp"

namespace wella::goms {

// ---------------------------------------------------------------------------
// Minimal GOMS-style dynamic-HRA baseline: procedure steps carry a sampled
// execution-time model, logic conditions against a static plant-parameter
// map, and an available-time budget. A step fails when its logic check fails
// or its sampled time exceeds the available time; failure transfers control
// to the step's RNO branch. Monte Carlo over many runs estimates per-step
// failure probabilities.
//
// The plant model here is a static parameter map per run; evolving plant
// dynamics are out of scope for a comparison baseline.
// ---------------------------------------------------------------------------

class MissingParameter : public Error {
 public:
  explicit MissingParameter(const std::string& name)
      : Error("missing_parameter",
              "plant parameter '" + name + "' is not defined"),
        name_(name) {}

  const std::string& name() const noexcept { return name_; }

 private:
  std::string name_;
};

class BrokenGraph : public Error {
 public:
  explicit BrokenGraph(const std::string& message)
      : Error("broken_graph", message) {}
};

class BadProcedure : public Error {
 public:
  explicit BadProcedure(const std::string& message)
      : Error("bad_procedure", message) {}
};

// --- step model --------------------------------------------------------------

struct FixedTime {
  double seconds = 0.0;
  friend bool operator==(const FixedTime&, const FixedTime&) = default;
};

struct NormalTime {
  double mean = 0.0;   // seconds
  double sigma = 0.0;  // seconds, >= 0
  friend bool operator==(const NormalTime&, const NormalTime&) = default;
};

struct LogNormalTime {
  double mu_log = 0.0;
  double sigma_log = 0.0;  // >= 0
  friend bool operator==(const LogNormalTime&, const LogNormalTime&) = default;
};

using TimeModel = std::variant<FixedTime, NormalTime, LogNormalTime>;

enum class Comparator { Less, LessEq, Greater, GreaterEq, Equal };

inline std::string_view to_string(Comparator op) noexcept {
  switch (op) {
    case Comparator::Less: return "<";
    case Comparator::LessEq: return "<=";
    case Comparator::Greater: return ">";
    case Comparator::GreaterEq: return ">=";
    case Comparator::Equal: return "=";
  }
  return "=";
}

inline Comparator comparator_from_string(const std::string& text) {
  if (text == "<") return Comparator::Less;
  if (text == "<=" || text == "≤") return Comparator::LessEq;
  if (text == ">") return Comparator::Greater;
  if (text == ">=" || text == "≥") return Comparator::GreaterEq;
  if (text == "=" || text == "==") return Comparator::Equal;
  throw BadProcedure("unknown comparator '" + text + "'");
}

struct LogicCondition {
  std::string parameter;
  Comparator op = Comparator::Less;
  double threshold = 0.0;
  friend bool operator==(const LogicCondition&,
                         const LogicCondition&) = default;
};

struct GomsStep {
  std::string step_id;
  TimeModel time_model = FixedTime{0.0};
  double available_time = 1.0;          // seconds, > 0
  std::vector<LogicCondition> logic;    // conjunction
  std::optional<std::string> on_fail;   // RNO branch; nullopt = terminal

  friend bool operator==(const GomsStep&, const GomsStep&) = default;
};

using PlantParams = std::map<std::string, double>;

// Checks every step invariant plus graph validity. on_fail edges must point
// strictly forward in the procedure (or be terminal); that both guarantees
// every run terminates and rules out on_fail-only cycles.
inline void validate_procedure(const std::vector<GomsStep>& steps) {
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const auto& step = steps[i];
    if (step.step_id.empty()) throw BadProcedure("step_id must be non-empty");
    if (!index.emplace(step.step_id, i).second)
      throw BadProcedure("duplicate step_id '" + step.step_id + "'");
    if (!(step.available_time > 0.0))
      throw BadProcedure("step '" + step.step_id +
                         "': available_time must be > 0");
    if (const auto* n = std::get_if<NormalTime>(&step.time_model)) {
      if (n->sigma < 0.0)
        throw BadProcedure("step '" + step.step_id + "': sigma must be >= 0");
    } else if (const auto* ln = std::get_if<LogNormalTime>(&step.time_model)) {
      if (ln->sigma_log < 0.0)
        throw BadProcedure("step '" + step.step_id +
                           "': sigma_log must be >= 0");
    }
  }
  for (std::size_t i = 0; i < steps.size(); ++i) {
    if (!steps[i].on_fail) continue;
    auto it = index.find(*steps[i].on_fail);
    if (it == index.end())
      throw BrokenGraph("step '" + steps[i].step_id +
                        "': on_fail references unknown step '" +
                        *steps[i].on_fail + "'");
    if (it->second <= i)
      throw BrokenGraph("step '" + steps[i].step_id +
                        "': on_fail must point to a later step");
  }
}

// Conjunction of the step's logic conditions over the plant parameters.
inline bool check_logic(const GomsStep& step, const PlantParams& params) {
  for (const auto& cond : step.logic) {
    auto it = params.find(cond.parameter);
    if (it == params.end()) throw MissingParameter(cond.parameter);
    const double value = it->second;
    bool ok = false;
    switch (cond.op) {
      case Comparator::Less: ok = value < cond.threshold; break;
      case Comparator::LessEq: ok = value <= cond.threshold; break;
      case Comparator::Greater: ok = value > cond.threshold; break;
      case Comparator::GreaterEq: ok = value >= cond.threshold; break;
      case Comparator::Equal: ok = value == cond.threshold; break;
    }
    if (!ok) return false;
  }
  return true;
}

// Draws one execution time, always >= 0. Negative Normal draws are resampled
// rather than truncated at zero so the sampled distribution keeps its shape
// above zero.
inline double sample_step_time(const GomsStep& step, SplitMix64& rng) {
  if (const auto* fixed = std::get_if<FixedTime>(&step.time_model))
    return fixed->seconds;
  if (const auto* normal = std::get_if<NormalTime>(&step.time_model)) {
    if (normal->sigma == 0.0) return normal->mean;
    double sample = normal->mean + normal->sigma * rng.next_normal();
    while (sample < 0.0)
      sample = normal->mean + normal->sigma * rng.next_normal();
    return sample;
  }
  const auto& ln = std::get<LogNormalTime>(step.time_model);
  return std::exp(ln.mu_log + ln.sigma_log * rng.next_normal());
}

// --- Monte Carlo ---------------------------------------------------------------

struct StepStats {
  std::string step_id;
  std::uint64_t visits = 0;
  std::uint64_t failures = 0;
  double failure_probability = 0.0;  // failures / n_runs

  friend bool operator==(const StepStats&, const StepStats&) = default;
};

struct McResult {
  std::uint64_t n_runs = 0;
  std::uint64_t seed = 0;
  std::vector<StepStats> steps;                   // procedure order
  std::vector<std::vector<std::string>> traces;   // per-run paths, optional

  friend bool operator==(const McResult&, const McResult&) = default;
};

struct McOptions {
  unsigned threads = 1;       // shards; results are identical for any value
  bool keep_traces = false;   // record per-run visited step paths
};

namespace detail {

struct RunTally {
  std::vector<std::uint64_t> visits;
  std::vector<std::uint64_t> failures;
};

// Executes run `run_index` on its own deterministic substream.
inline void simulate_run(const std::vector<GomsStep>& steps,
                         const PlantParams& params, std::uint64_t seed,
                         std::uint64_t run_index, RunTally& tally,
                         std::vector<std::string>* trace) {
  SplitMix64 rng(mix64(seed, run_index));
  std::map<std::string, std::size_t> index;  // built lazily only on jumps
  std::size_t i = 0;
  while (i < steps.size()) {
    const GomsStep& step = steps[i];
    ++tally.visits[i];
    bool failed = !check_logic(step, params);
    if (!failed) failed = sample_step_time(step, rng) > step.available_time;
    if (trace)
      trace->push_back(step.step_id + (failed ? ":fail" : ":ok"));
    if (!failed) {
      ++i;
      continue;
    }
    ++tally.failures[i];
    if (!step.on_fail) break;
    if (index.empty())
      for (std::size_t k = 0; k < steps.size(); ++k)
        index[steps[k].step_id] = k;
    i = index.at(*step.on_fail);
  }
}

}  // namespace detail

inline McResult run_monte_carlo(const std::vector<GomsStep>& steps,
                                const PlantParams& params,
                                std::uint64_t n_runs, std::uint64_t seed,
                                const McOptions& options = {}) {
  if (n_runs < 1) throw BadProcedure("n_runs must be >= 1");
  validate_procedure(steps);

  // Fail fast on missing parameters instead of burning runs first.
  for (const auto& step : steps) (void)check_logic(step, params);

  const unsigned thread_count =
      options.keep_traces ? 1u : std::max(1u, options.threads);
  std::vector<detail::RunTally> tallies(
      thread_count,
      detail::RunTally{std::vector<std::uint64_t>(steps.size(), 0),
                       std::vector<std::uint64_t>(steps.size(), 0)});
  std::vector<std::vector<std::string>> traces;
  if (options.keep_traces) traces.resize(n_runs);

  auto work = [&](unsigned shard) {
    const std::uint64_t begin = n_runs * shard / thread_count;
    const std::uint64_t end = n_runs * (shard + 1) / thread_count;
    for (std::uint64_t run = begin; run < end; ++run) {
      detail::simulate_run(steps, params, seed, run, tallies[shard],
                           options.keep_traces ? &traces[run] : nullptr);
    }
  };

  if (thread_count == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(thread_count);
    for (unsigned shard = 0; shard < thread_count; ++shard)
      pool.emplace_back(work, shard);
    for (auto& t : pool) t.join();
  }

  McResult result;
  result.n_runs = n_runs;
  result.seed = seed;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    StepStats stats;
    stats.step_id = steps[i].step_id;
    for (const auto& tally : tallies) {
      stats.visits += tally.visits[i];
      stats.failures += tally.failures[i];
    }
    stats.failure_probability =
        static_cast<double>(stats.failures) / static_cast<double>(n_runs);
    result.steps.push_back(std::move(stats));
  }
  result.traces = std::move(traces);
  return result;
}

// --- procedure file ------------------------------------------------------------
//
// JSON array of step objects:
//   [ { "step_id": str,
//       "time_model": {"type": "fixed", "seconds": num}
//                   | {"type": "normal", "mean": num, "sigma": num}
//                   | {"type": "lognormal", "mu_log": num, "sigma_log": num},
//       "available_time": num,
//       "logic": [{"parameter": str, "comparator": "<"|"<="|">"|">="|"=",
//                  "threshold": num}],
//       "on_fail": str | null } ]

inline TimeModel time_model_from_json(const nlohmann::json& spec) {
  if (!spec.is_object() || !spec.contains("type") || !spec["type"].is_string())
    throw BadProcedure("time_model needs a string 'type'");
  const std::string type = spec["type"].get<std::string>();
  auto num = [&](const char* key) -> double {
    if (!spec.contains(key) || !spec[key].is_number())
      throw BadProcedure("time_model '" + type + "' needs numeric '" +
                         std::string(key) + "'");
    return spec[key].get<double>();
  };
  if (type == "fixed") return FixedTime{num("seconds")};
  if (type == "normal") return NormalTime{num("mean"), num("sigma")};
  if (type == "lognormal") return LogNormalTime{num("mu_log"), num("sigma_log")};
  throw BadProcedure("unknown time_model type '" + type + "'");
}

inline nlohmann::json time_model_to_json(const TimeModel& model) {
  nlohmann::json spec;
  if (const auto* f = std::get_if<FixedTime>(&model)) {
    spec["type"] = "fixed";
    spec["seconds"] = f->seconds;
  } else if (const auto* n = std::get_if<NormalTime>(&model)) {
    spec["type"] = "normal";
    spec["mean"] = n->mean;
    spec["sigma"] = n->sigma;
  } else {
    const auto& ln = std::get<LogNormalTime>(model);
    spec["type"] = "lognormal";
    spec["mu_log"] = ln.mu_log;
    spec["sigma_log"] = ln.sigma_log;
  }
  return spec;
}

inline std::vector<GomsStep> parse_procedure(const std::string& text) {
  nlohmann::json doc = nlohmann::json::parse(text, nullptr, false);
  if (doc.is_discarded()) throw BadProcedure("procedure file is not valid JSON");
  if (!doc.is_array()) throw BadProcedure("procedure file must be a JSON array");
  std::vector<GomsStep> steps;
  for (const auto& entry : doc) {
    if (!entry.is_object()) throw BadProcedure("steps must be objects");
    GomsStep step;
    if (!entry.contains("step_id") || !entry["step_id"].is_string())
      throw BadProcedure("step needs a string 'step_id'");
    step.step_id = entry["step_id"].get<std::string>();
    if (!entry.contains("time_model"))
      throw BadProcedure("step '" + step.step_id + "' needs 'time_model'");
    step.time_model = time_model_from_json(entry["time_model"]);
    if (!entry.contains("available_time") ||
        !entry["available_time"].is_number())
      throw BadProcedure("step '" + step.step_id +
                         "' needs numeric 'available_time'");
    step.available_time = entry["available_time"].get<double>();
    if (auto it = entry.find("logic"); it != entry.end()) {
      if (!it->is_array())
        throw BadProcedure("step '" + step.step_id + "': logic must be array");
      for (const auto& cond : *it) {
        LogicCondition c;
        if (!cond.is_object() || !cond.contains("parameter") ||
            !cond["parameter"].is_string() || !cond.contains("comparator") ||
            !cond["comparator"].is_string() || !cond.contains("threshold") ||
            !cond["threshold"].is_number())
          throw BadProcedure("step '" + step.step_id +
                             "': bad logic condition");
        c.parameter = cond["parameter"].get<std::string>();
        c.op = comparator_from_string(cond["comparator"].get<std::string>());
        c.threshold = cond["threshold"].get<double>();
        step.logic.push_back(std::move(c));
      }
    }
    if (auto it = entry.find("on_fail"); it != entry.end() && !it->is_null()) {
      if (!it->is_string())
        throw BadProcedure("step '" + step.step_id +
                           "': on_fail must be a string or null");
      step.on_fail = it->get<std::string>();
    }
    steps.push_back(std::move(step));
  }
  validate_procedure(steps);
  return steps;
}

inline std::vector<GomsStep> load_procedure_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open procedure file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_procedure(buf.str());
}

}  // namespace wella::goms

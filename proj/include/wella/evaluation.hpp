#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "wella/errors.hpp"
#include "wella/metrics.hpp"
#include "wella/orchestrator.hpp"
#include "wella/survey.hpp"

namespace wella {

// ---------------------------------------------------------------------------
// Run evaluation: pairs per-role estimates from crew sessions with
// ground-truth surveys and scores them per role plus overall.
// ---------------------------------------------------------------------------

enum class EvalTarget { Workload, SituationalAwareness };

inline constexpr std::string_view to_string(EvalTarget target) noexcept {
  return target == EvalTarget::Workload ? "workload" : "sa";
}

inline EvalTarget eval_target_from_string(const std::string& text) {
  if (text == "workload") return EvalTarget::Workload;
  if (text == "sa") return EvalTarget::SituationalAwareness;
  throw MalformedDocument("unknown eval target '" + text +
                          "' (use workload or sa)");
}

// An estimate whose scenario/role has no ground-truth row. Evaluating such a
// run would silently shrink the series, so it is an error, not a skip.
class MissingGroundTruth : public Error {
 public:
  explicit MissingGroundTruth(const std::string& message)
      : Error("missing_ground_truth", message) {}
};

namespace detail {

inline double truth_value(const GroundTruthRow& row, EvalTarget target) {
  if (target == EvalTarget::Workload) return tlx_workload(row.tlx);
  return sart_sa(row.sart);
}

inline std::optional<double> predicted_value(const WorkloadEstimate& estimate,
                                             EvalTarget target) {
  if (target == EvalTarget::Workload) return estimate.workload;
  return estimate.sa;
}

}  // namespace detail

// Builds per-role paired series (plus the pooled ALL row) and scores them.
// Role failures and estimates lacking the target quantity contribute no pair;
// ground-truth rows without a matching estimate are simply unused. An
// estimate with no ground-truth row raises MissingGroundTruth.
inline metrics::EvalReport evaluate_sessions(
    const std::vector<CrewSession>& sessions,
    const std::vector<GroundTruthRow>& truth,
    EvalTarget target = EvalTarget::Workload,
    const std::optional<std::string>& model_override = std::nullopt) {
  std::map<std::pair<std::string, Role>, const GroundTruthRow*> truth_index;
  for (const auto& row : truth) truth_index[{row.scenario_id, row.role}] = &row;

  std::string model;
  if (model_override) model = *model_override;

  std::map<std::string, metrics::PairedSeries> series;
  std::vector<std::string> orphans;
  for (const auto& session : sessions) {
    if (!model_override) {
      if (model.empty()) {
        model = session.backend_id;
      } else if (model != session.backend_id) {
        throw Error("ambiguous_model",
                    "sessions mix backends ('" + model + "' vs '" +
                        session.backend_id +
                        "'); pass an explicit model name");
      }
    }
    for (const auto& outcome : session.outcomes) {
      if (!is_estimate(outcome)) continue;
      const auto& estimate = std::get<WorkloadEstimate>(outcome);
      const auto predicted = detail::predicted_value(estimate, target);
      if (!predicted) continue;
      auto it = truth_index.find({estimate.scenario_id, estimate.role});
      if (it == truth_index.end()) {
        orphans.push_back(estimate.scenario_id + "#" +
                          std::string(to_string(estimate.role)));
        continue;
      }
      const std::string group(to_string(estimate.role));
      auto& bucket = series[group];
      bucket.group = group;
      bucket.truth.push_back(detail::truth_value(*it->second, target));
      bucket.pred.push_back(*predicted);
    }
  }
  if (!orphans.empty()) {
    std::sort(orphans.begin(), orphans.end());
    std::string joined;
    for (const auto& orphan : orphans)
      joined += (joined.empty() ? "" : ", ") + orphan;
    throw MissingGroundTruth("no ground truth for: " + joined);
  }

  std::vector<metrics::PairedSeries> groups;
  groups.reserve(series.size());
  for (auto& [_, bucket] : series) groups.push_back(std::move(bucket));
  return metrics::evaluate_groups(groups, model.empty() ? "unknown" : model);
}

// Loads every `*.jsonl` session in a run directory, in filename order.
inline std::vector<CrewSession> load_run_sessions(
    const std::filesystem::path& run_dir) {
  if (!std::filesystem::is_directory(run_dir))
    throw IoError("run directory not found: " + run_dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(run_dir))
    if (entry.is_regular_file() && entry.path().extension() == ".jsonl")
      files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  std::vector<CrewSession> sessions;
  sessions.reserve(files.size());
  for (const auto& file : files) sessions.push_back(load_session_file(file));
  return sessions;
}

}  // namespace wella

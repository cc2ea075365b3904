#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
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
#include "wella/trajectory.hpp"

namespace wella {

// ---------------------------------------------------------------------------
// SFT dataset builder: turns scenarios plus ground-truth surveys into
// instruction-tuning records, splits them train/validation/test stratified by
// scenario category, and exports JSONL plus the training-config sidecar.
// ---------------------------------------------------------------------------

inline constexpr std::string_view kDefaultSpecialToken = "<cog>";

class InvalidGroundTruth : public Error {
 public:
  explicit InvalidGroundTruth(const std::string& message)
      : Error("invalid_ground_truth", message) {}
};

class InvalidRatios : public Error {
 public:
  explicit InvalidRatios(const std::string& message)
      : Error("invalid_ratios", message) {}
};

struct SftMeta {
  std::string scenario_id;
  Role role = Role::RO1;
  ScenarioCategory category = ScenarioCategory::Accident;
  std::string special_token{kDefaultSpecialToken};

  friend bool operator==(const SftMeta&, const SftMeta&) = default;
};

struct SftRecord {
  std::string system;       // role persona (prompt system text)
  std::string instruction;  // the user prompt the engine would send
  std::string output;       // special token + canonical grammar rendering
  SftMeta meta;

  friend bool operator==(const SftRecord&, const SftRecord&) = default;
};

// Prefixes the marker on its own line; applying it twice is a no-op.
inline std::string apply_special_token(
    const std::string& text, std::string_view token = kDefaultSpecialToken) {
  if (std::string_view(text).substr(0, token.size()) == token) return text;
  return std::string(token) + "\n" + text;
}

// Builds one record: the prompt pair comes from the trajectory engine, the
// output is the canonical rendering of the reference trajectory and the
// ground-truth answers. The output always parses back under the response
// grammar, so a model trained on it emits well-formed sessions.
inline SftRecord build_record(const ScenarioSpec& scenario, Role role,
                              const CognitiveTrajectory& trajectory,
                              const TlxRating& tlx, const SartRating& sart,
                              std::string_view special_token =
                                  kDefaultSpecialToken,
                              const PromptTemplate& tpl =
                                  default_prompt_template()) {
  validate(tlx);
  validate(sart);
  const PromptBundle bundle =
      build_prompt(scenario, role, Instrument::Both, tpl);
  SftRecord record;
  record.system = bundle.system_text;
  record.instruction = bundle.user_text;
  record.output =
      apply_special_token(render_response(trajectory, tlx, sart),
                          special_token);
  record.meta = SftMeta{scenario.id, role, scenario.category,
                        std::string(special_token)};
  return record;
}

// Deterministic reference trajectory for a (scenario, role) pair, produced by
// the mock generator so dataset builds need no live backend.
inline CognitiveTrajectory reference_trajectory(const ScenarioSpec& scenario,
                                                Role role,
                                                std::uint64_t seed = 0) {
  const PromptBundle bundle =
      build_prompt(scenario, role, Instrument::Both);
  const std::uint64_t role_seed =
      mix64(mix64(seed, fnv1a64(scenario.id)), fnv1a64(to_string(role)));
  return parse_response(mock_generate(bundle, role_seed), Instrument::Both)
      .trajectory;
}

// Source of the reference trajectory for a (scenario, role) pair — e.g. the
// trajectory a collected session estimated, or a synthesized fallback.
using TrajectoryProvider =
    std::function<CognitiveTrajectory(const ScenarioSpec&, Role)>;

// Builds one record per ground-truth row. Every row must reference a known
// scenario; ratings are range-checked. Records come out in row order. With
// no provider, deterministic synthesized trajectories are used.
inline std::vector<SftRecord> build_dataset(
    const std::vector<ScenarioSpec>& scenarios,
    const std::vector<GroundTruthRow>& rows,
    std::string_view special_token = kDefaultSpecialToken,
    std::uint64_t trajectory_seed = 0,
    const TrajectoryProvider& provider = nullptr) {
  std::map<std::string, const ScenarioSpec*> by_id;
  for (const auto& scenario : scenarios) by_id[scenario.id] = &scenario;

  std::vector<SftRecord> records;
  records.reserve(rows.size());
  for (const auto& row : rows) {
    auto it = by_id.find(row.scenario_id);
    if (it == by_id.end())
      throw InvalidGroundTruth("ground truth references unknown scenario '" +
                               row.scenario_id + "'");
    try {
      validate(row.tlx);
      validate(row.sart);
    } catch (const Error& e) {
      throw InvalidGroundTruth("scenario '" + row.scenario_id + "', role " +
                               std::string(to_string(row.role)) + ": " +
                               e.what());
    }
    const CognitiveTrajectory trajectory =
        provider ? provider(*it->second, row.role)
                 : reference_trajectory(*it->second, row.role,
                                        trajectory_seed);
    records.push_back(build_record(*it->second, row.role, trajectory, row.tlx,
                                   row.sart, special_token));
  }
  return records;
}

// --- stratified split --------------------------------------------------------

struct SplitRatios {
  double train = 0.8;
  double validation = 0.1;
  double test = 0.1;
};

struct DatasetSplit {
  std::vector<SftRecord> train;
  std::vector<SftRecord> validation;
  std::vector<SftRecord> test;
  std::uint64_t split_seed = 0;
  SplitRatios ratios;
};

namespace detail {

inline void check_ratios(const SplitRatios& r) {
  if (!(r.train >= 0.0) || !(r.validation >= 0.0) || !(r.test >= 0.0))
    throw InvalidRatios("split ratios must be non-negative");
  const double sum = r.train + r.validation + r.test;
  if (std::abs(sum - 1.0) > 1e-9)
    throw InvalidRatios("split ratios must sum to 1, got " +
                        std::to_string(sum));
}

// Integer allocation of n across the three ratios by largest remainder;
// ties go to the earlier split (train, then validation, then test).
inline std::array<std::size_t, 3> allocate_counts(std::size_t n,
                                                  const SplitRatios& r) {
  const std::array<double, 3> exact = {n * r.train, n * r.validation,
                                       n * r.test};
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> remainders{};
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    counts[i] = static_cast<std::size_t>(std::floor(exact[i]));
    remainders[i] = exact[i] - static_cast<double>(counts[i]);
    assigned += counts[i];
  }
  std::array<std::size_t, 3> order = {0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return remainders[a] > remainders[b];
  });
  for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++counts[order[k % 3]];
  return counts;
}

// Seeded Fisher-Yates; the stream depends on the seed and the category name
// only, so adding a category never reshuffles the others.
inline void shuffle_records(std::vector<std::size_t>& indices,
                            std::uint64_t seed, std::string_view category) {
  SplitMix64 rng(mix64(seed, fnv1a64(category)));
  for (std::size_t i = indices.size(); i > 1; --i)
    std::swap(indices[i - 1], indices[rng.bounded(i)]);
}

}  // namespace detail

// Splits stratified by scenario category: within each category the records
// are shuffled with the seeded generator, then allocated by largest-remainder
// so every category lands within one record of its exact ratio share. The
// same (records, ratios, seed) always yields the same split.
inline DatasetSplit stratified_split(const std::vector<SftRecord>& records,
                                     const SplitRatios& ratios = {},
                                     std::uint64_t split_seed = 0) {
  detail::check_ratios(ratios);

  DatasetSplit split;
  split.split_seed = split_seed;
  split.ratios = ratios;

  std::map<ScenarioCategory, std::vector<std::size_t>> by_category;
  for (std::size_t i = 0; i < records.size(); ++i)
    by_category[records[i].meta.category].push_back(i);

  for (auto& [category, indices] : by_category) {
    detail::shuffle_records(indices, split_seed, to_string(category));
    const auto counts = detail::allocate_counts(indices.size(), ratios);
    std::size_t cursor = 0;
    for (std::size_t k = 0; k < counts[0]; ++k)
      split.train.push_back(records[indices[cursor++]]);
    for (std::size_t k = 0; k < counts[1]; ++k)
      split.validation.push_back(records[indices[cursor++]]);
    for (std::size_t k = 0; k < counts[2]; ++k)
      split.test.push_back(records[indices[cursor++]]);
  }
  return split;
}

// --- JSONL + sidecars -----------------------------------------------------------

// Records are exported with keys in the stable order system, instruction,
// output, meta.
inline std::string record_to_jsonl_line(const SftRecord& record) {
  nlohmann::ordered_json line;
  line["system"] = record.system;
  line["instruction"] = record.instruction;
  line["output"] = record.output;
  nlohmann::ordered_json meta;
  meta["scenario_id"] = record.meta.scenario_id;
  meta["role"] = std::string(to_string(record.meta.role));
  meta["category"] = std::string(to_string(record.meta.category));
  meta["special_token"] = record.meta.special_token;
  line["meta"] = std::move(meta);
  return line.dump();
}

inline void export_jsonl(const std::vector<SftRecord>& records,
                         const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  for (const auto& record : records) out << record_to_jsonl_line(record) << '\n';
  out.flush();
  if (!out) throw IoError("failed writing " + path.string());
}

inline std::vector<SftRecord> import_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<SftRecord> records;
  std::string raw_line;
  std::size_t line_no = 0;
  while (std::getline(in, raw_line)) {
    ++line_no;
    if (!raw_line.empty() && raw_line.back() == '\r') raw_line.pop_back();
    if (raw_line.empty()) continue;
    const std::string where =
        path.filename().string() + ":" + std::to_string(line_no);
    nlohmann::json line = nlohmann::json::parse(raw_line, nullptr, false);
    if (line.is_discarded() || !line.is_object())
      throw MalformedDocument(where + ": not a JSON object");
    auto str = [&](const nlohmann::json& obj, const char* name) -> std::string {
      auto it = obj.find(name);
      if (it == obj.end() || !it->is_string())
        throw MalformedDocument(where + ": missing string '" +
                                std::string(name) + "'");
      return it->get<std::string>();
    };
    SftRecord record;
    record.system = str(line, "system");
    record.instruction = str(line, "instruction");
    record.output = str(line, "output");
    auto meta_it = line.find("meta");
    if (meta_it == line.end() || !meta_it->is_object())
      throw MalformedDocument(where + ": missing object 'meta'");
    record.meta.scenario_id = str(*meta_it, "scenario_id");
    record.meta.role = role_from_string(str(*meta_it, "role"));
    record.meta.category = category_from_string(str(*meta_it, "category"));
    record.meta.special_token = str(*meta_it, "special_token");
    records.push_back(std::move(record));
  }
  return records;
}

// Fine-tuning defaults, written verbatim so training tooling can diff them.
inline constexpr std::string_view kTrainingConfigYaml =
    "batch_size: 2\nlearning_rate: 1.0e-5\nepochs: 8\n";

inline void write_training_config(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << kTrainingConfigYaml;
  out.flush();
  if (!out) throw IoError("failed writing " + path.string());
}

inline nlohmann::json split_manifest(const DatasetSplit& split) {
  auto describe = [](const std::vector<SftRecord>& records) {
    nlohmann::json part;
    part["count"] = records.size();
    std::map<std::string, std::size_t> per_category;
    auto ids = nlohmann::json::array();
    for (const auto& record : records) {
      ++per_category[std::string(to_string(record.meta.category))];
      ids.push_back(record.meta.scenario_id + "#" +
                    std::string(to_string(record.meta.role)));
    }
    part["per_category"] = per_category;
    part["records"] = std::move(ids);
    return part;
  };
  nlohmann::json manifest;
  manifest["split_seed"] = split.split_seed;
  manifest["ratios"] = {{"train", split.ratios.train},
                        {"validation", split.ratios.validation},
                        {"test", split.ratios.test}};
  manifest["train"] = describe(split.train);
  manifest["validation"] = describe(split.validation);
  manifest["test"] = describe(split.test);
  return manifest;
}

// Writes train.jsonl / validation.jsonl / test.jsonl, split_manifest.json,
// and training_config.yaml into `dir`.
inline void export_split(const DatasetSplit& split,
                         const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec)
    throw IoError("cannot create directory " + dir.string() + ": " +
                  ec.message());
  export_jsonl(split.train, dir / "train.jsonl");
  export_jsonl(split.validation, dir / "validation.jsonl");
  export_jsonl(split.test, dir / "test.jsonl");
  std::ofstream manifest(dir / "split_manifest.json",
                         std::ios::binary | std::ios::trunc);
  if (!manifest)
    throw IoError("cannot open " + (dir / "split_manifest.json").string() +
                  " for writing");
  manifest << split_manifest(split).dump(2) << '\n';
  write_training_config(dir / "training_config.yaml");
}

}  // namespace wella

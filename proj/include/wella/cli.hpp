#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <CLI11.hpp>

#include "wella/backend_remote.hpp"
#include "wella/config.hpp"
#include "wella/errors.hpp"
#include "wella/evaluation.hpp"
#include "wella/goms.hpp"
#include "wella/metrics.hpp"
#include "wella/orchestrator.hpp"
#include "wella/scenario.hpp"
#include "wella/sft.hpp"
#include "wella/survey.hpp"

namespace wella {

// ---------------------------------------------------------------------------
// Command-line harness. Subcommands:
//   crew        run the five-role crew on one scenario
//   batch       run the crew across many scenarios, optionally scoring them
//   eval        score an existing run directory against ground truth
//   export-sft  build and split the instruction-tuning dataset
//   baseline    Monte Carlo over a GOMS-style procedure
// All outputs land under the chosen run/output directory.
// ---------------------------------------------------------------------------

namespace detail {

inline std::string default_run_id() {
  const std::time_t t =
      std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[72];
  std::snprintf(buf, sizeof(buf), "run-%04d%02d%02d-%02d%02d%02d",
                tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday, tm.tm_hour,
                tm.tm_min, tm.tm_sec);
  return buf;
}

// Files stay files; directories expand to their *.json entries in filename
// order so batch outputs do not depend on readdir order.
inline std::vector<std::filesystem::path> expand_scenario_paths(
    const std::vector<std::string>& inputs) {
  std::vector<std::filesystem::path> files;
  for (const auto& input : inputs) {
    const std::filesystem::path path(input);
    if (std::filesystem::is_directory(path)) {
      std::vector<std::filesystem::path> found;
      for (const auto& entry : std::filesystem::directory_iterator(path))
        if (entry.is_regular_file() && entry.path().extension() == ".json")
          found.push_back(entry.path());
      std::sort(found.begin(), found.end());
      files.insert(files.end(), found.begin(), found.end());
    } else if (std::filesystem::is_regular_file(path)) {
      files.push_back(path);
    } else {
      throw IoError("scenario path not found: " + input);
    }
  }
  if (files.empty()) throw IoError("no scenario files given");
  return files;
}

inline SplitRatios parse_ratios(const std::string& text) {
  SplitRatios ratios;
  char extra = '\0';
  if (std::sscanf(text.c_str(), "%lf,%lf,%lf%c", &ratios.train,
                  &ratios.validation, &ratios.test, &extra) != 3)
    throw InvalidRatios(
        "--ratios expects train,validation,test (e.g. 0.8,0.1,0.1)");
  return ratios;
}

inline goms::PlantParams load_params_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  nlohmann::json doc = nlohmann::json::parse(buffer.str(), nullptr, false);
  if (doc.is_discarded() || !doc.is_object())
    throw MalformedDocument(path + ": plant params must be a JSON object");
  goms::PlantParams params;
  for (const auto& [name, value] : doc.items()) {
    if (!value.is_number())
      throw MalformedDocument(path + ": parameter '" + name +
                              "' must be a number");
    params[name] = value.get<double>();
  }
  return params;
}

inline void write_text_file(const std::filesystem::path& path,
                            const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  out.flush();
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace detail

inline int run_cli(const std::vector<std::string>& args, std::ostream& out,
                   std::ostream& err) {
  CLI::App app{"Synthetic control-room workload harness"};
  app.name("wella");
  app.require_subcommand(1);

  // Shared backend/session options; each subcommand wires the subset it
  // supports.
  struct CommonOpts {
    std::string config_path;
    std::uint64_t seed = 0;
    std::string instrument;
    bool parallel = false;
    std::string backend;
    std::string model;
    std::string base_url;
    CLI::Option* seed_opt = nullptr;
  };
  auto add_common = [](CLI::App* sub, CommonOpts& opts) {
    sub->add_option("--config", opts.config_path,
                    "Harness config JSON (defaults to the mock backend)")
        ->check(CLI::ExistingFile);
    opts.seed_opt =
        sub->add_option("--seed", opts.seed, "Session seed override");
    sub->add_option("--instrument", opts.instrument,
                    "Instrument override: tlx, sart, or both");
    sub->add_flag("--parallel", opts.parallel,
                  "Run the five roles on separate threads");
    sub->add_option("--backend", opts.backend,
                    "Backend override: mock or remote");
    sub->add_option("--model", opts.model, "Remote model name override");
    sub->add_option("--base-url", opts.base_url, "Remote base URL override");
  };
  auto resolve_config = [](const CommonOpts& opts) {
    HarnessConfig config = opts.config_path.empty()
                               ? HarnessConfig{}
                               : load_config_file(opts.config_path);
    if (!opts.backend.empty())
      config.backend = backend_kind_from_string(opts.backend);
    if (!opts.model.empty()) config.remote.model = opts.model;
    if (!opts.base_url.empty()) config.remote.base_url = opts.base_url;
    if (opts.seed_opt != nullptr && opts.seed_opt->count() > 0)
      config.params.seed = opts.seed;
    if (!opts.instrument.empty())
      config.instrument = instrument_from_string(opts.instrument);
    if (opts.parallel) config.parallel = true;
    validate_config(config);
    return config;
  };

  // --- crew -------------------------------------------------------------
  auto* crew = app.add_subcommand(
      "crew", "Run the five-role crew on one scenario");
  struct CrewOpts {
    CommonOpts common;
    std::string scenario_path;
    std::string out_dir;
    std::string run_id;
  } crew_opts;
  crew->add_option("--scenario", crew_opts.scenario_path, "Scenario JSON file")
      ->required()
      ->check(CLI::ExistingFile);
  crew->add_option("--out", crew_opts.out_dir,
                   "Runs root directory (default from config run_dir)");
  crew->add_option("--run-id", crew_opts.run_id,
                   "Run identifier (defaults to a UTC timestamp)");
  add_common(crew, crew_opts.common);
  crew->callback([&] {
    const HarnessConfig config = resolve_config(crew_opts.common);
    const auto backend = make_backend(config);
    const ScenarioSpec scenario = load_scenario_file(crew_opts.scenario_path);
    const CrewSession session =
        estimate_crew(*backend, scenario, session_options(config));

    const std::string run_id = crew_opts.run_id.empty()
                                   ? detail::default_run_id()
                                   : crew_opts.run_id;
    const std::filesystem::path run_dir =
        std::filesystem::path(crew_opts.out_dir.empty() ? config.run_dir
                                                        : crew_opts.out_dir) /
        run_id;
    std::error_code ec;
    std::filesystem::create_directories(run_dir, ec);
    if (ec)
      throw IoError("cannot create " + run_dir.string() + ": " + ec.message());
    write_config_snapshot(config, run_dir / "config.snapshot");
    const auto path = write_session_file(session, run_dir);
    out << "wrote " << path.string() << " (" << session.estimate_count()
        << "/5 estimates)\n";
    if (session.estimate_count() < 5)
      err << "warning: " << (5 - session.estimate_count())
          << " role(s) recorded failures\n";
  });

  // --- batch -------------------------------------------------------------
  auto* batch = app.add_subcommand(
      "batch", "Run the crew across many scenarios");
  struct BatchOpts {
    CommonOpts common;
    std::vector<std::string> scenario_paths;
    std::string out_dir;
    std::string run_id;
    std::string ground_truth;
    std::string target = "workload";
    std::string report_model;
  } batch_opts;
  batch
      ->add_option("--scenarios", batch_opts.scenario_paths,
                   "Scenario JSON files or directories")
      ->required()
      ->expected(-1);
  batch->add_option("--out", batch_opts.out_dir,
                    "Runs root directory (default from config run_dir)");
  batch->add_option("--run-id", batch_opts.run_id,
                    "Run identifier (defaults to a UTC timestamp)");
  batch->add_option("--ground-truth", batch_opts.ground_truth,
                    "Ground-truth CSV; when given, report.csv is written")
      ->check(CLI::ExistingFile);
  batch->add_option("--target", batch_opts.target,
                    "Evaluation target: workload or sa");
  batch->add_option("--report-model", batch_opts.report_model,
                    "Model column for the report (defaults to the backend id)");
  add_common(batch, batch_opts.common);
  batch->callback([&] {
    const HarnessConfig config = resolve_config(batch_opts.common);
    const auto backend = make_backend(config);
    const auto files = detail::expand_scenario_paths(batch_opts.scenario_paths);

    const std::string run_id = batch_opts.run_id.empty()
                                   ? detail::default_run_id()
                                   : batch_opts.run_id;
    const std::filesystem::path run_dir =
        std::filesystem::path(batch_opts.out_dir.empty() ? config.run_dir
                                                         : batch_opts.out_dir) /
        run_id;
    std::error_code ec;
    std::filesystem::create_directories(run_dir, ec);
    if (ec)
      throw IoError("cannot create " + run_dir.string() + ": " + ec.message());
    write_config_snapshot(config, run_dir / "config.snapshot");

    std::vector<CrewSession> sessions;
    for (const auto& file : files) {
      const ScenarioSpec scenario = load_scenario_file(file.string());
      SessionOptions opts = session_options(config);
      // Each scenario gets its own derived seed, so adding or reordering
      // scenarios never changes another scenario's session.
      if (config.params.seed)
        opts.params.seed = mix64(*config.params.seed, fnv1a64(scenario.id));
      sessions.push_back(estimate_crew(*backend, scenario, opts));
      write_session_file(sessions.back(), run_dir);
      out << scenario.id << ": " << sessions.back().estimate_count()
          << "/5 estimates\n";
    }

    if (!batch_opts.ground_truth.empty()) {
      const auto truth = load_ground_truth_csv_file(batch_opts.ground_truth);
      const auto report = evaluate_sessions(
          sessions, truth, eval_target_from_string(batch_opts.target),
          batch_opts.report_model.empty()
              ? std::nullopt
              : std::make_optional(batch_opts.report_model));
      detail::write_text_file(run_dir / "report.csv",
                              metrics::export_report_csv(report));
      out << "wrote " << (run_dir / "report.csv").string() << "\n";
    }
    out << "run directory: " << run_dir.string() << "\n";
  });

  // --- eval -------------------------------------------------------------
  auto* eval = app.add_subcommand(
      "eval", "Score an existing run directory against ground truth");
  struct EvalOpts {
    std::string run_dir;
    std::string ground_truth;
    std::string target = "workload";
    std::string model;
    std::string out_path;
    std::string markdown_path;
  } eval_opts;
  eval->add_option("--run", eval_opts.run_dir, "Run directory with *.jsonl")
      ->required()
      ->check(CLI::ExistingDirectory);
  eval->add_option("--ground-truth", eval_opts.ground_truth,
                   "Ground-truth CSV")
      ->required()
      ->check(CLI::ExistingFile);
  eval->add_option("--target", eval_opts.target,
                   "Evaluation target: workload or sa");
  eval->add_option("--model", eval_opts.model,
                   "Model column override for the report");
  eval->add_option("--out", eval_opts.out_path,
                   "Report CSV path (default <run>/report.csv)");
  eval->add_option("--markdown", eval_opts.markdown_path,
                   "Also write a Markdown report ('-' for stdout)");
  eval->callback([&] {
    const auto sessions = load_run_sessions(eval_opts.run_dir);
    const auto truth = load_ground_truth_csv_file(eval_opts.ground_truth);
    const auto report = evaluate_sessions(
        sessions, truth, eval_target_from_string(eval_opts.target),
        eval_opts.model.empty() ? std::nullopt
                                : std::make_optional(eval_opts.model));
    const std::filesystem::path csv_path =
        eval_opts.out_path.empty()
            ? std::filesystem::path(eval_opts.run_dir) / "report.csv"
            : std::filesystem::path(eval_opts.out_path);
    detail::write_text_file(csv_path, metrics::export_report_csv(report));
    out << "wrote " << csv_path.string() << "\n";
    if (!eval_opts.markdown_path.empty()) {
      const std::string markdown = metrics::export_report_markdown(report);
      if (eval_opts.markdown_path == "-") {
        out << markdown;
      } else {
        detail::write_text_file(eval_opts.markdown_path, markdown);
        out << "wrote " << eval_opts.markdown_path << "\n";
      }
    }
  });

  // --- export-sft -------------------------------------------------------------
  auto* sft = app.add_subcommand(
      "export-sft", "Build and split the instruction-tuning dataset");
  struct SftOpts {
    std::vector<std::string> scenario_paths;
    std::string ground_truth;
    std::string run_dir;
    std::string out_dir;
    std::uint64_t seed = 0;
    std::string ratios = "0.8,0.1,0.1";
    std::string token{kDefaultSpecialToken};
  } sft_opts;
  sft->add_option("--scenarios", sft_opts.scenario_paths,
                  "Scenario JSON files or directories")
      ->required()
      ->expected(-1);
  sft->add_option("--ground-truth", sft_opts.ground_truth, "Ground-truth CSV")
      ->required()
      ->check(CLI::ExistingFile);
  sft->add_option("--run", sft_opts.run_dir,
                  "Run directory whose session trajectories seed the records")
      ->check(CLI::ExistingDirectory);
  sft->add_option("--out", sft_opts.out_dir, "Output directory")->required();
  sft->add_option("--seed", sft_opts.seed, "Split/reference seed");
  sft->add_option("--ratios", sft_opts.ratios, "train,validation,test ratios");
  sft->add_option("--token", sft_opts.token, "Special output prefix token");
  sft->callback([&] {
    std::vector<ScenarioSpec> scenarios;
    for (const auto& file : detail::expand_scenario_paths(sft_opts.scenario_paths))
      scenarios.push_back(load_scenario_file(file.string()));
    const auto rows = load_ground_truth_csv_file(sft_opts.ground_truth);

    // With --run, records reuse the trajectory each role actually produced;
    // pairs the run never estimated fall back to the synthesized reference.
    TrajectoryProvider provider;
    if (!sft_opts.run_dir.empty()) {
      auto collected = std::make_shared<
          std::map<std::pair<std::string, Role>, CognitiveTrajectory>>();
      for (const auto& session : load_run_sessions(sft_opts.run_dir))
        for (const auto& outcome : session.outcomes)
          if (const auto* estimate = std::get_if<WorkloadEstimate>(&outcome))
            collected->emplace(
                std::make_pair(estimate->scenario_id, estimate->role),
                estimate->trajectory);
      const std::uint64_t seed = sft_opts.seed;
      provider = [collected, seed, &err](const ScenarioSpec& scenario,
                                         Role role) {
        if (auto it = collected->find({scenario.id, role});
            it != collected->end())
          return it->second;
        err << "warning: no session trajectory for " << scenario.id << "#"
            << to_string(role) << "; using synthesized reference\n";
        return reference_trajectory(scenario, role, seed);
      };
    }

    const auto records = build_dataset(scenarios, rows, sft_opts.token,
                                       sft_opts.seed, provider);
    const auto split = stratified_split(
        records, detail::parse_ratios(sft_opts.ratios), sft_opts.seed);
    export_split(split, sft_opts.out_dir);
    out << "wrote " << sft_opts.out_dir << ": train=" << split.train.size()
        << " validation=" << split.validation.size()
        << " test=" << split.test.size() << "\n";
  });

  // --- baseline -------------------------------------------------------------
  auto* baseline = app.add_subcommand(
      "baseline", "Monte Carlo over a GOMS-style procedure");
  struct BaselineOpts {
    std::string procedure_path;
    std::string params_path;
    std::uint64_t runs = 10000;
    std::uint64_t seed = 0;
    unsigned threads = 1;
    bool json = false;
  } baseline_opts;
  baseline
      ->add_option("--procedure", baseline_opts.procedure_path,
                   "Procedure JSON file")
      ->required()
      ->check(CLI::ExistingFile);
  baseline->add_option("--params", baseline_opts.params_path,
                       "Plant parameters JSON object")
      ->check(CLI::ExistingFile);
  baseline->add_option("--runs", baseline_opts.runs, "Monte Carlo runs");
  baseline->add_option("--seed", baseline_opts.seed, "Simulation seed");
  baseline->add_option("--threads", baseline_opts.threads, "Worker threads");
  baseline->add_flag("--json", baseline_opts.json, "Emit JSON instead of text");
  baseline->callback([&] {
    const auto steps = goms::load_procedure_file(baseline_opts.procedure_path);
    const goms::PlantParams params =
        baseline_opts.params_path.empty()
            ? goms::PlantParams{}
            : detail::load_params_file(baseline_opts.params_path);
    goms::McOptions options;
    options.threads = baseline_opts.threads;
    const auto result = goms::run_monte_carlo(
        steps, params, baseline_opts.runs, baseline_opts.seed, options);

    if (baseline_opts.json) {
      nlohmann::json doc;
      doc["n_runs"] = result.n_runs;
      doc["seed"] = result.seed;
      auto& step_list = doc["steps"] = nlohmann::json::array();
      for (const auto& stats : result.steps)
        step_list.push_back({{"step_id", stats.step_id},
                             {"visits", stats.visits},
                             {"failures", stats.failures},
                             {"failure_probability",
                              stats.failure_probability}});
      out << doc.dump(2) << "\n";
      return;
    }
    out << "runs=" << result.n_runs << " seed=" << result.seed << "\n";
    char buf[32];
    for (const auto& stats : result.steps) {
      std::snprintf(buf, sizeof(buf), "%.6f", stats.failure_probability);
      out << stats.step_id << ": visits=" << stats.visits
          << " failures=" << stats.failures << " p_fail=" << buf << "\n";
    }
  });

  // CLI11 expects argc/argv; keep the string vector interface for tests.
  std::vector<const char*> argv;
  argv.reserve(args.size() + 1);
  argv.push_back("wella");
  for (const auto& arg : args) argv.push_back(arg.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  } catch (const Error& e) {
    err << "error [" << e.code() << "]: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace wella

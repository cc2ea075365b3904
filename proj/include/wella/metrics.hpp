#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "wella/errors.hpp"

namespace wella::metrics {

// ---------------------------------------------------------------------------
// Regression metrics over (truth, prediction) pairs, grouped per crew role
// and over the concatenated data. All variances are population (divide by n);
// the choice is observable through EV, so it is fixed here rather than left
// to the caller.
// ---------------------------------------------------------------------------

class LengthMismatch : public Error {
 public:
  LengthMismatch(std::size_t truth_n, std::size_t pred_n)
      : Error("length_mismatch",
              "truth has " + std::to_string(truth_n) + " points, prediction " +
                  std::to_string(pred_n)) {}
};

class TooFewPoints : public Error {
 public:
  explicit TooFewPoints(std::size_t n)
      : Error("too_few_points",
              "metrics need n >= 2, got " + std::to_string(n)) {}
};

class ZeroVariance : public Error {
 public:
  ZeroVariance()
      : Error("zero_variance",
              "truth series has zero variance; r2/ev are undefined") {}
};

struct PairedSeries {
  std::string group;  // RO1|RO2|RO3|CO|SO|ALL or any label
  std::vector<double> truth;
  std::vector<double> pred;
};

namespace detail {

inline void check_series(const PairedSeries& s) {
  if (s.truth.size() != s.pred.size())
    throw LengthMismatch(s.truth.size(), s.pred.size());
  if (s.truth.size() < 2) throw TooFewPoints(s.truth.size());
}

inline double mean(const std::vector<double>& v) {
  double sum = 0.0;
  for (double x : v) sum += x;
  return sum / static_cast<double>(v.size());
}

inline double population_variance(const std::vector<double>& v) {
  const double m = mean(v);
  double acc = 0.0;
  for (double x : v) acc += (x - m) * (x - m);
  return acc / static_cast<double>(v.size());
}

}  // namespace detail

// R^2 = 1 - SS_res / SS_tot, SS_tot about the truth mean.
inline double r_squared(const PairedSeries& s) {
  detail::check_series(s);
  const double truth_mean = detail::mean(s.truth);
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < s.truth.size(); ++i) {
    ss_res += (s.truth[i] - s.pred[i]) * (s.truth[i] - s.pred[i]);
    ss_tot += (s.truth[i] - truth_mean) * (s.truth[i] - truth_mean);
  }
  if (ss_tot == 0.0) throw ZeroVariance();
  return 1.0 - ss_res / ss_tot;
}

inline double rmse(const PairedSeries& s) {
  detail::check_series(s);
  double acc = 0.0;
  for (std::size_t i = 0; i < s.truth.size(); ++i)
    acc += (s.truth[i] - s.pred[i]) * (s.truth[i] - s.pred[i]);
  return std::sqrt(acc / static_cast<double>(s.truth.size()));
}

inline double mae(const PairedSeries& s) {
  detail::check_series(s);
  double acc = 0.0;
  for (std::size_t i = 0; i < s.truth.size(); ++i)
    acc += std::abs(s.truth[i] - s.pred[i]);
  return acc / static_cast<double>(s.truth.size());
}

// EV = 1 - Var(truth - pred) / Var(truth), population variances.
inline double explained_variance(const PairedSeries& s) {
  detail::check_series(s);
  const double truth_var = detail::population_variance(s.truth);
  if (truth_var == 0.0) throw ZeroVariance();
  std::vector<double> residual(s.truth.size());
  for (std::size_t i = 0; i < s.truth.size(); ++i)
    residual[i] = s.truth[i] - s.pred[i];
  return 1.0 - detail::population_variance(residual) / truth_var;
}

// --- grouped reports ---------------------------------------------------------

// A single report row. Undefined cells (zero-variance truth, too few points)
// stay nullopt and render as "n/a"; NaN never reaches a report.
struct MetricRow {
  std::string model;
  std::string group;
  std::size_t n = 0;
  std::optional<double> r2;
  std::optional<double> rmse;
  std::optional<double> mae;
  std::optional<double> ev;
};

struct EvalReport {
  std::vector<MetricRow> rows;

  void merge(const EvalReport& other) {
    rows.insert(rows.end(), other.rows.begin(), other.rows.end());
  }
};

inline MetricRow evaluate_series(const std::string& model,
                                 const PairedSeries& s) {
  MetricRow row;
  row.model = model;
  row.group = s.group;
  row.n = s.truth.size();
  if (s.truth.size() != s.pred.size())
    throw LengthMismatch(s.truth.size(), s.pred.size());
  if (s.truth.size() < 2) return row;  // all four cells undefined
  row.rmse = rmse(s);
  row.mae = mae(s);
  try {
    row.r2 = r_squared(s);
    row.ev = explained_variance(s);
  } catch (const ZeroVariance&) {
    // leave r2/ev undefined
  }
  return row;
}

// Canonical row ordering: crew roles first, other labels alphabetically,
// ALL last.
inline int group_rank(const std::string& group) {
  static const std::vector<std::string> canonical = {"RO1", "RO2", "RO3",
                                                     "CO", "SO"};
  for (std::size_t i = 0; i < canonical.size(); ++i)
    if (group == canonical[i]) return static_cast<int>(i);
  if (group == "ALL") return 1000;
  return 100;
}

// One row per input group plus an ALL row over the concatenated pairs.
// The ALL row is computed from the combined data, not averaged over groups.
inline EvalReport evaluate_groups(std::vector<PairedSeries> groups,
                                  const std::string& model) {
  for (const auto& g : groups)
    if (g.truth.size() != g.pred.size())
      throw LengthMismatch(g.truth.size(), g.pred.size());

  std::stable_sort(groups.begin(), groups.end(),
                   [](const PairedSeries& a, const PairedSeries& b) {
                     const int ra = group_rank(a.group), rb = group_rank(b.group);
                     return ra != rb ? ra < rb : a.group < b.group;
                   });

  EvalReport report;
  PairedSeries all;
  all.group = "ALL";
  for (const auto& g : groups) {
    report.rows.push_back(evaluate_series(model, g));
    all.truth.insert(all.truth.end(), g.truth.begin(), g.truth.end());
    all.pred.insert(all.pred.end(), g.pred.begin(), g.pred.end());
  }
  report.rows.push_back(evaluate_series(model, all));
  return report;
}

// --- rendering ---------------------------------------------------------------

enum class ReportFormat { Csv, Markdown };

// Fixed 4-decimal cell formatting; undefined cells render as "n/a".
inline std::string format_metric(const std::optional<double>& value) {
  if (!value) return "n/a";
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.4f", *value);
  return buf;
}

inline std::string export_report_csv(const EvalReport& report) {
  std::ostringstream out;
  out << "model,group,r2,rmse,mae,ev\n";
  for (const auto& row : report.rows) {
    out << row.model << ',' << row.group << ',' << format_metric(row.r2) << ','
        << format_metric(row.rmse) << ',' << format_metric(row.mae) << ','
        << format_metric(row.ev) << '\n';
  }
  return out.str();
}

// Markdown layout: one table per group, models as rows, the four metrics in
// fixed column order.
inline std::string export_report_markdown(const EvalReport& report) {
  std::vector<std::string> groups;
  for (const auto& row : report.rows)
    if (std::find(groups.begin(), groups.end(), row.group) == groups.end())
      groups.push_back(row.group);
  std::stable_sort(groups.begin(), groups.end(),
                   [](const std::string& a, const std::string& b) {
                     const int ra = group_rank(a), rb = group_rank(b);
                     return ra != rb ? ra < rb : a < b;
                   });

  std::ostringstream out;
  bool first = true;
  for (const auto& group : groups) {
    if (!first) out << '\n';
    first = false;
    out << "### " << group << "\n\n";
    out << "| Model | R² | RMSE | MAE | EV |\n";
    out << "| --- | --- | --- | --- | --- |\n";
    for (const auto& row : report.rows) {
      if (row.group != group) continue;
      out << "| " << row.model << " | " << format_metric(row.r2) << " | "
          << format_metric(row.rmse) << " | " << format_metric(row.mae)
          << " | " << format_metric(row.ev) << " |\n";
    }
  }
  return out.str();
}

inline std::string export_report(const EvalReport& report,
                                 ReportFormat format) {
  return format == ReportFormat::Csv ? export_report_csv(report)
                                     : export_report_markdown(report);
}

}  // namespace wella::metrics

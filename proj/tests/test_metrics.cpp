#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "wella/metrics.hpp"

using namespace wella::metrics;

namespace {

// Independent brute-force re-implementation used as the oracle. Written
// deliberately differently from the library (two-pass means, long double
// accumulators) so shared mistakes are unlikely.
struct Oracle {
  long double r2, rmse, mae, ev;
};

Oracle brute_force(const std::vector<double>& t, const std::vector<double>& p) {
  const std::size_t n = t.size();
  long double t_mean = 0.0L, r_mean = 0.0L;
  for (std::size_t i = 0; i < n; ++i) {
    t_mean += t[i];
    r_mean += t[i] - p[i];
  }
  t_mean /= n;
  r_mean /= n;

  long double ss_res = 0.0L, ss_tot = 0.0L, abs_sum = 0.0L, var_res = 0.0L,
              var_t = 0.0L;
  for (std::size_t i = 0; i < n; ++i) {
    const long double r = t[i] - p[i];
    ss_res += r * r;
    ss_tot += (t[i] - t_mean) * (t[i] - t_mean);
    abs_sum += std::abs(r);
    var_res += (r - r_mean) * (r - r_mean);
    var_t += (t[i] - t_mean) * (t[i] - t_mean);
  }
  Oracle o;
  o.r2 = 1.0L - ss_res / ss_tot;
  o.rmse = std::sqrt(ss_res / n);
  o.mae = abs_sum / n;
  o.ev = 1.0L - (var_res / n) / (var_t / n);
  return o;
}

// Random series with guaranteed truth variance, from a generator that shares
// no code with the library RNG.
PairedSeries random_series(std::mt19937& gen) {
  std::uniform_int_distribution<std::size_t> length(2, 50);
  std::uniform_real_distribution<double> value(0.0, 100.0);
  PairedSeries s;
  s.group = "ALL";
  const std::size_t n = length(gen);
  for (std::size_t i = 0; i < n; ++i) {
    s.truth.push_back(value(gen));
    s.pred.push_back(value(gen));
  }
  s.truth[0] += 1.0;  // forbid an all-constant truth
  if (s.truth[0] > 101.0) s.truth[0] = 0.0;
  return s;
}

}  // namespace

TEST_CASE("frozen hand-computed oracle values") {
  PairedSeries s{"ALL", {10, 20, 30}, {12, 18, 33}};
  // residuals (-2, 2, -3): ss_res 17, ss_tot 200, mae 7/3, mean resid -1,
  // var resid 14/3, var truth 200/3.
  CHECK(std::abs(mae(s) - 7.0 / 3.0) <= 1e-9);
  CHECK(std::abs(rmse(s) - std::sqrt(17.0 / 3.0)) <= 1e-9);
  CHECK(std::abs(r_squared(s) - 0.915) <= 1e-9);
  CHECK(std::abs(explained_variance(s) - 0.93) <= 1e-9);
}

TEST_CASE("metrics agree with the brute-force oracle on random series") {
  std::mt19937 gen(20260821);
  for (int trial = 0; trial < 100; ++trial) {
    const PairedSeries s = random_series(gen);
    const Oracle o = brute_force(s.truth, s.pred);
    INFO("trial " << trial << ", n=" << s.truth.size());
    CHECK(std::abs(r_squared(s) - static_cast<double>(o.r2)) <= 1e-9);
    CHECK(std::abs(rmse(s) - static_cast<double>(o.rmse)) <= 1e-9);
    CHECK(std::abs(mae(s) - static_cast<double>(o.mae)) <= 1e-9);
    CHECK(std::abs(explained_variance(s) - static_cast<double>(o.ev)) <=
          1e-9);
    // Structural properties.
    CHECK(rmse(s) >= mae(s));
    CHECK(r_squared(s) <= explained_variance(s) + 1e-12);
  }
}

TEST_CASE("perfect prediction gives the identity (1, 0, 0, 1)") {
  PairedSeries s{"RO1", {5, 10, 15, 20}, {5, 10, 15, 20}};
  CHECK(r_squared(s) == 1.0);
  CHECK(rmse(s) == 0.0);
  CHECK(mae(s) == 0.0);
  CHECK(explained_variance(s) == 1.0);
}

TEST_CASE("shifting truth and prediction together changes nothing") {
  std::mt19937 gen(99);
  const PairedSeries s = random_series(gen);
  PairedSeries shifted = s;
  for (auto& v : shifted.truth) v += 1000.0;
  for (auto& v : shifted.pred) v += 1000.0;
  CHECK(std::abs(rmse(s) - rmse(shifted)) <= 1e-9);
  CHECK(std::abs(mae(s) - mae(shifted)) <= 1e-9);
  CHECK(std::abs(r_squared(s) - r_squared(shifted)) <= 1e-6);
  CHECK(std::abs(explained_variance(s) - explained_variance(shifted)) <=
        1e-6);
}

TEST_CASE("constant truth raises ZeroVariance instead of dividing by zero") {
  PairedSeries s{"CO", {5, 5, 5}, {4, 5, 6}};
  CHECK_THROWS_AS(r_squared(s), ZeroVariance);
  CHECK_THROWS_AS(explained_variance(s), ZeroVariance);
  // rmse/mae stay well-defined.
  CHECK(std::abs(rmse(s) - std::sqrt(2.0 / 3.0)) <= 1e-9);
}

TEST_CASE("length and size preconditions") {
  PairedSeries mismatched{"RO1", {1, 2, 3}, {1, 2}};
  CHECK_THROWS_AS(rmse(mismatched), LengthMismatch);
  PairedSeries tiny{"RO1", {1}, {1}};
  CHECK_THROWS_AS(mae(tiny), TooFewPoints);
}

TEST_CASE("evaluate_series renders undefined cells as n/a, never NaN") {
  PairedSeries constant{"CO", {5, 5, 5}, {4, 5, 6}};
  const MetricRow row = evaluate_series("mock", constant);
  CHECK_FALSE(row.r2.has_value());
  CHECK_FALSE(row.ev.has_value());
  REQUIRE(row.rmse.has_value());
  REQUIRE(row.mae.has_value());

  EvalReport report;
  report.rows.push_back(row);
  const std::string csv = export_report_csv(report);
  CHECK(csv.find("n/a") != std::string::npos);
  CHECK(csv.find("nan") == std::string::npos);
  CHECK(csv.find("NaN") == std::string::npos);

  // A single point leaves every cell undefined.
  const MetricRow single =
      evaluate_series("mock", PairedSeries{"SO", {1}, {1}});
  CHECK_FALSE(single.r2.has_value());
  CHECK_FALSE(single.rmse.has_value());
}

TEST_CASE("grouped evaluation emits one row per group plus ALL") {
  std::vector<PairedSeries> groups;
  groups.push_back({"CO", {10, 20, 30}, {12, 18, 33}});
  const EvalReport report = evaluate_groups(groups, "mock");
  REQUIRE(report.rows.size() == 2);
  CHECK(report.rows[0].group == "CO");
  CHECK(report.rows[1].group == "ALL");
  CHECK(report.rows[1].n == 3);
  // The ALL row of a single group equals that group's metrics.
  CHECK(report.rows[0].r2 == report.rows[1].r2);
}

TEST_CASE("report rows follow the canonical crew order with ALL last") {
  std::vector<PairedSeries> groups;
  for (const char* g : {"SO", "zeta", "CO", "RO2", "alpha", "RO1", "RO3"})
    groups.push_back({g, {1, 2, 3}, {1, 2, 4}});
  const EvalReport report = evaluate_groups(groups, "mock");
  std::vector<std::string> order;
  for (const auto& row : report.rows) order.push_back(row.group);
  CHECK(order == std::vector<std::string>{"RO1", "RO2", "RO3", "CO", "SO",
                                          "alpha", "zeta", "ALL"});
}

TEST_CASE("metric cells format at four decimals") {
  CHECK(format_metric(std::nullopt) == "n/a");
  CHECK(format_metric(0.9012) == "0.9012");
  CHECK(format_metric(-0.0007) == "-0.0007");
  CHECK(format_metric(4.7) == "4.7000");
  CHECK(format_metric(0.90115) == "0.9012");
}

namespace {

// Comparison fixture: four models on the same role, frozen score rows.
EvalReport fixture_report() {
  auto row = [](const char* model, double r2, double rmse, double mae,
                double ev) {
    MetricRow r;
    r.model = model;
    r.group = "RO1";
    r.n = 30;
    r.r2 = r2;
    r.rmse = rmse;
    r.mae = mae;
    r.ev = ev;
    return r;
  };
  EvalReport report;
  report.rows.push_back(row("GPT-4", -0.7107, 33.9131, 21.3000, -0.5911));
  report.rows.push_back(row("GPT-4o", -1.4378, 40.4837, 31.4667, -1.1573));
  report.rows.push_back(
      row("Claude-3.5-Sonnet", -0.0308, 26.3255, 15.8333, -0.0007));
  report.rows.push_back(row("WELLA", 0.9012, 8.1507, 4.7000, 0.9040));
  return report;
}

}  // namespace

TEST_CASE("CSV report reproduces the comparison fixture byte-exactly") {
  const std::string csv = export_report_csv(fixture_report());
  std::istringstream lines(csv);
  std::string line;
  REQUIRE(std::getline(lines, line));
  CHECK(line == "model,group,r2,rmse,mae,ev");
  REQUIRE(std::getline(lines, line));
  CHECK(line == "GPT-4,RO1,-0.7107,33.9131,21.3000,-0.5911");
  REQUIRE(std::getline(lines, line));
  CHECK(line == "GPT-4o,RO1,-1.4378,40.4837,31.4667,-1.1573");
  REQUIRE(std::getline(lines, line));
  CHECK(line == "Claude-3.5-Sonnet,RO1,-0.0308,26.3255,15.8333,-0.0007");
  REQUIRE(std::getline(lines, line));
  CHECK(line == "WELLA,RO1,0.9012,8.1507,4.7000,0.9040");
  CHECK_FALSE(std::getline(lines, line));
}

TEST_CASE("Markdown report matches the golden file") {
  std::ifstream golden(WELLA_GOLDEN_DIR "/report_ro1.md", std::ios::binary);
  REQUIRE(golden);
  std::ostringstream buffer;
  buffer << golden.rdbuf();
  CHECK(export_report_markdown(fixture_report()) == buffer.str());
  CHECK(export_report(fixture_report(), ReportFormat::Markdown) ==
        buffer.str());
  CHECK(export_report(fixture_report(), ReportFormat::Csv) ==
        export_report_csv(fixture_report()));
}

#pragma once

#include <array>
#include <cstdio>
#include <fstream>
#include <istream>
#include <sstream>
#include <string>
#include <vector>

#include "wella/errors.hpp"
#include "wella/scenario.hpp"

namespace wella {

// ---------------------------------------------------------------------------
// Subjective workload and situational-awareness instruments.
//
// NASA-TLX is scored unweighted: the mean of the six subscales with
// performance inverted. SART groups its ten 1-7 items into Demand (1-3),
// Supply (4-7) and Understand (8-10); SA = Understand - (Demand - Supply).
// Scores are stored as reals so averaged ratings survive without coercion;
// integer inputs are a special case.
// ---------------------------------------------------------------------------

class OutOfRangeSubscale : public Error {
 public:
  OutOfRangeSubscale(std::string subscale, double value)
      : Error("out_of_range_subscale",
              "TLX subscale '" + subscale + "' must be in [0,100], got " +
                  std::to_string(value)),
        subscale_(std::move(subscale)),
        value_(value) {}

  const std::string& subscale() const noexcept { return subscale_; }
  double value() const noexcept { return value_; }

 private:
  std::string subscale_;
  double value_;
};

class OutOfRangeItem : public Error {
 public:
  OutOfRangeItem(int item_no, double value)
      : Error("out_of_range_item",
              "SART item " + std::to_string(item_no) +
                  " must be in [1,7], got " + std::to_string(value)),
        item_no_(item_no),
        value_(value) {}

  int item_no() const noexcept { return item_no_; }  // 1-based
  double value() const noexcept { return value_; }

 private:
  int item_no_;
  double value_;
};

class WrongItemCount : public Error {
 public:
  explicit WrongItemCount(std::size_t count)
      : Error("wrong_item_count", "SART rating needs exactly 10 items, got " +
                                      std::to_string(count)) {}
};

// --- NASA-TLX ---------------------------------------------------------------

struct TlxRating {
  double mental_demand = 0.0;
  double physical_demand = 0.0;
  double temporal_demand = 0.0;
  double effort = 0.0;
  double performance = 0.0;
  double frustration = 0.0;

  friend bool operator==(const TlxRating&, const TlxRating&) = default;
};

inline constexpr std::array<std::string_view, 6> kTlxSubscaleNames = {
    "mental_demand", "physical_demand", "temporal_demand",
    "effort",        "performance",     "frustration"};

inline void validate(const TlxRating& rating) {
  const std::array<double, 6> values = {
      rating.mental_demand, rating.physical_demand, rating.temporal_demand,
      rating.effort,        rating.performance,     rating.frustration};
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!(values[i] >= 0.0 && values[i] <= 100.0))
      throw OutOfRangeSubscale(std::string(kTlxSubscaleNames[i]), values[i]);
  }
}

// Unweighted NASA-TLX: (MD + PD + TD + E + (100 - P) + F) / 6.
// Performance enters inverted so that better performance lowers workload.
inline double tlx_workload(const TlxRating& r) {
  validate(r);
  return (r.mental_demand + r.physical_demand + r.temporal_demand + r.effort +
          (100.0 - r.performance) + r.frustration) /
         6.0;
}

// --- SART -------------------------------------------------------------------

struct SartRating {
  std::array<double, 10> items{};  // each in [1,7]

  friend bool operator==(const SartRating&, const SartRating&) = default;
};

inline void validate(const SartRating& rating) {
  for (std::size_t i = 0; i < rating.items.size(); ++i) {
    if (!(rating.items[i] >= 1.0 && rating.items[i] <= 7.0))
      throw OutOfRangeItem(static_cast<int>(i) + 1, rating.items[i]);
  }
}

// Builds a rating from a runtime-sized list, checking the item count.
template <typename Container>
SartRating make_sart_rating(const Container& items) {
  if (items.size() != 10)
    throw WrongItemCount(items.size());
  SartRating rating;
  std::size_t i = 0;
  for (double v : items) rating.items[i++] = v;
  validate(rating);
  return rating;
}

struct SartDimensions {
  double demand = 0.0;      // items 1-3, in [3,21]
  double supply = 0.0;      // items 4-7, in [4,28]
  double understand = 0.0;  // items 8-10, in [3,21]

  friend bool operator==(const SartDimensions&,
                         const SartDimensions&) = default;
};

inline SartDimensions sart_dimensions(const SartRating& r) {
  validate(r);
  SartDimensions d;
  d.demand = r.items[0] + r.items[1] + r.items[2];
  d.supply = r.items[3] + r.items[4] + r.items[5] + r.items[6];
  d.understand = r.items[7] + r.items[8] + r.items[9];
  return d;
}

// SA = Understand - (Demand - Supply); range [-14, 46] over valid ratings.
inline double sart_sa(const SartRating& r) {
  const SartDimensions d = sart_dimensions(r);
  return d.understand - (d.demand - d.supply);
}

// Default item wording, one string per SART item in instrument order.
// The canonical questionnaire text was not available when this template was
// assembled, so this wording is a provisional paraphrase; studies that need
// the exact published items should override it via PromptTemplate.
inline const std::array<std::string, 10>& default_sart_item_texts() {
  static const std::array<std::string, 10> texts = {
      "Instability of the situation: how changeable is the plant state?",
      "Complexity of the situation: how complicated is the plant state?",
      "Variability of the situation: how many parameters are changing?",
      "Arousal: how alert and ready for activity are you?",
      "Concentration of attention: how much attention are you focusing?",
      "Division of attention: how distributed is your attention?",
      "Spare mental capacity: how much attention is left to spare?",
      "Information quantity: how much information have you received?",
      "Information quality: how good is the information you have?",
      "Familiarity with the situation: how familiar does it feel?"};
  return texts;
}

inline const std::array<std::string, 6>& default_tlx_subscale_texts() {
  static const std::array<std::string, 6> texts = {
      "Mental demand: how mentally demanding was the task?",
      "Physical demand: how physically demanding was the task?",
      "Temporal demand: how hurried or rushed was the pace?",
      "Effort: how hard did you have to work?",
      "Performance: how successful were you in what you were asked to do?",
      "Frustration: how insecure, discouraged, irritated or annoyed were "
      "you?"};
  return texts;
}

// --- ground-truth survey CSV -------------------------------------------------
//
// Columns: scenario_id, role, md, pd, td, effort, performance, frustration,
// sart_1..sart_10. Header row required, UTF-8, comma separated.

class CsvFormatError : public Error {
 public:
  explicit CsvFormatError(const std::string& message)
      : Error("csv_format", message) {}
};

struct GroundTruthRow {
  std::string scenario_id;
  Role role = Role::RO1;
  TlxRating tlx;
  SartRating sart;

  friend bool operator==(const GroundTruthRow&,
                         const GroundTruthRow&) = default;
};

inline const std::string& ground_truth_csv_header() {
  static const std::string header =
      "scenario_id,role,md,pd,td,effort,performance,frustration,"
      "sart_1,sart_2,sart_3,sart_4,sart_5,sart_6,sart_7,sart_8,sart_9,"
      "sart_10";
  return header;
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

inline double parse_csv_number(const std::string& text, std::size_t line_no,
                               const std::string& column) {
  try {
    std::size_t consumed = 0;
    double value = std::stod(text, &consumed);
    if (consumed != text.size())
      throw std::invalid_argument("trailing characters");
    return value;
  } catch (const std::exception&) {
    throw CsvFormatError("line " + std::to_string(line_no) + ": column '" +
                         column + "' is not a number: '" + text + "'");
  }
}

}  // namespace detail

inline std::vector<GroundTruthRow> load_ground_truth_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line))
    throw CsvFormatError("empty ground-truth file (header row required)");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != ground_truth_csv_header())
    throw CsvFormatError("unexpected header row: '" + line + "'");

  std::vector<GroundTruthRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = detail::split_csv_line(line);
    if (fields.size() != 18)
      throw CsvFormatError("line " + std::to_string(line_no) + ": expected " +
                           "18 columns, got " + std::to_string(fields.size()));
    GroundTruthRow row;
    row.scenario_id = fields[0];
    row.role = role_from_string(fields[1]);
    const char* tlx_cols[] = {"md", "pd", "td", "effort", "performance",
                              "frustration"};
    double tlx_values[6];
    for (int i = 0; i < 6; ++i)
      tlx_values[i] =
          detail::parse_csv_number(fields[2 + i], line_no, tlx_cols[i]);
    row.tlx = {tlx_values[0], tlx_values[1], tlx_values[2],
               tlx_values[3], tlx_values[4], tlx_values[5]};
    validate(row.tlx);
    std::vector<double> items;
    for (int i = 0; i < 10; ++i)
      items.push_back(detail::parse_csv_number(
          fields[8 + i], line_no, "sart_" + std::to_string(i + 1)));
    row.sart = make_sart_rating(items);
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::vector<GroundTruthRow> load_ground_truth_csv_file(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open ground-truth csv: " + path);
  return load_ground_truth_csv(in);
}

inline std::string ground_truth_to_csv(
    const std::vector<GroundTruthRow>& rows) {
  std::ostringstream out;
  out << ground_truth_csv_header() << '\n';
  char buf[64];
  auto emit = [&](double v) {
    // integral values print without a decimal point, fractions keep it
    if (v == static_cast<long long>(v)) {
      std::snprintf(buf, sizeof(buf), "%lld", static_cast<long long>(v));
    } else {
      std::snprintf(buf, sizeof(buf), "%g", v);
    }
    out << buf;
  };
  for (const auto& row : rows) {
    out << row.scenario_id << ',' << to_string(row.role) << ',';
    const double tlx[] = {row.tlx.mental_demand,  row.tlx.physical_demand,
                          row.tlx.temporal_demand, row.tlx.effort,
                          row.tlx.performance,     row.tlx.frustration};
    for (double v : tlx) {
      emit(v);
      out << ',';
    }
    for (std::size_t i = 0; i < row.sart.items.size(); ++i) {
      emit(row.sart.items[i]);
      if (i + 1 < row.sart.items.size()) out << ',';
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace wella

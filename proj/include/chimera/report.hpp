#pragma once

#include <filesystem>
#include <json.hpp>
#include <span>
#include <string>
#include <vector>

namespace chimera::report {

/// One plotted value: a model label's score at a given part count.
struct ReportPoint {
  std::string label;
  int complexity = 0;
  double score = 0.0;
};

/// Points of one or more reports that all measure the same metric.
struct ReportTable {
  std::string metric;
  std::vector<std::string> labels;     // first-appearance order
  std::vector<int> complexities;       // ascending, unique
  std::vector<ReportPoint> points;
};

/// Accepts the report JSON written by the evaluation stage:
///   {"label": str, "metric": str, "final_score": num,
///    "per_complexity": {"2": num, ...}}          (per_complexity optional)
/// or a single-complexity report {"label", "metric", "complexity": int, "final_score"}.
/// Throws MalformedReport on missing fields or when metric names disagree.
ReportTable collect(std::span<const nlohmann::json> reports);
ReportTable collect_files(std::span<const std::filesystem::path> paths);

/// "label,complexity,metric,score" rows, labels in first-appearance order.
std::string to_csv(const ReportTable& table);

/// Line chart: x = number of parts, y = score, one polyline per label.
std::string to_svg(const ReportTable& table, const std::string& title = {});

/// Simple bar chart of named values, used for per-metric summaries.
std::string bar_chart_svg(const std::string& title, std::span<const std::pair<std::string, double>> bars);

}  // namespace chimera::report

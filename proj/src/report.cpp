#include "chimera/report.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "chimera/error.hpp"

namespace chimera::report {
namespace {

constexpr std::array<const char*, 8> kPalette{"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                              "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
constexpr double kWidth = 640, kHeight = 400;
constexpr double kLeft = 60, kRight = 160, kTop = 40, kBottom = 50;

std::string fmt(double v, int prec = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

double score_of(const nlohmann::json& v, const std::string& where) {
  if (!v.is_number()) throw MalformedReport(where + ": score is not a number");
  return v.get<double>();
}

}  // namespace

ReportTable collect(std::span<const nlohmann::json> reports) {
  if (reports.empty()) throw MalformedReport("no reports given");
  ReportTable table;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& r = reports[i];
    const std::string where = "report " + std::to_string(i);
    if (!r.is_object()) throw MalformedReport(where + ": not a JSON object");
    if (!r.contains("label") || !r["label"].is_string()) throw MalformedReport(where + ": missing label");
    if (!r.contains("metric") || !r["metric"].is_string()) throw MalformedReport(where + ": missing metric");
    const auto label = r["label"].get<std::string>();
    const auto metric = r["metric"].get<std::string>();
    if (table.metric.empty()) {
      table.metric = metric;
    } else if (metric != table.metric) {
      throw MalformedReport("conflicting metric names: '" + table.metric + "' and '" + metric + "'");
    }
    if (std::find(table.labels.begin(), table.labels.end(), label) == table.labels.end()) {
      table.labels.push_back(label);
    }
    if (r.contains("per_complexity")) {
      const auto& pc = r["per_complexity"];
      if (!pc.is_object() || pc.empty()) throw MalformedReport(where + ": per_complexity must be a non-empty object");
      for (const auto& [key, value] : pc.items()) {
        int k = 0;
        try {
          k = std::stoi(key);
        } catch (const std::exception&) {
          throw MalformedReport(where + ": complexity key '" + key + "' is not an integer");
        }
        table.points.push_back({label, k, score_of(value, where)});
      }
    } else if (r.contains("complexity") && r.contains("final_score")) {
      if (!r["complexity"].is_number_integer()) throw MalformedReport(where + ": complexity must be an integer");
      table.points.push_back({label, r["complexity"].get<int>(), score_of(r["final_score"], where)});
    } else {
      throw MalformedReport(where + ": needs per_complexity or complexity + final_score");
    }
  }
  for (const auto& p : table.points) {
    if (std::find(table.complexities.begin(), table.complexities.end(), p.complexity) == table.complexities.end()) {
      table.complexities.push_back(p.complexity);
    }
  }
  std::sort(table.complexities.begin(), table.complexities.end());
  std::stable_sort(table.points.begin(), table.points.end(), [&](const ReportPoint& a, const ReportPoint& b) {
    const auto la = std::find(table.labels.begin(), table.labels.end(), a.label);
    const auto lb = std::find(table.labels.begin(), table.labels.end(), b.label);
    if (la != lb) return la < lb;
    return a.complexity < b.complexity;
  });
  return table;
}

ReportTable collect_files(std::span<const std::filesystem::path> paths) {
  std::vector<nlohmann::json> docs;
  for (const auto& p : paths) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw MalformedReport("cannot open report " + p.string());
    try {
      docs.push_back(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
      throw MalformedReport(p.string() + ": " + e.what());
    }
  }
  return collect(docs);
}

std::string to_csv(const ReportTable& table) {
  std::ostringstream out;
  out << "label,complexity,metric,score\n";
  for (const auto& p : table.points) {
    out << p.label << ',' << p.complexity << ',' << table.metric << ',' << fmt(p.score, 6) << '\n';
  }
  return out.str();
}

std::string to_svg(const ReportTable& table, const std::string& title) {
  const double plot_w = kWidth - kLeft - kRight;
  const double plot_h = kHeight - kTop - kBottom;
  double y_max = 1.0;
  for (const auto& p : table.points) y_max = std::max(y_max, p.score);
  const auto n_x = table.complexities.size();
  auto x_of = [&](int k) {
    const auto pos = static_cast<double>(std::find(table.complexities.begin(), table.complexities.end(), k) -
                                         table.complexities.begin());
    return kLeft + (n_x <= 1 ? plot_w / 2 : plot_w * pos / static_cast<double>(n_x - 1));
  };
  auto y_of = [&](double s) { return kTop + plot_h * (1.0 - s / y_max); };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(kWidth, 0) << "\" height=\"" << fmt(kHeight, 0)
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  const std::string heading = title.empty() ? table.metric + " by number of parts" : title;
  svg << "<text x=\"" << fmt(kWidth / 2, 1) << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
      << escape_xml(heading) << "</text>\n";
  svg << "<line x1=\"" << fmt(kLeft, 1) << "\" y1=\"" << fmt(kTop + plot_h, 1) << "\" x2=\"" << fmt(kLeft + plot_w, 1)
      << "\" y2=\"" << fmt(kTop + plot_h, 1) << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << fmt(kLeft, 1) << "\" y1=\"" << fmt(kTop, 1) << "\" x2=\"" << fmt(kLeft, 1) << "\" y2=\""
      << fmt(kTop + plot_h, 1) << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double s = y_max * i / 5.0;
    svg << "<text x=\"" << fmt(kLeft - 8, 1) << "\" y=\"" << fmt(y_of(s) + 4, 1) << "\" text-anchor=\"end\">"
        << fmt(s, 2) << "</text>\n";
  }
  for (int k : table.complexities) {
    svg << "<text class=\"xtick\" x=\"" << fmt(x_of(k), 1) << "\" y=\"" << fmt(kTop + plot_h + 18, 1)
        << "\" text-anchor=\"middle\">" << k << "</text>\n";
  }
  svg << "<text x=\"" << fmt(kLeft + plot_w / 2, 1) << "\" y=\"" << fmt(kHeight - 10, 1)
      << "\" text-anchor=\"middle\">number of parts</text>\n";

  for (std::size_t li = 0; li < table.labels.size(); ++li) {
    const char* color = kPalette[li % kPalette.size()];
    std::ostringstream pts;
    std::size_t count = 0;
    for (const auto& p : table.points) {
      if (p.label != table.labels[li]) continue;
      if (count++ > 0) pts << ' ';
      pts << fmt(x_of(p.complexity), 1) << ',' << fmt(y_of(p.score), 1);
    }
    svg << "<polyline class=\"series\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\""
        << pts.str() << "\"/>\n";
    for (const auto& p : table.points) {
      if (p.label != table.labels[li]) continue;
      svg << "<circle cx=\"" << fmt(x_of(p.complexity), 1) << "\" cy=\"" << fmt(y_of(p.score), 1)
          << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    }
    const double ly = kTop + 14.0 + 18.0 * static_cast<double>(li);
    svg << "<line x1=\"" << fmt(kWidth - kRight + 15, 1) << "\" y1=\"" << fmt(ly - 4, 1) << "\" x2=\""
        << fmt(kWidth - kRight + 35, 1) << "\" y2=\"" << fmt(ly - 4, 1) << "\" stroke=\"" << color
        << "\" stroke-width=\"2\"/>\n";
    svg << "<text x=\"" << fmt(kWidth - kRight + 40, 1) << "\" y=\"" << fmt(ly, 1) << "\">"
        << escape_xml(table.labels[li]) << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

std::string bar_chart_svg(const std::string& title, std::span<const std::pair<std::string, double>> bars) {
  const double plot_w = kWidth - kLeft - 40;
  const double plot_h = kHeight - kTop - kBottom;
  double y_max = 0.0;
  for (const auto& [_, v] : bars) y_max = std::max(y_max, v);
  if (y_max <= 0.0) y_max = 1.0;
  const double slot = bars.empty() ? plot_w : plot_w / static_cast<double>(bars.size());

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(kWidth, 0) << "\" height=\"" << fmt(kHeight, 0)
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << fmt(kWidth / 2, 1) << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
      << escape_xml(title) << "</text>\n";
  svg << "<line x1=\"" << fmt(kLeft, 1) << "\" y1=\"" << fmt(kTop + plot_h, 1) << "\" x2=\"" << fmt(kLeft + plot_w, 1)
      << "\" y2=\"" << fmt(kTop + plot_h, 1) << "\" stroke=\"black\"/>\n";
  for (std::size_t i = 0; i < bars.size(); ++i) {
    const double h = plot_h * std::max(bars[i].second, 0.0) / y_max;
    const double x = kLeft + slot * static_cast<double>(i) + slot * 0.15;
    svg << "<rect class=\"bar\" x=\"" << fmt(x, 1) << "\" y=\"" << fmt(kTop + plot_h - h, 1) << "\" width=\""
        << fmt(slot * 0.7, 1) << "\" height=\"" << fmt(h, 1) << "\" fill=\"" << kPalette[i % kPalette.size()]
        << "\"/>\n";
    svg << "<text x=\"" << fmt(x + slot * 0.35, 1) << "\" y=\"" << fmt(kTop + plot_h - h - 4, 1)
        << "\" text-anchor=\"middle\">" << fmt(bars[i].second, 3) << "</text>\n";
    svg << "<text x=\"" << fmt(x + slot * 0.35, 1) << "\" y=\"" << fmt(kTop + plot_h + 16, 1)
        << "\" text-anchor=\"middle\">" << escape_xml(bars[i].first) << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace chimera::report

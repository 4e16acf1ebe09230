#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace crl {

struct Series {
  std::string label;
  std::vector<double> y;  // value at task 1..T
  bool dashed = false;
};

struct Figure {
  std::string title;
  std::string y_label;
  std::vector<Series> series;
};

// Vector rendering with axes, tick labels and a legend.
std::string render_svg(const Figure& fig);
// Raster rendering of the same geometry (no text), written as PNG.
void write_png(const Figure& fig, const std::filesystem::path& path, int width = 640, int height = 400);

// Loads results.json files and checks they share the same number of tasks.
// Throws UsageError on an empty list or mismatched T.
std::vector<nlohmann::json> load_results(const std::vector<std::filesystem::path>& paths);

// Average-accuracy trajectories per in-domain protocol plus FLEP curves,
// each with its chance-level line. Returns the files written.
std::vector<std::filesystem::path> cmd_plot(const std::vector<std::filesystem::path>& results,
                                            const std::filesystem::path& out_dir);

struct ReportTable {
  std::vector<std::string> columns;           // "LEP A", "LEP F", ...
  std::vector<std::string> rows;              // run labels
  std::vector<std::vector<double>> values;    // NaN when not applicable
  std::vector<bool> higher_is_better;
};

ReportTable build_report(const std::vector<nlohmann::json>& docs);
std::string report_csv(const ReportTable& table);
// Percent values; the best entry per column is bold.
std::string report_markdown(const ReportTable& table);

// Writes report.csv and report.md into out_dir.
std::vector<std::filesystem::path> cmd_report(const std::vector<std::filesystem::path>& results,
                                              const std::filesystem::path& out_dir);

}  // namespace crl

#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace hbmpart {

// "key=value" lines; '#' lines skipped.
std::map<std::string, double> read_summary(const std::string& path);

struct GoldenEntry {
  std::string metric;
  double mean = 0;
  std::optional<double> tolerance;  // relative; default applies when absent
};

// CSV with header "metric,mean,tolerance"; the tolerance column may be blank.
std::vector<GoldenEntry> read_golden(const std::string& path);
std::string golden_csv(const std::map<std::string, double>& metrics, double tolerance);

struct ValidationRow {
  std::string metric;
  bool present = false;
  bool pass = false;
  double value = 0;
  double golden = 0;
  double tolerance = 0;
  double rel_error = 0;
};

// Pass when |value - golden| <= tolerance * |golden| (absolute tolerance
// when the golden mean is 0).
std::vector<ValidationRow> validate_metrics(const std::vector<GoldenEntry>& golden,
                                            const std::map<std::string, double>& metrics,
                                            double default_tolerance);

// Mean of every metric over all "*.summary" files directly inside `dir`.
// Returns the number of files read through `n_files`.
std::map<std::string, double> collect_summaries(const std::string& dir, int* n_files = nullptr);

// Parsed CSV: header names and rows of raw cells. '#' lines skipped.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  int column(const std::string& name) const;  // -1 when absent
};
CsvTable read_csv(const std::string& path);

struct ExportReport {
  int latency_rows = 0;
  int timeline_rows = 0;
  int heatmap_rows = 0;
  int routing_rows = 0;
  std::vector<std::string> warnings;
};

// Writes latency_vs_alpha.csv, alpha_timeline.csv, heatmap.csv and
// routing_breakdown.csv into `out_dir` from the artifacts in `results_dir`.
ExportReport export_plot_data(const std::string& results_dir, const std::string& out_dir,
                              const std::string& header_line);

}  // namespace hbmpart

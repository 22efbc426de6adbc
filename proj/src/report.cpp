#include "hbmpart/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "hbmpart/engine.hpp"

namespace hbmpart {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  const auto e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

std::optional<double> to_double(const std::string& s) {
  double v = 0;
  const std::string t = trim(s);
  auto r = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || r.ec != std::errc() || r.ptr != t.data() + t.size()) return std::nullopt;
  return v;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) out.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::vector<fs::path> sorted_files(const std::string& dir, const std::string& prefix,
                                   const std::string& ext) {
  std::vector<fs::path> out;
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) return out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const std::string name = e.path().filename().string();
    if (name.rfind(prefix, 0) == 0 && e.path().extension() == ext) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream os(p);
  if (!os) throw std::runtime_error("cannot write '" + p.string() + "'");
  os << s;
}

}  // namespace

std::map<std::string, double> read_summary(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open summary '" + path + "'");
  std::map<std::string, double> out;
  std::string line;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const auto v = to_double(line.substr(eq + 1));
    if (v) out[trim(line.substr(0, eq))] = *v;
  }
  return out;
}

std::vector<GoldenEntry> read_golden(const std::string& path) {
  const CsvTable t = read_csv(path);
  const int cm = t.column("metric");
  const int cv = t.column("mean");
  const int ct = t.column("tolerance");
  if (cm < 0 || cv < 0) {
    throw std::runtime_error("golden '" + path + "': header must have metric,mean[,tolerance]");
  }
  std::vector<GoldenEntry> out;
  for (const auto& r : t.rows) {
    GoldenEntry g;
    g.metric = r.at(cm);
    const auto m = to_double(r.at(cv));
    if (!m) throw std::runtime_error("golden '" + path + "': bad mean for " + g.metric);
    g.mean = *m;
    if (ct >= 0 && ct < static_cast<int>(r.size()) && !r[ct].empty()) {
      const auto tol = to_double(r[ct]);
      if (!tol) throw std::runtime_error("golden '" + path + "': bad tolerance for " + g.metric);
      g.tolerance = *tol;
    }
    out.push_back(g);
  }
  return out;
}

std::string golden_csv(const std::map<std::string, double>& metrics, double tolerance) {
  std::string s = "metric,mean,tolerance\n";
  for (const auto& [k, v] : metrics) s += k + "," + fmt(v) + "," + fmt(tolerance) + "\n";
  return s;
}

std::vector<ValidationRow> validate_metrics(const std::vector<GoldenEntry>& golden,
                                            const std::map<std::string, double>& metrics,
                                            double default_tolerance) {
  std::vector<ValidationRow> out;
  for (const auto& g : golden) {
    ValidationRow r;
    r.metric = g.metric;
    r.golden = g.mean;
    r.tolerance = g.tolerance.value_or(default_tolerance);
    auto it = metrics.find(g.metric);
    if (it != metrics.end()) {
      r.present = true;
      r.value = it->second;
      const double diff = std::abs(r.value - r.golden);
      const double scale = std::abs(r.golden);
      r.rel_error = scale > 0 ? diff / scale : diff;
      r.pass = r.rel_error <= r.tolerance;
    }
    out.push_back(r);
  }
  return out;
}

std::map<std::string, double> collect_summaries(const std::string& dir, int* n_files) {
  std::map<std::string, double> sum;
  std::map<std::string, int> count;
  const auto files = sorted_files(dir, "", ".summary");
  for (const auto& f : files) {
    for (const auto& [k, v] : read_summary(f.string())) {
      sum[k] += v;
      ++count[k];
    }
  }
  for (auto& [k, v] : sum) v /= count[k];
  if (n_files) *n_files = static_cast<int>(files.size());
  return sum;
}

int CsvTable::column(const std::string& name) const {
  auto it = std::find(header.begin(), header.end(), name);
  return it == header.end() ? -1 : static_cast<int>(it - header.begin());
}

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  CsvTable t;
  std::string line;
  bool have_header = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (!have_header) {
      t.header = split_csv(line);
      have_header = true;
    } else {
      t.rows.push_back(split_csv(line));
    }
  }
  return t;
}

ExportReport export_plot_data(const std::string& results_dir, const std::string& out_dir,
                              const std::string& header_line) {
  ExportReport rep;
  std::error_code ec;
  if (!fs::is_directory(results_dir, ec)) {
    rep.warnings.push_back("results directory '" + results_dir + "' does not exist");
  }
  fs::create_directories(out_dir, ec);
  if (!fs::is_directory(out_dir)) throw std::runtime_error("cannot create '" + out_dir + "'");

  // Latency versus alpha from a sweep.
  std::string curve = header_line + "alpha,mean_latency_ms\n";
  const fs::path sweep = fs::path(results_dir) / "sweep.csv";
  if (fs::exists(sweep)) {
    const CsvTable t = read_csv(sweep.string());
    const int ca = t.column("alpha"), cl = t.column("p99_mean_ms");
    if (ca >= 0 && cl >= 0) {
      for (const auto& r : t.rows) {
        curve += r.at(ca) + "," + r.at(cl) + "\n";
        ++rep.latency_rows;
      }
    }
  }
  write_text(fs::path(out_dir) / "latency_vs_alpha.csv", curve);

  // alpha and alpha* over time for every per-window CSV.
  std::string timeline = header_line + "run,t,series,value\n";
  for (const auto& f : sorted_files(results_dir, "", ".csv")) {
    const CsvTable t = read_csv(f.string());
    std::string joined;
    for (const auto& h : t.header) joined += (joined.empty() ? "" : ",") + h;
    if (joined != kWindowsHeader) continue;
    const int ct = t.column("t"), ca = t.column("alpha"), cs = t.column("alpha_star");
    const std::string run = f.stem().string();
    for (const auto& r : t.rows) {
      timeline += run + "," + r.at(ct) + ",alpha," + r.at(ca) + "\n";
      ++rep.timeline_rows;
      if (cs < static_cast<int>(r.size()) && !r[cs].empty()) {
        timeline += run + "," + r.at(ct) + ",alpha_star," + r[cs] + "\n";
        ++rep.timeline_rows;
      }
    }
  }
  write_text(fs::path(out_dir) / "alpha_timeline.csv", timeline);

  // Mean alpha over (node count, hot share) cells.
  std::map<std::pair<double, double>, std::pair<double, int>> cells;
  for (const auto& f : sorted_files(results_dir, "", ".summary")) {
    const auto s = read_summary(f.string());
    auto n = s.find("n_nodes"), h = s.find("hot_share"), a = s.find("mean_alpha");
    if (n == s.end() || h == s.end() || a == s.end()) continue;
    auto& c = cells[{n->second, h->second}];
    c.first += a->second;
    ++c.second;
  }
  std::string heat = header_line + "n_nodes,hot_share,mean_alpha\n";
  for (const auto& [k, v] : cells) {
    heat += fmt(k.first) + "," + fmt(k.second) + "," + fmt(v.first / v.second) + "\n";
    ++rep.heatmap_rows;
  }
  write_text(fs::path(out_dir) / "heatmap.csv", heat);

  // Mean score components of the chosen node, per routing log.
  std::string routing = header_line + "source,component,mean\n";
  for (const auto& f : sorted_files(results_dir, "routes_", ".csv")) {
    const CsvTable t = read_csv(f.string());
    const std::vector<std::string> comps = {"h_kv", "h_emb", "load", "bonus", "total"};
    for (const auto& c : comps) {
      const int col = t.column(c);
      if (col < 0 || t.rows.empty()) continue;
      double s = 0;
      for (const auto& r : t.rows) s += to_double(r.at(col)).value_or(0.0);
      routing += f.stem().string() + "," + c + "," + fmt(s / t.rows.size()) + "\n";
      ++rep.routing_rows;
    }
  }
  write_text(fs::path(out_dir) / "routing_breakdown.csv", routing);

  if (rep.latency_rows + rep.timeline_rows + rep.heatmap_rows + rep.routing_rows == 0) {
    rep.warnings.push_back("no run artifacts found in '" + results_dir + "'; exports are empty");
  }
  return rep;
}

}  // namespace hbmpart

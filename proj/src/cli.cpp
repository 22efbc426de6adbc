#include "hbmpart/cli.hpp"

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "hbmpart/config.hpp"
#include "hbmpart/engine.hpp"
#include "hbmpart/report.hpp"

namespace hbmpart {

namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::string out;
  bool no_timestamp = false;
};

void add_common(CLI::App* sub, Common& c, bool with_config = true) {
  if (with_config) {
    sub->add_option("-c,--config", c.config,
                    std::string("Config file (default: $") + kConfigEnvVar + ")");
    sub->add_option("--set", c.sets, "Override a key, e.g. --set engine.n_nodes=8");
    sub->add_option("-o,--out", c.out, "Output directory (default: output.dir)");
  }
  sub->add_flag("--no-timestamp", c.no_timestamp, "Omit the timestamp header line");
}

std::string timestamp_line(bool suppress) {
  if (suppress) return "";
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[64];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return std::string("# generated ") + buf + "\n";
}

ExperimentConfig load_experiment(const Common& c) {
  std::string path = c.config;
  if (path.empty()) {
    if (const char* env = std::getenv(kConfigEnvVar)) path = env;
  }
  ExperimentConfig cfg = path.empty() ? ExperimentConfig{} : load_config(path);
  for (const auto& s : c.sets) apply_override(cfg, s);
  cfg.validate();
  if (!c.out.empty()) cfg.output_dir = c.out;
  return cfg;
}

void write_file(const fs::path& p, const std::string& content) {
  std::ofstream os(p);
  if (!os) throw std::runtime_error("cannot write '" + p.string() + "'");
  os << content;
  if (!os) throw std::runtime_error("write failed for '" + p.string() + "'");
}

void ensure_dir(const std::string& d) {
  std::error_code ec;
  fs::create_directories(d, ec);
  if (!fs::is_directory(d)) throw std::runtime_error("cannot create directory '" + d + "'");
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string alpha_tag(double a) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", a);
  return buf;
}

bool needs_policy(ControllerKind k) {
  return k == ControllerKind::Smart || k == ControllerKind::PpoOnly;
}

// Returns null (with a message on `err`) when the checkpoint is missing.
std::shared_ptr<const PpoPolicy> policy_for(const ExperimentConfig& cfg,
                                            const std::string& override_path,
                                            std::ostream& err) {
  if (!needs_policy(cfg.engine.controller)) return nullptr;
  const std::string path = override_path.empty() ? cfg.checkpoint : override_path;
  if (!fs::exists(path)) {
    err << "error: checkpoint not found: '" << path << "'\n";
    return nullptr;
  }
  auto p = std::make_shared<PpoPolicy>(PpoPolicy::load_file(path));
  p->freeze();
  return p;
}

std::string windows_csv(const RunResult& r, const std::string& ts) {
  std::ostringstream os;
  os << ts;
  write_windows_csv(os, r);
  return os.str();
}

std::string summary_text(const RunResult& r, const std::string& ts) {
  std::ostringstream os;
  os << ts;
  write_summary(os, r.summary);
  return os.str();
}

std::string routes_csv(const RunResult& r, const std::string& ts) {
  std::ostringstream os;
  os << ts << "request_id,node,fallback,h_kv,h_emb,load,bonus,total\n";
  char buf[160];
  for (const auto& x : r.routes) {
    std::snprintf(buf, sizeof buf, "%lld,%d,%d,%.6g,%.6g,%.6g,%.6g,%.6g\n",
                  static_cast<long long>(x.request_id), x.node, x.fallback ? 1 : 0,
                  x.chosen.h_kv, x.chosen.h_emb, x.chosen.load, x.chosen.bonus,
                  x.chosen.total);
    os << buf;
  }
  return os.str();
}

std::string aggregate_csv(const std::map<std::string, std::vector<double>>& per_metric,
                          const std::string& ts) {
  std::string s = ts + "metric,mean,ci_half_width,n\n";
  for (const auto& [k, v] : per_metric) {
    const Aggregate a = aggregate(v);
    s += k + "," + fmt(a.mean) + "," + (a.has_ci ? fmt(a.half_width) : "") + "," +
         std::to_string(a.n) + "\n";
  }
  return s;
}

void print_summary(std::ostream& out, const std::string& label,
                   const std::map<std::string, double>& s) {
  out << label << ':';
  for (const char* k : {"p99_mean_ms", "p99_ms", "qos", "mean_alpha", "oracle_gap",
                        "recovery_triggers"}) {
    auto it = s.find(k);
    if (it != s.end()) out << ' ' << k << '=' << fmt(it->second);
  }
  out << '\n';
}

// Runs one labelled config over every seed and writes the artifacts.
int run_seeds(const ExperimentConfig& cfg, const std::string& label,
              std::shared_ptr<const PpoPolicy> policy, const std::string& ts,
              std::ostream& out) {
  ensure_dir(cfg.output_dir);
  std::map<std::string, std::vector<double>> per_metric;
  for (auto seed : cfg.seeds) {
    EngineConfig e = cfg.engine;
    e.regime.seed = seed;
    RunOptions opts;
    opts.keep_routes = cfg.log_routes;
    const RunResult r = run(e, policy, opts);
    const std::string stem = label + "_seed" + std::to_string(seed);
    const fs::path dir(cfg.output_dir);
    write_file(dir / (stem + ".csv"), windows_csv(r, ts));
    write_file(dir / (stem + ".summary"), summary_text(r, ts));
    if (cfg.log_routes) {
      write_file(dir / ("routes_" + std::string(to_string(e.router.mode)) + "_" + stem + ".csv"),
                 routes_csv(r, ts));
    }
    for (const auto& [k, v] : r.summary) per_metric[k].push_back(v);
    print_summary(out, stem, r.summary);
  }
  write_file(fs::path(cfg.output_dir) / (label + "_aggregate.csv"), aggregate_csv(per_metric, ts));
  if (cfg.seeds.size() < 2) out << "note: single seed, confidence interval omitted\n";
  return 0;
}

int cmd_train(const Common& c, const std::string& ckpt_opt, const std::string& resume,
              int gap_every, int gap_epochs, std::ostream& out) {
  const ExperimentConfig cfg = load_experiment(c);
  ensure_dir(cfg.output_dir);
  PpoPolicy policy = resume.empty() ? PpoPolicy(cfg.train.seed) : PpoPolicy::load_file(resume);
  const std::string ts = timestamp_line(c.no_timestamp);
  std::string curve = ts + "episode,mean_reward,oracle_gap\n";
  train_policy(cfg.engine, cfg.train, policy, [&](const EpisodeStats& st) {
    std::string gap;
    if (gap_every > 0 && (st.episode + 1) % gap_every == 0) {
      EngineConfig e = cfg.engine;
      e.controller = ControllerKind::PpoOnly;
      e.oracle = true;
      e.regime.duration = gap_epochs * e.epoch_seconds();
      auto frozen = std::make_shared<PpoPolicy>(policy);
      frozen->freeze();
      gap = fmt(run(e, frozen).summary.at("oracle_gap"));
    }
    curve += std::to_string(st.episode) + "," + fmt(st.mean_reward) + "," + gap + "\n";
    out << "episode " << st.episode << " mean_reward=" << fmt(st.mean_reward)
        << (gap.empty() ? "" : " oracle_gap=" + gap) << '\n';
  });
  const std::string path = ckpt_opt.empty() ? cfg.checkpoint : ckpt_opt;
  policy.save_file(path);
  write_file(fs::path(cfg.output_dir) / "training_curve.csv", curve);
  out << "wrote checkpoint " << path << '\n';
  return 0;
}

int cmd_sweep(const Common& c, std::vector<double> alphas, std::ostream& out) {
  ExperimentConfig cfg = load_experiment(c);
  if (alphas.empty()) alphas = cfg.sweep_alphas;
  ensure_dir(cfg.output_dir);
  const std::string ts = timestamp_line(c.no_timestamp);
  std::string table = ts + "alpha,p99_mean_ms,p99_ms,qos\n";
  for (double a : alphas) {
    ExperimentConfig one = cfg;
    one.engine.controller = ControllerKind::Static;
    one.engine.static_alpha = a;
    one.engine.initial_alpha = a;
    one.engine.validate();
    double p99m = 0, p99 = 0, qos = 0;
    for (auto seed : cfg.seeds) {
      EngineConfig e = one.engine;
      e.regime.seed = seed;
      const RunResult r = run(e);
      const std::string stem = "sweep_a" + alpha_tag(a) + "_seed" + std::to_string(seed);
      write_file(fs::path(cfg.output_dir) / (stem + ".csv"), windows_csv(r, ts));
      write_file(fs::path(cfg.output_dir) / (stem + ".summary"), summary_text(r, ts));
      p99m += r.summary.at("p99_mean_ms");
      p99 += r.summary.at("p99_ms");
      qos += r.summary.at("qos");
    }
    const double n = static_cast<double>(cfg.seeds.size());
    table += alpha_tag(a) + "," + fmt(p99m / n) + "," + fmt(p99 / n) + "," + fmt(qos / n) + "\n";
    out << "alpha=" << alpha_tag(a) << " p99_mean_ms=" << fmt(p99m / n) << " qos=" << fmt(qos / n)
        << '\n';
  }
  write_file(fs::path(cfg.output_dir) / "sweep.csv", table);
  return 0;
}

int cmd_validate(const std::string& results, const std::string& golden, double tol,
                 bool write_golden, std::ostream& out, std::ostream& err) {
  int n_files = 0;
  const auto metrics = collect_summaries(results, &n_files);
  if (n_files == 0) {
    err << "error: no .summary files in '" << results << "'\n";
    return 2;
  }
  if (write_golden) {
    write_file(golden, golden_csv(metrics, tol));
    out << "wrote golden " << golden << " from " << n_files << " summaries\n";
    return 0;
  }
  const auto rows = validate_metrics(read_golden(golden), metrics, tol);
  int failed = 0;
  for (const auto& r : rows) {
    if (!r.present) {
      out << "MISSING " << r.metric << '\n';
      ++failed;
      continue;
    }
    char buf[256];
    std::snprintf(buf, sizeof buf, "%s %s value=%.6g golden=%.6g rel_err=%.4f tol=%.4f\n",
                  r.pass ? "PASS" : "FAIL", r.metric.c_str(), r.value, r.golden, r.rel_error,
                  r.tolerance);
    out << buf;
    failed += !r.pass;
  }
  out << (failed ? "validation failed: " : "validation passed: ") << rows.size() - failed << '/'
      << rows.size() << " metrics within tolerance\n";
  return failed ? 1 : 0;
}

}  // namespace

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Dual-cache HBM partitioning cluster simulator"};
  app.require_subcommand(1);

  Common c;
  std::string checkpoint, resume, seeds_opt, label;
  int gap_every = 0, gap_epochs = 40;
  std::vector<double> alphas;
  std::string results_dir, golden, plots_out;
  double tolerance = 0.05;
  bool write_golden = false;

  auto* train = app.add_subcommand("train", "Train the PPO base policy offline");
  add_common(train, c);
  train->add_option("--checkpoint", checkpoint, "Checkpoint path (default: output.checkpoint)");
  train->add_option("--resume", resume, "Start from this checkpoint");
  train->add_option("--gap-every", gap_every, "Evaluate the oracle gap every N episodes");
  train->add_option("--gap-epochs", gap_epochs, "Epochs per oracle-gap evaluation");

  auto* runc = app.add_subcommand("run", "Simulate the configured controller");
  add_common(runc, c);
  runc->add_option("--checkpoint", checkpoint, "Policy checkpoint for smart/ppo_only");
  runc->add_option("--seed", seeds_opt, "Comma-separated regime seeds");
  runc->add_option("--label", label, "File stem (default: controller kind)");

  auto* sweep = app.add_subcommand("sweep-alpha", "Static-alpha sweep, one CSV per alpha");
  add_common(sweep, c);
  sweep->add_option("--alphas", alphas, "Alpha values (default: sweep.alphas)")->delimiter(',');
  sweep->add_option("--seed", seeds_opt, "Comma-separated regime seeds");

  auto* oracle = app.add_subcommand("oracle", "Replay the per-epoch oracle alpha");
  add_common(oracle, c);
  oracle->add_option("--seed", seeds_opt, "Comma-separated regime seeds");

  auto* validate = app.add_subcommand("validate", "Compare run summaries with golden values");
  validate->add_option("results_dir", results_dir, "Directory holding .summary files")->required();
  validate->add_option("golden", golden, "Golden CSV (metric,mean,tolerance)")->required();
  validate->add_option("--tolerance", tolerance, "Default relative tolerance");
  validate->add_flag("--write-golden", write_golden, "Write the golden file from the results");

  auto* plots = app.add_subcommand("export-plots", "Emit tidy plot-data CSVs");
  plots->add_option("results_dir", results_dir, "Directory of run artifacts")->required();
  plots->add_option("-o,--out", plots_out, "Output directory (default: <results_dir>/plots)");
  add_common(plots, c, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  auto apply_seeds = [&](const Common& cc) {
    Common copy = cc;
    if (!seeds_opt.empty()) copy.sets.push_back("engine.seeds=" + seeds_opt);
    return copy;
  };

  try {
    if (train->parsed()) return cmd_train(c, checkpoint, resume, gap_every, gap_epochs, out);
    if (runc->parsed() || oracle->parsed()) {
      ExperimentConfig cfg = load_experiment(apply_seeds(c));
      if (oracle->parsed()) {
        cfg.engine.controller = ControllerKind::OracleReplay;
        cfg.engine.oracle = true;
      }
      auto policy = policy_for(cfg, checkpoint, err);
      if (needs_policy(cfg.engine.controller) && !policy) return 2;
      const std::string stem =
          !label.empty() ? label
                         : (oracle->parsed() ? std::string("oracle")
                                             : std::string(to_string(cfg.engine.controller)));
      return run_seeds(cfg, stem, policy, timestamp_line(c.no_timestamp), out);
    }
    if (sweep->parsed()) return cmd_sweep(apply_seeds(c), alphas, out);
    if (validate->parsed()) {
      return cmd_validate(results_dir, golden, tolerance, write_golden, out, err);
    }
    if (plots->parsed()) {
      const std::string dir = plots_out.empty() ? (fs::path(results_dir) / "plots").string() : plots_out;
      const ExportReport rep = export_plot_data(results_dir, dir, timestamp_line(c.no_timestamp));
      for (const auto& w : rep.warnings) err << "warning: " << w << '\n';
      out << "latency_vs_alpha=" << rep.latency_rows << " alpha_timeline=" << rep.timeline_rows
          << " heatmap=" << rep.heatmap_rows << " routing_breakdown=" << rep.routing_rows
          << " -> " << dir << '\n';
      return 0;
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace hbmpart

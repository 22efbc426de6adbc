#include "hbmpart/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace hbmpart {

namespace {

using C = ExperimentConfig;

std::string fmt_double(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);  // shortest round-trip form
  return std::string(buf, r.ptr);
}

template <class T>
T parse_number(const std::string& key, const std::string& s) {
  T v{};
  const char* b = s.data();
  const char* e = s.data() + s.size();
  if (!s.empty() && *b == '+') ++b;
  auto r = std::from_chars(b, e, v);
  if (s.empty() || r.ec != std::errc() || r.ptr != e) {
    throw ConfigError("config: bad value '" + s + "' for " + key);
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError("config: bad boolean '" + s + "' for " + key);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  if (s.empty()) return out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) {
    const auto b = cur.find_first_not_of(" \t");
    const auto e = cur.find_last_not_of(" \t");
    out.push_back(b == std::string::npos ? "" : cur.substr(b, e - b + 1));
  }
  return out;
}

struct Field {
  std::string key;
  std::function<void(C&, const std::string&)> set;
  std::function<std::string(const C&)> get;
};

template <class T>
Field num(std::string key, T& (*ref)(C&)) {
  return {key,
          [key, ref](C& c, const std::string& s) { ref(c) = parse_number<T>(key, s); },
          [ref](const C& c) {
            const T v = ref(const_cast<C&>(c));
            if constexpr (std::is_floating_point_v<T>) {
              return fmt_double(v);
            } else {
              return std::to_string(v);
            }
          }};
}

Field flag(std::string key, bool& (*ref)(C&)) {
  return {key, [key, ref](C& c, const std::string& s) { ref(c) = parse_bool(key, s); },
          [ref](const C& c) { return std::string(ref(const_cast<C&>(c)) ? "true" : "false"); }};
}

Field text(std::string key, std::string& (*ref)(C&)) {
  return {key, [ref](C& c, const std::string& s) { ref(c) = s; },
          [ref](const C& c) { return ref(const_cast<C&>(c)); }};
}

template <class T>
Field list(std::string key, std::vector<T>& (*ref)(C&)) {
  return {key,
          [key, ref](C& c, const std::string& s) {
            std::vector<T> v;
            for (const auto& p : split(s, ',')) v.push_back(parse_number<T>(key, p));
            ref(c) = std::move(v);
          },
          [ref](const C& c) {
            std::string out;
            for (const auto& v : ref(const_cast<C&>(c))) {
              if (!out.empty()) out += ',';
              if constexpr (std::is_floating_point_v<T>) {
                out += fmt_double(v);
              } else {
                out += std::to_string(v);
              }
            }
            return out;
          }};
}

#define REF(T, expr) +[](C& c) -> T& { return expr; }

const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      {"hardware.preset",
       [](C& c, const std::string& s) {
         try {
           c.engine.hw = hardware_preset(s);
         } catch (const std::exception&) {
           throw ConfigError("config: unknown hardware.preset '" + s + "'");
         }
       },
       [](const C& c) { return c.engine.hw.name; }},
      num("hardware.gpu_flops", REF(double, c.engine.hw.gpu_flops)),
      num("hardware.pcie_bw", REF(double, c.engine.hw.pcie_bw)),
      num("hardware.rdma_bw", REF(double, c.engine.hw.rdma_bw)),
      num("hardware.hbm_bytes_per_node", REF(double, c.engine.hw.hbm_bytes_per_node)),
      num("hardware.node_count", REF(int, c.engine.hw.node_count)),

      num("model.n_layers", REF(int, c.engine.model.n_layers)),
      num("model.n_heads", REF(int, c.engine.model.n_heads)),
      num("model.head_dim", REF(int, c.engine.model.head_dim)),
      num("model.emb_dim", REF(int, c.engine.model.emb_dim)),
      num("model.emb_bytes_per_elem", REF(int, c.engine.model.emb_bytes_per_elem)),
      num("model.kv_bytes_per_elem", REF(int, c.engine.model.kv_bytes_per_elem)),
      num("model.n_tables", REF(int, c.engine.model.n_tables)),

      num("workload.n_users", REF(int, c.engine.population.n_users)),
      num("workload.hot_fraction", REF(double, c.engine.population.hot_fraction)),
      num("workload.seq_len_min", REF(std::int64_t, c.engine.population.seq_len_min)),
      num("workload.seq_len_max", REF(std::int64_t, c.engine.population.seq_len_max)),
      num("workload.catalog_items", REF(std::int64_t, c.engine.population.catalog_items)),
      num("workload.n_shards", REF(int, c.engine.population.n_shards)),
      num("workload.profile_k", REF(int, c.engine.population.profile_k)),
      num("workload.p_local", REF(double, c.engine.population.p_local)),
      num("workload.zipf_s", REF(double, c.engine.population.zipf_s)),
      num("workload.population_seed", REF(std::uint64_t, c.engine.population.seed)),
      {"workload.regime",
       [](C& c, const std::string& s) {
         try {
           c.engine.regime.kind = regime_from_string(s);
         } catch (const std::exception&) {
           throw ConfigError("config: unknown workload.regime '" + s + "'");
         }
       },
       [](const C& c) { return std::string(to_string(c.engine.regime.kind)); }},
      num("workload.base_qps", REF(double, c.engine.regime.base_qps)),
      num("workload.hot_share_start", REF(double, c.engine.regime.hot_share_start)),
      num("workload.hot_share_end", REF(double, c.engine.regime.hot_share_end)),
      num("workload.burst_rate_per_hour", REF(double, c.engine.regime.burst_rate_per_hour)),
      num("workload.burst_len_min", REF(int, c.engine.regime.burst_len_min)),
      num("workload.burst_len_max", REF(int, c.engine.regime.burst_len_max)),
      num("workload.burst_hot_share", REF(double, c.engine.regime.burst_hot_share)),
      num("workload.burst_qps_scale", REF(double, c.engine.regime.burst_qps_scale)),
      {"workload.scripted_bursts",
       [](C& c, const std::string& s) {
         std::vector<BurstWindow> v;
         for (const auto& p : split(s, ',')) {
           const auto parts = split(p, ':');
           if (parts.size() != 2) {
             throw ConfigError("config: bad value '" + p +
                               "' for workload.scripted_bursts (want start:len)");
           }
           v.push_back({parse_number<int>("workload.scripted_bursts", parts[0]),
                        parse_number<int>("workload.scripted_bursts", parts[1])});
         }
         c.engine.regime.scripted_bursts = std::move(v);
       },
       [](const C& c) {
         std::string out;
         for (const auto& b : c.engine.regime.scripted_bursts) {
           if (!out.empty()) out += ',';
           out += std::to_string(b.start_epoch) + ':' + std::to_string(b.n_epochs);
         }
         return out;
       }},
      list("workload.hot_share_schedule", REF(std::vector<double>, c.engine.regime.hot_share_schedule)),
      num("workload.duration", REF(double, c.engine.regime.duration)),
      num("workload.epoch_seconds", REF(double, c.engine.regime.epoch_seconds)),
      num("workload.seed", REF(std::uint64_t, c.engine.regime.seed)),

      num("engine.n_nodes", REF(int, c.engine.n_nodes)),
      num("engine.hbm_bytes_per_node", REF(double, c.engine.hbm_bytes_per_node)),
      num("engine.block_bytes", REF(double, c.engine.block_bytes)),
      num("engine.throttle_bw", REF(double, c.engine.throttle_bw)),
      num("engine.tau_slo", REF(double, c.engine.tau_slo)),
      num("engine.window_seconds", REF(double, c.engine.window_seconds)),
      num("engine.tick_seconds", REF(double, c.engine.tick_seconds)),
      num("engine.base_compute_ratio", REF(double, c.engine.base_compute_ratio)),
      num("engine.queue_capacity", REF(int, c.engine.queue_capacity)),
      num("engine.drop_latency", REF(double, c.engine.drop_latency)),
      num("engine.initial_alpha", REF(double, c.engine.initial_alpha)),
      num("engine.warmup_epochs", REF(int, c.engine.warmup_epochs)),
      flag("engine.oracle", REF(bool, c.engine.oracle)),
      num("engine.oracle_step", REF(double, c.engine.oracle_step)),
      list("engine.seeds", REF(std::vector<std::uint64_t>, c.seeds)),

      {"router.mode",
       [](C& c, const std::string& s) {
         try {
           c.engine.router.mode = router_mode_from_string(s);
         } catch (const std::exception&) {
           throw ConfigError("config: unknown router.mode '" + s + "'");
         }
       },
       [](const C& c) { return std::string(to_string(c.engine.router.mode)); }},
      num("router.epsilon", REF(double, c.engine.router.epsilon)),
      num("router.tau", REF(double, c.engine.router.tau)),
      num("router.c_ld", REF(double, c.engine.router.c_ld)),
      num("router.ref_emb_hit", REF(double, c.engine.router.ref_emb_hit)),
      num("router.load_norm", REF(double, c.engine.router.load_norm)),
      num("router.kv_insert_delay", REF(int, c.engine.router.kv_insert_delay)),
      num("router.kv_evict_delay", REF(int, c.engine.router.kv_evict_delay)),
      num("router.emb_delay", REF(int, c.engine.router.emb_delay)),
      flag("router.log_routes", REF(bool, c.log_routes)),

      {"controller.kind",
       [](C& c, const std::string& s) {
         try {
           c.engine.controller = controller_from_string(s);
         } catch (const std::exception&) {
           throw ConfigError("config: unknown controller.kind '" + s + "'");
         }
       },
       [](const C& c) { return std::string(to_string(c.engine.controller)); }},
      num("controller.static_alpha", REF(double, c.engine.static_alpha)),
      num("controller.pid_kp", REF(double, c.engine.pid.kp)),
      num("controller.pid_ki", REF(double, c.engine.pid.ki)),
      num("controller.pid_kd", REF(double, c.engine.pid.kd)),
      num("controller.pid_alpha0", REF(double, c.engine.pid.alpha0)),
      flag("controller.adapter", REF(bool, c.engine.smart.adapter_enabled)),
      flag("controller.recovery", REF(bool, c.engine.smart.recovery_enabled)),
      num("controller.eta0", REF(double, c.engine.smart.eta0)),
      num("controller.target_step", REF(double, c.engine.smart.target_step)),
      num("controller.probe_window", REF(int, c.engine.smart.probe_window)),
      num("controller.ema_window", REF(int, c.engine.smart.ema_window)),
      num("controller.rho_star", REF(double, c.engine.smart.rho_star)),
      num("controller.adapter_batch", REF(int, c.engine.smart.adapter_batch)),
      num("controller.adapter_seed", REF(std::uint64_t, c.engine.smart.seed)),
      num("controller.seq_len_max", REF(double, c.engine.smart.observe.seq_len_max)),
      num("controller.p99_max", REF(double, c.engine.smart.observe.p99_max)),

      num("train.episodes", REF(int, c.train.episodes)),
      num("train.episode_epochs", REF(int, c.train.episode_epochs)),
      num("train.lr", REF(double, c.train.ppo.lr)),
      num("train.gamma", REF(double, c.train.ppo.gamma)),
      num("train.lambda", REF(double, c.train.ppo.lambda)),
      num("train.clip_eps", REF(double, c.train.ppo.clip_eps)),
      num("train.value_coef", REF(double, c.train.ppo.value_coef)),
      num("train.entropy_coef", REF(double, c.train.ppo.entropy_coef)),
      num("train.update_epochs", REF(int, c.train.ppo.update_epochs)),
      num("train.minibatch", REF(int, c.train.ppo.minibatch)),
      num("train.hot_share_min", REF(double, c.train.hot_share_min)),
      num("train.hot_share_max", REF(double, c.train.hot_share_max)),
      num("train.reward_scale", REF(double, c.train.reward_scale)),
      flag("train.randomize_alpha", REF(bool, c.train.randomize_alpha)),
      num("train.seed", REF(std::uint64_t, c.train.seed)),

      list("sweep.alphas", REF(std::vector<double>, c.sweep_alphas)),

      text("output.dir", REF(std::string, c.output_dir)),
      text("output.checkpoint", REF(std::string, c.checkpoint)),
  };
  return f;
}

#undef REF

const Field* find_field(const std::string& key) {
  static const std::map<std::string, const Field*> index = [] {
    std::map<std::string, const Field*> m;
    for (const auto& f : fields()) m[f.key] = &f;
    return m;
  }();
  auto it = index.find(key);
  return it == index.end() ? nullptr : it->second;
}

}  // namespace

void ExperimentConfig::validate() const {
  engine.validate();
  if (seeds.empty()) throw ConfigError("config: engine.seeds must not be empty");
  for (double a : sweep_alphas) {
    if (a < kAlphaMin || a > kAlphaMax) {
      throw ConfigError("config: sweep.alphas entry " + fmt_double(a) +
                        " outside [0.1, 0.9]");
    }
  }
  if (train.episodes < 0 || train.episode_epochs < 2) {
    throw ConfigError("config: train.episodes must be >= 0 and train.episode_epochs >= 2");
  }
  if (train.hot_share_min < 0 || train.hot_share_max >= 1 ||
      train.hot_share_min > train.hot_share_max) {
    throw ConfigError("config: bad train.hot_share_min/max");
  }
}

ExperimentConfig parse_config(std::istream& is) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  std::vector<std::pair<std::string, std::string>> entries;
  for (const auto& [section, body] : tree) {
    if (body.empty()) {
      throw ConfigError("config: key '" + section + "' outside any section");
    }
    for (const auto& [key, value] : body) {
      const std::string path = section + "." + key;
      if (!find_field(path)) throw ConfigError("config: unknown key '" + path + "'");
      entries.emplace_back(path, value.data());
    }
  }
  ExperimentConfig c;
  // The preset resets the whole hardware block, so it goes first.
  for (const auto& [k, v] : entries) {
    if (k == "hardware.preset") find_field(k)->set(c, v);
  }
  for (const auto& [k, v] : entries) {
    if (k != "hardware.preset") find_field(k)->set(c, v);
  }
  try {
    c.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

ExperimentConfig parse_config_string(const std::string& text) {
  std::istringstream is(text);
  return parse_config(is);
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  return parse_config(in);
}

std::string serialize_config(const ExperimentConfig& c) {
  std::ostringstream os;
  std::string section;
  for (const auto& f : fields()) {
    const auto dot = f.key.find('.');
    const std::string sec = f.key.substr(0, dot);
    if (sec != section) {
      if (!section.empty()) os << '\n';
      os << '[' << sec << "]\n";
      section = sec;
    }
    os << f.key.substr(dot + 1) << " = " << f.get(c) << '\n';
  }
  return os.str();
}

void apply_override(ExperimentConfig& c, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw ConfigError("config: override '" + assignment + "' is not section.key=value");
  }
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t");
    const auto e = s.find_last_not_of(" \t");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  const std::string key = trim(assignment.substr(0, eq));
  const Field* f = find_field(key);
  if (!f) throw ConfigError("config: unknown key '" + key + "'");
  f->set(c, trim(assignment.substr(eq + 1)));
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.push_back(f.key);
  return out;
}

}  // namespace hbmpart

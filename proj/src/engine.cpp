#include "hbmpart/engine.hpp"

#include <algorithm>
#include <boost/math/distributions/students_t.hpp>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <ostream>
#include <stdexcept>

namespace hbmpart {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

bool is_multiple(double big, double small) {
  const double k = big / small;
  return k >= 1 - 1e-9 && std::abs(k - std::round(k)) < 1e-6;
}

struct Fnv {
  std::uint64_t h = 1469598103934665603ULL;
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= c[i];
      h *= 1099511628211ULL;
    }
  }
  template <class T>
  void add(const T& v) {
    bytes(&v, sizeof v);
  }
};

}  // namespace

std::string_view to_string(ControllerKind k) {
  switch (k) {
    case ControllerKind::Static:
      return "static";
    case ControllerKind::Pid:
      return "pid";
    case ControllerKind::PpoOnly:
      return "ppo_only";
    case ControllerKind::Smart:
      return "smart";
    case ControllerKind::OracleReplay:
      return "oracle_replay";
  }
  return "?";
}

ControllerKind controller_from_string(std::string_view s) {
  if (s == "static") return ControllerKind::Static;
  if (s == "pid") return ControllerKind::Pid;
  if (s == "ppo_only") return ControllerKind::PpoOnly;
  if (s == "smart") return ControllerKind::Smart;
  if (s == "oracle_replay") return ControllerKind::OracleReplay;
  throw std::invalid_argument("unknown controller '" + std::string(s) + "'");
}

// ----------------------------------------------------------- EngineConfig

double EngineConfig::page_bytes() const {
  const std::int64_t ips = (population.catalog_items + population.n_shards - 1) /
                           population.n_shards;
  return static_cast<double>(ips) * model.emb_row_bytes() *
         std::max(1, model.n_tables);
}

HbmConfig EngineConfig::hbm_config() const {
  HbmConfig h;
  h.hbm_bytes = hbm_bytes_per_node;
  h.page_bytes = page_bytes();
  h.block_bytes = block_bytes;
  h.throttle_bw = throttle_bw;
  h.pcie_bw = hw.pcie_bw;
  return h;
}

RoutingWeights EngineConfig::routing_weights(double mean_seq_len) const {
  const auto len = static_cast<std::int64_t>(std::llround(mean_seq_len));
  const double c_kv = kv_recompute_cost(hw, model, len);
  const auto misses = static_cast<std::int64_t>(std::llround(
      mean_seq_len * model.n_tables * (1.0 - router.ref_emb_hit)));
  const double c_emb = emb_window_cost(misses, hw, model);
  RoutingWeights w = weights_from_costs(c_kv, c_emb, router.c_ld);
  w.epsilon = router.epsilon;
  w.tau = router.tau;
  return w;
}

void EngineConfig::validate() const {
  hw.validate();
  model.validate();
  population.validate();
  regime.validate();
  if (n_nodes < 1) throw std::invalid_argument("engine: n_nodes must be >= 1");
  hbm_config().validate();
  if (!(tau_slo > 0)) throw std::invalid_argument("engine: tau_slo must be > 0");
  if (!(window_seconds > 0) || !is_multiple(epoch_seconds(), window_seconds)) {
    throw std::invalid_argument("engine: epoch must be an integer multiple of the window");
  }
  if (!(tick_seconds > 0) || !is_multiple(window_seconds, tick_seconds)) {
    throw std::invalid_argument("engine: window must be an integer multiple of the tick");
  }
  if (base_compute_ratio < 0) {
    throw std::invalid_argument("engine: base_compute_ratio must be >= 0");
  }
  if (queue_capacity < 0) throw std::invalid_argument("engine: queue_capacity must be >= 0");
  if (initial_alpha < kAlphaMin || initial_alpha > kAlphaMax) {
    throw std::invalid_argument("engine: initial_alpha outside [0.1, 0.9]");
  }
  if (static_alpha < kAlphaMin || static_alpha > kAlphaMax) {
    throw std::invalid_argument("engine: static_alpha outside [0.1, 0.9]");
  }
  if (warmup_epochs < 0) throw std::invalid_argument("engine: warmup_epochs must be >= 0");
  if (!(router.load_norm > 0)) throw std::invalid_argument("router: load_norm must be > 0");
  if (router.ref_emb_hit < 0 || router.ref_emb_hit > 1) {
    throw std::invalid_argument("router: ref_emb_hit must be in [0,1]");
  }
  if (!(oracle_step > 0) || oracle_step > kAlphaMax - kAlphaMin) {
    throw std::invalid_argument("engine: bad oracle_step");
  }
  if (controller == ControllerKind::OracleReplay && !oracle) {
    throw std::invalid_argument("engine: oracle_replay controller needs the oracle enabled");
  }
}

// ---------------------------------------------------------------- metrics

double nearest_rank(std::vector<double>& v, double q) {
  if (v.empty()) return 0.0;
  auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(v.size())));
  rank = std::clamp<std::size_t>(rank, 1, v.size());
  std::nth_element(v.begin(), v.begin() + (rank - 1), v.end());
  return v[rank - 1];
}

EpochObservation summarize(const std::vector<RequestOutcome>& outs,
                           double tau_slo, double drop_latency) {
  EpochObservation o;
  if (outs.empty()) return o;
  std::vector<double> lat;
  lat.reserve(outs.size());
  std::int64_t met = 0, hot = 0, served = 0, kv_hits = 0;
  double lookups = 0, misses = 0, len = 0;
  for (const auto& r : outs) {
    lat.push_back(r.dropped ? drop_latency : r.latency);
    met += r.slo_met;
    hot += r.hot;
    len += static_cast<double>(r.seq_len);
    if (r.dropped) continue;
    ++served;
    kv_hits += r.kv_hit;
    lookups += static_cast<double>(r.emb_lookups);
    misses += static_cast<double>(r.emb_misses);
  }
  const auto n = static_cast<double>(outs.size());
  o.n_requests = static_cast<std::int64_t>(outs.size());
  o.hot_ratio = static_cast<double>(hot) / n;
  o.kv_hit = served ? static_cast<double>(kv_hits) / static_cast<double>(served) : 0.0;
  o.emb_hit = lookups > 0 ? 1.0 - misses / lookups : 0.0;
  o.mean_seq_len = len / n;
  o.qos = static_cast<double>(met) / n;
  (void)tau_slo;
  o.p99 = nearest_rank(lat, 0.99);
  return o;
}

// ---------------------------------------------------------------- Cluster

Cluster::Cluster(const EngineConfig& cfg, std::shared_ptr<const Population> pop)
    : cfg_(std::make_shared<const EngineConfig>(cfg)), pop_(std::move(pop)) {
  cfg_->validate();
  if (pop_->n_shards() != cfg_->population.n_shards ||
      static_cast<int>(pop_->users().size()) != cfg_->population.n_users) {
    throw std::invalid_argument("cluster: population does not match config");
  }
  const HbmConfig hc = cfg_->hbm_config();
  nodes_.resize(cfg_->n_nodes);
  for (auto& n : nodes_) {
    n.mem = HbmNode(hc, pop_->n_shards(), pop_->shards_by_popularity(),
                    cfg_->population.n_users, cfg_->initial_alpha);
  }
  auto profiles = std::make_shared<std::vector<std::vector<int>>>();
  for (const auto& u : pop_->users()) profiles->push_back(u.shard_profile);
  tables_ = RouterTables(cfg_->n_nodes, cfg_->population.n_users,
                         pop_->n_shards(), std::move(profiles));
  feed_ = ResidencyFeed(cfg_->router.kv_insert_delay, cfg_->router.kv_evict_delay,
                        cfg_->router.emb_delay);
  joint_weights_ = cfg_->routing_weights(pop_->mean_seq_len());
  weights_ = mode_weights(cfg_->router.mode, joint_weights_);
  t_miss_ = emb_miss_cost(cfg_->hw, cfg_->model);
  row_bytes_ = cfg_->model.emb_row_bytes();
}

std::size_t Cluster::queue_length(int n) const {
  return nodes_[n].waiting.size() + (nodes_[n].busy ? 1 : 0);
}

std::int64_t Cluster::in_flight() const {
  std::int64_t k = 0;
  for (int n = 0; n < n_nodes(); ++n) k += static_cast<std::int64_t>(queue_length(n));
  return k;
}

void Cluster::publish(int n) {
  for (const auto& c : log_) feed_.publish(tables_, n, c, epoch_);
  log_.clear();
}

BoundaryReport Cluster::set_alpha(int n, double a) {
  BoundaryReport r = nodes_[n].mem.set_alpha(a, &log_);
  publish(n);
  return r;
}

void Cluster::begin_epoch(int epoch) {
  epoch_ = epoch;
  feed_.advance(tables_, epoch);
}

Cluster::Traffic Cluster::take_traffic(int n) {
  Traffic t = nodes_[n].traffic;
  nodes_[n].traffic = {};
  return t;
}

void Cluster::start_service(int n, const Pending& p, double t) {
  Node& node = nodes_[n];
  const Request& req = *p.req;
  const auto& model = cfg_->model;
  RequestOutcome& o = node.current;
  o = {};
  o.request_id = req.request_id;
  o.node = n;
  o.user = req.user_id;
  o.hot = req.is_hot;
  o.seq_len = req.seq_len;
  o.arrival = req.arrival_time;
  o.queue_delay = t - req.arrival_time;

  std::int64_t miss_items = 0;
  for (const auto& c : *p.hist) {
    if (!node.mem.emb().access(c.shard, &log_)) miss_items += c.count;
  }
  o.emb_lookups = req.seq_len * model.n_tables;
  o.emb_misses = miss_items * model.n_tables;
  o.emb_time = static_cast<double>(o.emb_misses) * t_miss_;

  const double recompute = kv_recompute_cost(cfg_->hw, model, req.seq_len);
  o.kv_hit = node.mem.kv().lookup(req.user_id);
  if (!o.kv_hit) {
    o.kv_time = recompute;
    node.mem.kv().insert(req.user_id, per_user_kv_bytes(model, req.seq_len), &log_);
  }
  o.base_compute = cfg_->base_compute_ratio * recompute;
  const double service = o.emb_time + o.kv_time + o.base_compute;
  o.latency = o.queue_delay + service;
  o.completion = t + service;
  o.slo_met = o.latency <= cfg_->tau_slo;

  const double miss_bytes = static_cast<double>(o.emb_misses) * row_bytes_;
  node.tick_miss_bytes += miss_bytes;
  node.traffic.miss_bytes += miss_bytes;
  node.busy = true;
  node.busy_until = o.completion;
  publish(n);
}

void Cluster::complete(int n, std::vector<RequestOutcome>& sink) {
  Node& node = nodes_[n];
  sink.push_back(node.current);
  node.busy = false;
  if (!node.waiting.empty()) {
    const Pending p = node.waiting.front();
    node.waiting.pop_front();
    start_service(n, p, node.busy_until);
  }
}

void Cluster::arrive(const Arrival& a, std::vector<RequestOutcome>& sink,
                     std::vector<RouteRecord>* route_log) {
  const Request& req = *a.req;
  for (int n = 0; n < n_nodes(); ++n) {
    tables_.set_load(n, static_cast<double>(queue_length(n)) / cfg_->router.load_norm);
  }
  const RouteDecision d = pick_node(tables_, req.user_id, weights_);
  const ScoreParts parts = score_parts(tables_, d.node, req.user_id, joint_weights_);
  tables_.set_affinity(req.user_id, d.node);
  joint_score_sum_ += parts.total;
  ++routed_;
  fallbacks_ += d.fallback;
  if (route_log) route_log->push_back({req.request_id, d.node, d.fallback, parts});

  Node& node = nodes_[d.node];
  if (static_cast<int>(node.waiting.size()) >= cfg_->queue_capacity &&
      (node.busy || cfg_->queue_capacity == 0)) {
    RequestOutcome o;
    o.request_id = req.request_id;
    o.node = d.node;
    o.user = req.user_id;
    o.hot = req.is_hot;
    o.seq_len = req.seq_len;
    o.arrival = req.arrival_time;
    o.completion = req.arrival_time;
    o.dropped = true;
    o.latency = cfg_->drop_latency;
    o.slo_met = false;
    sink.push_back(o);
    return;
  }
  const Pending p{a.req, a.hist};
  if (!node.busy) {
    start_service(d.node, p, now_);
  } else {
    node.waiting.push_back(p);
  }
}

void Cluster::tick() {
  const double dt = cfg_->tick_seconds;
  for (int n = 0; n < n_nodes(); ++n) {
    Node& node = nodes_[n];
    const double rate = node.tick_miss_bytes / dt;
    const double budget = node.mem.refill_budget(dt, rate);
    const double bytes = node.mem.refill_tick(dt, rate, &log_);
    publish(n);
    node.traffic.refill_bytes += bytes;
    node.traffic.refill_budget += budget;
    node.traffic.max_tick_overrun =
        std::max(node.traffic.max_tick_overrun, bytes - budget);
    node.tick_miss_bytes = 0;
  }
}

void Cluster::advance(const std::vector<Arrival>& arrivals, double t_end,
                      std::vector<RequestOutcome>& sink,
                      std::vector<RouteRecord>* route_log) {
  const double dt = cfg_->tick_seconds;
  std::size_t ai = 0;
  while (true) {
    double tc = kInf;
    int nc = -1;
    for (int n = 0; n < n_nodes(); ++n) {
      if (nodes_[n].busy && nodes_[n].busy_until < tc) {
        tc = nodes_[n].busy_until;
        nc = n;
      }
    }
    const double ta = ai < arrivals.size() ? arrivals[ai].req->arrival_time : kInf;
    const double tt = static_cast<double>(tick_index_ + 1) * dt;
    const double t = std::min({tc, ta, tt});
    if (t > t_end + 1e-12 || t == kInf) break;
    if (tc <= ta && tc <= tt) {
      now_ = tc;
      complete(nc, sink);
    } else if (tt <= ta) {
      now_ = tt;
      ++tick_index_;
      tick();
    } else {
      now_ = ta;
      arrive(arrivals[ai++], sink, route_log);
    }
  }
  // Arrivals are promised to lie before t_end; anything left is a caller bug.
  if (ai != arrivals.size()) throw std::logic_error("cluster: arrivals past t_end");
  now_ = std::max(now_, t_end);
}

void Cluster::drain(std::vector<RequestOutcome>& sink) {
  static const std::vector<Arrival> kNone;
  while (in_flight() > 0) {
    double tc = kInf;
    for (const auto& n : nodes_) {
      if (n.busy) tc = std::min(tc, n.busy_until);
    }
    advance(kNone, tc, sink);
  }
}

std::uint64_t Cluster::state_hash() const {
  Fnv f;
  f.add(now_);
  f.add(tick_index_);
  f.add(epoch_);
  for (const auto& n : nodes_) {
    f.add(n.mem.alpha());
    f.add(n.mem.emb().capacity());
    for (int s : n.mem.emb().lru_order()) {
      f.add(s);
      f.add(static_cast<int>(n.mem.emb().state(s)));
    }
    f.add(n.mem.kv().capacity());
    for (int u : n.mem.kv().lru_order()) {
      f.add(u);
      for (auto b : n.mem.kv().blocks_of(u)) f.add(b);
    }
    f.add(n.mem.kv().free_blocks());
    f.add(n.busy);
    f.add(n.busy_until);
    for (const auto& p : n.waiting) f.add(p.req->request_id);
    f.add(n.tick_miss_bytes);
  }
  for (int u = 0; u < tables_.n_users(); ++u) {
    f.add(tables_.affinity(u));
    for (int n = 0; n < tables_.n_nodes(); ++n) f.add(tables_.kv_bit(n, u));
  }
  for (int n = 0; n < tables_.n_nodes(); ++n) {
    for (int s = 0; s < tables_.n_shards(); ++s) f.add(tables_.emb_bit(n, s));
  }
  f.add(feed_.queued());
  return f.h;
}

// ----------------------------------------------------------------- oracle

double replay_objective(const Cluster& snapshot,
                        const std::vector<Cluster::Arrival>& arrivals,
                        double alpha, const EngineConfig& cfg) {
  Cluster c = snapshot;
  for (int n = 0; n < c.n_nodes(); ++n) c.set_alpha(n, alpha);
  std::vector<RequestOutcome> outs;
  outs.reserve(arrivals.size() + 64);
  const double t_end = (snapshot.epoch() + 1) * cfg.epoch_seconds();
  c.advance(arrivals, t_end, outs);
  c.drain(outs);
  const std::int64_t first_id = arrivals.empty() ? 0 : arrivals.front().req->request_id;
  std::vector<std::vector<double>> per_node(c.n_nodes());
  for (const auto& o : outs) {
    if (o.request_id < first_id) continue;  // queued before the epoch began
    per_node[o.node].push_back(o.dropped ? cfg.drop_latency : o.latency);
  }
  double sum = 0;
  int k = 0;
  for (auto& v : per_node) {
    if (v.empty()) continue;
    sum += nearest_rank(v, 0.99);
    ++k;
  }
  return k ? sum / k : 0.0;
}

OracleResult oracle_alpha(const Cluster& snapshot,
                          const std::vector<Cluster::Arrival>& arrivals,
                          const EngineConfig& cfg, double grid_step) {
  OracleResult r;
  const int n_pts =
      static_cast<int>(std::floor((kAlphaMax - kAlphaMin) / grid_step + 1e-9)) + 1;
  double best = kInf;
  for (int i = 0; i < n_pts; ++i) {
    const double a = std::round((kAlphaMin + i * grid_step) * 1e9) / 1e9;
    const double obj = replay_objective(snapshot, arrivals, a, cfg);
    r.grid.push_back(a);
    r.objective.push_back(obj);
    if (obj < best) {  // strict: ties keep the smaller alpha
      best = obj;
      r.alpha_star = a;
    }
  }
  return r;
}

double oracle_gap(const std::vector<double>& alpha,
                  const std::vector<double>& alpha_star, int warmup) {
  if (alpha.size() != alpha_star.size()) {
    throw std::invalid_argument("oracle_gap: trajectory lengths differ");
  }
  double s = 0;
  std::size_t k = 0;
  for (std::size_t i = static_cast<std::size_t>(std::max(0, warmup)); i < alpha.size(); ++i) {
    s += std::abs(alpha[i] - alpha_star[i]);
    ++k;
  }
  return k ? s / static_cast<double>(k) : 0.0;
}

double oracle_gap(const RunResult& r, int warmup) {
  if (r.alpha_star.empty() || r.node_alpha.empty()) {
    throw std::invalid_argument("oracle_gap: run has no oracle trajectory");
  }
  const std::size_t n_nodes = r.node_alpha.front().size();
  double s = 0;
  for (std::size_t n = 0; n < n_nodes; ++n) {
    std::vector<double> a;
    for (const auto& row : r.node_alpha) a.push_back(row[n]);
    s += oracle_gap(a, r.alpha_star, warmup);
  }
  return s / static_cast<double>(n_nodes);
}

// -------------------------------------------------------------------- run

std::vector<std::unique_ptr<Controller>> make_controllers(
    const EngineConfig& cfg, std::shared_ptr<const PpoPolicy> policy) {
  std::vector<std::unique_ptr<Controller>> out;
  for (int n = 0; n < cfg.n_nodes; ++n) {
    switch (cfg.controller) {
      case ControllerKind::Static:
        out.push_back(std::make_unique<StaticController>(cfg.static_alpha));
        break;
      case ControllerKind::Pid: {
        PidConfig p = cfg.pid;
        p.tau_slo = cfg.tau_slo;
        out.push_back(std::make_unique<PidController>(p));
        break;
      }
      case ControllerKind::PpoOnly: {
        if (!policy) throw std::invalid_argument("ppo_only controller needs a policy");
        ObserveConfig oc = cfg.smart.observe;
        oc.tau_slo = cfg.tau_slo;
        out.push_back(std::make_unique<PpoController>(policy, oc));
        break;
      }
      case ControllerKind::Smart: {
        if (!policy) throw std::invalid_argument("smart controller needs a policy");
        SmartConfig sc = cfg.smart;
        sc.observe.tau_slo = cfg.tau_slo;
        sc.seed = cfg.smart.seed + static_cast<std::uint64_t>(n);
        out.push_back(std::make_unique<SmartController>(policy, sc));
        break;
      }
      case ControllerKind::OracleReplay:
        out.push_back(nullptr);
        break;
    }
  }
  return out;
}

namespace {

std::vector<Cluster::Arrival> make_arrivals(const Population& pop,
                                            const Trace& trace, std::size_t lo,
                                            std::size_t hi) {
  std::vector<Cluster::Arrival> out;
  out.reserve(hi - lo);
  for (std::size_t i = lo; i < hi; ++i) {
    out.push_back({&trace.requests[i], std::make_shared<const ShardHistogram>(
                                           shard_histogram(pop, trace.requests[i]))});
  }
  return out;
}

}  // namespace

RunResult run(const EngineConfig& cfg, std::shared_ptr<const PpoPolicy> policy,
              const RunOptions& opts) {
  cfg.validate();
  auto pop = std::make_shared<const Population>(cfg.population);
  const Trace trace = generate_trace(cfg.regime, *pop);
  Cluster cluster(cfg, pop);
  auto controllers = make_controllers(cfg, policy);

  RunResult res;
  const int n_epochs = trace.n_epochs();
  const double E = cfg.epoch_seconds();
  const int w_per_epoch = static_cast<int>(std::lround(E / cfg.window_seconds));
  const int n_nodes = cfg.n_nodes;
  std::vector<RequestOutcome> epoch_outs;
  std::vector<double> post_lat;
  std::int64_t post_met = 0, post_n = 0, post_kv = 0, post_served = 0;
  double post_lookups = 0, post_misses = 0;

  for (int e = 0; e < n_epochs; ++e) {
    cluster.begin_epoch(e);
    const double t0 = e * E;
    const auto [lo, hi] = trace.range(t0, t0 + E);
    const auto arrivals = make_arrivals(*pop, trace, lo, hi);
    res.arrivals += static_cast<std::int64_t>(hi - lo);

    std::vector<double> alpha_now(n_nodes);
    for (int n = 0; n < n_nodes; ++n) alpha_now[n] = cluster.alpha(n);
    res.node_alpha.push_back(alpha_now);
    const double alpha_mean =
        std::accumulate(alpha_now.begin(), alpha_now.end(), 0.0) / n_nodes;

    std::optional<Cluster> snapshot;
    if (cfg.oracle) snapshot.emplace(cluster);

    epoch_outs.clear();
    std::size_t ai = 0;
    for (int w = 0; w < w_per_epoch; ++w) {
      const double w_end = t0 + (w + 1) * cfg.window_seconds;
      std::vector<Cluster::Arrival> part;
      while (ai < arrivals.size() && arrivals[ai].req->arrival_time < w_end) {
        part.push_back(arrivals[ai++]);
      }
      const std::size_t before = epoch_outs.size();
      cluster.advance(part, w_end, epoch_outs, opts.keep_routes ? &res.routes : nullptr);
      std::vector<RequestOutcome> win(epoch_outs.begin() + static_cast<std::ptrdiff_t>(before),
                                      epoch_outs.end());
      const EpochObservation ob = summarize(win, cfg.tau_slo, cfg.drop_latency);
      WindowMetrics m;
      m.t = w_end;
      m.n = ob.n_requests;
      m.drops = std::count_if(win.begin(), win.end(), [](auto& o) { return o.dropped; });
      m.p99 = ob.p99;
      m.qos = ob.qos;
      m.alpha = alpha_mean;
      m.kv_hit = ob.kv_hit;
      m.emb_hit = ob.emb_hit;
      m.hot_ratio = ob.hot_ratio;
      m.mean_seq_len = ob.mean_seq_len;
      for (int n = 0; n < n_nodes; ++n) {
        const auto tr = cluster.take_traffic(n);
        m.refill_bytes += tr.refill_bytes;
        m.miss_bytes += tr.miss_bytes;
        res.max_refill_overrun = std::max(res.max_refill_overrun, tr.max_tick_overrun);
      }
      res.windows.push_back(m);
    }

    if (snapshot) {
      const OracleResult o = oracle_alpha(*snapshot, arrivals, cfg, cfg.oracle_step);
      res.alpha_star.push_back(o.alpha_star);
      for (int w = 0; w < w_per_epoch; ++w) {
        res.windows[res.windows.size() - 1 - w].alpha_star = o.alpha_star;
      }
    }

    // Per-node observations and the next decision.
    std::vector<std::vector<RequestOutcome>> by_node(n_nodes);
    for (const auto& o : epoch_outs) {
      by_node[o.node].push_back(o);
      if (o.dropped) ++res.dropped; else ++res.completed;
      if (e >= cfg.warmup_epochs) {
        post_lat.push_back(o.dropped ? cfg.drop_latency : o.latency);
        post_met += o.slo_met;
        ++post_n;
        if (!o.dropped) {
          ++post_served;
          post_kv += o.kv_hit;
          post_lookups += static_cast<double>(o.emb_lookups);
          post_misses += static_cast<double>(o.emb_misses);
        }
      }
    }
    if (opts.keep_outcomes) {
      res.outcomes.insert(res.outcomes.end(), epoch_outs.begin(), epoch_outs.end());
    }
    std::vector<DecisionTrace> traces(n_nodes);
    double reward_sum = 0;
    for (int n = 0; n < n_nodes; ++n) {
      const EpochObservation ob = summarize(by_node[n], cfg.tau_slo, cfg.drop_latency);
      reward_sum += reward(ob, cfg.tau_slo);
      double next = cluster.alpha(n);
      const auto t_start = std::chrono::steady_clock::now();
      if (controllers[n]) {
        next = controllers[n]->decide(ob, cluster.alpha(n));
        traces[n] = controllers[n]->last();
        if (traces[n].override_kind != Override::None) ++res.recovery_triggers;
      } else if (!res.alpha_star.empty()) {
        next = res.alpha_star.back();
        traces[n].alpha_before = cluster.alpha(n);
        traces[n].alpha_after = next;
      }
      res.decision_seconds += std::chrono::duration<double>(
                                  std::chrono::steady_clock::now() - t_start)
                                  .count();
      const BoundaryReport br = cluster.set_alpha(n, next);
      res.kv_blocks_touched += br.kv_blocks_touched;
    }
    res.epoch_reward.push_back(reward_sum / n_nodes);
    res.traces.push_back(std::move(traces));
    if (opts.on_epoch) opts.on_epoch(e, cluster);
  }
  res.in_flight_end = cluster.in_flight();
  res.mean_joint_score =
      cluster.routed() ? cluster.joint_score_sum() / static_cast<double>(cluster.routed()) : 0.0;

  auto& s = res.summary;
  s["epochs"] = n_epochs;
  s["arrivals"] = static_cast<double>(res.arrivals);
  s["completed"] = static_cast<double>(res.completed);
  s["dropped"] = static_cast<double>(res.dropped);
  s["in_flight_end"] = static_cast<double>(res.in_flight_end);
  double p99_sum = 0, alpha_sum = 0;
  int n_post = 0;
  for (std::size_t i = 0; i < res.windows.size(); ++i) {
    if (static_cast<int>(i / w_per_epoch) < cfg.warmup_epochs) continue;
    p99_sum += res.windows[i].p99;
    alpha_sum += res.windows[i].alpha;
    ++n_post;
  }
  s["p99_mean_ms"] = n_post ? 1e3 * p99_sum / n_post : 0.0;
  s["mean_alpha"] = n_post ? alpha_sum / n_post : 0.0;
  s["p99_ms"] = 1e3 * nearest_rank(post_lat, 0.99);
  s["qos"] = post_n ? static_cast<double>(post_met) / static_cast<double>(post_n) : 1.0;
  s["kv_hit"] = post_served ? static_cast<double>(post_kv) / static_cast<double>(post_served) : 0.0;
  s["emb_hit"] = post_lookups > 0 ? 1.0 - post_misses / post_lookups : 0.0;
  s["recovery_triggers"] = static_cast<double>(res.recovery_triggers);
  s["mean_joint_score"] = res.mean_joint_score;
  s["route_fallbacks"] = static_cast<double>(cluster.fallbacks());
  s["n_nodes"] = n_nodes;
  s["hot_share"] = trace.epoch_hot_share.empty()
                       ? 0.0
                       : std::accumulate(trace.epoch_hot_share.begin(),
                                         trace.epoch_hot_share.end(), 0.0) /
                             static_cast<double>(trace.epoch_hot_share.size());
  if (!res.alpha_star.empty()) {
    s["oracle_gap"] = oracle_gap(res, cfg.warmup_epochs);
    double a = 0;
    int k = 0;
    for (std::size_t i = static_cast<std::size_t>(cfg.warmup_epochs); i < res.alpha_star.size(); ++i) {
      a += res.alpha_star[i];
      ++k;
    }
    s["mean_alpha_star"] = k ? a / k : 0.0;
  }
  return res;
}

// ----------------------------------------------------------------- matrix

Aggregate aggregate(const std::vector<double>& values) {
  Aggregate a;
  a.n = static_cast<int>(values.size());
  if (values.empty()) return a;
  a.mean = std::accumulate(values.begin(), values.end(), 0.0) / a.n;
  if (a.n < 2) return a;
  double ss = 0;
  for (double v : values) ss += (v - a.mean) * (v - a.mean);
  const double sd = std::sqrt(ss / (a.n - 1));
  boost::math::students_t dist(a.n - 1);
  a.half_width = boost::math::quantile(dist, 0.975) * sd / std::sqrt(static_cast<double>(a.n));
  a.has_ci = true;
  return a;
}

std::vector<MatrixCell> run_matrix(
    const std::vector<std::pair<std::string, EngineConfig>>& configs,
    const std::vector<std::uint64_t>& seeds,
    std::shared_ptr<const PpoPolicy> policy) {
  std::vector<MatrixCell> out;
  for (const auto& [label, base] : configs) {
    MatrixCell cell;
    cell.label = label;
    std::map<std::string, std::vector<double>> per_metric;
    for (auto seed : seeds) {
      EngineConfig c = base;
      c.regime.seed = seed;
      cell.runs.push_back(run(c, policy));
      for (const auto& [k, v] : cell.runs.back().summary) per_metric[k].push_back(v);
    }
    for (const auto& [k, v] : per_metric) cell.metrics[k] = aggregate(v);
    out.push_back(std::move(cell));
  }
  return out;
}

// ----------------------------------------------------------------- output

void write_windows_csv(std::ostream& os, const RunResult& r) {
  os << kWindowsHeader << '\n';
  char buf[512];
  for (const auto& w : r.windows) {
    char star[32] = "";
    if (w.alpha_star) std::snprintf(star, sizeof star, "%.4f", *w.alpha_star);
    std::snprintf(buf, sizeof buf,
                  "%.3f,%.6f,%.6f,%.6f,%s,%.6f,%.6f,%.6f,%.3f,%.3f,%.3f\n", w.t,
                  1e3 * w.p99, w.qos, w.alpha, star, w.kv_hit, w.emb_hit,
                  w.hot_ratio, w.mean_seq_len, w.refill_bytes / 1e6,
                  w.miss_bytes / 1e6);
    os << buf;
  }
}

void write_summary(std::ostream& os, const std::map<std::string, double>& s) {
  char buf[64];
  for (const auto& [k, v] : s) {
    std::snprintf(buf, sizeof buf, "%.10g", v);
    os << k << '=' << buf << '\n';
  }
}

// --------------------------------------------------------------- training

std::vector<EpisodeStats> train_policy(
    const EngineConfig& base, const TrainConfig& tcfg, PpoPolicy& policy,
    const std::function<void(const EpisodeStats&)>& on_episode) {
  if (tcfg.episodes < 0 || tcfg.episode_epochs < 2) {
    throw std::invalid_argument("train: need episodes >= 0 and episode_epochs >= 2");
  }
  std::vector<EpisodeStats> curve;
  if (tcfg.episodes == 0) return curve;

  EngineConfig cfg = base;
  cfg.oracle = false;
  const int n_epochs = tcfg.episodes * tcfg.episode_epochs;
  std::mt19937_64 rng = make_stream(tcfg.seed, 101);
  cfg.regime.kind = RegimeKind::Steady;
  cfg.regime.duration = n_epochs * cfg.epoch_seconds();
  cfg.regime.hot_share_schedule.assign(n_epochs, 0.0);
  for (int ep = 0; ep < tcfg.episodes; ++ep) {
    const double h = tcfg.hot_share_min +
                     uniform01(rng) * (tcfg.hot_share_max - tcfg.hot_share_min);
    for (int k = 0; k < tcfg.episode_epochs; ++k) {
      cfg.regime.hot_share_schedule[ep * tcfg.episode_epochs + k] = h;
    }
  }
  cfg.validate();
  auto pop = std::make_shared<const Population>(cfg.population);
  const Trace trace = generate_trace(cfg.regime, *pop);
  Cluster cluster(cfg, pop);
  const int n_nodes = cfg.n_nodes;
  const double E = cfg.epoch_seconds();
  ObserveConfig oc = cfg.smart.observe;
  oc.tau_slo = cfg.tau_slo;

  struct Step {
    StateVector s;
    PpoAct act;
    double r = 0;
  };
  std::vector<StateVector> prev_state(n_nodes);
  std::vector<RequestOutcome> outs;
  int epoch = 0;
  for (int ep = 0; ep < tcfg.episodes; ++ep) {
    if (tcfg.randomize_alpha) {
      for (int n = 0; n < n_nodes; ++n) {
        const int k = static_cast<int>(uniform01(rng) * 41);  // 0.10 .. 0.90
        cluster.set_alpha(n, std::round((kAlphaMin + 0.02 * k) * 100) / 100);
      }
    }
    std::vector<std::vector<Step>> steps(n_nodes);
    std::vector<double> bootstrap(n_nodes, 0.0);
    double reward_sum = 0, move_sum = 0;
    int reward_n = 0;
    for (int k = 0; k < tcfg.episode_epochs; ++k, ++epoch) {
      cluster.begin_epoch(epoch);
      const double t0 = epoch * E;
      const auto [lo, hi] = trace.range(t0, t0 + E);
      const auto arrivals = make_arrivals(*pop, trace, lo, hi);
      outs.clear();
      cluster.advance(arrivals, t0 + E, outs);
      std::vector<std::vector<RequestOutcome>> by_node(n_nodes);
      for (const auto& o : outs) by_node[o.node].push_back(o);
      for (int n = 0; n < n_nodes; ++n) {
        cluster.take_traffic(n);
        const EpochObservation ob = summarize(by_node[n], cfg.tau_slo, cfg.drop_latency);
        const StateVector s = observe(ob, prev_state[n], cluster.alpha(n), oc);
        prev_state[n] = s;
        const double r = reward(ob, cfg.tau_slo);
        if (!steps[n].empty()) {
          steps[n].back().r = r;
          reward_sum += r;
          ++reward_n;
        }
        if (k + 1 == tcfg.episode_epochs) {
          std::array<double, 7> logits;
          policy.logits_value(s, logits, bootstrap[n]);
          continue;
        }
        const PpoAct a = policy.act_sample(s, rng);
        steps[n].push_back({s, a, 0.0});
        const double next = std::clamp(cluster.alpha(n) + kActions[a.action], kAlphaMin, kAlphaMax);
        move_sum += std::abs(kActions[a.action]);
        cluster.set_alpha(n, next);
      }
    }
    std::vector<Transition> batch;
    for (int n = 0; n < n_nodes; ++n) {
      std::vector<double> rewards, values;
      for (const auto& st : steps[n]) {
        rewards.push_back(st.r * tcfg.reward_scale);
        values.push_back(st.act.value);
      }
      values.push_back(bootstrap[n]);
      const auto adv = gae(rewards, values, tcfg.ppo.gamma, tcfg.ppo.lambda);
      for (std::size_t i = 0; i < steps[n].size(); ++i) {
        Transition t;
        t.state = steps[n][i].s;
        t.action = steps[n][i].act.action;
        t.log_prob = steps[n][i].act.log_prob;
        t.value = steps[n][i].act.value;
        t.advantage = adv[i];
        t.ret = adv[i] + values[i];
        batch.push_back(t);
      }
    }
    EpisodeStats st;
    st.episode = ep;
    st.mean_reward = reward_n ? reward_sum / reward_n : 0.0;
    st.mean_abs_move = batch.empty() ? 0.0 : move_sum / static_cast<double>(batch.size());
    st.ppo = policy.update(std::move(batch), tcfg.ppo, rng);
    curve.push_back(st);
    if (on_episode) on_episode(st);
  }
  return curve;
}

}  // namespace hbmpart

#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "hbmpart/controller.hpp"
#include "hbmpart/costmodel.hpp"
#include "hbmpart/hbm.hpp"
#include "hbmpart/router.hpp"
#include "hbmpart/workload.hpp"

namespace hbmpart {

enum class ControllerKind { Static, Pid, PpoOnly, Smart, OracleReplay };

std::string_view to_string(ControllerKind k);
ControllerKind controller_from_string(std::string_view s);

struct RouterConfig {
  RouterMode mode = RouterMode::Joint;
  double epsilon = 0.05;
  double tau = 0.85;
  double c_ld = 1e-3;          // marginal queueing cost, seconds
  double ref_emb_hit = 0.9;    // hit rate used to price an EMB miss window
  double load_norm = 16;       // queue length that counts as load 1.0
  int kv_insert_delay = 0;     // epochs
  int kv_evict_delay = 0;
  int emb_delay = 0;
};

struct EngineConfig {
  HardwareProfile hw;
  ModelProfile model;
  PopulationConfig population;
  RegimeSpec regime;

  int n_nodes = 4;
  double hbm_bytes_per_node = 12e9;
  double block_bytes = 16e6;
  double throttle_bw = 4e9;
  double tau_slo = 0.030;
  double window_seconds = 5.0;
  double tick_seconds = 0.1;
  double base_compute_ratio = 0.25;
  int queue_capacity = 512;
  double drop_latency = 1.0;  // latency charged to a dropped request
  double initial_alpha = 0.5;
  int warmup_epochs = 10;

  RouterConfig router;

  ControllerKind controller = ControllerKind::Static;
  double static_alpha = 0.5;
  PidConfig pid;
  SmartConfig smart;

  bool oracle = false;
  double oracle_step = 0.05;

  double epoch_seconds() const { return regime.epoch_seconds; }
  double page_bytes() const;
  HbmConfig hbm_config() const;
  RoutingWeights routing_weights(double mean_seq_len) const;
  void validate() const;
};

struct RequestOutcome {
  std::int64_t request_id = 0;
  int node = 0;
  int user = 0;
  bool hot = false;
  bool dropped = false;
  std::int64_t seq_len = 0;
  double arrival = 0;
  double completion = 0;
  double queue_delay = 0;
  double emb_time = 0;
  double kv_time = 0;
  double base_compute = 0;
  double latency = 0;
  bool slo_met = false;
  bool kv_hit = false;
  std::int64_t emb_lookups = 0;  // item lookups over all tables
  std::int64_t emb_misses = 0;
};

struct WindowMetrics {
  double t = 0;  // window end
  std::int64_t n = 0;
  std::int64_t drops = 0;
  double p99 = 0;  // seconds
  double qos = 1;
  double alpha = 0;
  std::optional<double> alpha_star;
  double kv_hit = 0;
  double emb_hit = 0;
  double hot_ratio = 0;
  double mean_seq_len = 0;
  double refill_bytes = 0;
  double miss_bytes = 0;
};

// Nearest-rank percentile; 0 for an empty sample. Reorders `v`.
double nearest_rank(std::vector<double>& v, double q);

// Latency samples charged for a set of outcomes (drops at `drop_latency`).
EpochObservation summarize(const std::vector<RequestOutcome>& outs,
                           double tau_slo, double drop_latency);

struct RouteRecord {
  std::int64_t request_id = 0;
  int node = 0;
  bool fallback = false;
  ScoreParts chosen;  // under the joint weights
};

// The simulated cluster: nodes, their queues and caches, and router state.
// Value-copyable so oracle replays can fork it.
class Cluster {
 public:
  Cluster(const EngineConfig& cfg, std::shared_ptr<const Population> pop);

  int n_nodes() const { return static_cast<int>(nodes_.size()); }
  double now() const { return now_; }
  int epoch() const { return epoch_; }
  const HbmNode& memory(int n) const { return nodes_[n].mem; }
  double alpha(int n) const { return nodes_[n].mem.alpha(); }
  const RouterTables& tables() const { return tables_; }
  const RoutingWeights& weights() const { return weights_; }
  std::size_t queue_length(int n) const;

  BoundaryReport set_alpha(int n, double a);

  struct Arrival {
    const Request* req;
    std::shared_ptr<const ShardHistogram> hist;
  };
  // Runs every event with time <= t_end, injecting `arrivals` (sorted by
  // time, all < t_end). Finished and dropped requests go to `sink`.
  void advance(const std::vector<Arrival>& arrivals, double t_end,
               std::vector<RequestOutcome>& sink,
               std::vector<RouteRecord>* route_log = nullptr);
  // Runs until every queue is empty.
  void drain(std::vector<RequestOutcome>& sink);
  // Epoch boundary bookkeeping for delayed residency updates.
  void begin_epoch(int epoch);

  // Refill and miss traffic accumulated since the last call, per node.
  struct Traffic {
    double refill_bytes = 0;
    double miss_bytes = 0;
    double refill_budget = 0;
    double max_tick_overrun = 0;  // max(refill - budget) over ticks
  };
  Traffic take_traffic(int n);

  std::uint64_t state_hash() const;
  std::int64_t in_flight() const;
  // Sum of the joint-weight score of every chosen node, and route count.
  double joint_score_sum() const { return joint_score_sum_; }
  std::int64_t routed() const { return routed_; }
  std::int64_t fallbacks() const { return fallbacks_; }

 private:
  struct Pending {
    const Request* req;
    std::shared_ptr<const ShardHistogram> hist;
  };
  struct Node {
    HbmNode mem;
    std::deque<Pending> waiting;
    bool busy = false;
    double busy_until = 0;
    RequestOutcome current;
    double tick_miss_bytes = 0;
    Traffic traffic;
  };

  void arrive(const Arrival& a, std::vector<RequestOutcome>& sink,
              std::vector<RouteRecord>* route_log);
  void start_service(int n, const Pending& p, double t);
  void complete(int n, std::vector<RequestOutcome>& sink);
  void tick();
  void publish(int n);

  std::shared_ptr<const EngineConfig> cfg_;
  std::shared_ptr<const Population> pop_;
  std::vector<Node> nodes_;
  RouterTables tables_;
  ResidencyFeed feed_;
  RoutingWeights weights_;
  RoutingWeights joint_weights_;
  double t_miss_ = 0;
  double row_bytes_ = 0;
  double now_ = 0;
  std::int64_t tick_index_ = 0;
  int epoch_ = 0;
  double joint_score_sum_ = 0;
  std::int64_t routed_ = 0;
  std::int64_t fallbacks_ = 0;
  std::vector<ResidencyChange> log_;
};

struct RunResult {
  std::vector<WindowMetrics> windows;
  // alpha in effect during each epoch, per node.
  std::vector<std::vector<double>> node_alpha;
  std::vector<double> alpha_star;  // empty when the oracle is off
  std::vector<std::vector<DecisionTrace>> traces;  // epoch x node
  std::vector<RequestOutcome> outcomes;  // kept only when requested
  std::vector<RouteRecord> routes;       // kept only when requested
  std::vector<double> epoch_reward;  // mean over nodes
  std::int64_t arrivals = 0;
  std::int64_t completed = 0;
  std::int64_t dropped = 0;
  std::int64_t in_flight_end = 0;
  std::int64_t recovery_triggers = 0;
  std::int64_t kv_blocks_touched = 0;
  double max_refill_overrun = 0;
  double mean_joint_score = 0;
  double decision_seconds = 0;  // wall clock, not part of any artifact
  std::map<std::string, double> summary;
};

struct RunOptions {
  bool keep_outcomes = false;
  bool keep_routes = false;
  // Called after each epoch with the live cluster (read-only use).
  std::function<void(int epoch, const Cluster&)> on_epoch;
};

// Builds the per-node controllers for a config.
std::vector<std::unique_ptr<Controller>> make_controllers(
    const EngineConfig& cfg, std::shared_ptr<const PpoPolicy> policy);

RunResult run(const EngineConfig& cfg, std::shared_ptr<const PpoPolicy> policy = nullptr,
              const RunOptions& opts = {});

// Mean over nodes of each node's P99 for `arrivals` after forcing `alpha`
// on every node of a copy of `snapshot`.
double replay_objective(const Cluster& snapshot,
                        const std::vector<Cluster::Arrival>& arrivals,
                        double alpha, const EngineConfig& cfg);

struct OracleResult {
  double alpha_star = 0;
  std::vector<double> grid;
  std::vector<double> objective;
};

// Exhaustive grid over [kAlphaMin, kAlphaMax]; ties go to the smaller alpha.
OracleResult oracle_alpha(const Cluster& snapshot,
                          const std::vector<Cluster::Arrival>& arrivals,
                          const EngineConfig& cfg, double grid_step);

// Mean |alpha_t - alpha*_t| over entries at index >= warmup.
double oracle_gap(const std::vector<double>& alpha,
                  const std::vector<double>& alpha_star, int warmup);
// Averaged over nodes.
double oracle_gap(const RunResult& r, int warmup);

struct Aggregate {
  double mean = 0;
  double half_width = 0;  // 95% CI half-width; 0 when n < 2
  int n = 0;
  bool has_ci = false;
};

// Student-t confidence interval over per-seed values.
Aggregate aggregate(const std::vector<double>& values);

struct MatrixCell {
  std::string label;
  std::vector<RunResult> runs;
  std::map<std::string, Aggregate> metrics;
};

// Runs each config once per seed (regime seed replaced) and aggregates the
// summaries.
std::vector<MatrixCell> run_matrix(
    const std::vector<std::pair<std::string, EngineConfig>>& configs,
    const std::vector<std::uint64_t>& seeds,
    std::shared_ptr<const PpoPolicy> policy = nullptr);

// Per-window CSV with the fixed header.
void write_windows_csv(std::ostream& os, const RunResult& r);
inline constexpr const char* kWindowsHeader =
    "t,p99_ms,qos,alpha,alpha_star,kv_hit,emb_hit,hot_ratio,mean_seq_len,"
    "refill_mb,miss_mb";
void write_summary(std::ostream& os, const std::map<std::string, double>& s);

struct TrainConfig {
  int episodes = 100;
  int episode_epochs = 20;
  PpoConfig ppo;
  double hot_share_min = 0.05;
  double hot_share_max = 0.60;
  bool randomize_alpha = true;
  // Rewards are multiplied by this before GAE so value targets stay O(1)
  // (1 - gamma keeps the discounted return of a unit reward near 1).
  double reward_scale = 0.01;
  std::uint64_t seed = 11;
};

struct EpisodeStats {
  int episode = 0;
  double mean_reward = 0;
  double mean_abs_move = 0;
  PpoStats ppo;
};

// Streaming PPO training: one continuous simulation, per-episode updates
// over every node's transitions.
std::vector<EpisodeStats> train_policy(
    const EngineConfig& cfg, const TrainConfig& tcfg, PpoPolicy& policy,
    const std::function<void(const EpisodeStats&)>& on_episode = {});

}  // namespace hbmpart

#pragma once

#include <cstdint>
#include <deque>
#include <memory>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "hbmpart/hbm.hpp"

namespace hbmpart {

struct RoutingWeights {
  double w_kv = 1.0 / 3;
  double w_emb = 1.0 / 3;
  double w_ld = 1.0 / 3;
  double epsilon = 0.05;  // affinity bonus
  double tau = 0.85;      // overload threshold on l(n)
};

// w_i = C_i / (C_kv + C_emb + C_ld). Throws if every cost is zero.
RoutingWeights weights_from_costs(double c_kv, double c_emb, double c_ld);

enum class RouterMode { Joint, KvOnly, EmbOnly, LoadOnly };

std::string_view to_string(RouterMode m);
RouterMode router_mode_from_string(std::string_view s);

// The fixed weight vector a baseline mode scores with; Joint returns `w`.
RoutingWeights mode_weights(RouterMode mode, const RoutingWeights& w);

// Router-side view of the cluster. Residency bits are hints and may lag the
// nodes they describe.
class RouterTables {
 public:
  RouterTables() = default;
  RouterTables(int n_nodes, int n_users, int n_shards,
               std::shared_ptr<const std::vector<std::vector<int>>> profiles);

  int n_nodes() const { return n_nodes_; }
  int n_users() const { return n_users_; }
  int n_shards() const { return n_shards_; }

  int affinity(int user) const { return aff_[user]; }
  void set_affinity(int user, int node) { aff_[user] = node; }
  bool kv_bit(int node, int user) const { return kvm_[node][user] != 0; }
  void set_kv_bit(int node, int user, bool v);
  bool emb_bit(int node, int shard) const { return embm_[node][shard] != 0; }
  void set_emb_bit(int node, int shard, bool v) { embm_[node][shard] = v; }
  std::int64_t kv_entries(int node) const { return kv_count_[node]; }
  double load(int node) const { return load_[node]; }
  void set_load(int node, double l);
  const std::vector<int>& profile(int user) const { return (*profiles_)[user]; }

 private:
  int n_nodes_ = 0, n_users_ = 0, n_shards_ = 0;
  std::vector<int> aff_;
  std::vector<std::vector<std::uint8_t>> kvm_;
  std::vector<std::vector<std::uint8_t>> embm_;
  std::vector<std::int64_t> kv_count_;
  std::vector<double> load_;
  std::shared_ptr<const std::vector<std::vector<int>>> profiles_;
};

// |profile ∩ resident shards| / |profile|; 0 for an empty profile.
double emb_affinity(const RouterTables& t, int user, int node);

struct ScoreParts {
  double h_kv = 0, h_emb = 0, load = 0, bonus = 0;
  double total = 0;
};

ScoreParts score_parts(const RouterTables& t, int node, int user,
                       const RoutingWeights& w);
double score(const RouterTables& t, int node, int user, const RoutingWeights& w);

struct RouteDecision {
  int node = 0;
  int argmax_node = 0;
  bool fallback = false;
};

// Argmax score (ties to the lowest id); if the winner's load exceeds tau,
// the least-loaded node (ties to the lowest id) is used instead. Does not
// touch affinity; see route().
RouteDecision pick_node(const RouterTables& t, int user, const RoutingWeights& w);

// pick_node() followed by the affinity update.
int route(RouterTables& t, int user, const RoutingWeights& w);

// Same procedure with the weights of a baseline mode.
int baseline_route(RouterTables& t, int user, RouterMode mode,
                   const RoutingWeights& w);

// Delivers node residency changes into the router tables after a delay in
// epochs. A delay of 0 applies changes immediately.
class ResidencyFeed {
 public:
  ResidencyFeed() = default;
  ResidencyFeed(int insert_delay_epochs, int evict_delay_epochs,
                int emb_delay_epochs);

  void publish(RouterTables& t, int node, const ResidencyChange& c, int epoch);
  // Applies every queued change due at or before `epoch`.
  void advance(RouterTables& t, int epoch);
  std::size_t queued() const { return queue_.size(); }

 private:
  struct Pending {
    int due_epoch;
    int node;
    ResidencyChange change;
  };
  struct InFlight {
    int count;
    int due_epoch;
  };
  static void apply(RouterTables& t, int node, const ResidencyChange& c);
  static std::uint64_t key(int node, const ResidencyChange& c);

  int kv_insert_delay_ = 0;
  int kv_evict_delay_ = 0;
  int emb_delay_ = 0;
  std::deque<Pending> queue_;
  std::unordered_map<std::uint64_t, InFlight> in_flight_;
};

}  // namespace hbmpart

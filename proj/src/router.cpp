#include "hbmpart/router.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace hbmpart {

RoutingWeights weights_from_costs(double c_kv, double c_emb, double c_ld) {
  if (c_kv < 0 || c_emb < 0 || c_ld < 0) {
    throw std::invalid_argument("routing weights: costs must be >= 0");
  }
  const double z = c_kv + c_emb + c_ld;
  if (!(z > 0)) throw std::invalid_argument("routing weights: all costs are zero");
  RoutingWeights w;
  w.w_kv = c_kv / z;
  w.w_emb = c_emb / z;
  w.w_ld = c_ld / z;
  return w;
}

std::string_view to_string(RouterMode m) {
  switch (m) {
    case RouterMode::Joint:
      return "joint";
    case RouterMode::KvOnly:
      return "kv_only";
    case RouterMode::EmbOnly:
      return "emb_only";
    case RouterMode::LoadOnly:
      return "load_only";
  }
  return "?";
}

RouterMode router_mode_from_string(std::string_view s) {
  if (s == "joint") return RouterMode::Joint;
  if (s == "kv_only") return RouterMode::KvOnly;
  if (s == "emb_only") return RouterMode::EmbOnly;
  if (s == "load_only") return RouterMode::LoadOnly;
  throw std::invalid_argument("unknown router mode '" + std::string(s) + "'");
}

RoutingWeights mode_weights(RouterMode mode, const RoutingWeights& w) {
  RoutingWeights out = w;
  switch (mode) {
    case RouterMode::Joint:
      return w;
    case RouterMode::KvOnly:
      out.w_kv = 1, out.w_emb = 0, out.w_ld = 0;
      break;
    case RouterMode::EmbOnly:
      out.w_kv = 0, out.w_emb = 1, out.w_ld = 0;
      break;
    case RouterMode::LoadOnly:
      out.w_kv = 0, out.w_emb = 0, out.w_ld = 1;
      break;
  }
  return out;
}

RouterTables::RouterTables(
    int n_nodes, int n_users, int n_shards,
    std::shared_ptr<const std::vector<std::vector<int>>> profiles)
    : n_nodes_(n_nodes),
      n_users_(n_users),
      n_shards_(n_shards),
      aff_(n_users, -1),
      kvm_(n_nodes, std::vector<std::uint8_t>(n_users, 0)),
      embm_(n_nodes, std::vector<std::uint8_t>(n_shards, 0)),
      kv_count_(n_nodes, 0),
      load_(n_nodes, 0.0),
      profiles_(std::move(profiles)) {
  if (n_nodes < 1) throw std::invalid_argument("router: need at least one node");
  if (!profiles_ || static_cast<int>(profiles_->size()) != n_users) {
    throw std::invalid_argument("router: profile table size mismatch");
  }
}

void RouterTables::set_kv_bit(int node, int user, bool v) {
  auto& bit = kvm_[node][user];
  if (bit == v) return;
  kv_count_[node] += v ? 1 : -1;
  bit = v;
}

void RouterTables::set_load(int node, double l) {
  load_[node] = std::clamp(l, 0.0, 1.0);
}

double emb_affinity(const RouterTables& t, int user, int node) {
  const auto& prof = t.profile(user);
  if (prof.empty()) return 0.0;
  int hit = 0;
  for (int s : prof) hit += t.emb_bit(node, s);
  return static_cast<double>(hit) / static_cast<double>(prof.size());
}

ScoreParts score_parts(const RouterTables& t, int node, int user,
                       const RoutingWeights& w) {
  ScoreParts p;
  p.h_kv = t.kv_bit(node, user) ? 1.0 : 0.0;
  p.h_emb = w.w_emb != 0 ? emb_affinity(t, user, node) : 0.0;
  p.load = t.load(node);
  p.bonus = t.affinity(user) == node ? w.epsilon : 0.0;
  p.total = w.w_kv * p.h_kv + w.w_emb * p.h_emb + w.w_ld * (1.0 - p.load) + p.bonus;
  return p;
}

double score(const RouterTables& t, int node, int user, const RoutingWeights& w) {
  return score_parts(t, node, user, w).total;
}

RouteDecision pick_node(const RouterTables& t, int user, const RoutingWeights& w) {
  RouteDecision d;
  double best = score(t, 0, user, w);
  for (int n = 1; n < t.n_nodes(); ++n) {
    const double s = score(t, n, user, w);
    if (s > best) best = s, d.argmax_node = n;
  }
  d.node = d.argmax_node;
  if (t.load(d.argmax_node) > w.tau) {
    int least = 0;
    for (int n = 1; n < t.n_nodes(); ++n) {
      if (t.load(n) < t.load(least)) least = n;
    }
    d.node = least;
    d.fallback = least != d.argmax_node;
  }
  return d;
}

int route(RouterTables& t, int user, const RoutingWeights& w) {
  const int n = pick_node(t, user, w).node;
  t.set_affinity(user, n);
  return n;
}

int baseline_route(RouterTables& t, int user, RouterMode mode,
                   const RoutingWeights& w) {
  return route(t, user, mode_weights(mode, w));
}

ResidencyFeed::ResidencyFeed(int insert_delay_epochs, int evict_delay_epochs,
                             int emb_delay_epochs)
    : kv_insert_delay_(insert_delay_epochs),
      kv_evict_delay_(evict_delay_epochs),
      emb_delay_(emb_delay_epochs) {
  if (insert_delay_epochs < 0 || evict_delay_epochs < 0 || emb_delay_epochs < 0) {
    throw std::invalid_argument("residency feed: delays must be >= 0");
  }
}

void ResidencyFeed::apply(RouterTables& t, int node, const ResidencyChange& c) {
  switch (c.kind) {
    case ResidencyChange::kEmbInsert:
      t.set_emb_bit(node, c.id, true);
      break;
    case ResidencyChange::kEmbEvict:
      t.set_emb_bit(node, c.id, false);
      break;
    case ResidencyChange::kKvInsert:
      t.set_kv_bit(node, c.id, true);
      break;
    case ResidencyChange::kKvEvict:
      t.set_kv_bit(node, c.id, false);
      break;
  }
}

std::uint64_t ResidencyFeed::key(int node, const ResidencyChange& c) {
  const std::uint64_t family = c.kind <= ResidencyChange::kEmbEvict ? 0 : 1;
  return (static_cast<std::uint64_t>(node) << 33) | (family << 32) |
         static_cast<std::uint32_t>(c.id);
}

void ResidencyFeed::publish(RouterTables& t, int node, const ResidencyChange& c,
                            int epoch) {
  int delay = emb_delay_;
  if (c.kind == ResidencyChange::kKvInsert) delay = kv_insert_delay_;
  if (c.kind == ResidencyChange::kKvEvict) delay = kv_evict_delay_;
  int due = epoch + delay;
  const std::uint64_t k = key(node, c);
  auto it = in_flight_.find(k);
  if (it == in_flight_.end()) {
    if (delay == 0) {
      apply(t, node, c);
      return;
    }
    in_flight_.emplace(k, InFlight{1, due});
  } else {
    // A later change for the same key never overtakes an earlier one.
    due = std::max(due, it->second.due_epoch);
    ++it->second.count;
    it->second.due_epoch = due;
  }
  queue_.push_back({due, node, c});
}

void ResidencyFeed::advance(RouterTables& t, int epoch) {
  std::deque<Pending> keep;
  for (const auto& p : queue_) {
    if (p.due_epoch <= epoch) {
      apply(t, p.node, p.change);
      auto it = in_flight_.find(key(p.node, p.change));
      if (--it->second.count == 0) in_flight_.erase(it);
    } else {
      keep.push_back(p);
    }
  }
  queue_.swap(keep);
}

}  // namespace hbmpart

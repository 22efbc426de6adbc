#include "hbmpart/workload.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace hbmpart {

namespace {

enum Stream : std::uint64_t {
  kProfiles = 1,
  kSeqLen = 2,
  kArrivals = 3,
  kBursts = 4,
};

}  // namespace

std::mt19937_64 make_stream(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

void PopulationConfig::validate() const {
  if (n_users < 1) throw std::invalid_argument("population: n_users must be >= 1");
  if (hot_fraction < 0 || hot_fraction >= 1) {
    throw std::invalid_argument("population: hot_fraction must be in [0,1)");
  }
  if (seq_len_min < 0 || seq_len_max < seq_len_min) {
    throw std::invalid_argument("population: bad seq_len range");
  }
  if (n_shards < 1 || catalog_items < n_shards) {
    throw std::invalid_argument(
        "population: need catalog_items >= n_shards >= 1");
  }
  if (profile_k < 1 || profile_k > n_shards) {
    throw std::invalid_argument("population: profile_k must be in [1, n_shards]");
  }
  if (p_local < 0 || p_local > 1) {
    throw std::invalid_argument("population: p_local must be in [0,1]");
  }
  if (!(zipf_s > 0)) throw std::invalid_argument("population: zipf_s must be > 0");
}

Population::Population(const PopulationConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const std::int64_t n_items = cfg_.catalog_items;
  items_per_shard_ = (n_items + cfg_.n_shards - 1) / cfg_.n_shards;

  // Item id == popularity rank - 1, so contiguous id ranges are also
  // popularity bands.
  item_cdf_.resize(static_cast<std::size_t>(n_items));
  shard_mass_.assign(cfg_.n_shards, 0.0);
  double acc = 0.0;
  for (std::int64_t i = 0; i < n_items; ++i) {
    const double w = std::pow(static_cast<double>(i + 1), -cfg_.zipf_s);
    acc += w;
    item_cdf_[i] = acc;
    shard_mass_[shard_of(i)] += w;
  }
  for (double& m : shard_mass_) m /= acc;
  shard_dist_ = std::discrete_distribution<int>(shard_mass_.begin(),
                                                shard_mass_.end());
  by_pop_.resize(cfg_.n_shards);
  std::iota(by_pop_.begin(), by_pop_.end(), 0);
  std::stable_sort(by_pop_.begin(), by_pop_.end(), [&](int a, int b) {
    return shard_mass_[a] > shard_mass_[b];
  });

  const int n_hot =
      static_cast<int>(std::lround(cfg_.hot_fraction * cfg_.n_users));
  const int n_cold = cfg_.n_users - n_hot;
  auto prof_rng = make_stream(cfg_.seed, kProfiles);
  auto len_rng = make_stream(cfg_.seed, kSeqLen);
  std::uniform_int_distribution<std::int64_t> len_dist(cfg_.seq_len_min,
                                                       cfg_.seq_len_max);
  std::vector<std::pair<double, int>> keys(cfg_.n_shards);
  users_.resize(cfg_.n_users);
  for (int u = 0; u < cfg_.n_users; ++u) {
    UserProfile& p = users_[u];
    p.user_id = u;
    p.is_hot = u < n_hot;
    p.request_rate_weight = p.is_hot ? 1.0 / n_hot : 1.0 / n_cold;
    p.seq_len = len_dist(len_rng);
    // Weighted sampling without replacement: keep the K largest
    // log(u)/w keys.
    for (int s = 0; s < cfg_.n_shards; ++s) {
      double r = uniform01(prof_rng);
      if (r <= 0) r = std::numeric_limits<double>::min();
      keys[s] = {std::log(r) / shard_mass_[s], s};
    }
    std::partial_sort(keys.begin(), keys.begin() + cfg_.profile_k, keys.end(),
                      [](const auto& a, const auto& b) {
                        return a.first > b.first ||
                               (a.first == b.first && a.second < b.second);
                      });
    p.shard_profile.resize(cfg_.profile_k);
    for (int k = 0; k < cfg_.profile_k; ++k) p.shard_profile[k] = keys[k].second;
    (p.is_hot ? hot_ : cold_).push_back(u);
  }
}

double Population::mean_seq_len() const {
  double s = 0;
  for (const auto& u : users_) s += static_cast<double>(u.seq_len);
  return s / static_cast<double>(users_.size());
}

std::int64_t Population::draw_global_item(std::mt19937_64& rng) const {
  const double x = uniform01(rng) * item_cdf_.back();
  auto it = std::upper_bound(item_cdf_.begin(), item_cdf_.end(), x);
  if (it == item_cdf_.end()) --it;
  return it - item_cdf_.begin();
}

int Population::draw_global_shard(std::mt19937_64& rng) const {
  return shard_dist_(rng);
}

std::string_view to_string(RegimeKind k) {
  switch (k) {
    case RegimeKind::Steady:
      return "steady";
    case RegimeKind::Trend:
      return "trend";
    case RegimeKind::Burst:
      return "burst";
  }
  return "?";
}

RegimeKind regime_from_string(std::string_view s) {
  if (s == "steady") return RegimeKind::Steady;
  if (s == "trend") return RegimeKind::Trend;
  if (s == "burst") return RegimeKind::Burst;
  throw std::invalid_argument("unknown regime '" + std::string(s) + "'");
}

int RegimeSpec::n_epochs() const {
  return static_cast<int>(std::floor(duration / epoch_seconds + 1e-9));
}

void RegimeSpec::validate() const {
  if (!(epoch_seconds > 0)) {
    throw std::invalid_argument("regime: epoch_seconds must be > 0");
  }
  if (duration < epoch_seconds) {
    throw std::invalid_argument("regime: duration shorter than one epoch");
  }
  if (base_qps < 0) throw std::invalid_argument("regime: base_qps must be >= 0");
  auto share_ok = [](double h) { return h >= 0 && h < 1; };
  if (!share_ok(hot_share_start) || !share_ok(hot_share_end) ||
      !share_ok(burst_hot_share)) {
    throw std::invalid_argument("regime: hot shares must be in [0,1)");
  }
  for (double h : hot_share_schedule) {
    if (!share_ok(h)) throw std::invalid_argument("regime: hot share schedule out of [0,1)");
  }
  if (burst_rate_per_hour < 0) {
    throw std::invalid_argument("regime: burst_rate_per_hour must be >= 0");
  }
  if (burst_len_min < 1 || burst_len_max < burst_len_min) {
    throw std::invalid_argument("regime: bad burst length range");
  }
  if (burst_qps_scale < 0) {
    throw std::invalid_argument("regime: burst_qps_scale must be >= 0");
  }
  for (const auto& b : scripted_bursts) {
    if (b.start_epoch < 0 || b.n_epochs < 1) {
      throw std::invalid_argument("regime: bad scripted burst");
    }
  }
}

bool Trace::in_burst(int epoch) const {
  for (const auto& b : bursts) {
    if (epoch >= b.start_epoch && epoch < b.start_epoch + b.n_epochs) return true;
  }
  return false;
}

std::pair<std::size_t, std::size_t> Trace::range(double t0, double t1) const {
  auto lo = std::lower_bound(
      requests.begin(), requests.end(), t0,
      [](const Request& r, double t) { return r.arrival_time < t; });
  auto hi = std::lower_bound(
      lo, requests.end(), t1,
      [](const Request& r, double t) { return r.arrival_time < t; });
  return {static_cast<std::size_t>(lo - requests.begin()),
          static_cast<std::size_t>(hi - requests.begin())};
}

Trace generate_trace(const RegimeSpec& spec, const Population& pop) {
  spec.validate();
  const int n_epochs = spec.n_epochs();
  if (pop.hot_users().empty()) {
    bool any_hot = spec.hot_share_start > 0 || spec.hot_share_end > 0 ||
                   (spec.kind == RegimeKind::Burst && spec.burst_hot_share > 0);
    for (double h : spec.hot_share_schedule) any_hot = any_hot || h > 0;
    if (any_hot) {
      throw std::invalid_argument(
          "regime: nonzero hot share but the population has no hot users");
    }
  }
  if (pop.cold_users().empty()) {
    throw std::invalid_argument("regime: population has no cold users");
  }
  if (!spec.hot_share_schedule.empty() &&
      static_cast<int>(spec.hot_share_schedule.size()) < n_epochs) {
    throw std::invalid_argument("regime: hot share schedule shorter than trace");
  }

  Trace trace;
  trace.spec = spec;
  trace.epoch_hot_share.resize(n_epochs);
  trace.epoch_qps.assign(n_epochs, spec.base_qps);
  for (int e = 0; e < n_epochs; ++e) {
    double h = spec.hot_share_start;
    if (!spec.hot_share_schedule.empty()) {
      h = spec.hot_share_schedule[e];
    } else if (spec.kind == RegimeKind::Trend) {
      const double f = n_epochs > 1 ? static_cast<double>(e) / (n_epochs - 1) : 0.0;
      h = spec.hot_share_start + f * (spec.hot_share_end - spec.hot_share_start);
    }
    trace.epoch_hot_share[e] = h;
  }

  if (spec.kind == RegimeKind::Burst) {
    if (!spec.scripted_bursts.empty()) {
      trace.bursts = spec.scripted_bursts;
    } else if (spec.burst_rate_per_hour > 0) {
      auto brng = make_stream(spec.seed, kBursts);
      const double p_start =
          1.0 - std::exp(-spec.burst_rate_per_hour / 3600.0 * spec.epoch_seconds);
      std::uniform_int_distribution<int> len(spec.burst_len_min, spec.burst_len_max);
      for (int e = 0; e < n_epochs;) {
        if (uniform01(brng) < p_start) {
          const int n = len(brng);
          trace.bursts.push_back({e, n});
          e += n;
        } else {
          ++e;
        }
      }
    }
    for (const auto& b : trace.bursts) {
      for (int e = b.start_epoch; e < std::min(n_epochs, b.start_epoch + b.n_epochs); ++e) {
        trace.epoch_hot_share[e] = spec.burst_hot_share;
        trace.epoch_qps[e] = spec.base_qps * spec.burst_qps_scale;
      }
    }
  }

  const auto& hot = pop.hot_users();
  const auto& cold = pop.cold_users();
  auto rng = make_stream(spec.seed, kArrivals);
  std::int64_t next_id = 0;
  for (int e = 0; e < n_epochs; ++e) {
    const double qps = trace.epoch_qps[e];
    if (qps <= 0) continue;
    const double t_end = (e + 1) * spec.epoch_seconds;
    double t = e * spec.epoch_seconds;
    while (true) {
      t += -std::log1p(-uniform01(rng)) / qps;
      if (t >= t_end) break;
      Request r;
      r.request_id = next_id++;
      r.arrival_time = t;
      r.is_hot = uniform01(rng) < trace.epoch_hot_share[e];
      const auto& cls = r.is_hot ? hot : cold;
      r.user_id = cls[static_cast<std::size_t>(uniform01(rng) * cls.size())];
      r.seq_len = pop.user(r.user_id).seq_len;
      r.item_seed = rng();
      trace.requests.push_back(r);
    }
  }
  return trace;
}

double window_hot_ratio(const Trace& trace, double t0, double t1) {
  auto [lo, hi] = trace.range(t0, t1);
  if (lo == hi) return 0.0;
  std::size_t n_hot = 0;
  for (std::size_t i = lo; i < hi; ++i) n_hot += trace.requests[i].is_hot;
  return static_cast<double>(n_hot) / static_cast<double>(hi - lo);
}

ShardHistogram shard_histogram(const Population& pop, const Request& req) {
  const auto& cfg = pop.config();
  const auto& prof = pop.user(req.user_id).shard_profile;
  std::mt19937_64 rng(req.item_seed);
  ShardHistogram out;
  out.reserve(prof.size() + 64);

  std::int64_t local =
      std::binomial_distribution<std::int64_t>(req.seq_len, cfg.p_local)(rng);
  const std::int64_t global = req.seq_len - local;
  const int k = static_cast<int>(prof.size());
  for (int i = 0; i < k && local > 0; ++i) {
    std::int64_t c = local;
    if (i + 1 < k) {
      c = std::binomial_distribution<std::int64_t>(local, 1.0 / (k - i))(rng);
    }
    local -= c;
    if (c > 0) out.push_back({prof[i], static_cast<std::int32_t>(c)});
  }
  if (global > 0) {
    // shard -> slot in `out`; reset before returning.
    thread_local std::vector<std::int32_t> slot;
    if (slot.size() < static_cast<std::size_t>(pop.n_shards())) {
      slot.assign(pop.n_shards(), -1);
    }
    for (std::size_t i = 0; i < out.size(); ++i) {
      slot[out[i].shard] = static_cast<std::int32_t>(i);
    }
    for (std::int64_t j = 0; j < global; ++j) {
      const int s = pop.draw_global_shard(rng);
      if (slot[s] >= 0) {
        ++out[slot[s]].count;
      } else {
        slot[s] = static_cast<std::int32_t>(out.size());
        out.push_back({s, 1});
      }
    }
    for (const auto& c : out) slot[c.shard] = -1;
  }
  return out;
}

std::vector<std::int64_t> sample_items(const Population& pop,
                                       const UserProfile& user,
                                       std::int64_t seq_len,
                                       std::mt19937_64& rng) {
  const auto& cfg = pop.config();
  const std::int64_t ips = pop.items_per_shard();
  std::vector<std::int64_t> items;
  items.reserve(static_cast<std::size_t>(seq_len));
  const auto& prof = user.shard_profile;
  for (std::int64_t i = 0; i < seq_len; ++i) {
    if (!prof.empty() && uniform01(rng) < cfg.p_local) {
      const int s = prof[static_cast<std::size_t>(uniform01(rng) * prof.size())];
      const std::int64_t lo = s * ips;
      const std::int64_t hi = std::min(cfg.catalog_items, lo + ips);
      items.push_back(lo + static_cast<std::int64_t>(uniform01(rng) * (hi - lo)));
    } else {
      items.push_back(pop.draw_global_item(rng));
    }
  }
  return items;
}

void write_trace(std::ostream& os, const Trace& trace) {
  os << "id,user,hot,time,seq_len,item_seed\n";
  for (const auto& r : trace.requests) {
    os << r.request_id << ',' << r.user_id << ',' << (r.is_hot ? 1 : 0) << ','
       << std::setprecision(17) << r.arrival_time << ',' << r.seq_len << ','
       << r.item_seed << '\n';
  }
}

std::vector<Request> read_trace_requests(std::istream& is) {
  std::vector<Request> out;
  std::string line;
  if (!std::getline(is, line)) return out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    Request r;
    int hot = 0;
    char c1, c2, c3, c4, c5;
    if (!(ls >> r.request_id >> c1 >> r.user_id >> c2 >> hot >> c3 >>
          r.arrival_time >> c4 >> r.seq_len >> c5 >> r.item_seed)) {
      throw std::runtime_error("trace: malformed line '" + line + "'");
    }
    r.is_hot = hot != 0;
    out.push_back(r);
  }
  return out;
}

}  // namespace hbmpart

#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace hbmpart {

struct PopulationConfig {
  int n_users = 800;
  double hot_fraction = 0.05;
  std::int64_t seq_len_min = 8000;
  std::int64_t seq_len_max = 15000;
  std::int64_t catalog_items = 1'000'000;
  int n_shards = 1024;
  int profile_k = 20;
  double p_local = 0.95;
  double zipf_s = 1.0;
  std::uint64_t seed = 7;

  void validate() const;
};

struct UserProfile {
  int user_id = 0;
  bool is_hot = false;
  // Share of its class's traffic; hot and cold classes each sum to 1.
  double request_rate_weight = 0.0;
  std::int64_t seq_len = 0;
  std::vector<int> shard_profile;
};

// Users, their shard profiles, and the global item popularity. Immutable
// once built; shared between traces and simulator copies.
class Population {
 public:
  explicit Population(const PopulationConfig& cfg);

  const PopulationConfig& config() const { return cfg_; }
  const std::vector<UserProfile>& users() const { return users_; }
  const UserProfile& user(int id) const { return users_.at(id); }
  const std::vector<int>& hot_users() const { return hot_; }
  const std::vector<int>& cold_users() const { return cold_; }

  int n_shards() const { return cfg_.n_shards; }
  std::int64_t items_per_shard() const { return items_per_shard_; }
  int shard_of(std::int64_t item) const {
    return static_cast<int>(item / items_per_shard_);
  }
  // Normalized access mass of each shard under the global Zipf law.
  const std::vector<double>& shard_mass() const { return shard_mass_; }
  // Shard ids sorted by descending mass (ties by id).
  const std::vector<int>& shards_by_popularity() const { return by_pop_; }
  double mean_seq_len() const;

  // Draws one item id from the global Zipf distribution.
  std::int64_t draw_global_item(std::mt19937_64& rng) const;
  int draw_global_shard(std::mt19937_64& rng) const;

 private:
  PopulationConfig cfg_;
  std::int64_t items_per_shard_ = 1;
  std::vector<UserProfile> users_;
  std::vector<int> hot_;
  std::vector<int> cold_;
  std::vector<double> item_cdf_;
  std::vector<double> shard_mass_;
  std::vector<int> by_pop_;
  mutable std::discrete_distribution<int> shard_dist_;
};

enum class RegimeKind { Steady, Trend, Burst };

std::string_view to_string(RegimeKind k);
RegimeKind regime_from_string(std::string_view s);

struct BurstWindow {
  int start_epoch = 0;
  int n_epochs = 0;
};

struct RegimeSpec {
  RegimeKind kind = RegimeKind::Steady;
  double base_qps = 600.0;
  double hot_share_start = 0.24;
  double hot_share_end = 0.24;
  double burst_rate_per_hour = 30.0;
  int burst_len_min = 3;
  int burst_len_max = 5;
  double burst_hot_share = 0.6;
  // Total arrival rate multiplier while a burst is active.
  double burst_qps_scale = 1.0;
  double duration = 600.0;
  double epoch_seconds = 5.0;
  std::uint64_t seed = 1;
  // Burst regime only: fixed burst placement instead of Poisson starts.
  std::vector<BurstWindow> scripted_bursts;
  // Optional per-epoch hot share; overrides start/end when non-empty.
  std::vector<double> hot_share_schedule;

  int n_epochs() const;
  void validate() const;
};

struct Request {
  std::int64_t request_id = 0;
  int user_id = 0;
  bool is_hot = false;
  double arrival_time = 0.0;
  std::int64_t seq_len = 0;
  // Seed for regenerating this request's item accesses.
  std::uint64_t item_seed = 0;
};

struct Trace {
  RegimeSpec spec;
  std::vector<Request> requests;
  std::vector<BurstWindow> bursts;
  // Nominal hot share and arrival rate in effect for each epoch.
  std::vector<double> epoch_hot_share;
  std::vector<double> epoch_qps;

  int n_epochs() const { return static_cast<int>(epoch_hot_share.size()); }
  bool in_burst(int epoch) const;
  // Index range [first, last) of requests arriving in [t0, t1).
  std::pair<std::size_t, std::size_t> range(double t0, double t1) const;
};

Trace generate_trace(const RegimeSpec& spec, const Population& pop);

// Fraction of requests in [t0, t1) issued by hot users; 0 for an empty window.
double window_hot_ratio(const Trace& trace, double t0, double t1);

// Item accesses of one request, aggregated to shards. Every embedding table
// is looked up with the same item ids, so one histogram serves all tables.
struct ShardCount {
  std::int32_t shard = 0;
  std::int32_t count = 0;
  bool operator==(const ShardCount&) const = default;
};
using ShardHistogram = std::vector<ShardCount>;

ShardHistogram shard_histogram(const Population& pop, const Request& req);

// Item-level draw for one request: `seq_len` ids, a `p_local` fraction taken
// uniformly from the user's profile shards and the rest from the global Zipf
// law. The same list is looked up in every table.
std::vector<std::int64_t> sample_items(const Population& pop,
                                       const UserProfile& user,
                                       std::int64_t seq_len,
                                       std::mt19937_64& rng);

// One request per line: id,user,hot,time,seq_len,item_seed.
void write_trace(std::ostream& os, const Trace& trace);
std::vector<Request> read_trace_requests(std::istream& is);

// Uniform double in [0, 1) from the top 53 bits of one draw.
inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Independent stream derived from a base seed and a stream tag.
std::mt19937_64 make_stream(std::uint64_t seed, std::uint64_t stream);

}  // namespace hbmpart

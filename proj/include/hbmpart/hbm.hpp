#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <vector>

namespace hbmpart {

inline constexpr double kAlphaMin = 0.10;
inline constexpr double kAlphaMax = 0.90;

struct HbmConfig {
  double hbm_bytes = 12e9;   // M, pooled per node
  double page_bytes = 20e6;  // one embedding shard per page
  double block_bytes = 16e6;
  double throttle_bw = 4e9;  // refill cap, bytes/s
  double pcie_bw = 25e9;

  void validate() const;
};

struct BoundaryReport {
  std::int64_t pages_moved = 0;
  std::int64_t kv_blocks_touched = 0;
  std::int64_t emb_entries_evicted = 0;
  // KV users evicted because the free list could not cover the shrink.
  std::int64_t kv_users_evicted = 0;
  std::int64_t pending_added = 0;
};

// Residency change emitted to whoever mirrors cache contents (the router).
struct ResidencyChange {
  enum Kind : std::uint8_t { kEmbInsert, kEmbEvict, kKvInsert, kKvEvict };
  Kind kind;
  std::int32_t id;  // shard id or user id
};

// Page-granular embedding cache with an intrusive LRU list. A resident page
// is either warm (content present) or cold (reserved, awaiting refill).
class EmbSlab {
 public:
  enum State : std::uint8_t { kAbsent = 0, kCold = 1, kWarm = 2 };

  EmbSlab() = default;
  // `refill_order` lists shards in the order background refill should
  // reserve and warm them (descending popularity).
  EmbSlab(int n_shards, std::vector<int> refill_order);

  int n_shards() const { return static_cast<int>(state_.size()); }
  std::int64_t capacity() const { return capacity_; }
  std::int64_t size() const { return size_; }
  std::int64_t warm_count() const { return size_ - cold_count_; }
  std::int64_t cold_count() const { return cold_count_; }
  State state(int shard) const { return static_cast<State>(state_[shard]); }
  std::size_t pending() const { return pending_.size(); }

  // Warm hit refreshes recency and returns true. Anything else is a miss:
  // a cold page becomes warm, an absent shard is inserted warm (evicting
  // the LRU page if full). Residency changes go to `log` if non-null.
  bool access(int shard, std::vector<ResidencyChange>* log);

  // Shrinking evicts from the LRU end. Growing reserves cold pages for the
  // most popular non-resident shards and queues them for refill.
  void set_capacity(std::int64_t pages, BoundaryReport* report,
                    std::vector<ResidencyChange>* log);

  // Warms up to `max_pages` queued cold pages; returns the number warmed.
  std::int64_t refill(std::int64_t max_pages, std::vector<ResidencyChange>* log);

  // Shards from most to least recently used.
  std::vector<int> lru_order() const;
  std::vector<int> resident_shards() const;
  void check_invariants() const;

 private:
  void link_front(int s);
  void unlink(int s);
  void evict_lru(std::vector<ResidencyChange>* log);

  std::vector<std::uint8_t> state_;
  std::vector<std::int32_t> prev_, next_;
  std::int32_t head_ = -1, tail_ = -1;
  std::int64_t capacity_ = 0;
  std::int64_t size_ = 0;
  std::int64_t cold_count_ = 0;
  std::vector<int> refill_order_;
  std::deque<int> pending_;
};

// Paged per-user KV store. Blocks lent to the embedding side leave the pool;
// blocks of resident users are never renumbered.
class KvPool {
 public:
  KvPool() = default;
  KvPool(std::int64_t total_blocks, double block_bytes, int n_users);

  std::int64_t total_blocks() const { return total_; }
  std::int64_t capacity() const { return capacity_; }
  std::int64_t free_blocks() const { return static_cast<std::int64_t>(free_.size()); }
  std::int64_t used_blocks() const { return used_; }
  std::int64_t resident_users() const { return static_cast<std::int64_t>(lru_.size()); }
  double block_bytes() const { return block_bytes_; }
  std::int64_t blocks_for(double bytes) const;

  bool resident(int user) const { return tick_[user] >= 0; }
  const std::vector<std::int32_t>& blocks_of(int user) const { return blocks_[user]; }

  // Hit iff the user's blocks are resident; refreshes recency.
  bool lookup(int user);
  // Inserts after a miss, evicting LRU users as needed. Returns false when
  // the user cannot fit even in an empty pool (served uncached).
  bool insert(int user, double bytes, std::vector<ResidencyChange>* log);

  // Changes how many blocks the pool may hold. Shrinking takes blocks off
  // the free list, evicting LRU users only on shortfall.
  void set_capacity(std::int64_t blocks, BoundaryReport* report,
                    std::vector<ResidencyChange>* log);

  std::vector<int> lru_order() const;
  void check_invariants() const;

 private:
  void evict(int user, std::vector<ResidencyChange>* log);
  void evict_lru(std::vector<ResidencyChange>* log);

  std::int64_t total_ = 0;
  std::int64_t capacity_ = 0;
  std::int64_t used_ = 0;
  double block_bytes_ = 1.0;
  std::uint64_t clock_ = 0;
  std::vector<std::int32_t> free_;
  std::vector<std::int32_t> lent_;
  std::vector<std::int64_t> tick_;  // -1 when not resident
  std::vector<std::vector<std::int32_t>> blocks_;
  std::map<std::uint64_t, int> lru_;  // tick -> user, oldest first
};

// One node's HBM budget split between the two caches.
class HbmNode {
 public:
  HbmNode() = default;
  HbmNode(const HbmConfig& cfg, int n_shards, std::vector<int> refill_order,
          int n_users, double alpha);

  const HbmConfig& config() const { return cfg_; }
  double alpha() const { return alpha_; }
  EmbSlab& emb() { return emb_; }
  const EmbSlab& emb() const { return emb_; }
  KvPool& kv() { return kv_; }
  const KvPool& kv() const { return kv_; }

  std::int64_t emb_pages_for(double alpha) const;
  std::int64_t kv_blocks_for(double alpha) const;
  double emb_capacity_bytes() const;
  double kv_capacity_bytes() const;

  // Moves the boundary; metadata only. Throws on alpha outside
  // [kAlphaMin, kAlphaMax].
  BoundaryReport set_alpha(double alpha, std::vector<ResidencyChange>* log);

  // Refill budget for a tick of `dt` seconds with `miss_rate` bytes/s of
  // demand traffic on PCIe.
  double refill_budget(double dt, double miss_rate) const;
  // Warms whole pages within the budget; returns bytes refilled.
  double refill_tick(double dt, double miss_rate,
                     std::vector<ResidencyChange>* log);

  void check_invariants() const;

 private:
  HbmConfig cfg_;
  double alpha_ = 0.5;
  EmbSlab emb_;
  KvPool kv_;
};

}  // namespace hbmpart

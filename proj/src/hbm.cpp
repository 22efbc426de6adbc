#include "hbmpart/hbm.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace hbmpart {

void HbmConfig::validate() const {
  if (!(hbm_bytes > 0) || !(page_bytes > 0) || !(block_bytes > 0)) {
    throw std::invalid_argument("hbm: sizes must be > 0");
  }
  if (block_bytes > page_bytes) {
    throw std::invalid_argument("hbm: block_bytes must not exceed page_bytes");
  }
  if (throttle_bw < 0 || !(pcie_bw > 0)) {
    throw std::invalid_argument("hbm: bad refill bandwidth");
  }
}

// ---------------------------------------------------------------- EmbSlab

EmbSlab::EmbSlab(int n_shards, std::vector<int> refill_order)
    : state_(n_shards, kAbsent),
      prev_(n_shards, -1),
      next_(n_shards, -1),
      refill_order_(std::move(refill_order)) {}

void EmbSlab::link_front(int s) {
  prev_[s] = -1;
  next_[s] = head_;
  if (head_ >= 0) prev_[head_] = s;
  head_ = s;
  if (tail_ < 0) tail_ = s;
}

void EmbSlab::unlink(int s) {
  const int p = prev_[s], n = next_[s];
  if (p >= 0) next_[p] = n; else head_ = n;
  if (n >= 0) prev_[n] = p; else tail_ = p;
  prev_[s] = next_[s] = -1;
}

void EmbSlab::evict_lru(std::vector<ResidencyChange>* log) {
  const int s = tail_;
  unlink(s);
  if (state_[s] == kCold) {
    --cold_count_;
  } else if (log) {
    log->push_back({ResidencyChange::kEmbEvict, s});
  }
  state_[s] = kAbsent;
  --size_;
}

bool EmbSlab::access(int shard, std::vector<ResidencyChange>* log) {
  const auto st = state_[shard];
  if (st == kWarm) {
    if (head_ != shard) {
      unlink(shard);
      link_front(shard);
    }
    return true;
  }
  if (st == kCold) {
    --cold_count_;
    state_[shard] = kWarm;
    unlink(shard);
    link_front(shard);
    if (log) log->push_back({ResidencyChange::kEmbInsert, shard});
    return false;
  }
  if (capacity_ == 0) return false;
  if (size_ >= capacity_) evict_lru(log);
  state_[shard] = kWarm;
  link_front(shard);
  ++size_;
  if (log) log->push_back({ResidencyChange::kEmbInsert, shard});
  return false;
}

void EmbSlab::set_capacity(std::int64_t pages, BoundaryReport* report,
                           std::vector<ResidencyChange>* log) {
  if (pages < 0) throw std::invalid_argument("emb slab: negative capacity");
  const std::int64_t old = capacity_;
  capacity_ = pages;
  if (report) report->pages_moved += std::llabs(pages - old);
  while (size_ > capacity_) {
    evict_lru(log);
    if (report) ++report->emb_entries_evicted;
  }
  if (pages > old) {
    for (int s : refill_order_) {
      if (size_ >= capacity_) break;
      if (state_[s] != kAbsent) continue;
      state_[s] = kCold;
      link_front(s);
      ++size_;
      ++cold_count_;
      pending_.push_back(s);
      if (report) ++report->pending_added;
    }
  }
  if (cold_count_ == 0) pending_.clear();
}

std::int64_t EmbSlab::refill(std::int64_t max_pages,
                             std::vector<ResidencyChange>* log) {
  std::int64_t done = 0;
  while (done < max_pages && !pending_.empty()) {
    const int s = pending_.front();
    pending_.pop_front();
    if (state_[s] != kCold) continue;  // evicted or already fetched
    state_[s] = kWarm;
    --cold_count_;
    ++done;
    if (log) log->push_back({ResidencyChange::kEmbInsert, s});
  }
  if (cold_count_ == 0) pending_.clear();
  return done;
}

std::vector<int> EmbSlab::lru_order() const {
  std::vector<int> out;
  for (int s = head_; s >= 0; s = next_[s]) out.push_back(s);
  return out;
}

std::vector<int> EmbSlab::resident_shards() const {
  std::vector<int> out;
  for (int s = 0; s < n_shards(); ++s) {
    if (state_[s] != kAbsent) out.push_back(s);
  }
  return out;
}

void EmbSlab::check_invariants() const {
  std::int64_t n = 0, cold = 0;
  int last = -1;
  for (int s = head_; s >= 0; s = next_[s]) {
    if (state_[s] == kAbsent) throw std::logic_error("emb slab: absent shard linked");
    if (prev_[s] != last) throw std::logic_error("emb slab: broken back link");
    cold += state_[s] == kCold;
    last = s;
    if (++n > size_) throw std::logic_error("emb slab: list longer than size");
  }
  if (last != tail_) throw std::logic_error("emb slab: bad tail");
  if (n != size_ || cold != cold_count_) {
    throw std::logic_error("emb slab: size/cold count mismatch");
  }
  if (size_ > capacity_) throw std::logic_error("emb slab: over capacity");
}

// ----------------------------------------------------------------- KvPool

KvPool::KvPool(std::int64_t total_blocks, double block_bytes, int n_users)
    : total_(total_blocks),
      capacity_(total_blocks),
      block_bytes_(block_bytes),
      tick_(n_users, -1),
      blocks_(n_users) {
  free_.reserve(static_cast<std::size_t>(total_blocks));
  // Lowest ids on top of the stack.
  for (std::int64_t b = total_blocks - 1; b >= 0; --b) {
    free_.push_back(static_cast<std::int32_t>(b));
  }
}

std::int64_t KvPool::blocks_for(double bytes) const {
  return static_cast<std::int64_t>(std::ceil(bytes / block_bytes_ - 1e-12));
}

bool KvPool::lookup(int user) {
  const std::int64_t t = tick_[user];
  if (t < 0) return false;
  lru_.erase(static_cast<std::uint64_t>(t));
  tick_[user] = static_cast<std::int64_t>(clock_);
  lru_.emplace(clock_++, user);
  return true;
}

void KvPool::evict(int user, std::vector<ResidencyChange>* log) {
  lru_.erase(static_cast<std::uint64_t>(tick_[user]));
  tick_[user] = -1;
  auto& b = blocks_[user];
  // Push in reverse so the user's lowest block id is reused first.
  for (auto it = b.rbegin(); it != b.rend(); ++it) free_.push_back(*it);
  used_ -= static_cast<std::int64_t>(b.size());
  b.clear();
  if (log) log->push_back({ResidencyChange::kKvEvict, user});
}

void KvPool::evict_lru(std::vector<ResidencyChange>* log) {
  evict(lru_.begin()->second, log);
}

bool KvPool::insert(int user, double bytes, std::vector<ResidencyChange>* log) {
  if (resident(user)) return lookup(user);
  const std::int64_t need = blocks_for(bytes);
  if (need == 0) return true;  // nothing to keep
  if (need > capacity_) return false;
  while (free_blocks() < need) evict_lru(log);
  auto& b = blocks_[user];
  b.reserve(static_cast<std::size_t>(need));
  for (std::int64_t i = 0; i < need; ++i) {
    b.push_back(free_.back());
    free_.pop_back();
  }
  used_ += need;
  tick_[user] = static_cast<std::int64_t>(clock_);
  lru_.emplace(clock_++, user);
  if (log) log->push_back({ResidencyChange::kKvInsert, user});
  return true;
}

void KvPool::set_capacity(std::int64_t blocks, BoundaryReport* report,
                          std::vector<ResidencyChange>* log) {
  if (blocks < 0 || blocks > total_) {
    throw std::invalid_argument("kv pool: capacity out of range");
  }
  if (blocks < capacity_) {
    const std::int64_t give = capacity_ - blocks;
    while (free_blocks() < give) {
      evict_lru(log);
      if (report) ++report->kv_users_evicted;
    }
    for (std::int64_t i = 0; i < give; ++i) {
      lent_.push_back(free_.back());
      free_.pop_back();
    }
  } else {
    for (std::int64_t i = capacity_; i < blocks; ++i) {
      free_.push_back(lent_.back());
      lent_.pop_back();
    }
  }
  capacity_ = blocks;
}

std::vector<int> KvPool::lru_order() const {
  std::vector<int> out;
  for (auto it = lru_.rbegin(); it != lru_.rend(); ++it) out.push_back(it->second);
  return out;
}

void KvPool::check_invariants() const {
  std::int64_t used = 0;
  std::vector<std::uint8_t> seen(static_cast<std::size_t>(total_), 0);
  auto mark = [&](std::int32_t b) {
    if (b < 0 || b >= total_ || seen[b]) {
      throw std::logic_error("kv pool: block " + std::to_string(b) +
                             " duplicated or out of range");
    }
    seen[b] = 1;
  };
  for (std::size_t u = 0; u < blocks_.size(); ++u) {
    if ((tick_[u] >= 0) != !blocks_[u].empty()) {
      throw std::logic_error("kv pool: residency flag out of sync");
    }
    for (auto b : blocks_[u]) mark(b);
    used += static_cast<std::int64_t>(blocks_[u].size());
  }
  for (auto b : free_) mark(b);
  for (auto b : lent_) mark(b);
  if (used != used_) throw std::logic_error("kv pool: used count drift");
  if (free_blocks() + used_ != capacity_) {
    throw std::logic_error("kv pool: free + resident != capacity");
  }
  if (static_cast<std::int64_t>(lent_.size()) + capacity_ != total_) {
    throw std::logic_error("kv pool: lent + capacity != total");
  }
  if (static_cast<std::int64_t>(lru_.size()) !=
      std::count_if(tick_.begin(), tick_.end(), [](auto t) { return t >= 0; })) {
    throw std::logic_error("kv pool: lru size mismatch");
  }
}

// ---------------------------------------------------------------- HbmNode

HbmNode::HbmNode(const HbmConfig& cfg, int n_shards,
                 std::vector<int> refill_order, int n_users, double alpha)
    : cfg_(cfg), alpha_(alpha), emb_(n_shards, std::move(refill_order)) {
  cfg_.validate();
  if (alpha < kAlphaMin || alpha > kAlphaMax) {
    throw std::invalid_argument("hbm: alpha out of bounds");
  }
  const auto total = static_cast<std::int64_t>(cfg_.hbm_bytes / cfg_.block_bytes);
  kv_ = KvPool(total, cfg_.block_bytes, n_users);
  kv_.set_capacity(kv_blocks_for(alpha), nullptr, nullptr);
  // Initial pages are reserved cold and filled by background refill.
  emb_.set_capacity(emb_pages_for(alpha), nullptr, nullptr);
}

std::int64_t HbmNode::emb_pages_for(double alpha) const {
  return std::llround(alpha * cfg_.hbm_bytes / cfg_.page_bytes);
}

std::int64_t HbmNode::kv_blocks_for(double alpha) const {
  const double rest =
      cfg_.hbm_bytes - static_cast<double>(emb_pages_for(alpha)) * cfg_.page_bytes;
  return std::max<std::int64_t>(
      0, static_cast<std::int64_t>(std::floor(rest / cfg_.block_bytes + 1e-9)));
}

double HbmNode::emb_capacity_bytes() const {
  return static_cast<double>(emb_.capacity()) * cfg_.page_bytes;
}

double HbmNode::kv_capacity_bytes() const {
  return static_cast<double>(kv_.capacity()) * cfg_.block_bytes;
}

BoundaryReport HbmNode::set_alpha(double alpha,
                                  std::vector<ResidencyChange>* log) {
  if (!(alpha >= kAlphaMin - 1e-12 && alpha <= kAlphaMax + 1e-12)) {
    throw std::invalid_argument("hbm: alpha " + std::to_string(alpha) +
                                " outside [0.1, 0.9]");
  }
  alpha = std::clamp(alpha, kAlphaMin, kAlphaMax);  // absorb the rounding slack
  BoundaryReport report;
  const std::int64_t pages = emb_pages_for(alpha);
  const std::int64_t blocks = kv_blocks_for(alpha);
  alpha_ = alpha;
  if (pages == emb_.capacity() && blocks == kv_.capacity()) return report;

  // Snapshot resident block lists to verify nothing gets renumbered.
  std::vector<std::pair<int, std::vector<std::int32_t>>> before;
  for (int u : kv_.lru_order()) before.emplace_back(u, kv_.blocks_of(u));

  if (pages > emb_.capacity()) {
    kv_.set_capacity(blocks, &report, log);
    emb_.set_capacity(pages, &report, log);
  } else {
    emb_.set_capacity(pages, &report, log);
    kv_.set_capacity(blocks, &report, log);
  }
  for (const auto& [u, b] : before) {
    if (!kv_.resident(u)) continue;
    const auto& now = kv_.blocks_of(u);
    for (std::size_t i = 0; i < b.size(); ++i) {
      if (i >= now.size() || now[i] != b[i]) ++report.kv_blocks_touched;
    }
  }
  return report;
}

double HbmNode::refill_budget(double dt, double miss_rate) const {
  const double bw = std::max(0.0, std::min(cfg_.throttle_bw, cfg_.pcie_bw - miss_rate));
  return bw * dt;
}

double HbmNode::refill_tick(double dt, double miss_rate,
                            std::vector<ResidencyChange>* log) {
  if (emb_.cold_count() == 0) return 0.0;
  const auto pages = static_cast<std::int64_t>(
      std::floor(refill_budget(dt, miss_rate) / cfg_.page_bytes + 1e-9));
  return static_cast<double>(emb_.refill(pages, log)) * cfg_.page_bytes;
}

void HbmNode::check_invariants() const {
  emb_.check_invariants();
  kv_.check_invariants();
  const double slack =
      cfg_.hbm_bytes - emb_capacity_bytes() - kv_capacity_bytes();
  if (slack < -1e-6 || slack >= cfg_.page_bytes) {
    throw std::logic_error("hbm: capacities do not sum to the budget");
  }
}

}  // namespace hbmpart

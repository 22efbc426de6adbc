#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace hbmpart {

// Physical constants of one serving node and the cluster it sits in.
// Rates are in SI units: FLOP/s and bytes/s (1 GB = 1e9 bytes).
struct HardwareProfile {
  std::string name = "a100-edr";
  double gpu_flops = 312e12;
  double pcie_bw = 25e9;
  double rdma_bw = 12e9;
  double hbm_bytes_per_node = 80e9;
  int node_count = 32;

  // Fraction of embedding misses that target a remote shard.
  double remote_fraction() const {
    return static_cast<double>(node_count - 1) / static_cast<double>(node_count);
  }

  void validate() const;
};

struct ModelProfile {
  int n_layers = 6;
  int n_heads = 8;
  int head_dim = 64;
  int emb_dim = 512;
  int emb_bytes_per_elem = 4;
  int kv_bytes_per_elem = 2;
  int n_tables = 10;

  int d_model() const { return n_heads * head_dim; }
  // Bytes moved per embedding miss (one row of one table).
  double emb_row_bytes() const {
    return static_cast<double>(emb_dim) * emb_bytes_per_elem;
  }

  void validate() const;
};

// Named hardware presets: "a100-edr", "h100-edr", "h100-ndr", "h200-ndr".
HardwareProfile hardware_preset(std::string_view name);
std::vector<std::string> hardware_preset_names();

// Critical-path cost of one embedding miss: PCIe transfer plus the remote
// RDMA hop taken by the remote fraction of misses.
double emb_miss_cost(const HardwareProfile& hw, const ModelProfile& m);

// Full attention recompute for a history of `seq_len` tokens.
double kv_recompute_cost(const HardwareProfile& hw, const ModelProfile& m,
                         std::int64_t seq_len);

double emb_window_cost(std::int64_t miss_count, const HardwareProfile& hw,
                       const ModelProfile& m);

// Harmonic composition of PCIe and the remote-fraction-weighted RDMA link.
double effective_bandwidth(const HardwareProfile& hw);

// F_gpu / B_eff expressed in kFLOP per byte (the unit the published
// hardware table uses).
double hardware_ratio(const HardwareProfile& hw);

struct BottleneckRatio {
  double value = 0.0;
  // Set when the KV cache never misses but embeddings do; `value` is then
  // meaningless (the ratio is unbounded).
  bool kv_never_misses = false;
};

// Exact quotient C_emb / C_kv with analytic miss rates 1-h_E and 1-h_K.
BottleneckRatio bottleneck_ratio(const HardwareProfile& hw,
                                 const ModelProfile& m, double h_emb,
                                 double h_kv, std::int64_t seq_len);

enum class Regime { KvDominated, DualBottleneck, EmbDominated };

std::string_view to_string(Regime r);

// Lower and upper bound of the numeric dual-bottleneck band on Gamma.
inline constexpr double kDualGammaLow = 0.2;
inline constexpr double kDualGammaHigh = 5.0;

// Table-driven classification with a numeric Gamma fallback. Uses
// m.n_tables as N_T.
Regime classify_regime(const HardwareProfile& hw, const ModelProfile& m,
                       double h_emb, double h_kv, std::int64_t seq_len);

// K and V tensors for all layers of one user's history.
double per_user_kv_bytes(const ModelProfile& m, std::int64_t seq_len);

// Embedding bytes a request touches across all tables.
double per_request_emb_bytes(const ModelProfile& m, std::int64_t seq_len);

}  // namespace hbmpart

#include "hbmpart/costmodel.hpp"

#include <stdexcept>

namespace hbmpart {

void HardwareProfile::validate() const {
  if (!(gpu_flops > 0) || !(pcie_bw > 0) || !(rdma_bw > 0) ||
      !(hbm_bytes_per_node > 0)) {
    throw std::invalid_argument("hardware profile '" + name +
                                "': all rates and capacities must be > 0");
  }
  if (node_count < 1) {
    throw std::invalid_argument("hardware profile '" + name +
                                "': node_count must be >= 1");
  }
}

void ModelProfile::validate() const {
  if (n_layers < 1 || n_heads < 1 || head_dim < 1 || emb_dim < 1 ||
      emb_bytes_per_elem < 1 || kv_bytes_per_elem < 1 || n_tables < 0) {
    throw std::invalid_argument("model profile: dimensions must be positive");
  }
}

HardwareProfile hardware_preset(std::string_view name) {
  HardwareProfile hw;
  hw.name = std::string(name);
  hw.node_count = 32;
  hw.hbm_bytes_per_node = 80e9;
  if (name == "a100-edr") {
    hw.gpu_flops = 312e12;
    hw.pcie_bw = 25e9;
    hw.rdma_bw = 12e9;
  } else if (name == "h100-edr") {
    hw.gpu_flops = 990e12;
    hw.pcie_bw = 64e9;
    hw.rdma_bw = 12e9;
  } else if (name == "h100-ndr") {
    hw.gpu_flops = 990e12;
    hw.pcie_bw = 64e9;
    hw.rdma_bw = 50e9;
  } else if (name == "h200-ndr") {
    hw.gpu_flops = 990e12;
    hw.pcie_bw = 64e9;
    hw.rdma_bw = 50e9;
    hw.hbm_bytes_per_node = 141e9;
  } else {
    throw std::invalid_argument("unknown hardware preset '" + hw.name + "'");
  }
  return hw;
}

std::vector<std::string> hardware_preset_names() {
  return {"a100-edr", "h100-edr", "h100-ndr", "h200-ndr"};
}

double emb_miss_cost(const HardwareProfile& hw, const ModelProfile& m) {
  const double row = m.emb_row_bytes();
  return row / hw.pcie_bw + hw.remote_fraction() * row / hw.rdma_bw;
}

double kv_recompute_cost(const HardwareProfile& hw, const ModelProfile& m,
                         std::int64_t seq_len) {
  const double len = static_cast<double>(seq_len);
  return 4.0 * m.n_layers * m.n_heads * m.head_dim * len * len / hw.gpu_flops;
}

double emb_window_cost(std::int64_t miss_count, const HardwareProfile& hw,
                       const ModelProfile& m) {
  return static_cast<double>(miss_count) * emb_miss_cost(hw, m);
}

double effective_bandwidth(const HardwareProfile& hw) {
  return 1.0 / (1.0 / hw.pcie_bw + hw.remote_fraction() / hw.rdma_bw);
}

double hardware_ratio(const HardwareProfile& hw) {
  return hw.gpu_flops / effective_bandwidth(hw) / 1e3;
}

BottleneckRatio bottleneck_ratio(const HardwareProfile& hw,
                                 const ModelProfile& m, double h_emb,
                                 double h_kv, std::int64_t seq_len) {
  if (h_emb < 0 || h_emb > 1 || h_kv < 0 || h_kv > 1) {
    throw std::invalid_argument("bottleneck_ratio: hit rates must be in [0,1]");
  }
  const double len = static_cast<double>(seq_len);
  const double c_emb =
      len * m.n_tables * (1.0 - h_emb) * emb_miss_cost(hw, m);
  const double c_kv = (1.0 - h_kv) * kv_recompute_cost(hw, m, seq_len);
  if (c_emb == 0.0) return {0.0, false};
  if (c_kv == 0.0) return {0.0, true};
  return {c_emb / c_kv, false};
}

std::string_view to_string(Regime r) {
  switch (r) {
    case Regime::KvDominated:
      return "kv-dominated";
    case Regime::DualBottleneck:
      return "dual-bottleneck";
    case Regime::EmbDominated:
      return "emb-dominated";
  }
  return "?";
}

Regime classify_regime(const HardwareProfile& hw, const ModelProfile& m,
                       double h_emb, double h_kv, std::int64_t seq_len) {
  const int n_tables = m.n_tables;
  auto in = [](double v, double lo, double hi) { return v >= lo && v <= hi; };
  if (n_tables <= 2) return Regime::KvDominated;
  if (n_tables >= 3 && n_tables <= 20 && in(h_emb, 0.80, 0.98) &&
      in(h_kv, 0.80, 0.98) && seq_len >= 2048 && seq_len <= 20480) {
    return Regime::DualBottleneck;
  }
  if (n_tables > 25 && h_emb < 0.85 && seq_len < 5000) {
    return Regime::EmbDominated;
  }
  const BottleneckRatio g = bottleneck_ratio(hw, m, h_emb, h_kv, seq_len);
  if (g.kv_never_misses) return Regime::EmbDominated;
  if (g.value < kDualGammaLow) return Regime::KvDominated;
  if (g.value > kDualGammaHigh) return Regime::EmbDominated;
  return Regime::DualBottleneck;
}

double per_user_kv_bytes(const ModelProfile& m, std::int64_t seq_len) {
  return 2.0 * m.n_layers * static_cast<double>(seq_len) * m.d_model() *
         m.kv_bytes_per_elem;
}

double per_request_emb_bytes(const ModelProfile& m, std::int64_t seq_len) {
  return static_cast<double>(seq_len) * m.n_tables * m.emb_dim *
         m.emb_bytes_per_elem;
}

}  // namespace hbmpart

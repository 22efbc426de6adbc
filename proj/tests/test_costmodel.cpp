#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "hbmpart/costmodel.hpp"

namespace hbmpart {
namespace {

// Published per-miss and recompute figures, recomputed by hand from the raw
// constants rather than through the library.
TEST(CostModel, MissCostA100) {
  const auto hw = hardware_preset("a100-edr");
  const ModelProfile m;
  const double row = 512.0 * 4.0;
  const double expect = row / 25e9 + (31.0 / 32.0) * row / 12e9;
  EXPECT_DOUBLE_EQ(emb_miss_cost(hw, m), expect);
  EXPECT_NEAR(emb_miss_cost(hw, m), 248e-9, 1e-9);
}

TEST(CostModel, MissCostSingleNodeIsPcieOnly) {
  auto hw = hardware_preset("a100-edr");
  hw.node_count = 1;
  EXPECT_NEAR(emb_miss_cost(hw, ModelProfile{}), 82e-9, 1e-9);
  EXPECT_DOUBLE_EQ(emb_miss_cost(hw, ModelProfile{}), 2048.0 / 25e9);
}

TEST(CostModel, HugeRdmaConvergesToPcie) {
  auto hw = hardware_preset("a100-edr");
  hw.rdma_bw = 1e30;
  EXPECT_NEAR(emb_miss_cost(hw, ModelProfile{}), 2048.0 / 25e9, 1e-15);
}

TEST(CostModel, RecomputeAt10K) {
  const auto hw = hardware_preset("a100-edr");
  const ModelProfile m;
  const double expect = 4.0 * 6 * 8 * 64 * 1e8 / 312e12;
  EXPECT_DOUBLE_EQ(kv_recompute_cost(hw, m, 10000), expect);
  EXPECT_NEAR(kv_recompute_cost(hw, m, 10000), 3.9e-3, 0.05e-3);
  EXPECT_EQ(kv_recompute_cost(hw, m, 0), 0.0);
}

TEST(CostModel, RecomputeIsExactlyQuadratic) {
  const auto hw = hardware_preset("h100-ndr");
  const ModelProfile m;
  std::mt19937_64 rng(3);
  for (int i = 0; i < 200; ++i) {
    const std::int64_t L = static_cast<std::int64_t>(rng() % 100000);
    EXPECT_DOUBLE_EQ(kv_recompute_cost(hw, m, 2 * L), 4.0 * kv_recompute_cost(hw, m, L));
  }
}

TEST(CostModel, WindowCost) {
  const auto hw = hardware_preset("a100-edr");
  const ModelProfile m;
  EXPECT_EQ(emb_window_cost(0, hw, m), 0.0);
  EXPECT_DOUBLE_EQ(emb_window_cost(1, hw, m), emb_miss_cost(hw, m));
  // L=10K, 10 tables, 90% hits: 10,000 misses.
  EXPECT_NEAR(emb_window_cost(10000, hw, m), 2.48e-3, 0.01e-3);
  // Cross-check through bandwidth: 20.48 MB of miss traffic at B_eff.
  EXPECT_NEAR(emb_window_cost(10000, hw, m), 20.48e6 / effective_bandwidth(hw), 1e-12);
}

TEST(CostModel, EffectiveBandwidth) {
  EXPECT_NEAR(effective_bandwidth(hardware_preset("a100-edr")), 8.3e9, 0.1e9);
  EXPECT_NEAR(effective_bandwidth(hardware_preset("h100-ndr")), 28.6e9, 0.1e9);
  auto hw = hardware_preset("h100-edr");
  hw.node_count = 1;
  EXPECT_DOUBLE_EQ(effective_bandwidth(hw), hw.pcie_bw);
}

TEST(CostModel, EffectiveBandwidthBoundedByLinks) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> bw(1e9, 100e9);
  for (int i = 0; i < 500; ++i) {
    HardwareProfile hw;
    hw.pcie_bw = bw(rng);
    hw.rdma_bw = bw(rng);
    hw.node_count = 1 + static_cast<int>(rng() % 64);
    const double fr = hw.remote_fraction();
    const double cap = fr > 0 ? std::min(hw.pcie_bw, hw.rdma_bw / fr) : hw.pcie_bw;
    EXPECT_LE(effective_bandwidth(hw), cap * (1 + 1e-12));
  }
}

TEST(CostModel, HardwareRatios) {
  EXPECT_NEAR(hardware_ratio(hardware_preset("a100-edr")), 37.7, 0.5);
  EXPECT_NEAR(hardware_ratio(hardware_preset("h100-edr")), 95.4, 0.5);
  EXPECT_NEAR(hardware_ratio(hardware_preset("h100-ndr")), 34.7, 0.5);
  EXPECT_NEAR(hardware_ratio(hardware_preset("h200-ndr")), 34.7, 0.5);
}

TEST(CostModel, PresetsMatchTable) {
  const auto a = hardware_preset("a100-edr");
  EXPECT_EQ(a.gpu_flops, 312e12);
  EXPECT_EQ(a.pcie_bw, 25e9);
  EXPECT_EQ(a.rdma_bw, 12e9);
  const auto h = hardware_preset("h200-ndr");
  EXPECT_EQ(h.gpu_flops, 990e12);
  EXPECT_EQ(h.rdma_bw, 50e9);
  EXPECT_EQ(h.hbm_bytes_per_node, 141e9);
  EXPECT_EQ(hardware_preset_names().size(), 4u);
  EXPECT_THROW(hardware_preset("tpu"), std::invalid_argument);
}

TEST(CostModel, ByteSizes) {
  const ModelProfile m;
  EXPECT_NEAR(per_user_kv_bytes(m, 8000) / 1e6, 98.3, 0.1);
  EXPECT_NEAR(per_user_kv_bytes(m, 15000) / 1e6, 184.3, 0.1);
  EXPECT_EQ(per_user_kv_bytes(m, 0), 0.0);
  EXPECT_NEAR(per_request_emb_bytes(m, 10000) / 1e6, 204.8, 0.1);
  ModelProfile one = m;
  one.n_tables = 1;
  EXPECT_EQ(per_request_emb_bytes(one, 1), 2048.0);
  EXPECT_EQ(per_request_emb_bytes(m, 0), 0.0);
}

TEST(CostModel, GammaEdgeCases) {
  const auto hw = hardware_preset("a100-edr");
  const ModelProfile m;
  EXPECT_EQ(bottleneck_ratio(hw, m, 1.0, 0.5, 10000).value, 0.0);
  const auto never = bottleneck_ratio(hw, m, 0.9, 1.0, 10000);
  EXPECT_TRUE(never.kv_never_misses);
  EXPECT_THROW(bottleneck_ratio(hw, m, 1.2, 0.5, 10000), std::invalid_argument);
}

TEST(CostModel, GammaIsTheCostQuotient) {
  const auto hw = hardware_preset("a100-edr");
  const ModelProfile m;
  const double hE = 0.9, hK = 0.8;
  const std::int64_t L = 12000;
  const double c_emb = L * 10 * (1 - hE) * emb_miss_cost(hw, m);
  const double c_kv = (1 - hK) * kv_recompute_cost(hw, m, L);
  EXPECT_NEAR(bottleneck_ratio(hw, m, hE, hK, L).value, c_emb / c_kv, 1e-9);
}

TEST(CostModel, GammaMonotonicity) {
  const auto hw = hardware_preset("a100-edr");
  ModelProfile m;
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> h(0.0, 0.99);
  for (int i = 0; i < 300; ++i) {
    const double hE = h(rng), hK = h(rng);
    const std::int64_t L = 1000 + static_cast<std::int64_t>(rng() % 30000);
    m.n_tables = 10;
    const double g = bottleneck_ratio(hw, m, hE, hK, L).value;
    m.n_tables = 20;
    EXPECT_NEAR(bottleneck_ratio(hw, m, hE, hK, L).value, 2 * g, 1e-9 * g);
    m.n_tables = 10;
    EXPECT_GT(bottleneck_ratio(hw, m, hE * 0.9, hK, L).value, g);
    EXPECT_LT(bottleneck_ratio(hw, m, hE, hK, L + 100).value, g);
  }
}

TEST(CostModel, RegimeTable) {
  const auto hw = hardware_preset("a100-edr");
  ModelProfile m;
  m.n_tables = 1;
  EXPECT_EQ(classify_regime(hw, m, 0.5, 0.5, 100), Regime::KvDominated);
  m.n_tables = 10;
  EXPECT_EQ(classify_regime(hw, m, 0.9, 0.9, 10000), Regime::DualBottleneck);
  m.n_tables = 30;
  EXPECT_EQ(classify_regime(hw, m, 0.8, 0.9, 4000), Regime::EmbDominated);
}

TEST(CostModel, RegimeNumericFallback) {
  const auto hw = hardware_preset("a100-edr");
  ModelProfile m;
  m.n_tables = 22;  // outside every table row
  for (double hE : {0.5, 0.9, 0.99}) {
    for (double hK : {0.5, 0.9}) {
      const double g = bottleneck_ratio(hw, m, hE, hK, 8000).value;
      const Regime want = g < kDualGammaLow    ? Regime::KvDominated
                          : g > kDualGammaHigh ? Regime::EmbDominated
                                               : Regime::DualBottleneck;
      EXPECT_EQ(classify_regime(hw, m, hE, hK, 8000), want) << hE << " " << hK;
    }
  }
}

TEST(CostModel, ValidationRejectsBadProfiles) {
  HardwareProfile hw;
  hw.pcie_bw = 0;
  EXPECT_THROW(hw.validate(), std::invalid_argument);
  HardwareProfile n0;
  n0.node_count = 0;
  EXPECT_THROW(n0.validate(), std::invalid_argument);
  ModelProfile m;
  m.n_layers = -1;
  EXPECT_THROW(m.validate(), std::invalid_argument);
}

}  // namespace
}  // namespace hbmpart

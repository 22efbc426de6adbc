#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "hbmpart/config.hpp"

namespace hbmpart {
namespace {

std::string error_of(const std::string& text) {
  try {
    parse_config_string(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

TEST(Config, DefaultsRoundTrip) {
  const ExperimentConfig c;
  const std::string text = serialize_config(c);
  EXPECT_EQ(serialize_config(parse_config_string(text)), text);
}

TEST(Config, EveryKeySerialized) {
  const std::string text = serialize_config(ExperimentConfig{});
  for (const auto& k : config_keys()) {
    const auto dot = k.find('.');
    EXPECT_NE(text.find("[" + k.substr(0, dot) + "]"), std::string::npos) << k;
    EXPECT_NE(text.find("\n" + k.substr(dot + 1) + " = "), std::string::npos) << k;
  }
}

TEST(Config, UnknownKeyNamesPath) {
  EXPECT_EQ(error_of("[engine]\nn_node = 3\n"), "config: unknown key 'engine.n_node'");
  EXPECT_EQ(error_of("[bogus]\nx = 1\n"), "config: unknown key 'bogus.x'");
  ExperimentConfig c;
  try {
    apply_override(c, "router.nope=1");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_STREQ(e.what(), "config: unknown key 'router.nope'");
  }
}

TEST(Config, BadValuesRejected) {
  EXPECT_NE(error_of("[engine]\nn_nodes = four\n").find("engine.n_nodes"), std::string::npos);
  EXPECT_NE(error_of("[engine]\noracle = maybe\n").find("engine.oracle"), std::string::npos);
  EXPECT_NE(error_of("[engine]\nn_nodes = 0\n"), "");
  EXPECT_NE(error_of("[controller]\nstatic_alpha = 0.95\n"), "");
  EXPECT_NE(error_of("[controller]\nkind = magic\n"), "");
  EXPECT_NE(error_of("[sweep]\nalphas = 0.1,0.05\n"), "");
  EXPECT_NE(error_of("[engine]\nseeds = \n"), "");
}

TEST(Config, PresetAppliedBeforeOtherHardwareKeys) {
  // The explicit key wins whichever line comes first.
  const auto a = parse_config_string("[hardware]\npcie_bw = 1e9\npreset = h100-ndr\n");
  const auto b = parse_config_string("[hardware]\npreset = h100-ndr\npcie_bw = 1e9\n");
  EXPECT_EQ(a.engine.hw.pcie_bw, 1e9);
  EXPECT_EQ(serialize_config(a), serialize_config(b));
  const auto p = parse_config_string("[hardware]\npreset = h100-ndr\n");
  EXPECT_NE(p.engine.hw.pcie_bw, 1e9);
}

TEST(Config, ListsAndEnums) {
  const auto c = parse_config_string(
      "[engine]\nseeds = 1, 2,3\n[sweep]\nalphas = 0.2,0.4\n"
      "[workload]\nregime = burst\nscripted_bursts = 16:4,40:4\n"
      "[router]\nmode = kv_only\n[controller]\nkind = smart\n");
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{1, 2, 3}));
  EXPECT_EQ(c.sweep_alphas, (std::vector<double>{0.2, 0.4}));
  EXPECT_EQ(c.engine.regime.kind, RegimeKind::Burst);
  ASSERT_EQ(c.engine.regime.scripted_bursts.size(), 2u);
  EXPECT_EQ(c.engine.regime.scripted_bursts[1].start_epoch, 40);
  EXPECT_EQ(c.engine.regime.scripted_bursts[1].n_epochs, 4);
  EXPECT_EQ(c.engine.router.mode, RouterMode::KvOnly);
  EXPECT_EQ(c.engine.controller, ControllerKind::Smart);
  EXPECT_EQ(serialize_config(parse_config_string(serialize_config(c))), serialize_config(c));
}

TEST(Config, CommentsAndOverrides) {
  auto c = parse_config_string("# top\n[engine]\n; note\nn_nodes = 8\n");
  EXPECT_EQ(c.engine.n_nodes, 8);
  apply_override(c, " engine.n_nodes = 3 ");
  EXPECT_EQ(c.engine.n_nodes, 3);
  apply_override(c, "controller.kind=pid");
  EXPECT_EQ(c.engine.controller, ControllerKind::Pid);
  EXPECT_THROW(apply_override(c, "engine.n_nodes"), ConfigError);
}

TEST(Config, LoadFromFile) {
  const auto dir = std::filesystem::temp_directory_path() / "hbmpart_cfg_test";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "a.ini").string();
  std::ofstream(path) << "[workload]\nn_users = 77\n";
  EXPECT_EQ(load_config(path).engine.population.n_users, 77);
  EXPECT_THROW(load_config((dir / "missing.ini").string()), ConfigError);
  std::filesystem::remove_all(dir);
}

TEST(Config, ShippedConfigsParse) {
  for (const char* name : {"desk_steady.ini", "desk_trend.ini", "desk_burst.ini"}) {
    const auto path = std::string(HBMPART_SOURCE_DIR) + "/configs/" + name;
    const auto c = load_config(path);
    EXPECT_EQ(serialize_config(parse_config_string(serialize_config(c))), serialize_config(c))
        << name;
  }
}

// Random edits to numeric keys survive a serialize/parse cycle exactly.
TEST(Config, RandomRoundTrip) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 1);
  const std::vector<std::pair<std::string, std::function<std::string()>>> edits = {
      {"engine.tau_slo", [&] { return std::to_string(0.001 + u(rng) * 0.1); }},
      {"engine.hbm_bytes_per_node", [&] { return std::to_string(4e9 + u(rng) * 1e10); }},
      {"workload.zipf_s", [&] { return std::to_string(0.5 + u(rng)); }},
      {"workload.n_users", [&] { return std::to_string(10 + rng() % 1000); }},
      {"router.epsilon", [&] { return std::to_string(u(rng) * 0.1); }},
      {"controller.eta0", [&] { return std::to_string(u(rng) * 1e-2); }},
      {"train.lr", [&] { return std::to_string(u(rng) * 1e-3); }},
      {"engine.seeds", [&] { return std::to_string(rng() % 100) + "," + std::to_string(rng() % 100); }},
      {"controller.kind", [&] {
         const char* k[] = {"static", "pid", "ppo_only", "smart"};
         return std::string(k[rng() % 4]);
       }},
  };
  for (int trial = 0; trial < 200; ++trial) {
    ExperimentConfig c;
    for (int i = 0; i < 4; ++i) {
      const auto& [key, gen] = edits[rng() % edits.size()];
      apply_override(c, key + "=" + gen());
    }
    const std::string text = serialize_config(c);
    const ExperimentConfig back = parse_config_string(text);
    EXPECT_EQ(serialize_config(back), text);
    EXPECT_EQ(back.engine.tau_slo, c.engine.tau_slo);
    EXPECT_EQ(back.engine.hbm_bytes_per_node, c.engine.hbm_bytes_per_node);
  }
}

}  // namespace
}  // namespace hbmpart

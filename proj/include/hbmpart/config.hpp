#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "hbmpart/engine.hpp"

namespace hbmpart {

// Default config path when the CLI gets no --config.
inline constexpr const char* kConfigEnvVar = "HBMPART_CONFIG";

struct ExperimentConfig {
  EngineConfig engine;
  TrainConfig train;
  std::vector<std::uint64_t> seeds = {1};
  std::vector<double> sweep_alphas = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  std::string output_dir = "results";
  std::string checkpoint = "policy.ckpt";
  bool log_routes = false;

  void validate() const;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// INI-style text: "[section]" headers and "key = value" lines, '#' or ';'
// comments. Unknown sections or keys are errors naming "section.key".
// [hardware] preset is applied before the other hardware keys, whatever
// their order in the file.
ExperimentConfig parse_config(std::istream& is);
ExperimentConfig parse_config_string(const std::string& text);
ExperimentConfig load_config(const std::string& path);

// Writes every key; parse_config(serialize_config(c)) reproduces c.
std::string serialize_config(const ExperimentConfig& c);

// Applies one "section.key=value" override (CLI --set).
void apply_override(ExperimentConfig& c, const std::string& assignment);

// Every accepted "section.key", in serialization order.
std::vector<std::string> config_keys();

}  // namespace hbmpart

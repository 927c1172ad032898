#pragma once

#include "flowact/ddpg.hpp"
#include "flowact/env.hpp"
#include "flowact/flow.hpp"
#include "flowact/pb_diagram.hpp"
#include "flowact/samplers.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace flowact {

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct SamplerSettings {
  /// "rejection", "hmc" or "psdd"; empty picks hmc for continuous sets and psdd for integer ones.
  std::string method;
  std::size_t count = 100000;
  HmcConfig hmc;
  /// Conditioning states for state-dependent constraint sets; count is split across them.
  int states = 100;
};

struct FlowSettings {
  FlowConfig model;
  FlowTrainConfig train;
  /// "auto" picks dequantization_for(the environment's set); otherwise a
  /// Dequantization name.
  std::string dequantize = "auto";
  std::size_t eval_samples = 100000;
  /// Conditioning states drawn for accuracy on state-dependent sets.
  int eval_states = 20;
  /// Reference samples for recall.
  std::size_t recall_samples = 10000;
  double histogram_bin = 0.5;
  int histogram_bins = 10;
};

struct RlSettings {
  DdpgConfig ddpg;
  int episodes = 1000;
  /// "flow" or "ddpg-projection".
  std::string baseline = "flow";
};

struct PbSettings {
  BitEncoding encoding{5, 6};
  VariableOrder order = VariableOrder::interleaved;
  std::size_t node_budget = 10'000'000;
  /// Linear constraints over the encoded integers; conjoined.
  struct Linear {
    std::vector<double> coefficients;
    Comparison comparison = Comparison::less_equal;
    double threshold = 0.0;
  };
  std::vector<Linear> constraints;
  /// Constraints given directly over Boolean variables (bits = 1, variables = coefficient count).
  bool boolean = false;
};

/// Every section has defaults; unknown keys anywhere are rejected.
struct RunConfig {
  std::uint64_t seed = 0;
  EnvSpec env;
  SamplerSettings sampler;
  FlowSettings flow;
  RlSettings rl;
  PbSettings pb;
  /// Optional input files; empty means "<out>/dataset.csv" and "<out>/flow.json".
  std::string dataset;
  std::string checkpoint;
};

RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json run_config_to_json(const RunConfig& c);

/// Default PB section for an environment: the allocation equality plus one
/// capacity bound per station for bikeshare.
PbSettings pb_for_env(const EnvSpec& env);

/// Compiles and conjoins every constraint of the section.
Diagram compile_settings(const PbSettings& pb);

/// FNV-1a 64 of the canonical JSON dump, as 16 hex digits.
std::string config_hash(const nlohmann::json& j);

}  // namespace flowact

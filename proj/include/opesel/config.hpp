#pragma once

// Experiment configuration: a plain-text list of "key = value" lines with
// dotted keys ('#' starts a comment). describe() prints every key in a fixed
// order so the resolved configuration can be embedded in output headers and
// parsed back.

#include "opesel/dataset.hpp"
#include "opesel/nn.hpp"
#include "opesel/policy_learning.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace opesel {

enum class StateMode { discrete, continuous };

struct ExperimentConfig {
  std::string env = "sepsis";
  StateMode state_mode = StateMode::discrete;
  int m_train = 1000;
  int m_val = 1000;
  int max_len = 20;
  BehaviorSpec behavior = BehaviorSpec::uniform();
  double discount = 0.99;

  /// FQI iterations kept as tabular candidates.
  std::vector<int> tabular_iterations;
  HyperGrid grid;
  nn::NetConfig fqi_net;

  std::vector<std::string> methods{"wis", "am", "fqe", "wdr_fqe", "wdr_am", "fqi_value", "rms_tde"};
  double epsilon = 0.01;
  int fqe_horizon = 20;
  int am_horizon = 20;
  /// Networks for FQE, AM regressors and the behavior classifier.
  nn::NetConfig aux_net;

  std::string stage1 = "wis";
  std::string stage2 = "fqe";
  int alpha = 0;  // 0 means K / 4 (at least 1)

  std::vector<std::uint64_t> seeds{1};
  std::filesystem::path output_dir = "opesel_out";
  int workers = 1;

  std::vector<double> sweep_epsilon;
  std::vector<int> sweep_horizon;
  std::vector<int> sweep_m_val;
  std::vector<std::string> sweep_behavior;
  std::vector<int> cdf_alphas;
  std::vector<int> cdf_betas;

  ExperimentConfig();

  /// Applies one "key = value" assignment; throws std::invalid_argument for
  /// unknown keys or malformed values.
  void set(const std::string& key, const std::string& value);
  void validate() const;
  std::string describe() const;
  int resolved_alpha(std::size_t n_candidates) const;
};

/// Parses config text; errors carry the offending line number.
ExperimentConfig parse_config(const std::string& text, ExperimentConfig base = {});
ExperimentConfig load_config(const std::filesystem::path& path, ExperimentConfig base = {});

/// Each line of `text` prefixed with "# ".
std::string comment_block(const std::string& text);

}  // namespace opesel

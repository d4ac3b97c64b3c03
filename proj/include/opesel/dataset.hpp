#pragma once

#include "opesel/simulator.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace opesel {

struct Transition {
  int episode_id = 0;
  int t = 1;
  int state = 0;
  int action = 0;
  double reward = 0.0;
  int next_state = 0;
  bool done = false;

  bool operator==(const Transition&) const = default;
};

struct Provenance {
  std::uint64_t seed = 0;
  std::string behavior;
  std::string env;

  bool operator==(const Provenance&) const = default;
};

/// Ordered episodes of logged transitions.
///
/// Episodes are contiguous runs of transitions sharing an episode_id, with t
/// running 1..L and done set at most on the last step (a truncated episode
/// ends with done = false). The constructor enforces this.
class Dataset {
 public:
  Dataset() = default;
  Dataset(std::vector<Transition> transitions, Provenance provenance);

  std::span<const Transition> transitions() const { return transitions_; }
  std::size_t n_transitions() const { return transitions_.size(); }
  std::size_t n_episodes() const { return starts_.size(); }
  std::span<const Transition> episode(std::size_t j) const;
  std::vector<int> initial_states() const;
  int max_episode_length() const;
  const Provenance& provenance() const { return provenance_; }

  bool empty() const { return transitions_.empty(); }
  bool operator==(const Dataset& other) const {
    return transitions_ == other.transitions_ && provenance_ == other.provenance_;
  }

 private:
  std::vector<Transition> transitions_;
  std::vector<std::size_t> starts_;
  Provenance provenance_;
};

/// How logged actions were chosen.
///
/// Labels: "uniform", "egreedy-<eps>", and "mixture-<label>:<count>+<label>:<count>..."
/// where mixture components are generated as consecutive episode blocks.
struct BehaviorSpec {
  enum class Kind { uniform_random, epsilon_greedy, mixture };

  Kind kind = Kind::uniform_random;
  double epsilon = 0.1;
  /// Discount used to compute the optimal policy for epsilon_greedy.
  double discount = 0.99;
  std::vector<std::pair<BehaviorSpec, int>> components;

  static BehaviorSpec uniform();
  static BehaviorSpec epsilon_greedy(double epsilon = 0.1);
  static BehaviorSpec mixture(std::vector<std::pair<BehaviorSpec, int>> components);
  static BehaviorSpec parse(const std::string& label);

  std::string label() const;
};

/// Generates m episodes; episode j draws from Rng(derive_seed(seed, j)).
/// Episodes are cut at max_len steps without a terminal reward.
Dataset generate(const Simulator& env, const BehaviorSpec& behavior, int m, int max_len,
                 std::uint64_t seed);

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Text format:
///   # opesel-dataset v1; env=<label>; behavior=<label>; seed=<int>; m=<int>
///   episode_id,t,state,action,reward,next_state,done
/// Rewards are written with 17 significant digits so save/load is exact.
void write_dataset(std::ostream& out, const Dataset& dataset);
Dataset read_dataset(std::istream& in);
void save(const Dataset& dataset, const std::filesystem::path& path);
Dataset load(const std::filesystem::path& path);

/// Episode-level split; the first part receives round(fraction * m) episodes
/// of a seeded shuffle, kept in their original order.
std::pair<Dataset, Dataset> split(const Dataset& dataset, double fraction, std::uint64_t seed);

/// Shortest decimal text that parses back to exactly x.
std::string format_number(double x);

/// Writes through a sibling temporary file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

}  // namespace opesel

#pragma once

// End-to-end experiment runs: data generation, candidate training, ground
// truths, OPE scoring and selection reports for each seed.
//
// Sub-seeds of a master seed s: training data derive_seed(s, 1), validation
// data derive_seed(s, 2), candidate training derive_seed(s, 3), auxiliary
// models derive_seed(s, 4).

#include "opesel/config.hpp"
#include "opesel/dataset.hpp"
#include "opesel/policy_learning.hpp"
#include "opesel/reports.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace opesel {

namespace seed_stream {
inline constexpr std::uint64_t train_data = 1;
inline constexpr std::uint64_t val_data = 2;
inline constexpr std::uint64_t training = 3;
inline constexpr std::uint64_t auxiliary = 4;
}  // namespace seed_stream

/// Behavior for m episodes; mixture counts are rescaled proportionally
/// (largest remainder) so they sum to m.
BehaviorSpec behavior_for(const BehaviorSpec& behavior, int m);

Dataset generate_data(const ExperimentConfig& config, int m, std::uint64_t seed,
                      const BehaviorSpec& behavior);

CandidateSet train_candidates(const Dataset& train, const ExperimentConfig& config, std::uint64_t seed);

/// Exact value of each candidate's greedy policy in the true model.
Truths ground_truths(const CandidateSet& candidates, const ExperimentConfig& config);

/// Every configured OPE method for every candidate, from the validation data.
/// Candidates are spread over config.workers threads.
ScoreTable score_candidates(const CandidateSet& candidates, const Dataset& val,
                            const ExperimentConfig& config, std::uint64_t seed);

struct SeedRun {
  Dataset train;
  Dataset val;
  CandidateSet candidates;
  Truths truths;
  ScoreTable scores;
  SelectionReport report;
};

SeedRun run_seed(const ExperimentConfig& config, std::uint64_t seed);

struct PipelineResult {
  std::vector<SelectionReport> reports;
  std::vector<std::string> failures;  // "seed=<s>: <message>"
};

/// Runs every seed and writes <out>/seed_<s>/{scores.csv,truths.csv,report.csv,
/// summary.json} and <out>/aggregate.json. A failing seed is logged and skipped.
PipelineResult run_pipeline(const ExperimentConfig& config);

/// Writes one seed's report files into `dir`.
void write_seed_reports(const std::filesystem::path& dir, const ExperimentConfig& config,
                        const SelectionReport& report, const ScoreTable& scores, const Truths& truths);

/// Sensitivity sweeps over epsilon, FQE horizon, validation size and behavior,
/// reusing each seed's training data and candidates whenever only OPE settings
/// change, plus the empirical CDF table of the stage-1 ranking. Writes
/// <out>/analyze/sweeps.csv and <out>/analyze/cdf.csv.
void run_analyze(const ExperimentConfig& config);

}  // namespace opesel

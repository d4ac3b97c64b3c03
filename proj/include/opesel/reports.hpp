#pragma once

// Score tables, ground-truth files and selection reports, with their CSV and
// JSON encodings.

#include "opesel/config.hpp"
#include "opesel/ope.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace opesel {

/// OPE estimates for every (method, policy) pair.
struct ScoreTable {
  std::vector<std::string> policy_ids;
  std::vector<std::string> methods;
  std::vector<std::vector<OpeEstimate>> estimates;  // [method][policy]

  const std::vector<OpeEstimate>& of(const std::string& method) const;
  /// Higher is better: the raw value, -inf when undefined, and the negated
  /// error for rms_tde.
  std::vector<double> scores(const std::string& method) const;
};

/// policy_id,method,hyperparams,value,defined,diagnostics
/// Values use 17 significant digits; diagnostics are "key=value" joined by ';'.
void write_scores(std::ostream& out, const ScoreTable& table, const std::string& header = {});
ScoreTable read_scores(std::istream& in);

struct Truths {
  std::vector<std::string> policy_ids;
  std::vector<double> values;
};

/// policy_id,truth
void write_truths(std::ostream& out, const Truths& truths, const std::string& header = {});
Truths read_truths(std::istream& in);

struct MethodSummary {
  std::string method;
  std::optional<double> spearman;
  double regret_at_1 = 0.0;
  double regret_at_5 = 0.0;
  double regret_at_10 = 0.0;
  std::string chosen;
};

struct SelectionReport {
  std::uint64_t seed = 0;
  std::vector<std::string> policy_ids;
  std::vector<double> truths;
  ScoreTable scores;
  std::vector<MethodSummary> methods;  // each OPE method, then combiners
  std::string stage1;
  std::string stage2;
  int alpha = 0;
  std::vector<std::string> subset;
  std::size_t stage2_calls = 0;
};

/// Spearman rho and regret@{1,5,10} (n capped at K) of one score vector.
MethodSummary summarize_method(const std::string& name, const std::vector<double>& scores,
                               const std::vector<double>& truths, const std::vector<std::string>& ids);

/// Ranks every method, the two-stage rule and the average-score / average-rank
/// combiners of the two stage methods against the truths.
SelectionReport make_report(const ScoreTable& scores, const Truths& truths,
                            const ExperimentConfig& config, std::uint64_t seed);

/// policy_id,truth,<method>...,rank_truth,rank_<method>...
/// Ranks are descending (1 = best) with average ranks for ties.
void write_report_csv(std::ostream& out, const SelectionReport& report, const std::string& header = {});
std::string summary_json(const SelectionReport& report, const ExperimentConfig& config);

/// Mean, standard deviation and quantiles of per-seed metrics.
std::string aggregate_json(const std::vector<SelectionReport>& reports, const ExperimentConfig& config,
                           const std::vector<std::string>& failures);

}  // namespace opesel

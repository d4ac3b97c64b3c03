#pragma once

// Ranking metrics and selection rules over scored candidate policies.
// Candidates are identified by their position; score ties always resolve to
// the lower position.

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <vector>

namespace opesel {

/// Ranks starting at 1 (lowest value gets rank 1); ties share their average rank.
std::vector<double> average_ranks(std::span<const double> values);

/// Spearman rank correlation with average ranks for ties. nullopt when either
/// side has zero rank variance. Requires equal lengths >= 2.
std::optional<double> spearman_rho(std::span<const double> scores, std::span<const double> truths);

/// Positions sorted by descending score, ties by ascending position.
std::vector<std::size_t> order_by_score(std::span<const double> scores);

/// max truth - max truth among the n best-scored positions.
double regret_at_n(std::span<const double> scores, std::span<const double> truths, std::size_t n);

struct TwoStageResult {
  std::size_t chosen = 0;
  std::vector<std::size_t> subset;      // stage-1 top alpha, in stage-1 order
  std::vector<double> stage2_scores;    // aligned with subset
  std::size_t stage2_calls = 0;
};

/// Keeps the alpha best stage-1 positions, scores only those with stage2, and
/// returns the stage-2 argmax (ties to the lower position).
TwoStageResult two_stage_select(std::span<const double> stage1_scores,
                                const std::function<double(std::size_t)>& stage2, std::size_t alpha);

/// Element-wise mean of the score vectors.
std::vector<double> average_score(std::span<const std::vector<double>> score_vectors);
/// Mean of per-method average ranks (higher is better, like a score).
std::vector<double> average_rank(std::span<const std::vector<double>> score_vectors);

/// Probability that the first A of C randomly ordered positions contain at
/// least one of the B largest values:
///   1 - (C-A)! (C-B)! / (C! (C-A-B)!), and 1 when A + B > C.
double random_prune_probability(int c, int a, int b);

/// The same event counted over all C! orderings. C <= 9.
double brute_force_prune_probability(int c, int a, int b);

/// For each run (one score vector and one truth vector), and each alpha in
/// alphas and beta in betas: whether the top-alpha by score contains one of the
/// top-beta by truth. Entry [i][k] is the fraction of runs where it holds for
/// (alphas[i], betas[k]).
std::vector<std::vector<double>> empirical_cdf(std::span<const std::vector<double>> scores,
                                               std::span<const std::vector<double>> truths,
                                               std::span<const int> alphas, std::span<const int> betas);

}  // namespace opesel

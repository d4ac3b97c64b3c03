#include "opesel/selection.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace opesel {

std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

std::optional<double> spearman_rho(std::span<const double> scores, std::span<const double> truths) {
  if (scores.size() != truths.size()) throw std::invalid_argument("spearman_rho: length mismatch");
  if (scores.size() < 2) throw std::invalid_argument("spearman_rho: need at least two values");
  const auto x = average_ranks(scores);
  const auto y = average_ranks(truths);
  const double n = static_cast<double>(x.size());
  const double mean = (n + 1.0) / 2.0;
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mean) * (y[i] - mean);
    sxx += (x[i] - mean) * (x[i] - mean);
    syy += (y[i] - mean) * (y[i] - mean);
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::vector<std::size_t> order_by_score(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

double regret_at_n(std::span<const double> scores, std::span<const double> truths, std::size_t n) {
  if (scores.size() != truths.size()) throw std::invalid_argument("regret_at_n: length mismatch");
  if (n < 1 || n > scores.size()) {
    throw std::invalid_argument("regret_at_n: n must lie in [1, " + std::to_string(scores.size()) + "]");
  }
  const auto order = order_by_score(scores);
  const double best = *std::max_element(truths.begin(), truths.end());
  double chosen = truths[order[0]];
  for (std::size_t i = 1; i < n; ++i) chosen = std::max(chosen, truths[order[i]]);
  return best - chosen;
}

TwoStageResult two_stage_select(std::span<const double> stage1_scores,
                                const std::function<double(std::size_t)>& stage2, std::size_t alpha) {
  if (alpha < 1 || alpha > stage1_scores.size()) {
    throw std::invalid_argument("two_stage_select: alpha must lie in [1, " +
                                std::to_string(stage1_scores.size()) + "]");
  }
  const auto order = order_by_score(stage1_scores);
  TwoStageResult out;
  out.subset.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(alpha));
  for (std::size_t k : out.subset) {
    out.stage2_scores.push_back(stage2(k));
    ++out.stage2_calls;
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < out.subset.size(); ++i) {
    const double s = out.stage2_scores[i];
    const double b = out.stage2_scores[best];
    if (s > b || (s == b && out.subset[i] < out.subset[best])) best = i;
  }
  out.chosen = out.subset[best];
  return out;
}

namespace {

void check_vectors(std::span<const std::vector<double>> vectors, const char* who) {
  if (vectors.size() < 2) throw std::invalid_argument(std::string(who) + ": need at least two score vectors");
  for (const auto& v : vectors) {
    if (v.size() != vectors[0].size()) throw std::invalid_argument(std::string(who) + ": length mismatch");
  }
}

}  // namespace

std::vector<double> average_score(std::span<const std::vector<double>> score_vectors) {
  check_vectors(score_vectors, "average_score");
  std::vector<double> out(score_vectors[0].size(), 0.0);
  for (const auto& v : score_vectors) {
    for (std::size_t i = 0; i < v.size(); ++i) out[i] += v[i];
  }
  for (double& x : out) x /= static_cast<double>(score_vectors.size());
  return out;
}

std::vector<double> average_rank(std::span<const std::vector<double>> score_vectors) {
  check_vectors(score_vectors, "average_rank");
  std::vector<double> out(score_vectors[0].size(), 0.0);
  for (const auto& v : score_vectors) {
    const auto ranks = average_ranks(v);
    for (std::size_t i = 0; i < v.size(); ++i) out[i] += ranks[i];
  }
  for (double& x : out) x /= static_cast<double>(score_vectors.size());
  return out;
}

namespace {

void check_prune_domain(int c, int a, int b) {
  if (c < 1 || a < 1 || b < 1 || a > c || b > c) {
    throw std::invalid_argument("prune probability needs 1 <= A, B <= C (got C=" + std::to_string(c) +
                                ", A=" + std::to_string(a) + ", B=" + std::to_string(b) + ")");
  }
}

}  // namespace

double random_prune_probability(int c, int a, int b) {
  check_prune_domain(c, a, b);
  if (a + b > c) return 1.0;
  const double log_miss = std::lgamma(c - a + 1.0) + std::lgamma(c - b + 1.0) - std::lgamma(c + 1.0) -
                          std::lgamma(c - a - b + 1.0);
  return -std::expm1(log_miss);
}

double brute_force_prune_probability(int c, int a, int b) {
  check_prune_domain(c, a, b);
  if (c > 9) throw std::invalid_argument("brute_force_prune_probability: C must be <= 9");
  // perm[i] is the value rank at position i; ranks < b are the b largest values
  std::vector<int> perm(static_cast<std::size_t>(c));
  std::iota(perm.begin(), perm.end(), 0);
  long hits = 0;
  long total = 0;
  do {
    ++total;
    if (std::any_of(perm.begin(), perm.begin() + a, [b](int r) { return r < b; })) ++hits;
  } while (std::next_permutation(perm.begin(), perm.end()));
  return static_cast<double>(hits) / static_cast<double>(total);
}

std::vector<std::vector<double>> empirical_cdf(std::span<const std::vector<double>> scores,
                                               std::span<const std::vector<double>> truths,
                                               std::span<const int> alphas, std::span<const int> betas) {
  if (scores.size() != truths.size() || scores.empty()) {
    throw std::invalid_argument("empirical_cdf: need one truth vector per score vector");
  }
  std::vector<std::vector<double>> table(alphas.size(), std::vector<double>(betas.size(), 0.0));
  for (std::size_t run = 0; run < scores.size(); ++run) {
    const auto& s = scores[run];
    const auto& t = truths[run];
    if (s.size() != t.size()) throw std::invalid_argument("empirical_cdf: length mismatch");
    const auto by_score = order_by_score(s);
    std::vector<double> sorted_truth(t);
    std::sort(sorted_truth.begin(), sorted_truth.end(), std::greater<>());
    for (std::size_t i = 0; i < alphas.size(); ++i) {
      const auto alpha = static_cast<std::size_t>(alphas[i]);
      if (alpha < 1 || alpha > s.size()) throw std::invalid_argument("empirical_cdf: alpha out of range");
      double best_kept = t[by_score[0]];
      for (std::size_t k = 1; k < alpha; ++k) best_kept = std::max(best_kept, t[by_score[k]]);
      for (std::size_t k = 0; k < betas.size(); ++k) {
        const auto beta = static_cast<std::size_t>(betas[k]);
        if (beta < 1 || beta > s.size()) throw std::invalid_argument("empirical_cdf: beta out of range");
        // a kept policy counts when its truth reaches the beta-th largest truth
        if (best_kept >= sorted_truth[beta - 1]) table[i][k] += 1.0;
      }
    }
  }
  for (auto& row : table) {
    for (double& x : row) x /= static_cast<double>(scores.size());
  }
  return table;
}

}  // namespace opesel

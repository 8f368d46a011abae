#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "transpref/common.hpp"

namespace transpref::syseval {

struct SystemScores {
  std::string system_id;
  std::vector<std::pair<std::string, double>> per_segment;  // (source_id, score)
  double mean = 0.0;

  static SystemScores from_segments(std::string system_id,
                                    std::vector<std::pair<std::string, double>> per_segment);
};

struct PairwiseAccuracy {
  std::size_t agree = 0;
  std::size_t total = 0;  // n choose 2
  double fraction() const { return total ? static_cast<double>(agree) / total : 0.0; }
};

// Fraction of unordered system pairs ordered the same way by the metric means
// and the human means. Throws ValidationError on mismatched system sets, fewer
// than two systems, or an exact tie in either ranking (naming the pair).
PairwiseAccuracy pairwise_accuracy(const std::map<std::string, double>& metric_means,
                                   const std::map<std::string, double>& human_means,
                                   Orientation orientation = Orientation::higher_better);

constexpr std::size_t kDefaultExactLimit = 20;

// Two-sided Wilcoxon rank-sum p-value with mid-ranks for ties. Exact (full
// null distribution of the rank sum) when |a| + |b| <= exact_limit, otherwise
// a normal approximation with tie-corrected variance and 0.5 continuity
// correction.
double wilcoxon_rank_sum(std::span<const double> a, std::span<const double> b,
                         std::size_t exact_limit = kDefaultExactLimit);

struct SystemRank {
  std::string system_id;
  double mean = 0.0;
  std::size_t losses = 0;  // systems that significantly beat this one
  std::size_t wins = 0;    // systems this one significantly beats
  std::size_t rank_lo = 0;  // losses + 1
  std::size_t rank_hi = 0;  // n - wins
};

struct ClusterReport {
  std::vector<SystemRank> systems;  // sorted by mean, best first
  std::map<std::string, std::map<std::string, double>> p_values;  // symmetric
};

json to_json(const ClusterReport& r);

// A beats B iff p(A, B) < alpha and mean(A) is better than mean(B). Throws
// ValidationError when systems were scored on different segment multisets.
ClusterReport cluster_systems(const std::vector<SystemScores>& scores, double alpha = 0.05,
                              Orientation orientation = Orientation::higher_better,
                              std::size_t exact_limit = kDefaultExactLimit);

// Percentage of pairs with chosen log-likelihood strictly above rejected.
double best_over_worst_accuracy(std::span<const std::pair<double, double>> policy_loglikes);

}  // namespace transpref::syseval

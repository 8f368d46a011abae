#pragma once

#include <span>
#include <string>
#include <vector>

#include "transpref/common.hpp"

namespace transpref::metaeval {

// Thrown when a correlation is undefined (constant input, all pairs tied).
class UndefinedStatistic : public Error {
 public:
  explicit UndefinedStatistic(const std::string& msg) : Error("undefined_statistic", msg) {}
};

struct HumanRating {
  std::string annotator_id;
  std::string source_id;
  std::string system_id;
  double score = 0.0;  // [0, 100]
  std::string timestamp;
  std::string language_pair;  // optional "lp" field; empty when absent

  friend bool operator==(const HumanRating&, const HumanRating&) = default;
};

json to_json(const HumanRating& r);

struct JudgmentEntry {
  std::string system_id;
  double human_score = 0.0;
  double metric_score = 0.0;
};

struct JudgmentGroup {
  std::string source_id;
  std::vector<JudgmentEntry> entries;
};

double pearson(std::span<const double> xs, std::span<const double> ys);
double spearman(std::span<const double> xs, std::span<const double> ys);
// Tie-aware Kendall tau-b, O(n log n).
double kendall_tau_b(std::span<const double> xs, std::span<const double> ys);

// 1-based ranks; tied values share the mean of their positions.
std::vector<double> mid_ranks(std::span<const double> xs);

enum class Statistic { pearson, spearman, tau_b };
enum class GroupingMode { per_group_mean, pooled };

Statistic parse_statistic(std::string_view s);
GroupingMode parse_grouping_mode(std::string_view s);

struct GroupedResult {
  double value = 0.0;
  std::size_t groups_used = 0;
  std::size_t groups_skipped = 0;  // statistic undefined for the group
};

// Throws UndefinedStatistic when no group yields a defined statistic.
GroupedResult grouped_correlation(const std::vector<JudgmentGroup>& groups, Statistic stat,
                                  GroupingMode mode = GroupingMode::per_group_mean);

struct PrecisionResult {
  std::size_t hits = 0;
  std::size_t groups = 0;
  double value() const { return groups ? static_cast<double>(hits) / groups : 0.0; }
};

// A group is a hit when any entry tied for the best metric score is among the
// entries with the maximal human score.
PrecisionResult precision_at_1_counts(const std::vector<JudgmentGroup>& groups,
                                      Orientation metric_orientation = Orientation::higher_better);
double precision_at_1(const std::vector<JudgmentGroup>& groups,
                      Orientation metric_orientation = Orientation::higher_better);

// ---- file formats -------------------------------------------------------

struct RatingsLoad {
  std::vector<HumanRating> ratings;
  std::vector<json> errors;  // offending record + "error"
};

// {annotator_id, source_id, system_id, score, timestamp, lp?}
RatingsLoad load_ratings(const std::filesystem::path& path);
RatingsLoad parse_ratings(const std::vector<json>& rows, const std::vector<LineError>& parse_errors = {});

struct MetricScore {
  std::string source_id;
  std::string system_id;
  std::string metric_id;
  double score = 0.0;
  std::string language_pair;  // optional "lp"; empty matches every pair
};

json to_json(const MetricScore& s);

struct ScoresLoad {
  std::vector<MetricScore> scores;
  std::vector<json> errors;
};

// {source_id, system_id, metric_id, score, lp?}
ScoresLoad load_scores(const std::filesystem::path& path);
ScoresLoad parse_scores(const std::vector<json>& rows, const std::vector<LineError>& parse_errors = {});

// Joins ratings (averaged over annotators) with one metric's scores. Only
// (source, system) pairs present on both sides are kept; groups with fewer
// than two entries are dropped. Groups come out sorted by source_id, entries
// by system_id. An empty `language_pair` selects every rating.
std::vector<JudgmentGroup> build_groups(const std::vector<HumanRating>& ratings,
                                        const std::vector<MetricScore>& scores,
                                        const std::string& metric_id,
                                        const std::string& language_pair = {});

struct MetricOrientation {
  std::string metric_id;
  Orientation orientation = Orientation::higher_better;
};

// Per language pair and metric: P/S/Tau and Precision@1. Lower-is-better
// metrics are negated before correlating so all statistics read "higher is
// more aligned with humans".
json meta_evaluate(const std::vector<HumanRating>& ratings, const std::vector<MetricScore>& scores,
                   const std::vector<MetricOrientation>& metrics,
                   GroupingMode mode = GroupingMode::per_group_mean);

}  // namespace transpref::metaeval

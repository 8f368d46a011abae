#pragma once

#include <map>
#include <string>
#include <variant>
#include <vector>

#include "transpref/corpus.hpp"
#include "transpref/metrics.hpp"

namespace transpref::prefs {

struct PreferenceTriple {
  corpus::SourceSegment source;
  metrics::ScoredHypothesis chosen;
  metrics::ScoredHypothesis rejected;
  std::string metric_id;
  double chosen_score = 0.0;
  double rejected_score = 0.0;
  double margin = 0.0;  // >= 0, in the higher-is-better direction
};

struct Skip {
  std::string source_id;
  std::string reason;
};

using TripleOutcome = std::variant<PreferenceTriple, Skip>;

// Picks the best and worst candidates under `metric` (ties go to the
// lexicographically smallest system_id). Skips when fewer than two candidates,
// when all scores are equal, or when the margin is below `min_margin`. Throws
// ValidationError naming the hypothesis when a candidate lacks the score.
TripleOutcome build_triple(const corpus::SourceSegment& source,
                           const std::vector<metrics::ScoredHypothesis>& candidates,
                           const metrics::MetricSpec& metric, double min_margin = 0.0);

struct SourceWithCandidates {
  corpus::SourceSegment source;
  std::vector<metrics::ScoredHypothesis> candidates;
};

struct SourceError {
  std::string source_id;
  std::string message;
};

struct DatasetReport {
  std::vector<Skip> skipped;
  std::vector<SourceError> errors;
  std::map<std::string, std::size_t> chosen_counts;    // system_id -> triples
  std::map<std::string, std::size_t> rejected_counts;  // system_id -> triples
};

json to_json(const DatasetReport& r);

struct Dataset {
  std::vector<PreferenceTriple> triples;
  DatasetReport report;
};

Dataset build_dataset(const std::vector<SourceWithCandidates>& inputs,
                      const metrics::MetricSpec& metric, double min_margin = 0.0);

// {source_id, src_lang, tgt_lang, src, chosen:{system,text,score},
//  rejected:{system,text,score}, metric, margin}
json to_json(const PreferenceTriple& t);
PreferenceTriple triple_from_json(const json& j);

void write_dataset(const std::filesystem::path& path, const std::vector<PreferenceTriple>& triples);
std::vector<PreferenceTriple> read_dataset(const std::filesystem::path& path);

}  // namespace transpref::prefs

#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "transpref/systems.hpp"
#include "transpref/transport.hpp"

namespace transpref::metrics {

enum class MetricKind { native_chrf, qe_client, ensemble };

MetricKind parse_metric_kind(std::string_view s);

struct MetricSpec {
  std::string metric_id;
  Orientation orientation = Orientation::higher_better;
  std::optional<std::pair<double, double>> range;  // nullopt = unbounded
  MetricKind kind = MetricKind::native_chrf;
  std::vector<std::string> members;  // ensemble only
  bool needs_reference = false;

  // qe_client transport settings.
  std::string endpoint;
  std::size_t fanout = 1;
  transport::RetryPolicy retry;

  static MetricSpec chrf(std::string id = "chrf");
  void validate() const;
};

MetricSpec metric_spec_from_json(const json& j);

// Validates every spec plus the cross-spec rules: unique ids, ensemble members
// resolve, are not themselves ensembles, and share the ensemble's orientation.
void validate_metric_set(const std::vector<MetricSpec>& specs);

struct ScoredHypothesis {
  systems::Hypothesis hypothesis;
  std::map<std::string, double> scores;
};

// chrF: character n-gram F-beta averaged over orders 1..max_char_n, scaled to
// [0, 100]. Whitespace is removed before extraction. Orders with no n-grams on
// either side are left out of the average; an order with n-grams on only one
// side scores 0.
double chrf(std::string_view hypothesis, std::string_view reference, int max_char_n = 6,
            double beta = 2.0);

struct QePair {
  std::string id;
  std::string src;
  std::string mt;
  std::optional<std::string> ref;
};

struct QeResult {
  std::string id;
  std::optional<double> score;
  std::string error;  // set when score is empty
};

// Scores pairs through the scorer at `spec.endpoint`
// (POST {"pairs":[{id,src,mt[,ref]}]} -> {"scores":[{id,score}]}).
// Transport failures become per-item errors after retries; a malformed
// response throws ProtocolError. Values are returned unmodified.
std::vector<QeResult> score_qe_batch(const MetricSpec& spec, const std::vector<QePair>& pairs);

double score_qe(const MetricSpec& spec, const std::string& src, const std::string& hyp);

// Arithmetic mean of the member scores. Throws ValidationError naming the
// first missing member.
double ensemble_mean(const MetricSpec& spec, const std::map<std::string, double>& member_scores);

// Adds the score of every ensemble in `specs` whose members are all present.
void apply_ensembles(const std::vector<MetricSpec>& specs, ScoredHypothesis& sh);

}  // namespace transpref::metrics

#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "transpref/align.hpp"
#include "transpref/common.hpp"
#include "transpref/corpus.hpp"
#include "transpref/metaeval.hpp"
#include "transpref/metrics.hpp"
#include "transpref/systems.hpp"

namespace transpref::pipeline {

struct CorpusInput {
  std::filesystem::path path;
  std::string language;
};

// Declarative run file. Relative paths resolve against the config's directory.
//
//   seed                      mandatory for align-train without a base policy
//   corpora: [{path, lang}]
//   filter: {thresholds, default_threshold, keep_missing_ppl, min_chars, max_chars}
//   targets: {src_lang: [tgt_lang, ...]}
//   references: path          {source_id, tgt_lang, text}
//   systems: [SystemSpec]     fixture endpoints are paths
//   metrics: [MetricSpec + precomputed?]
//   prefs: {metric, min_margin}
//   trainer: {method, beta, lambda, lr, epochs, init_scale, fixture?}
//   metaeval: {ratings, scores?, mode}
//   syseval: {metric, alpha, ratings?}
struct RunConfig {
  std::filesystem::path base_dir;
  std::optional<std::uint64_t> seed;
  std::vector<CorpusInput> corpora;
  corpus::CorpusFilterConfig filter;
  std::map<std::string, std::vector<std::string>> targets;
  std::optional<std::filesystem::path> references;
  std::vector<systems::SystemSpec> systems;
  std::vector<metrics::MetricSpec> metrics;
  // Metrics marked "precomputed": never called by `score`; their values come
  // from metaeval.scores.
  std::set<std::string> precomputed;
  std::string prefs_metric;
  double min_margin = 0.0;
  align::TrainerConfig trainer;
  std::optional<std::filesystem::path> trainer_fixture;
  std::optional<std::filesystem::path> ratings;
  std::optional<std::filesystem::path> extra_scores;
  metaeval::GroupingMode grouping = metaeval::GroupingMode::per_group_mean;
  std::string syseval_metric;
  double alpha = 0.05;
  // Canonical JSON of each section, used for step cache keys.
  std::map<std::string, std::string> fingerprints;

  const metrics::MetricSpec& metric(const std::string& id) const;
};

// Environment variable that overrides the endpoint of scorer `metric_id`:
// TRANSPREF_SCORER_<ID>, upper-cased with non-alphanumerics mapped to '_'.
std::string scorer_env_var(const std::string& metric_id);

// Throws ConfigError naming the first unresolved reference.
RunConfig run_config_from_json(const json& j, const std::filesystem::path& base_dir,
                               std::optional<std::uint64_t> seed_override = std::nullopt);
RunConfig load_run_config(const std::filesystem::path& path,
                          std::optional<std::uint64_t> seed_override = std::nullopt);

struct Options {
  std::filesystem::path out;
  bool force = false;  // ignore the step cache
  std::ostream* log = nullptr;
};

struct StepResult {
  std::string step;
  bool cached = false;
  std::size_t records = 0;
  std::size_t record_errors = 0;
};

// Holds `<out>/.lock` for its lifetime. Throws IoError if another run owns it.
class OutDirLock {
 public:
  explicit OutDirLock(const std::filesystem::path& out);
  ~OutDirLock();
  OutDirLock(const OutDirLock&) = delete;
  OutDirLock& operator=(const OutDirLock&) = delete;

 private:
  std::filesystem::path path_;
};

// Each step reads its inputs from the config or from earlier outputs in
// `opts.out` and is skipped when the content hash of its inputs matches the
// previous run and all of its outputs are present.
//
//   ingest       -> segments.jsonl, segment_rejects.jsonl
//   translate    -> hypotheses.jsonl, hypothesis_errors.jsonl
//   score        -> scores.jsonl, score_errors.jsonl
//   build-prefs  -> prefs.jsonl, prefs_report.json
//   align-train  -> trace.jsonl, policy.json, train_summary.json
//   metaeval     -> metaeval.json
//   syseval      -> syseval.json
StepResult run_ingest(const RunConfig& cfg, const Options& opts);
StepResult run_translate(const RunConfig& cfg, const Options& opts);
StepResult run_score(const RunConfig& cfg, const Options& opts);
StepResult run_build_prefs(const RunConfig& cfg, const Options& opts);
StepResult run_align_train(const RunConfig& cfg, const Options& opts);
StepResult run_metaeval(const RunConfig& cfg, const Options& opts);
StepResult run_syseval(const RunConfig& cfg, const Options& opts);

// ingest, translate, score, build-prefs, align-train, then metaeval and
// syseval when configured.
std::vector<StepResult> run_all(const RunConfig& cfg, const Options& opts);

// Correlation table (metrics x language pairs) from metaeval.json and a
// system-level table with pairwise accuracy from syseval.json; sections whose
// input file is absent are omitted.
std::string render_report(const std::filesystem::path& out);
std::string render_metaeval_table(const json& metaeval_report);
std::string render_syseval_table(const json& syseval_report);

// Per language pair and metric: system means, clusters and, when human
// ratings are given, DA means and pairwise accuracy.
json system_level_report(const std::vector<metaeval::MetricScore>& scores,
                         const std::vector<metrics::MetricSpec>& specs,
                         const std::vector<metaeval::HumanRating>& ratings,
                         const std::string& primary_metric, double alpha);

}  // namespace transpref::pipeline

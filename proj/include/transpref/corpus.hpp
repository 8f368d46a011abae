#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "transpref/common.hpp"

namespace transpref::corpus {

struct SourceSegment {
  std::string id;
  std::string text;
  std::string language;
  std::string source_collection;
  std::optional<std::string> published_after;  // ISO-8601 date
  std::optional<double> perplexity;

  friend bool operator==(const SourceSegment&, const SourceSegment&) = default;
};

json to_json(const SourceSegment& s);

struct IngestResult {
  std::vector<SourceSegment> segments;
  // Offending records in the input format plus an `error` field.
  std::vector<json> rejects;
};

// Reads line-delimited {id?, text, lang, ppl?, date?, collection?} records.
// `language` fills records that carry no `lang`; a record whose `lang`
// disagrees with a non-empty `language` is rejected. Missing ids become
// "<language>-<n>" for the n-th well-formed JSON record.
IngestResult ingest_segments(const std::filesystem::path& path, const std::string& language);
IngestResult ingest_segments_from_rows(const std::vector<json>& rows,
                                       const std::vector<LineError>& parse_errors,
                                       const std::string& language);

void write_segments(const std::filesystem::path& path, const std::vector<SourceSegment>& segs);

struct CorpusFilterConfig {
  std::map<std::string, double> ppl_threshold;  // language -> max perplexity
  std::optional<double> default_threshold;
  bool keep_missing_perplexity = false;
  std::size_t min_chars = 1;
  std::size_t max_chars = 4096;

  // Throws ConfigError on non-positive thresholds or min_chars >= max_chars.
  void validate() const;
};

CorpusFilterConfig filter_config_from_json(const json& j);

// Character counts are in code points of the untrimmed text.
std::vector<SourceSegment> filter_segments(const std::vector<SourceSegment>& segments,
                                           const CorpusFilterConfig& cfg);

}  // namespace transpref::corpus

#include "transpref/corpus.hpp"

#include <cmath>
#include <set>

namespace transpref::corpus {

json to_json(const SourceSegment& s) {
  json j = {{"id", s.id}, {"text", s.text}, {"lang", s.language}};
  if (!s.source_collection.empty()) j["collection"] = s.source_collection;
  if (s.perplexity) j["ppl"] = *s.perplexity;
  if (s.published_after) j["date"] = *s.published_after;
  return j;
}

namespace {

json reject(json rec, const std::string& why) {
  rec["error"] = why;
  return rec;
}

// Parses one record; returns an error string on failure.
std::optional<std::string> parse_record(const json& r, const std::string& language,
                                        std::size_t line_no, SourceSegment& out) {
  if (!r.contains("text") || !r["text"].is_string()) return "missing string field 'text'";
  out.text = r["text"].get<std::string>();
  if (trim(out.text).empty()) return "text is empty after trimming";

  if (r.contains("lang")) {
    if (!r["lang"].is_string()) return "'lang' must be a string";
    out.language = r["lang"].get<std::string>();
    if (!language.empty() && out.language != language)
      return "language '" + out.language + "' does not match expected '" + language + "'";
  } else {
    if (language.empty()) return "missing 'lang' and no language given";
    out.language = language;
  }

  if (r.contains("id")) {
    if (r["id"].is_string())
      out.id = r["id"].get<std::string>();
    else if (r["id"].is_number_integer())
      out.id = std::to_string(r["id"].get<long long>());
    else
      return "'id' must be a string or integer";
    if (out.id.empty()) return "'id' is empty";
  } else {
    out.id = out.language + "-" + std::to_string(line_no);
  }

  if (r.contains("ppl") && !r["ppl"].is_null()) {
    if (!r["ppl"].is_number()) return "'ppl' must be a number";
    double p = r["ppl"].get<double>();
    if (!std::isfinite(p) || p < 0) return "'ppl' must be finite and >= 0";
    out.perplexity = p;
  }
  if (r.contains("date") && !r["date"].is_null()) {
    if (!r["date"].is_string()) return "'date' must be an ISO-8601 string";
    out.published_after = r["date"].get<std::string>();
  }
  if (r.contains("collection") && r["collection"].is_string())
    out.source_collection = r["collection"].get<std::string>();
  return std::nullopt;
}

}  // namespace

IngestResult ingest_segments_from_rows(const std::vector<json>& rows,
                                       const std::vector<LineError>& parse_errors,
                                       const std::string& language) {
  IngestResult res;
  std::set<std::string> seen;
  for (const auto& e : parse_errors)
    res.rejects.push_back({{"line", e.line_no}, {"raw", e.raw}, {"error", e.error}});

  std::size_t line_no = 0;
  for (const auto& r : rows) {
    ++line_no;
    SourceSegment seg;
    if (auto err = parse_record(r, language, line_no, seg)) {
      res.rejects.push_back(reject(r, *err));
      continue;
    }
    if (!seen.insert(seg.id).second) {
      res.rejects.push_back(reject(r, "duplicate id '" + seg.id + "'"));
      continue;
    }
    res.segments.push_back(std::move(seg));
  }
  return res;
}

IngestResult ingest_segments(const std::filesystem::path& path, const std::string& language) {
  std::vector<LineError> errs;
  auto rows = read_jsonl(path, &errs);
  return ingest_segments_from_rows(rows, errs, language);
}

void write_segments(const std::filesystem::path& path, const std::vector<SourceSegment>& segs) {
  std::vector<json> rows;
  rows.reserve(segs.size());
  for (const auto& s : segs) rows.push_back(to_json(s));
  write_jsonl(path, rows);
}

void CorpusFilterConfig::validate() const {
  for (const auto& [lang, t] : ppl_threshold)
    if (!(t > 0)) throw ConfigError("perplexity threshold for '" + lang + "' must be positive");
  if (default_threshold && !(*default_threshold > 0))
    throw ConfigError("default perplexity threshold must be positive");
  if (min_chars >= max_chars) throw ConfigError("min_chars must be < max_chars");
}

CorpusFilterConfig filter_config_from_json(const json& j) {
  CorpusFilterConfig cfg;
  if (j.contains("thresholds"))
    cfg.ppl_threshold = j["thresholds"].get<std::map<std::string, double>>();
  if (j.contains("default_threshold") && !j["default_threshold"].is_null())
    cfg.default_threshold = j["default_threshold"].get<double>();
  cfg.keep_missing_perplexity = j.value("keep_missing_ppl", false);
  cfg.min_chars = j.value("min_chars", std::size_t{1});
  cfg.max_chars = j.value("max_chars", std::size_t{4096});
  cfg.validate();
  return cfg;
}

std::vector<SourceSegment> filter_segments(const std::vector<SourceSegment>& segments,
                                           const CorpusFilterConfig& cfg) {
  cfg.validate();
  std::vector<SourceSegment> kept;
  for (const auto& s : segments) {
    double threshold;
    if (auto it = cfg.ppl_threshold.find(s.language); it != cfg.ppl_threshold.end())
      threshold = it->second;
    else if (cfg.default_threshold)
      threshold = *cfg.default_threshold;
    else
      throw ConfigError("no perplexity threshold for language '" + s.language + "'");

    auto chars = utf8_decode(s.text).size();
    if (chars < cfg.min_chars || chars > cfg.max_chars) continue;
    if (s.perplexity ? *s.perplexity > threshold : !cfg.keep_missing_perplexity) continue;
    kept.push_back(s);
  }
  return kept;
}

}  // namespace transpref::corpus

#include "transpref/prefs.hpp"

namespace transpref::prefs {

TripleOutcome build_triple(const corpus::SourceSegment& source,
                           const std::vector<metrics::ScoredHypothesis>& candidates,
                           const metrics::MetricSpec& metric, double min_margin) {
  const auto& mid = metric.metric_id;
  for (const auto& c : candidates)
    if (!c.scores.count(mid))
      throw ValidationError("missing_score", "hypothesis " + c.hypothesis.system_id + "/" +
                                                 c.hypothesis.source_id + " has no '" + mid +
                                                 "' score");
  if (candidates.size() < 2)
    return Skip{source.id, "fewer than 2 scored candidates"};

  const metrics::ScoredHypothesis* best = nullptr;
  const metrics::ScoredHypothesis* worst = nullptr;
  const auto o = metric.orientation;
  for (const auto& c : candidates) {
    double s = c.scores.at(mid);
    const auto& sys = c.hypothesis.system_id;
    if (!best || better(s, best->scores.at(mid), o) ||
        (s == best->scores.at(mid) && sys < best->hypothesis.system_id))
      best = &c;
    if (!worst || better(worst->scores.at(mid), s, o) ||
        (s == worst->scores.at(mid) && sys < worst->hypothesis.system_id))
      worst = &c;
  }
  double hi = best->scores.at(mid);
  double lo = worst->scores.at(mid);
  if (hi == lo) return Skip{source.id, "all candidates tie under '" + mid + "'"};
  if (best->hypothesis.system_id == worst->hypothesis.system_id)
    return Skip{source.id, "best and worst come from the same system"};
  double margin = o == Orientation::higher_better ? hi - lo : lo - hi;
  if (margin < min_margin)
    return Skip{source.id, "margin " + std::to_string(margin) + " below min_margin"};
  return PreferenceTriple{source, *best, *worst, mid, hi, lo, margin};
}

Dataset build_dataset(const std::vector<SourceWithCandidates>& inputs,
                      const metrics::MetricSpec& metric, double min_margin) {
  Dataset ds;
  for (const auto& in : inputs) {
    try {
      auto outcome = build_triple(in.source, in.candidates, metric, min_margin);
      if (auto* t = std::get_if<PreferenceTriple>(&outcome)) {
        ++ds.report.chosen_counts[t->chosen.hypothesis.system_id];
        ++ds.report.rejected_counts[t->rejected.hypothesis.system_id];
        ds.triples.push_back(std::move(*t));
      } else {
        ds.report.skipped.push_back(std::get<Skip>(std::move(outcome)));
      }
    } catch (const Error& e) {
      ds.report.errors.push_back({in.source.id, e.what()});
    }
  }
  return ds;
}

json to_json(const DatasetReport& r) {
  json j = {{"skipped", json::array()},
            {"errors", json::array()},
            {"chosen_counts", r.chosen_counts},
            {"rejected_counts", r.rejected_counts}};
  for (const auto& s : r.skipped) j["skipped"].push_back({{"source_id", s.source_id}, {"reason", s.reason}});
  for (const auto& e : r.errors) j["errors"].push_back({{"source_id", e.source_id}, {"error", e.message}});
  return j;
}

json to_json(const PreferenceTriple& t) {
  const auto& ch = t.chosen.hypothesis;
  const auto& rj = t.rejected.hypothesis;
  return {{"source_id", t.source.id},
          {"src_lang", t.source.language},
          {"tgt_lang", ch.tgt_lang},
          {"src", t.source.text},
          {"chosen", {{"system", ch.system_id}, {"text", ch.text}, {"score", t.chosen_score}}},
          {"rejected", {{"system", rj.system_id}, {"text", rj.text}, {"score", t.rejected_score}}},
          {"metric", t.metric_id},
          {"margin", t.margin}};
}

PreferenceTriple triple_from_json(const json& j) {
  PreferenceTriple t;
  t.source.id = j.at("source_id").get<std::string>();
  t.source.language = j.value("src_lang", std::string{});
  t.source.text = j.at("src").get<std::string>();
  t.metric_id = j.at("metric").get<std::string>();
  auto side = [&](const json& s, metrics::ScoredHypothesis& sh, double& score) {
    sh.hypothesis = {t.source.id, s.at("system").get<std::string>(), s.at("text").get<std::string>(),
                     t.source.language, j.value("tgt_lang", std::string{})};
    score = s.at("score").get<double>();
    sh.scores[t.metric_id] = score;
  };
  side(j.at("chosen"), t.chosen, t.chosen_score);
  side(j.at("rejected"), t.rejected, t.rejected_score);
  t.margin = j.at("margin").get<double>();
  return t;
}

void write_dataset(const std::filesystem::path& path, const std::vector<PreferenceTriple>& triples) {
  std::vector<json> rows;
  rows.reserve(triples.size());
  for (const auto& t : triples) rows.push_back(to_json(t));
  write_jsonl(path, rows);
}

std::vector<PreferenceTriple> read_dataset(const std::filesystem::path& path) {
  std::vector<LineError> errs;
  auto rows = read_jsonl(path, &errs);
  if (!errs.empty())
    throw ValidationError("malformed preference record at line " + std::to_string(errs[0].line_no));
  std::vector<PreferenceTriple> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(triple_from_json(r));
  return out;
}

}  // namespace transpref::prefs

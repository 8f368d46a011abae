#include "transpref/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace transpref::metrics {

MetricKind parse_metric_kind(std::string_view s) {
  if (s == "native_chrf" || s == "chrf") return MetricKind::native_chrf;
  if (s == "qe_client") return MetricKind::qe_client;
  if (s == "ensemble") return MetricKind::ensemble;
  throw ConfigError("unknown metric kind '" + std::string(s) + "'");
}

MetricSpec MetricSpec::chrf(std::string id) {
  MetricSpec s;
  s.metric_id = std::move(id);
  s.kind = MetricKind::native_chrf;
  s.orientation = Orientation::higher_better;
  s.range = std::pair{0.0, 100.0};
  s.needs_reference = true;
  return s;
}

void MetricSpec::validate() const {
  if (metric_id.empty()) throw ConfigError("metric_id must not be empty");
  if (range && !(range->first <= range->second))
    throw ConfigError("metric '" + metric_id + "' has an empty range");
  switch (kind) {
    case MetricKind::native_chrf:
      if (!needs_reference || orientation != Orientation::higher_better || !range ||
          range->first != 0.0 || range->second != 100.0)
        throw ConfigError("native chrF metric '" + metric_id +
                          "' must be reference-based, higher_better, range [0,100]");
      break;
    case MetricKind::qe_client:
      if (endpoint.empty()) throw ConfigError("qe_client metric '" + metric_id + "' has no endpoint");
      break;
    case MetricKind::ensemble:
      if (members.size() < 2)
        throw ConfigError("ensemble '" + metric_id + "' needs at least 2 members");
      break;
  }
}

MetricSpec metric_spec_from_json(const json& j) {
  auto kind = parse_metric_kind(j.at("kind").get<std::string>());
  MetricSpec s = kind == MetricKind::native_chrf ? MetricSpec::chrf(j.at("id").get<std::string>())
                                                 : MetricSpec{};
  s.metric_id = j.at("id").get<std::string>();
  s.kind = kind;
  if (j.contains("orientation")) s.orientation = parse_orientation(j["orientation"].get<std::string>());
  if (j.contains("range") && !j["range"].is_null()) {
    auto r = j["range"].get<std::vector<double>>();
    if (r.size() != 2) throw ConfigError("range must be [lo, hi]");
    s.range = std::pair{r[0], r[1]};
  }
  if (j.contains("members")) s.members = j["members"].get<std::vector<std::string>>();
  if (j.contains("needs_reference")) s.needs_reference = j["needs_reference"].get<bool>();
  s.endpoint = j.value("endpoint", std::string{});
  s.fanout = j.value("fanout", std::size_t{1});
  if (j.contains("retry_attempts")) s.retry.attempts = j["retry_attempts"].get<int>();
  if (j.contains("retry_backoff_ms"))
    s.retry.initial_backoff = std::chrono::milliseconds(j["retry_backoff_ms"].get<int>());
  s.validate();
  return s;
}

void validate_metric_set(const std::vector<MetricSpec>& specs) {
  std::map<std::string, const MetricSpec*> by_id;
  for (const auto& s : specs) {
    s.validate();
    if (!by_id.emplace(s.metric_id, &s).second)
      throw ConfigError("duplicate metric id '" + s.metric_id + "'");
  }
  for (const auto& s : specs) {
    if (s.kind != MetricKind::ensemble) continue;
    for (const auto& m : s.members) {
      auto it = by_id.find(m);
      if (it == by_id.end())
        throw ConfigError("ensemble '" + s.metric_id + "' references unknown metric '" + m + "'");
      if (it->second->kind == MetricKind::ensemble)
        throw ConfigError("ensemble '" + s.metric_id + "' cannot contain ensemble '" + m + "'");
      if (it->second->orientation != s.orientation)
        throw ConfigError("ensemble '" + s.metric_id + "' mixes orientations (member '" + m + "')");
    }
  }
}

namespace {

// Sorted n-gram views of length n over `s`.
std::vector<std::u32string_view> ngrams(const std::u32string& s, std::size_t n) {
  std::vector<std::u32string_view> out;
  if (s.size() < n) return out;
  out.reserve(s.size() - n + 1);
  std::u32string_view v(s);
  for (std::size_t i = 0; i + n <= s.size(); ++i) out.push_back(v.substr(i, n));
  std::sort(out.begin(), out.end());
  return out;
}

// Sum over distinct n-grams of min(count in a, count in b); both sorted.
std::size_t clipped_matches(const std::vector<std::u32string_view>& a,
                            const std::vector<std::u32string_view>& b) {
  std::size_t i = 0, j = 0, m = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] < b[j]) ++i;
    else if (b[j] < a[i]) ++j;
    else {
      ++m;
      ++i;
      ++j;
    }
  }
  return m;
}

std::u32string strip_spaces(std::string_view s) {
  auto u = utf8_decode(s);
  std::erase_if(u, is_unicode_space);
  return u;
}

}  // namespace

double chrf(std::string_view hypothesis, std::string_view reference, int max_char_n, double beta) {
  if (max_char_n < 1) throw ValidationError("max_char_n must be >= 1");
  if (!(beta > 0)) throw ValidationError("beta must be > 0");
  auto hyp = strip_spaces(hypothesis);
  auto ref = strip_spaces(reference);
  const double b2 = beta * beta;

  double f_sum = 0.0;
  int orders = 0;
  for (int n = 1; n <= max_char_n; ++n) {
    auto h = ngrams(hyp, static_cast<std::size_t>(n));
    auto r = ngrams(ref, static_cast<std::size_t>(n));
    if (h.empty() && r.empty()) continue;
    ++orders;
    if (h.empty() || r.empty()) continue;
    auto m = static_cast<double>(clipped_matches(h, r));
    double p = m / static_cast<double>(h.size());
    double rc = m / static_cast<double>(r.size());
    if (p + rc > 0) f_sum += (1 + b2) * p * rc / (b2 * p + rc);
  }
  if (orders == 0) return 0.0;
  return 100.0 * f_sum / orders;
}

std::vector<QeResult> score_qe_batch(const MetricSpec& spec, const std::vector<QePair>& pairs) {
  if (spec.kind != MetricKind::qe_client)
    throw ConfigError("metric '" + spec.metric_id + "' is not a qe_client");
  spec.validate();
  auto chunks = transport::run_chunked(pairs.size(), spec.fanout, [&](std::size_t b, std::size_t e) {
    std::vector<QeResult> out;
    if (b == e) return out;
    json body = {{"pairs", json::array()}};
    for (auto i = b; i < e; ++i) {
      json p = {{"id", pairs[i].id}, {"src", pairs[i].src}, {"mt", pairs[i].mt}};
      if (pairs[i].ref) p["ref"] = *pairs[i].ref;
      body["pairs"].push_back(std::move(p));
    }
    json resp;
    try {
      resp = transport::with_retry(spec.retry,
                                   [&] { return transport::http_post_json(spec.endpoint, body); });
    } catch (const transport::TransportError& err) {
      for (auto i = b; i < e; ++i) out.push_back({pairs[i].id, std::nullopt, err.what()});
      return out;
    }
    if (!resp.is_object() || !resp.contains("scores") || !resp["scores"].is_array())
      throw ProtocolError("scorer '" + spec.metric_id + "' response lacks 'scores'");
    const auto& scores = resp["scores"];
    if (scores.size() != e - b)
      throw ProtocolError("scorer '" + spec.metric_id + "' returned " +
                          std::to_string(scores.size()) + " scores for " +
                          std::to_string(e - b) + " pairs");
    for (auto i = b; i < e; ++i) {
      const auto& s = scores[i - b];
      if (!s.is_object() || !s.contains("score"))
        throw ProtocolError("scorer '" + spec.metric_id + "' returned an entry without 'score'");
      if (s.contains("id") && s["id"] != json(pairs[i].id))
        throw ProtocolError("scorer '" + spec.metric_id + "' answered id " + s["id"].dump() +
                            " where '" + pairs[i].id + "' was expected");
      if (!s["score"].is_number() || !std::isfinite(s["score"].get<double>())) {
        out.push_back({pairs[i].id, std::nullopt, "non-finite or non-numeric score"});
        continue;
      }
      out.push_back({pairs[i].id, s["score"].get<double>(), {}});
    }
    return out;
  });
  std::vector<QeResult> all;
  all.reserve(pairs.size());
  for (auto& c : chunks) all.insert(all.end(), c.begin(), c.end());
  return all;
}

double score_qe(const MetricSpec& spec, const std::string& src, const std::string& hyp) {
  auto r = score_qe_batch(spec, {{"0", src, hyp, std::nullopt}});
  if (!r.at(0).score) throw transport::TransportError(r[0].error);
  return *r[0].score;
}

double ensemble_mean(const MetricSpec& spec, const std::map<std::string, double>& member_scores) {
  if (spec.members.empty()) throw ConfigError("metric '" + spec.metric_id + "' has no members");
  // Sum in sorted-id order so the value does not depend on member order.
  std::vector<std::string> ids = spec.members;
  std::sort(ids.begin(), ids.end());
  double sum = 0.0;
  for (const auto& m : ids) {
    auto it = member_scores.find(m);
    if (it == member_scores.end())
      throw ValidationError("missing_member", "ensemble '" + spec.metric_id +
                                                  "' is missing member score '" + m + "'");
    sum += it->second;
  }
  return sum / static_cast<double>(ids.size());
}

void apply_ensembles(const std::vector<MetricSpec>& specs, ScoredHypothesis& sh) {
  for (const auto& s : specs) {
    if (s.kind != MetricKind::ensemble) continue;
    bool all = std::all_of(s.members.begin(), s.members.end(),
                           [&](const std::string& m) { return sh.scores.count(m) > 0; });
    if (all) sh.scores[s.metric_id] = ensemble_mean(s, sh.scores);
  }
}

}  // namespace transpref::metrics

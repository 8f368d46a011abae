#include "transpref/metaeval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

namespace transpref::metaeval {

json to_json(const HumanRating& r) {
  json j = {{"annotator_id", r.annotator_id},
            {"source_id", r.source_id},
            {"system_id", r.system_id},
            {"score", r.score},
            {"timestamp", r.timestamp}};
  if (!r.language_pair.empty()) j["lp"] = r.language_pair;
  return j;
}

json to_json(const MetricScore& s) {
  json j = {{"source_id", s.source_id}, {"system_id", s.system_id}, {"metric_id", s.metric_id},
          {"score", s.score}};
  if (!s.language_pair.empty()) j["lp"] = s.language_pair;
  return j;
}

namespace {

void check_lengths(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw ValidationError("correlation inputs differ in length");
  if (xs.size() < 2) throw UndefinedStatistic("correlation needs at least 2 points");
}

std::int64_t pairs_of(std::int64_t t) { return t * (t - 1) / 2; }

// Sum of t(t-1)/2 over runs of equal values in a sorted range.
template <class It, class Eq>
std::int64_t tied_pairs(It first, It last, Eq eq) {
  std::int64_t total = 0;
  while (first != last) {
    auto run = first;
    while (run != last && eq(*run, *first)) ++run;
    total += pairs_of(std::distance(first, run));
    first = run;
  }
  return total;
}

// Stable merge sort that counts inversions (strictly-greater predecessors).
std::int64_t sort_count_swaps(std::vector<double>& v, std::vector<double>& buf, std::size_t lo,
                              std::size_t hi) {
  if (hi - lo < 2) return 0;
  auto mid = lo + (hi - lo) / 2;
  auto swaps = sort_count_swaps(v, buf, lo, mid) + sort_count_swaps(v, buf, mid, hi);
  std::size_t i = lo, j = mid, k = lo;
  while (i < mid && j < hi) {
    if (v[j] < v[i]) {
      swaps += static_cast<std::int64_t>(mid - i);
      buf[k++] = v[j++];
    } else {
      buf[k++] = v[i++];
    }
  }
  while (i < mid) buf[k++] = v[i++];
  while (j < hi) buf[k++] = v[j++];
  std::copy(buf.begin() + static_cast<std::ptrdiff_t>(lo), buf.begin() + static_cast<std::ptrdiff_t>(hi),
            v.begin() + static_cast<std::ptrdiff_t>(lo));
  return swaps;
}

}  // namespace

double pearson(std::span<const double> xs, std::span<const double> ys) {
  check_lengths(xs, ys);
  const auto n = static_cast<double>(xs.size());
  double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    double dx = xs[i] - mx, dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw UndefinedStatistic("pearson undefined for a constant vector");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::vector<double> mid_ranks(std::span<const double> xs) {
  std::vector<std::size_t> idx(xs.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return xs[a] < xs[b]; });
  std::vector<double> ranks(xs.size());
  std::size_t i = 0;
  while (i < idx.size()) {
    auto j = i;
    while (j < idx.size() && xs[idx[j]] == xs[idx[i]]) ++j;
    double r = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (auto k = i; k < j; ++k) ranks[idx[k]] = r;
    i = j;
  }
  return ranks;
}

double spearman(std::span<const double> xs, std::span<const double> ys) {
  check_lengths(xs, ys);
  auto rx = mid_ranks(xs);
  auto ry = mid_ranks(ys);
  try {
    return pearson(rx, ry);
  } catch (const UndefinedStatistic&) {
    throw UndefinedStatistic("spearman undefined for a constant rank vector");
  }
}

double kendall_tau_b(std::span<const double> xs, std::span<const double> ys) {
  check_lengths(xs, ys);
  const auto n = xs.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](auto a, auto b) {
    return xs[a] < xs[b] || (xs[a] == xs[b] && ys[a] < ys[b]);
  });

  const std::int64_t n0 = pairs_of(static_cast<std::int64_t>(n));
  const std::int64_t tx = tied_pairs(idx.begin(), idx.end(), [&](auto a, auto b) { return xs[a] == xs[b]; });
  const std::int64_t txy = tied_pairs(idx.begin(), idx.end(),
                                      [&](auto a, auto b) { return xs[a] == xs[b] && ys[a] == ys[b]; });

  std::vector<double> yv(n), buf(n);
  for (std::size_t i = 0; i < n; ++i) yv[i] = ys[idx[i]];
  const std::int64_t swaps = sort_count_swaps(yv, buf, 0, n);
  const std::int64_t ty = tied_pairs(yv.begin(), yv.end(), [](double a, double b) { return a == b; });

  const std::int64_t not_tied_x = n0 - tx;
  const std::int64_t not_tied_y = n0 - ty;
  if (not_tied_x == 0 || not_tied_y == 0) throw UndefinedStatistic("tau-b undefined: all pairs tied");
  // concordant - discordant
  const std::int64_t c_minus_d = n0 - tx - ty + txy - 2 * swaps;
  return static_cast<double>(c_minus_d) /
         std::sqrt(static_cast<double>(not_tied_x) * static_cast<double>(not_tied_y));
}

Statistic parse_statistic(std::string_view s) {
  if (s == "pearson") return Statistic::pearson;
  if (s == "spearman") return Statistic::spearman;
  if (s == "tau_b" || s == "kendall") return Statistic::tau_b;
  throw ConfigError("unknown statistic '" + std::string(s) + "'");
}

GroupingMode parse_grouping_mode(std::string_view s) {
  if (s == "per_group_mean") return GroupingMode::per_group_mean;
  if (s == "pooled") return GroupingMode::pooled;
  throw ConfigError("unknown grouping mode '" + std::string(s) + "'");
}

namespace {

double compute(Statistic stat, std::span<const double> xs, std::span<const double> ys) {
  switch (stat) {
    case Statistic::pearson: return pearson(xs, ys);
    case Statistic::spearman: return spearman(xs, ys);
    case Statistic::tau_b: return kendall_tau_b(xs, ys);
  }
  throw ConfigError("bad statistic");
}

void split(const JudgmentGroup& g, std::vector<double>& human, std::vector<double>& metric) {
  for (const auto& e : g.entries) {
    human.push_back(e.human_score);
    metric.push_back(e.metric_score);
  }
}

}  // namespace

GroupedResult grouped_correlation(const std::vector<JudgmentGroup>& groups, Statistic stat,
                                  GroupingMode mode) {
  GroupedResult res;
  if (mode == GroupingMode::pooled) {
    std::vector<double> h, m;
    for (const auto& g : groups) split(g, h, m);
    res.value = compute(stat, h, m);
    res.groups_used = groups.size();
    return res;
  }
  std::vector<double> values;
  for (const auto& g : groups) {
    std::vector<double> h, m;
    split(g, h, m);
    try {
      values.push_back(compute(stat, h, m));
    } catch (const UndefinedStatistic&) {
      ++res.groups_skipped;
    }
  }
  if (values.empty()) throw UndefinedStatistic("no group has a defined statistic");
  res.groups_used = values.size();
  res.value = pairwise_sum(values) / static_cast<double>(values.size());
  return res;
}

PrecisionResult precision_at_1_counts(const std::vector<JudgmentGroup>& groups,
                                      Orientation metric_orientation) {
  PrecisionResult res;
  for (const auto& g : groups) {
    if (g.entries.size() < 2)
      throw ValidationError("group '" + g.source_id + "' has fewer than 2 entries");
    ++res.groups;
    double best_human = g.entries[0].human_score;
    double best_metric = g.entries[0].metric_score;
    for (const auto& e : g.entries) {
      best_human = std::max(best_human, e.human_score);
      if (better(e.metric_score, best_metric, metric_orientation)) best_metric = e.metric_score;
    }
    for (const auto& e : g.entries) {
      if (e.metric_score == best_metric && e.human_score == best_human) {
        ++res.hits;
        break;
      }
    }
  }
  return res;
}

double precision_at_1(const std::vector<JudgmentGroup>& groups, Orientation metric_orientation) {
  return precision_at_1_counts(groups, metric_orientation).value();
}

namespace {

std::vector<json> line_errors(const std::vector<LineError>& errs) {
  std::vector<json> out;
  for (const auto& e : errs) out.push_back({{"line", e.line_no}, {"raw", e.raw}, {"error", e.error}});
  return out;
}

std::optional<std::string> need_string(const json& r, const char* key, std::string& out) {
  if (!r.contains(key) || !r[key].is_string() || r[key].get<std::string>().empty())
    return std::string("missing or empty string field '") + key + "'";
  out = r[key].get<std::string>();
  return std::nullopt;
}

}  // namespace

RatingsLoad parse_ratings(const std::vector<json>& rows, const std::vector<LineError>& parse_errors) {
  RatingsLoad res;
  res.errors = line_errors(parse_errors);
  std::set<std::tuple<std::string, std::string, std::string>> seen;
  for (const auto& r : rows) {
    HumanRating h;
    std::optional<std::string> err;
    if (!(err = need_string(r, "annotator_id", h.annotator_id)) &&
        !(err = need_string(r, "source_id", h.source_id)) &&
        !(err = need_string(r, "system_id", h.system_id))) {
      if (!r.contains("score") || !r["score"].is_number())
        err = "missing numeric field 'score'";
      else if (h.score = r["score"].get<double>(); !(h.score >= 0.0 && h.score <= 100.0))
        err = "score outside [0, 100]";
      else if (!r.contains("timestamp") || !r["timestamp"].is_string())
        err = "missing string field 'timestamp'";
    }
    if (!err) {
      h.timestamp = r["timestamp"].get<std::string>();
      if (r.contains("lp") && r["lp"].is_string()) h.language_pair = r["lp"].get<std::string>();
      if (!seen.insert({h.annotator_id, h.source_id, h.system_id}).second)
        err = "duplicate (annotator_id, source_id, system_id)";
    }
    if (err) {
      json bad = r;
      bad["error"] = *err;
      res.errors.push_back(std::move(bad));
      continue;
    }
    res.ratings.push_back(std::move(h));
  }
  return res;
}

RatingsLoad load_ratings(const std::filesystem::path& path) {
  std::vector<LineError> errs;
  auto rows = read_jsonl(path, &errs);
  return parse_ratings(rows, errs);
}

ScoresLoad parse_scores(const std::vector<json>& rows, const std::vector<LineError>& parse_errors) {
  ScoresLoad res;
  res.errors = line_errors(parse_errors);
  for (const auto& r : rows) {
    MetricScore s;
    std::optional<std::string> err;
    if (!(err = need_string(r, "source_id", s.source_id)) &&
        !(err = need_string(r, "system_id", s.system_id)) &&
        !(err = need_string(r, "metric_id", s.metric_id))) {
      if (!r.contains("score") || !r["score"].is_number() || !std::isfinite(r["score"].get<double>()))
        err = "missing or non-finite 'score'";
      else
        s.score = r["score"].get<double>();
      if (!err && r.contains("lp")) {
        if (r["lp"].is_string()) s.language_pair = r["lp"].get<std::string>();
        else err = "'lp' must be a string";
      }
    }
    if (err) {
      json bad = r;
      bad["error"] = *err;
      res.errors.push_back(std::move(bad));
      continue;
    }
    res.scores.push_back(std::move(s));
  }
  return res;
}

ScoresLoad load_scores(const std::filesystem::path& path) {
  std::vector<LineError> errs;
  auto rows = read_jsonl(path, &errs);
  return parse_scores(rows, errs);
}

std::vector<JudgmentGroup> build_groups(const std::vector<HumanRating>& ratings,
                                        const std::vector<MetricScore>& scores,
                                        const std::string& metric_id,
                                        const std::string& language_pair) {
  using Key = std::pair<std::string, std::string>;  // (source, system)
  std::map<Key, std::pair<double, int>> human;
  for (const auto& r : ratings) {
    if (!language_pair.empty() && r.language_pair != language_pair) continue;
    auto& acc = human[{r.source_id, r.system_id}];
    acc.first += r.score;
    ++acc.second;
  }
  std::map<Key, double> metric;
  for (const auto& s : scores)
    if (s.metric_id == metric_id &&
        (language_pair.empty() || s.language_pair.empty() || s.language_pair == language_pair))
      metric[{s.source_id, s.system_id}] = s.score;

  std::map<std::string, JudgmentGroup> groups;
  for (const auto& [key, acc] : human) {
    auto it = metric.find(key);
    if (it == metric.end()) continue;
    auto& g = groups[key.first];
    g.source_id = key.first;
    g.entries.push_back({key.second, acc.first / acc.second, it->second});
  }
  std::vector<JudgmentGroup> out;
  for (auto& [id, g] : groups)
    if (g.entries.size() >= 2) out.push_back(std::move(g));
  return out;
}

json meta_evaluate(const std::vector<HumanRating>& ratings, const std::vector<MetricScore>& scores,
                   const std::vector<MetricOrientation>& metrics, GroupingMode mode) {
  std::set<std::string> pairs;
  for (const auto& r : ratings) pairs.insert(r.language_pair);

  json report = {{"mode", mode == GroupingMode::pooled ? "pooled" : "per_group_mean"},
                 {"language_pairs", json::object()}};
  for (const auto& lp : pairs) {
    json per_metric = json::object();
    for (const auto& m : metrics) {
      auto groups = build_groups(ratings, scores, m.metric_id, lp);
      if (m.orientation == Orientation::lower_better)
        for (auto& g : groups)
          for (auto& e : g.entries) e.metric_score = -e.metric_score;
      json row = {{"groups", groups.size()}};
      for (auto [name, stat] : {std::pair{"pearson", Statistic::pearson},
                                std::pair{"spearman", Statistic::spearman},
                                std::pair{"tau_b", Statistic::tau_b}}) {
        try {
          auto r = grouped_correlation(groups, stat, mode);
          row[name] = r.value;
          row[std::string(name) + "_skipped"] = r.groups_skipped;
        } catch (const UndefinedStatistic&) {
          row[name] = nullptr;
        }
      }
      if (groups.empty()) {
        row["precision_at_1"] = nullptr;
      } else {
        auto p = precision_at_1_counts(groups);
        row["precision_at_1"] = p.value();
        row["p1_hits"] = p.hits;
      }
      per_metric[m.metric_id] = std::move(row);
    }
    report["language_pairs"][lp.empty() ? "all" : lp] = std::move(per_metric);
  }
  return report;
}

}  // namespace transpref::metaeval

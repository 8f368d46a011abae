#include "transpref/syseval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>

namespace transpref::syseval {

SystemScores SystemScores::from_segments(std::string system_id,
                                         std::vector<std::pair<std::string, double>> per_segment) {
  SystemScores s{std::move(system_id), std::move(per_segment), 0.0};
  if (!s.per_segment.empty()) {
    std::vector<double> v;
    v.reserve(s.per_segment.size());
    for (const auto& [id, x] : s.per_segment) v.push_back(x);
    s.mean = pairwise_sum(v) / static_cast<double>(v.size());
  }
  return s;
}

PairwiseAccuracy pairwise_accuracy(const std::map<std::string, double>& metric_means,
                                   const std::map<std::string, double>& human_means,
                                   Orientation orientation) {
  if (metric_means.size() < 2) throw ValidationError("pairwise accuracy needs at least 2 systems");
  if (metric_means.size() != human_means.size())
    throw ValidationError("metric and human means cover different systems");
  for (const auto& [sys, v] : metric_means)
    if (!human_means.count(sys)) throw ValidationError("no human mean for system '" + sys + "'");

  PairwiseAccuracy acc;
  for (auto i = metric_means.begin(); i != metric_means.end(); ++i) {
    for (auto j = std::next(i); j != metric_means.end(); ++j) {
      double dm = i->second - j->second;
      if (orientation == Orientation::lower_better) dm = -dm;
      double dh = human_means.at(i->first) - human_means.at(j->first);
      if (dm == 0.0) throw ValidationError("metric tie between '" + i->first + "' and '" + j->first + "'");
      if (dh == 0.0) throw ValidationError("human tie between '" + i->first + "' and '" + j->first + "'");
      ++acc.total;
      if ((dm > 0) == (dh > 0)) ++acc.agree;
    }
  }
  return acc;
}

namespace {

// Twice the 1-based mid-rank of every pooled observation: integers.
std::vector<std::int64_t> doubled_mid_ranks(std::span<const double> pooled) {
  std::vector<std::size_t> idx(pooled.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](auto x, auto y) { return pooled[x] < pooled[y]; });
  std::vector<std::int64_t> r2(pooled.size());
  std::size_t i = 0;
  while (i < idx.size()) {
    auto j = i;
    while (j < idx.size() && pooled[idx[j]] == pooled[idx[i]]) ++j;
    auto twice = static_cast<std::int64_t>(i + 1 + j);  // (i+1) + j = 2 * mid-rank
    for (auto k = i; k < j; ++k) r2[idx[k]] = twice;
    i = j;
  }
  return r2;
}

// Exact: distribution of the doubled rank sum over all size-n subsets, via
// subset-sum counting.
double exact_p(const std::vector<std::int64_t>& r2, std::size_t n) {
  const std::size_t total_n = r2.size();
  const std::int64_t max_sum = std::accumulate(r2.begin(), r2.end(), std::int64_t{0});
  // ways[k][s]: subsets of size k with doubled rank sum s.
  std::vector<std::vector<std::uint64_t>> ways(n + 1, std::vector<std::uint64_t>(max_sum + 1, 0));
  ways[0][0] = 1;
  for (std::size_t item = 0; item < total_n; ++item) {
    auto r = r2[item];
    for (std::size_t k = std::min(n, item + 1); k >= 1; --k)
      for (std::int64_t s = max_sum; s >= r; --s) ways[k][s] += ways[k - 1][s - r];
  }
  std::int64_t observed = 0;
  for (std::size_t i = 0; i < n; ++i) observed += r2[i];
  const auto center2 = static_cast<std::int64_t>(n * (total_n + 1));  // E[doubled sum]
  const auto obs_dev = std::llabs(observed - center2);

  std::uint64_t extreme = 0, all = 0;
  for (std::int64_t s = 0; s <= max_sum; ++s) {
    all += ways[n][s];
    if (std::llabs(s - center2) >= obs_dev) extreme += ways[n][s];
  }
  return static_cast<double>(extreme) / static_cast<double>(all);
}

double normal_p(std::span<const double> pooled, std::size_t n, std::size_t m) {
  auto r2 = doubled_mid_ranks(pooled);
  double w = 0.0;
  for (std::size_t i = 0; i < n; ++i) w += static_cast<double>(r2[i]) / 2.0;
  const double dn = static_cast<double>(n), dm = static_cast<double>(m);
  const double big_n = dn + dm;
  const double u = w - dn * (dn + 1) / 2;
  const double mu = dn * dm / 2;

  std::vector<double> sorted(pooled.begin(), pooled.end());
  std::sort(sorted.begin(), sorted.end());
  double tie_term = 0.0;
  for (std::size_t i = 0; i < sorted.size();) {
    auto j = i;
    while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
    double t = static_cast<double>(j - i);
    tie_term += t * t * t - t;
    i = j;
  }
  const double var = dn * dm / 12.0 * ((big_n + 1) - tie_term / (big_n * (big_n - 1)));
  if (!(var > 0)) return 1.0;
  const double z = std::max(0.0, std::abs(u - mu) - 0.5) / std::sqrt(var);
  return std::min(1.0, std::erfc(z / std::sqrt(2.0)));
}

}  // namespace

double wilcoxon_rank_sum(std::span<const double> a, std::span<const double> b,
                         std::size_t exact_limit) {
  if (a.empty() || b.empty()) throw ValidationError("wilcoxon_rank_sum needs two non-empty samples");
  std::vector<double> pooled(a.begin(), a.end());
  pooled.insert(pooled.end(), b.begin(), b.end());
  // uint64 subset counts are exact up to C(60, 30).
  if (pooled.size() <= std::min<std::size_t>(exact_limit, 60))
    return exact_p(doubled_mid_ranks(pooled), a.size());
  return normal_p(pooled, a.size(), b.size());
}

ClusterReport cluster_systems(const std::vector<SystemScores>& scores, double alpha,
                              Orientation orientation, std::size_t exact_limit) {
  if (scores.size() < 2) throw ValidationError("clustering needs at least 2 systems");

  auto ids_of = [](const SystemScores& s) {
    std::vector<std::string> ids;
    for (const auto& [id, v] : s.per_segment) ids.push_back(id);
    std::sort(ids.begin(), ids.end());
    return ids;
  };
  const auto ref_ids = ids_of(scores[0]);
  for (std::size_t i = 1; i < scores.size(); ++i) {
    auto ids = ids_of(scores[i]);
    if (ids == ref_ids) continue;
    std::vector<std::string> missing, extra;
    std::set_difference(ref_ids.begin(), ref_ids.end(), ids.begin(), ids.end(), std::back_inserter(missing));
    std::set_difference(ids.begin(), ids.end(), ref_ids.begin(), ref_ids.end(), std::back_inserter(extra));
    std::string msg = "system '" + scores[i].system_id + "' segment set differs from '" +
                      scores[0].system_id + "'; missing:";
    for (const auto& m : missing) msg += " " + m;
    msg += "; extra:";
    for (const auto& e : extra) msg += " " + e;
    throw ValidationError("segment_mismatch", msg);
  }

  const auto n = scores.size();
  std::vector<std::vector<double>> values(n);
  for (std::size_t i = 0; i < n; ++i)
    for (const auto& [id, v] : scores[i].per_segment) values[i].push_back(v);

  ClusterReport rep;
  std::vector<std::size_t> losses(n, 0), wins(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double p = wilcoxon_rank_sum(values[i], values[j], exact_limit);
      rep.p_values[scores[i].system_id][scores[j].system_id] = p;
      rep.p_values[scores[j].system_id][scores[i].system_id] = p;
      if (!(p < alpha)) continue;
      if (better(scores[i].mean, scores[j].mean, orientation)) {
        ++wins[i];
        ++losses[j];
      } else if (better(scores[j].mean, scores[i].mean, orientation)) {
        ++wins[j];
        ++losses[i];
      }
    }
  }
  for (std::size_t i = 0; i < n; ++i)
    rep.systems.push_back({scores[i].system_id, scores[i].mean, losses[i], wins[i], losses[i] + 1, n - wins[i]});
  std::stable_sort(rep.systems.begin(), rep.systems.end(), [&](const auto& x, const auto& y) {
    if (x.mean != y.mean) return better(x.mean, y.mean, orientation);
    return x.system_id < y.system_id;
  });
  return rep;
}

json to_json(const ClusterReport& r) {
  json j = {{"systems", json::array()}, {"p_values", r.p_values}};
  for (const auto& s : r.systems)
    j["systems"].push_back({{"system_id", s.system_id},
                            {"mean", s.mean},
                            {"losses", s.losses},
                            {"wins", s.wins},
                            {"rank_range", {s.rank_lo, s.rank_hi}}});
  return j;
}

double best_over_worst_accuracy(std::span<const std::pair<double, double>> policy_loglikes) {
  if (policy_loglikes.empty()) throw ValidationError("best_over_worst_accuracy needs at least one pair");
  std::size_t hits = 0;
  for (const auto& [chosen, rejected] : policy_loglikes)
    if (chosen > rejected) ++hits;
  return 100.0 * static_cast<double>(hits) / static_cast<double>(policy_loglikes.size());
}

}  // namespace transpref::syseval

// Independent brute-force re-implementations used to check the library.
// Nothing here calls into the code under test except for shared data types.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace oracle {

// ---- chrF -------------------------------------------------------------------

inline std::u32string decode(const std::string& s) {
  std::u32string out;
  for (std::size_t i = 0; i < s.size();) {
    unsigned char c = s[i];
    int len = c < 0x80 ? 1 : (c >> 5) == 6 ? 2 : (c >> 4) == 14 ? 3 : 4;
    char32_t cp = len == 1 ? c : len == 2 ? (c & 0x1f) : len == 3 ? (c & 0x0f) : (c & 0x07);
    for (int k = 1; k < len; ++k) cp = (cp << 6) | (static_cast<unsigned char>(s[i + k]) & 0x3f);
    out.push_back(cp);
    i += len;
  }
  return out;
}

inline bool is_space(char32_t c) {
  static const char32_t spaces[] = {0x09, 0x0a, 0x0b, 0x0c, 0x0d, 0x20, 0x85, 0xa0, 0x1680,
                                    0x2000, 0x2001, 0x2002, 0x2003, 0x2004, 0x2005, 0x2006, 0x2007,
                                    0x2008, 0x2009, 0x200a, 0x2028, 0x2029, 0x202f, 0x205f, 0x3000};
  return std::find(std::begin(spaces), std::end(spaces), c) != std::end(spaces);
}

inline std::unordered_map<std::u32string, int> ngram_counts(const std::u32string& s, int n) {
  std::unordered_map<std::u32string, int> m;
  for (int i = 0; i + n <= static_cast<int>(s.size()); ++i) ++m[s.substr(i, n)];
  return m;
}

// Per-order precision/recall from explicit clipped counts, F_beta per order,
// orders with no n-grams on either side left out of the mean.
inline double chrf(const std::string& hyp, const std::string& ref, int max_n = 6, double beta = 2.0) {
  std::u32string h, r;
  for (char32_t c : decode(hyp))
    if (!is_space(c)) h.push_back(c);
  for (char32_t c : decode(ref))
    if (!is_space(c)) r.push_back(c);
  double total = 0.0;
  int orders = 0;
  for (int n = 1; n <= max_n; ++n) {
    auto hc = ngram_counts(h, n);
    auto rc = ngram_counts(r, n);
    long hn = 0, rn = 0, match = 0;
    for (auto& [g, c] : hc) {
      hn += c;
      auto it = rc.find(g);
      if (it != rc.end()) match += std::min(c, it->second);
    }
    for (auto& [g, c] : rc) rn += c;
    if (hn == 0 && rn == 0) continue;
    ++orders;
    double p = hn ? static_cast<double>(match) / hn : 0.0;
    double rec = rn ? static_cast<double>(match) / rn : 0.0;
    double b2 = beta * beta;
    double f = (p + rec) > 0 ? (1 + b2) * p * rec / (b2 * p + rec) : 0.0;
    total += f;
  }
  return orders ? 100.0 * total / orders : 0.0;
}

// ---- correlations -------------------------------------------------------------

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

// rank_i = 1 + #{j : x_j < x_i} + (#{j != i : x_j == x_i}) / 2
inline std::vector<double> ranks(const std::vector<double>& x) {
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    int less = 0, eq = 0;
    for (std::size_t j = 0; j < x.size(); ++j) {
      if (x[j] < x[i]) ++less;
      if (j != i && x[j] == x[i]) ++eq;
    }
    r[i] = 1.0 + less + eq / 2.0;
  }
  return r;
}

inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  return pearson(ranks(x), ranks(y));
}

// (C - D) / sqrt((C + D + Tx)(C + D + Ty)) over all unordered pairs.
inline std::optional<double> tau_b(const std::vector<double>& x, const std::vector<double>& y) {
  long c = 0, d = 0, tx = 0, ty = 0;
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = i + 1; j < x.size(); ++j) {
      double dx = x[i] - x[j], dy = y[i] - y[j];
      if (dx == 0 && dy == 0) continue;
      if (dx == 0) ++tx;
      else if (dy == 0) ++ty;
      else if ((dx > 0) == (dy > 0)) ++c;
      else ++d;
    }
  double den = static_cast<double>(c + d + tx) * static_cast<double>(c + d + ty);
  if (den == 0) return std::nullopt;
  return static_cast<double>(c - d) / std::sqrt(den);
}

// ---- Precision@1 ------------------------------------------------------------

struct Entry {
  std::string system;
  double human;
  double metric;
};

// Enumerates best sets explicitly: a group is a hit iff some system whose
// metric score no other system exceeds also has a human score no other
// system exceeds.
inline std::pair<int, int> precision_at_1(const std::vector<std::vector<Entry>>& groups) {
  int hits = 0;
  for (const auto& g : groups) {
    std::vector<std::string> human_best, metric_best;
    for (const auto& e : g) {
      bool hb = true, mb = true;
      for (const auto& o : g) {
        if (o.human > e.human) hb = false;
        if (o.metric > e.metric) mb = false;
      }
      if (hb) human_best.push_back(e.system);
      if (mb) metric_best.push_back(e.system);
    }
    bool hit = false;
    for (const auto& s : metric_best)
      if (std::find(human_best.begin(), human_best.end(), s) != human_best.end()) hit = true;
    hits += hit;
  }
  return {hits, static_cast<int>(groups.size())};
}

// ---- Wilcoxon rank-sum --------------------------------------------------------

// Two-sided exact p-value by visiting every split of the pooled sample into
// |a| and |b| positions. Works with doubled mid-ranks so all sums are integral.
inline double wilcoxon_permutation(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> pooled = a;
  pooled.insert(pooled.end(), b.begin(), b.end());
  const int n = static_cast<int>(pooled.size()), k = static_cast<int>(a.size());
  std::vector<long> r2(n);
  for (int i = 0; i < n; ++i) {
    long less = 0, eq = 0;
    for (int j = 0; j < n; ++j) {
      if (pooled[j] < pooled[i]) ++less;
      if (pooled[j] == pooled[i]) ++eq;
    }
    r2[i] = 2 * less + eq + 1;  // twice the mid-rank
  }
  long obs = 0;
  for (int i = 0; i < k; ++i) obs += r2[i];
  const long center = static_cast<long>(k) * (n + 1);  // twice the null mean
  const long dev = std::labs(obs - center);
  std::uint64_t extreme = 0, total = 0;
  for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
    if (__builtin_popcount(mask) != k) continue;
    long s = 0;
    for (int i = 0; i < n; ++i)
      if (mask >> i & 1u) s += r2[i];
    ++total;
    if (std::labs(s - center) >= dev) ++extreme;
  }
  return static_cast<double>(extreme) / static_cast<double>(total);
}

// ---- preference construction -----------------------------------------------

struct Cand {
  std::string system;
  double score;
};

// Best and worst by full scan; ties go to the smallest system id. nullopt when
// fewer than two candidates or no discrepancy.
inline std::optional<std::pair<std::string, std::string>> max_min(const std::vector<Cand>& c,
                                                                  bool higher_better,
                                                                  double min_margin) {
  if (c.size() < 2) return std::nullopt;
  auto key = [&](const Cand& x) { return higher_better ? x.score : -x.score; };
  const Cand* best = nullptr;
  const Cand* worst = nullptr;
  for (const auto& x : c) {
    if (!best || key(x) > key(*best) || (key(x) == key(*best) && x.system < best->system)) best = &x;
    if (!worst || key(x) < key(*worst) || (key(x) == key(*worst) && x.system < worst->system)) worst = &x;
  }
  double margin = key(*best) - key(*worst);
  if (margin == 0 || margin < min_margin) return std::nullopt;
  return std::pair{best->system, worst->system};
}

// ---- softmax policy ---------------------------------------------------------

inline std::vector<double> log_softmax(const std::vector<double>& logits) {
  long double z = 0;
  for (double v : logits) z += std::exp(static_cast<long double>(v));
  std::vector<double> out;
  for (double v : logits) out.push_back(static_cast<double>(v - std::log(z)));
  return out;
}

inline double neg_log_sigmoid(double z) { return std::log1p(std::exp(-z)); }

}  // namespace oracle

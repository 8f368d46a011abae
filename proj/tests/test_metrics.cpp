#include <gtest/gtest.h>

#include <random>

#include "oracles/oracles.hpp"
#include "test_util.hpp"
#include "transpref/metrics.hpp"

using namespace transpref;
using namespace transpref::metrics;

TEST(Chrf, PerfectAndEmpty) {
  EXPECT_EQ(chrf("abc", "abc"), 100.0);
  EXPECT_EQ(chrf("", "abc"), 0.0);
  EXPECT_EQ(chrf("abc", ""), 0.0);
  EXPECT_EQ(chrf("", ""), 0.0);
  EXPECT_EQ(chrf("a", "a"), 100.0);
  EXPECT_EQ(chrf("a b c", "abc"), 100.0);  // whitespace removed before extraction
}

TEST(Chrf, PartialMatchAgainstHandCount) {
  // Order 1: P=2/2, R=2/3; order 2: P=1/1, R=1/2; order 3: hyp has none -> 0;
  // orders 4-6 have no n-grams on either side and are left out.
  double f1 = 5.0 * 1.0 * (2.0 / 3) / (4.0 * 1.0 + 2.0 / 3);
  double f2 = 5.0 * 1.0 * 0.5 / (4.0 * 1.0 + 0.5);
  EXPECT_NEAR(chrf("ab", "abc"), 100.0 * (f1 + f2 + 0.0) / 3, 1e-12);
  EXPECT_EQ(chrf("ab", "abc"), oracle::chrf("ab", "abc"));
}

TEST(Chrf, MatchesBruteForceOracleExactly) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 1000; ++i) {
    auto h = testutil::random_unicode(rng, 24);
    auto r = i % 10 == 0 ? h : testutil::random_unicode(rng, 24);
    double got = chrf(h, r);
    EXPECT_EQ(got, oracle::chrf(h, r)) << "hyp='" << h << "' ref='" << r << "'";
    EXPECT_GE(got, 0.0);
    EXPECT_LE(got, 100.0);
  }
}

TEST(Chrf, SelfScoreIsHundred) {
  std::mt19937_64 rng(8);
  for (int i = 0; i < 200; ++i) {
    auto x = testutil::random_unicode(rng, 30) + "q";
    EXPECT_EQ(chrf(x, x), 100.0) << x;
  }
}

TEST(Chrf, ParameterValidation) {
  EXPECT_THROW(chrf("a", "a", 0), ValidationError);
  EXPECT_THROW(chrf("a", "a", 6, 0.0), ValidationError);
}

TEST(MetricSpec, ChrfDefaultsAndValidation) {
  auto c = MetricSpec::chrf();
  EXPECT_TRUE(c.needs_reference);
  EXPECT_EQ(c.orientation, Orientation::higher_better);
  c.orientation = Orientation::lower_better;
  EXPECT_THROW(c.validate(), ConfigError);

  auto m = metric_spec_from_json({{"id", "metricx"}, {"kind", "qe_client"}, {"orientation", "lower_better"},
                                  {"range", {0, 25}}, {"endpoint", "http://x/s"}});
  EXPECT_EQ(m.orientation, Orientation::lower_better);
  EXPECT_EQ(m.range->second, 25.0);
  EXPECT_THROW(metric_spec_from_json({{"id", "q"}, {"kind", "qe_client"}}), ConfigError);
}

TEST(MetricSpec, EnsembleRules) {
  auto a = metric_spec_from_json({{"id", "xl"}, {"kind", "qe_client"}, {"endpoint", "http://x/a"}});
  auto b = metric_spec_from_json({{"id", "xxl"}, {"kind", "qe_client"}, {"endpoint", "http://x/b"}});
  auto e = metric_spec_from_json({{"id", "ens"}, {"kind", "ensemble"}, {"members", {"xl", "xxl"}}});
  EXPECT_NO_THROW(validate_metric_set({a, b, e}));
  auto bad = b;
  bad.orientation = Orientation::lower_better;
  EXPECT_THROW(validate_metric_set({a, bad, e}), ConfigError);
  EXPECT_THROW(validate_metric_set({a, e}), ConfigError);
  EXPECT_THROW(validate_metric_set({a, a}), ConfigError);
  EXPECT_THROW(metric_spec_from_json({{"id", "one"}, {"kind", "ensemble"}, {"members", {"xl"}}}), ConfigError);
}

TEST(Ensemble, Means) {
  MetricSpec e;
  e.metric_id = "ens";
  e.kind = MetricKind::ensemble;
  e.members = {"xl", "xxl"};
  EXPECT_DOUBLE_EQ(ensemble_mean(e, {{"xl", 0.90}, {"xxl", 0.80}}), 0.85);
  EXPECT_EQ(ensemble_mean(e, {{"xl", 0.7}, {"xxl", 0.7}}), 0.7);
  e.members = {"a", "b", "c"};
  EXPECT_DOUBLE_EQ(ensemble_mean(e, {{"a", 0.2}, {"b", 0.5}, {"c", 0.8}}), 0.5);
  try {
    ensemble_mean(e, {{"a", 0.2}, {"c", 0.8}});
    FAIL();
  } catch (const ValidationError& err) {
    EXPECT_EQ(err.code(), "missing_member");
    EXPECT_NE(std::string(err.what()).find("'b'"), std::string::npos);
  }
}

TEST(Ensemble, PermutationInvariantAndBounded) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-5, 5);
  for (int i = 0; i < 200; ++i) {
    MetricSpec e;
    e.metric_id = "ens";
    e.kind = MetricKind::ensemble;
    std::map<std::string, double> scores;
    for (int k = 0; k < 2 + i % 4; ++k) {
      e.members.push_back("m" + std::to_string(k));
      scores[e.members.back()] = u(rng);
    }
    auto v = ensemble_mean(e, scores);
    auto rev = e;
    std::reverse(rev.members.begin(), rev.members.end());
    EXPECT_EQ(v, ensemble_mean(rev, scores));
    double lo = 1e9, hi = -1e9;
    for (auto& [k, s] : scores) {
      lo = std::min(lo, s);
      hi = std::max(hi, s);
    }
    EXPECT_GE(v, lo);
    EXPECT_LE(v, hi);
  }
}

TEST(Ensemble, AppliedOnlyWhenAllMembersPresent) {
  auto a = metric_spec_from_json({{"id", "xl"}, {"kind", "qe_client"}, {"endpoint", "http://x/a"}});
  auto b = metric_spec_from_json({{"id", "xxl"}, {"kind", "qe_client"}, {"endpoint", "http://x/b"}});
  auto e = metric_spec_from_json({{"id", "ens"}, {"kind", "ensemble"}, {"members", {"xl", "xxl"}}});
  ScoredHypothesis full{{}, {{"xl", 0.9}, {"xxl", 0.8}}};
  apply_ensembles({a, b, e}, full);
  EXPECT_DOUBLE_EQ(full.scores.at("ens"), 0.85);
  ScoredHypothesis part{{}, {{"xl", 0.9}}};
  apply_ensembles({a, b, e}, part);
  EXPECT_FALSE(part.scores.count("ens"));
}

namespace {

MetricSpec qe(const std::string& url, std::size_t fanout = 1) {
  MetricSpec m;
  m.metric_id = "kiwi";
  m.kind = MetricKind::qe_client;
  m.needs_reference = false;
  m.endpoint = url;
  m.fanout = fanout;
  m.retry.initial_backoff = std::chrono::milliseconds(1);
  return m;
}

json length_scorer(const json& body) {
  json out = {{"scores", json::array()}};
  for (const auto& p : body["pairs"])
    out["scores"].push_back({{"id", p["id"]}, {"score", p["mt"].get<std::string>().size() / 100.0}});
  return out;
}

}  // namespace

TEST(Qe, ConstantScorer) {
  testutil::MockServer server("/score", [](const json& body) {
    json out = {{"scores", json::array()}};
    for (const auto& p : body["pairs"]) out["scores"].push_back({{"id", p["id"]}, {"score", 0.5}});
    return out;
  });
  EXPECT_EQ(score_qe(qe(server.url()), "src", "anything"), 0.5);
  EXPECT_EQ(score_qe(qe(server.url()), "", ""), 0.5);
}

TEST(Qe, LengthScorer) {
  testutil::MockServer server("/score", length_scorer);
  EXPECT_DOUBLE_EQ(score_qe(qe(server.url()), "src", "abc"), 0.03);
}

TEST(Qe, FanoutMatchesSequential) {
  testutil::MockServer server("/score", length_scorer);
  std::vector<QePair> pairs;
  for (int i = 0; i < 50; ++i) pairs.push_back({std::to_string(i), "s", std::string(i, 'x'), std::nullopt});
  auto a = score_qe_batch(qe(server.url(), 1), pairs);
  auto b = score_qe_batch(qe(server.url(), 4), pairs);
  ASSERT_EQ(a.size(), 50u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].id, pairs[i].id);
    EXPECT_EQ(*a[i].score, *b[i].score);
    EXPECT_EQ(b[i].id, pairs[i].id);
  }
}

TEST(Qe, ReferenceFieldSent) {
  bool saw_ref = false;
  testutil::MockServer server("/score", [&](const json& body) {
    saw_ref = body["pairs"][0].contains("ref");
    return length_scorer(body);
  });
  auto m = qe(server.url());
  score_qe_batch(m, {{"0", "s", "mt", std::string("ref")}});
  EXPECT_TRUE(saw_ref);
}

TEST(Qe, TransportFailureBecomesItemErrors) {
  auto m = qe("http://127.0.0.1:1/score");
  m.retry.attempts = 2;
  auto res = score_qe_batch(m, {{"a", "s", "t", std::nullopt}, {"b", "s", "t", std::nullopt}});
  ASSERT_EQ(res.size(), 2u);
  EXPECT_FALSE(res[0].score);
  EXPECT_FALSE(res[0].error.empty());
  EXPECT_THROW(score_qe(m, "s", "t"), Error);
}

TEST(Qe, SchemaViolationIsProtocolError) {
  testutil::MockServer server("/score", [](const json&) { return json{{"nope", 1}}; });
  EXPECT_THROW(score_qe(qe(server.url()), "s", "t"), ProtocolError);
  testutil::MockServer wrong("/score", [](const json&) { return json{{"scores", {{{"id", "zzz"}, {"score", 1}}}}}; });
  EXPECT_THROW(score_qe(qe(wrong.url()), "s", "t"), ProtocolError);
}

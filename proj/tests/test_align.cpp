#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles/oracles.hpp"
#include "test_util.hpp"
#include "transpref/align.hpp"
#include "transpref/random.hpp"

using namespace transpref;
using namespace transpref::align;

namespace {

// One context, two candidates with fixed log-probabilities.
class FixedPolicy final : public Policy {
 public:
  FixedPolicy(double lp0, double lp1) : lp_{lp0, lp1} {}
  std::size_t num_contexts() const override { return 1; }
  std::size_t num_candidates(std::size_t) const override { return 2; }
  double log_prob(std::size_t, std::size_t c) const override { return lp_.at(c); }

 private:
  std::vector<double> lp_;
};

const double kLn2 = std::log(2.0);

std::string fixtures() { return TRANSPREF_FIXTURES; }

}  // namespace

TEST(Softplus, StableEverywhere) {
  EXPECT_EQ(softplus(0.0), kLn2);
  EXPECT_DOUBLE_EQ(softplus(1000.0), 1000.0);
  EXPECT_GT(softplus(-1000.0), -1.0);
  EXPECT_LT(softplus(-50.0), 1e-20);
  EXPECT_TRUE(std::isfinite(softplus(-1e308)));
  EXPECT_NEAR(sigmoid(0.0), 0.5, 0.0);
  EXPECT_NEAR(neg_log_sigmoid(1.0), std::log1p(std::exp(-1.0)), 1e-15);
}

TEST(Dpo, EqualPolicyIsLn2) {
  FixedPolicy p(-1.2, -3.4);
  EXPECT_NEAR(dpo_loss(p, p, 0, 0, 1, 0.1), kLn2, 1e-12);
  EXPECT_NEAR(dpo_loss(p, p, 0, 1, 0, 7.0), kLn2, 1e-12);
}

TEST(Dpo, WorkedExample) {
  FixedPolicy theta(-1.0, -2.0), ref(-1.5, -1.5);
  EXPECT_NEAR(dpo_loss(theta, ref, 0, 0, 1, 0.1), std::log1p(std::exp(-0.1)), 1e-12);
}

TEST(Dpo, Saturation) {
  FixedPolicy theta(0.0, -50.0), ref(-1.0, -1.0);
  double v = dpo_loss(theta, ref, 0, 0, 1, 1.0);
  EXPECT_LT(v, 1e-20);
  EXPECT_GE(v, 0.0);
  double w = dpo_loss(theta, ref, 0, 1, 0, 1.0);
  EXPECT_NEAR(w, 50.0, 1e-12);
}

TEST(CpoPref, Examples) {
  FixedPolicy tie(-0.7, -0.7);
  EXPECT_NEAR(cpo_pref_loss(tie, 0, 0, 1, 0.3), kLn2, 1e-12);
  FixedPolicy p(-0.5, -1.5);
  EXPECT_NEAR(cpo_pref_loss(p, 0, 0, 1, 1.0), std::log1p(std::exp(-1.0)), 1e-12);
  EXPECT_NEAR(cpo_pref_loss(p, 0, 0, 1, 1.0), 0.313262, 1e-6);
}

TEST(Cpo, SumOfClosedForms) {
  FixedPolicy p(-0.5, -1.5);
  EXPECT_NEAR(cpo_loss(p, 0, 0, 1, 1.0, 1.0), std::log1p(std::exp(-1.0)) + 0.5, 1e-12);
  EXPECT_NEAR(cpo_loss(p, 0, 0, 1, 1.0, 1.0), 0.813262, 1e-6);
  EXPECT_EQ(nll_loss(p, 0, 0), 0.5);
}

TEST(Cpo, LambdaZeroIsPreferenceTermBitwise) {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> nd(0, 3);
  std::uniform_real_distribution<double> beta(0.01, 5);
  for (int i = 0; i < 1000; ++i) {
    FixedPolicy p(nd(rng), nd(rng));
    double b = beta(rng);
    EXPECT_EQ(cpo_loss(p, 0, 0, 1, b, 0.0), cpo_pref_loss(p, 0, 0, 1, b));
  }
}

TEST(Loss, PreconditionsAndDpoPlusNll) {
  FixedPolicy p(-0.5, -1.5);
  EXPECT_THROW(dpo_loss(p, p, 0, 1, 1, 0.1), ValidationError);
  EXPECT_THROW(dpo_loss(p, p, 0, 0, 1, 0.0), ValidationError);
  EXPECT_THROW(cpo_loss(p, 0, 0, 1, 0.1, -1.0), ValidationError);
  EXPECT_THROW(loss_value({LossKind::dpo, 0.1, 1.0, nullptr}, p, {0, 0, 1}), ConfigError);
  LossSpec s{LossKind::dpo_plus_nll, 0.1, 2.0, &p};
  EXPECT_NEAR(loss_value(s, p, {0, 0, 1}), kLn2 + 2.0 * 0.5, 1e-12);
}

TEST(ToyPolicy, NormalisedAndMatchesSoftmaxOracle) {
  std::vector<std::size_t> counts = {2, 3, 16, 5};
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto p = ToyPolicy::random(counts, seed, 3.0);
    for (std::size_t x = 0; x < counts.size(); ++x) {
      auto lp = p.log_probs(x);
      auto want = oracle::log_softmax(p.logits()[x]);
      double total = 0;
      for (std::size_t k = 0; k < lp.size(); ++k) {
        EXPECT_NEAR(lp[k], want[k], 1e-13);
        EXPECT_EQ(lp[k], p.log_prob(x, k));
        total += std::exp(lp[k]);
      }
      EXPECT_NEAR(total, 1.0, 1e-12);
      EXPECT_NEAR(p.log_prob_diff(x, 0, 1), lp[0] - lp[1], 1e-12);
    }
  }
  auto u = ToyPolicy::uniform(counts);
  UniformPolicy ref(counts);
  EXPECT_NEAR(u.log_prob(2, 7), -std::log(16.0), 1e-15);
  EXPECT_NEAR(ref.log_prob(2, 7), -std::log(16.0), 1e-15);
  EXPECT_THROW(ToyPolicy(std::vector<std::vector<double>>{{}}), ValidationError);
  EXPECT_THROW(ToyPolicy(std::vector<std::vector<double>>{{0.0, NAN}}), ValidationError);
  EXPECT_THROW(u.log_prob(0, 5), ValidationError);
}

TEST(GradCheck, AllLossesOnRandomPolicies) {
  std::vector<std::size_t> counts = {3, 4, 2};
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto p = ToyPolicy::random(counts, seed);
    auto ref = ToyPolicy::random(counts, seed + 1000);
    Rng rng(seed);
    std::size_t x = rng.below(counts.size());
    std::size_t a = rng.below(counts[x]);
    std::size_t b = (a + 1 + rng.below(counts[x] - 1)) % counts[x];
    Sample s{x, a, b};
    for (auto kind : {LossKind::nll, LossKind::dpo, LossKind::cpo_pref, LossKind::cpo, LossKind::dpo_plus_nll}) {
      LossSpec spec{kind, 0.1 + 0.05 * static_cast<double>(seed % 10), 1.0, &ref};
      EXPECT_LT(grad_check(spec, p, s, 1e-6), 1e-5) << "seed " << seed << " kind " << static_cast<int>(kind);
    }
  }
}

TEST(GradCheck, AccumulateAddsWeightedGradient) {
  auto p = ToyPolicy::random(std::vector<std::size_t>{4}, 3);
  LossSpec spec{LossKind::cpo, 0.5, 1.0, nullptr};
  auto g1 = zero_gradient(p), g2 = zero_gradient(p);
  double v = accumulate_gradient(spec, p, {0, 1, 2}, g1, 1.0);
  accumulate_gradient(spec, p, {0, 1, 2}, g2, 0.25);
  EXPECT_EQ(v, loss_value(spec, p, {0, 1, 2}));
  double sum = 0;
  for (std::size_t k = 0; k < 4; ++k) {
    EXPECT_NEAR(g2[0][k], 0.25 * g1[0][k], 1e-15);
    sum += g1[0][k];
  }
  EXPECT_NEAR(sum, 0.0, 1e-12);  // softmax logits gradient sums to zero
}

TEST(Trainer, ConfigParsingAndValidation) {
  auto c = trainer_config_from_json({{"method", "DPO_base"}, {"beta", 0.2}, {"epochs", 10}});
  EXPECT_EQ(c.method, Method::DPO_base);
  EXPECT_EQ(c.beta, 0.2);
  EXPECT_EQ(parse_method(to_string(Method::DPO_base_plus_SFT)), Method::DPO_base_plus_SFT);
  EXPECT_THROW(parse_method("PPO"), ConfigError);
  TrainerConfig bad;
  bad.learning_rate = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Trainer, SftRaisesChosenLikelihood) {
  PreferenceProblem prob;
  prob.context_names = {"x"};
  prob.candidates = {{"a", "b", "c"}};
  prob.samples = {{0, 0, 1}};
  TrainerConfig cfg;
  cfg.method = Method::SFT;
  cfg.epochs = 50;
  auto r = train(prob, cfg);
  EXPECT_GT(r.final.lp_chosen, r.initial.lp_chosen);
  ASSERT_EQ(r.trace.size(), 50u);
  for (std::size_t i = 1; i < r.trace.size(); ++i) EXPECT_LE(r.trace[i].loss, r.trace[i - 1].loss + 1e-15);
}

TEST(Trainer, DpoFromUniformStartsAtLn2) {
  PreferenceProblem prob;
  prob.context_names = {"x"};
  prob.candidates = {{"a", "b", "c", "d"}};
  prob.samples = {{0, 1, 2}};
  prob.base = ToyPolicy::uniform(std::vector<std::size_t>{4});
  TrainerConfig cfg;
  cfg.method = Method::DPO_base;
  cfg.epochs = 20;
  auto r = train(prob, cfg);
  EXPECT_NEAR(r.trace.front().loss, kLn2, 1e-12);
  EXPECT_GT(r.trace.back().margin, 0.0);
  ASSERT_TRUE(r.reference);
}

TEST(Trainer, DeterministicForSeed) {
  PreferenceProblem prob;
  prob.context_names = {"x", "y"};
  prob.candidates = {{"a", "b"}, {"c", "d", "e"}};
  prob.samples = {{0, 0, 1}, {1, 2, 0}};
  TrainerConfig cfg;
  cfg.seed = 42;
  cfg.epochs = 30;
  auto a = train(prob, cfg), b = train(prob, cfg);
  EXPECT_EQ(a.policy.logits(), b.policy.logits());
  cfg.seed = 43;
  EXPECT_NE(train(prob, cfg).policy.logits(), a.policy.logits());
}

TEST(Trainer, CollapseFixture) {
  auto prob = load_fixture_problem(fixtures() + "/collapse.jsonl");
  ASSERT_TRUE(prob.base);
  TrainerConfig cfg;
  cfg.beta = 0.1;
  cfg.learning_rate = 0.1;
  cfg.epochs = 500;
  cfg.method = Method::DPO_base;
  auto dpo = train(prob, cfg);
  EXPECT_GT(dpo.final.margin, dpo.initial.margin);
  EXPECT_LT(dpo.final.lp_chosen, dpo.initial.lp_chosen);
  EXPECT_LT(dpo.final.lp_rejected, dpo.initial.lp_rejected);
  cfg.method = Method::CPO;
  cfg.lambda = 1.0;
  auto cpo = train(prob, cfg);
  EXPECT_GT(cpo.final.lp_chosen, dpo.final.lp_chosen);
  EXPECT_EQ(train(prob, cfg).policy.logits(), cpo.policy.logits());
}

TEST(Trainer, NonFiniteNamesStep) {
  // An absurd beta and step size push the logits past the range of double.
  auto prob = load_fixture_problem(fixtures() + "/collapse.jsonl");
  TrainerConfig cfg;
  cfg.method = Method::DPO_base;
  cfg.beta = 1e308;
  cfg.learning_rate = 1e308;
  cfg.epochs = 10;
  try {
    train(prob, cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "non_finite");
    EXPECT_NE(std::string(e.what()).find("step"), std::string::npos);
  }
}

TEST(Fixture, MalformedRowsRejected) {
  EXPECT_THROW(problem_from_fixture_rows({json{{"context", "x"}, {"candidates", {"a"}}, {"chosen_idx", 0},
                                               {"rejected_idx", 0}}}),
               ValidationError);
  EXPECT_THROW(problem_from_fixture_rows(
                   {json{{"context", "x"}, {"candidates", {"a", "b"}}, {"chosen_idx", 0}, {"rejected_idx", 1}},
                    json{{"context", "x"}, {"candidates", {"a", "c"}}, {"chosen_idx", 0}, {"rejected_idx", 1}}}),
               ValidationError);
  auto ok = problem_from_fixture_rows(
      {json{{"context", "x"}, {"candidates", {"a", "b"}}, {"chosen_idx", 1}, {"rejected_idx", 0}}});
  EXPECT_EQ(ok.samples.size(), 1u);
  EXPECT_FALSE(ok.base);
}

TEST(Triples, InternedCandidates) {
  prefs::PreferenceTriple t1, t2;
  t1.source.id = "s1";
  t1.chosen.hypothesis = {"s1", "g", "good", "en", "de"};
  t1.rejected.hypothesis = {"s1", "h", "bad", "en", "de"};
  t2 = t1;
  t2.source.id = "s2";
  auto prob = problem_from_triples({t1, t2});
  EXPECT_EQ(prob.context_names.size(), 2u);
  EXPECT_EQ(prob.samples.size(), 2u);
  EXPECT_EQ(prob.candidates[0].size(), 2u);
}

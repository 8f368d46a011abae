#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "transpref/common.hpp"
#include "transpref/prefs.hpp"

namespace transpref::align {

// A conditional distribution over a finite candidate set per context.
class Policy {
 public:
  virtual ~Policy() = default;
  virtual std::size_t num_contexts() const = 0;
  virtual std::size_t num_candidates(std::size_t context) const = 0;
  virtual double log_prob(std::size_t context, std::size_t candidate) const = 0;
  // log p(a|x) - log p(b|x). Implementations may skip the normaliser.
  virtual double log_prob_diff(std::size_t context, std::size_t a, std::size_t b) const {
    return log_prob(context, a) - log_prob(context, b);
  }
};

// Tabular softmax policy: one logit vector per context.
class ToyPolicy final : public Policy {
 public:
  ToyPolicy() = default;
  explicit ToyPolicy(std::vector<std::vector<double>> logits);

  static ToyPolicy uniform(std::span<const std::size_t> candidate_counts);
  // Logits drawn N(0, scale^2) from `seed`.
  static ToyPolicy random(std::span<const std::size_t> candidate_counts, std::uint64_t seed,
                          double scale = 1.0);

  std::size_t num_contexts() const override { return logits_.size(); }
  std::size_t num_candidates(std::size_t context) const override;
  double log_prob(std::size_t context, std::size_t candidate) const override;
  // Logit difference; exact because the softmax normaliser cancels.
  double log_prob_diff(std::size_t context, std::size_t a, std::size_t b) const override;

  std::vector<double> log_probs(std::size_t context) const;
  std::vector<double> probs(std::size_t context) const;

  const std::vector<std::vector<double>>& logits() const { return logits_; }
  std::vector<std::vector<double>>& logits() { return logits_; }
  std::size_t num_parameters() const;

 private:
  std::vector<std::vector<double>> logits_;
};

// The uniform reference: log p = -log |candidates| for every candidate.
class UniformPolicy final : public Policy {
 public:
  explicit UniformPolicy(std::vector<std::size_t> candidate_counts)
      : counts_(std::move(candidate_counts)) {}
  std::size_t num_contexts() const override { return counts_.size(); }
  std::size_t num_candidates(std::size_t context) const override { return counts_.at(context); }
  double log_prob(std::size_t context, std::size_t candidate) const override;

 private:
  std::vector<std::size_t> counts_;
};

struct Sample {
  std::size_t context = 0;
  std::size_t chosen = 0;
  std::size_t rejected = 0;
};

// softplus(z) = log(1 + e^z), stable for all finite z.
double softplus(double z);
// -log sigmoid(z) = softplus(-z)
inline double neg_log_sigmoid(double z) { return softplus(-z); }
double sigmoid(double z);

double nll_loss(const Policy& policy, std::size_t x, std::size_t y_plus);
double dpo_loss(const Policy& policy, const Policy& reference, std::size_t x, std::size_t y_plus,
                std::size_t y_minus, double beta);
double cpo_pref_loss(const Policy& policy, std::size_t x, std::size_t y_plus, std::size_t y_minus,
                     double beta);
double cpo_loss(const Policy& policy, std::size_t x, std::size_t y_plus, std::size_t y_minus,
                double beta, double lambda);

enum class LossKind { nll, dpo, cpo_pref, cpo, dpo_plus_nll };

struct LossSpec {
  LossKind kind = LossKind::cpo;
  double beta = 0.1;
  double lambda = 1.0;
  const Policy* reference = nullptr;  // dpo, dpo_plus_nll
};

double loss_value(const LossSpec& spec, const Policy& policy, const Sample& s);

using Gradient = std::vector<std::vector<double>>;  // shaped like ToyPolicy::logits()

Gradient zero_gradient(const ToyPolicy& policy);

// Adds weight * d(loss)/d(logits) into `grad` and returns the loss value.
double accumulate_gradient(const LossSpec& spec, const ToyPolicy& policy, const Sample& s,
                           Gradient& grad, double weight = 1.0);

// Max over all logits of |analytic - numeric| / max(1e-12, |analytic| + |numeric|)
// with central differences of step h.
double grad_check(const LossSpec& spec, const ToyPolicy& policy, const Sample& s, double h = 1e-6);
double grad_check(const LossSpec& spec, const ToyPolicy& policy, const Sample& s,
                  std::span<const double> steps);

// ---- training -------------------------------------------------------------

enum class Method { SFT, DPO_sft, DPO_base, DPO_base_plus_SFT, CPO };

Method parse_method(std::string_view s);
std::string_view to_string(Method m);

struct TrainerConfig {
  Method method = Method::CPO;
  double beta = 0.1;
  double lambda = 1.0;
  double learning_rate = 0.1;
  int epochs = 500;
  std::uint64_t seed = 0;
  // Scale of random initial logits when the problem has no base policy.
  double init_scale = 0.5;

  void validate() const;
};

TrainerConfig trainer_config_from_json(const json& j);

// A set of contexts with finite candidate sets and preference samples over
// them; optionally the base model's logits.
struct PreferenceProblem {
  std::vector<std::string> context_names;
  std::vector<std::vector<std::string>> candidates;  // per context
  std::vector<Sample> samples;
  std::optional<ToyPolicy> base;

  std::vector<std::size_t> candidate_counts() const;
  void validate() const;
};

// One context per source_id; candidate ids are assigned to distinct texts in
// order of first appearance (keyed by a hash of the text).
PreferenceProblem problem_from_triples(const std::vector<prefs::PreferenceTriple>& triples);

// Line-delimited {context, candidates:[...], chosen_idx, rejected_idx,
// base_logits?}. Lines sharing a context must list identical candidates.
PreferenceProblem load_fixture_problem(const std::filesystem::path& path);
PreferenceProblem problem_from_fixture_rows(const std::vector<json>& rows);

struct TraceStep {
  int step = 0;
  double loss = 0.0;
  double lp_chosen = 0.0;    // mean over samples
  double lp_rejected = 0.0;  // mean over samples
  double margin = 0.0;       // mean of lp_chosen - lp_rejected per sample
};

using TrainingTrace = std::vector<TraceStep>;

json to_json(const TraceStep& s);

struct PolicyStats {
  double lp_chosen = 0.0;
  double lp_rejected = 0.0;
  double margin = 0.0;
};

PolicyStats policy_stats(const Policy& policy, std::span<const Sample> samples);

struct TrainResult {
  ToyPolicy policy;
  TrainingTrace trace;  // one entry per epoch, recorded before the update
  PolicyStats initial;
  PolicyStats final;
  std::optional<ToyPolicy> reference;  // frozen reference of DPO variants
  TrainingTrace reference_trace;       // SFT phase of DPO_sft
};

// Full-batch gradient descent. Throws Error("non_finite") naming the step when
// a loss or gradient stops being finite.
TrainResult train(const PreferenceProblem& problem, const TrainerConfig& cfg);

// (log p(chosen), log p(rejected)) per sample.
std::vector<std::pair<double, double>> sample_loglikes(const Policy& policy,
                                                       std::span<const Sample> samples);

json policy_to_json(const ToyPolicy& policy, const PreferenceProblem& problem);
void write_trace(const std::filesystem::path& path, const TrainingTrace& trace);

}  // namespace transpref::align

#include "transpref/align.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "transpref/random.hpp"

namespace transpref::align {

ToyPolicy::ToyPolicy(std::vector<std::vector<double>> logits) : logits_(std::move(logits)) {
  for (std::size_t x = 0; x < logits_.size(); ++x) {
    if (logits_[x].empty()) throw ValidationError("context " + std::to_string(x) + " has no candidates");
    for (double v : logits_[x])
      if (!std::isfinite(v)) throw ValidationError("non-finite logit in context " + std::to_string(x));
  }
}

ToyPolicy ToyPolicy::uniform(std::span<const std::size_t> candidate_counts) {
  std::vector<std::vector<double>> l;
  for (auto n : candidate_counts) l.emplace_back(n, 0.0);
  return ToyPolicy(std::move(l));
}

ToyPolicy ToyPolicy::random(std::span<const std::size_t> candidate_counts, std::uint64_t seed,
                            double scale) {
  Rng rng(seed);
  std::vector<std::vector<double>> l;
  for (auto n : candidate_counts) {
    std::vector<double> row(n);
    for (auto& v : row) v = rng.normal(0.0, scale);
    l.push_back(std::move(row));
  }
  return ToyPolicy(std::move(l));
}

std::size_t ToyPolicy::num_candidates(std::size_t context) const {
  if (context >= logits_.size()) throw ValidationError("unknown context " + std::to_string(context));
  return logits_[context].size();
}

std::vector<double> ToyPolicy::log_probs(std::size_t context) const {
  const auto& row = logits_.at(context);
  double m = *std::max_element(row.begin(), row.end());
  double s = 0.0;
  for (double v : row) s += std::exp(v - m);
  double lse = m + std::log(s);
  std::vector<double> out(row.size());
  for (std::size_t k = 0; k < row.size(); ++k) out[k] = row[k] - lse;
  return out;
}

std::vector<double> ToyPolicy::probs(std::size_t context) const {
  auto lp = log_probs(context);
  for (auto& v : lp) v = std::exp(v);
  return lp;
}

double ToyPolicy::log_prob(std::size_t context, std::size_t candidate) const {
  if (candidate >= num_candidates(context))
    throw ValidationError("unknown candidate " + std::to_string(candidate) + " in context " +
                          std::to_string(context));
  return log_probs(context)[candidate];
}

double ToyPolicy::log_prob_diff(std::size_t context, std::size_t a, std::size_t b) const {
  auto n = num_candidates(context);
  if (a >= n || b >= n) throw ValidationError("unknown candidate in context " + std::to_string(context));
  return logits_[context][a] - logits_[context][b];
}

std::size_t ToyPolicy::num_parameters() const {
  std::size_t n = 0;
  for (const auto& r : logits_) n += r.size();
  return n;
}

double UniformPolicy::log_prob(std::size_t context, std::size_t candidate) const {
  auto n = counts_.at(context);
  if (candidate >= n) throw ValidationError("unknown candidate " + std::to_string(candidate));
  return -std::log(static_cast<double>(n));
}

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  double e = std::exp(z);
  return e / (1.0 + e);
}

namespace {

void check_pair(const Policy& p, std::size_t x, std::size_t y_plus, std::size_t y_minus, double beta) {
  if (y_plus == y_minus) throw ValidationError("chosen and rejected candidates are identical");
  auto n = p.num_candidates(x);
  if (y_plus >= n || y_minus >= n) throw ValidationError("unknown candidate in context " + std::to_string(x));
  if (!(beta > 0)) throw ValidationError("beta must be > 0");
}

// beta * [(log pi(y+) - log ref(y+)) - (log pi(y-) - log ref(y-))]
double dpo_argument(const Policy& policy, const Policy& reference, std::size_t x, std::size_t yp,
                    std::size_t ym, double beta) {
  return beta * (policy.log_prob_diff(x, yp, ym) - reference.log_prob_diff(x, yp, ym));
}

}  // namespace

double nll_loss(const Policy& policy, std::size_t x, std::size_t y_plus) {
  if (y_plus >= policy.num_candidates(x))
    throw ValidationError("unknown candidate " + std::to_string(y_plus));
  return -policy.log_prob(x, y_plus);
}

double dpo_loss(const Policy& policy, const Policy& reference, std::size_t x, std::size_t y_plus,
                std::size_t y_minus, double beta) {
  check_pair(policy, x, y_plus, y_minus, beta);
  check_pair(reference, x, y_plus, y_minus, beta);
  return neg_log_sigmoid(dpo_argument(policy, reference, x, y_plus, y_minus, beta));
}

double cpo_pref_loss(const Policy& policy, std::size_t x, std::size_t y_plus, std::size_t y_minus,
                     double beta) {
  check_pair(policy, x, y_plus, y_minus, beta);
  return neg_log_sigmoid(beta * policy.log_prob_diff(x, y_plus, y_minus));
}

double cpo_loss(const Policy& policy, std::size_t x, std::size_t y_plus, std::size_t y_minus,
                double beta, double lambda) {
  if (lambda < 0) throw ValidationError("lambda must be >= 0");
  return cpo_pref_loss(policy, x, y_plus, y_minus, beta) + lambda * nll_loss(policy, x, y_plus);
}

double loss_value(const LossSpec& spec, const Policy& policy, const Sample& s) {
  auto need_ref = [&]() -> const Policy& {
    if (!spec.reference) throw ConfigError("DPO loss needs a reference policy");
    return *spec.reference;
  };
  switch (spec.kind) {
    case LossKind::nll: return nll_loss(policy, s.context, s.chosen);
    case LossKind::dpo: return dpo_loss(policy, need_ref(), s.context, s.chosen, s.rejected, spec.beta);
    case LossKind::cpo_pref: return cpo_pref_loss(policy, s.context, s.chosen, s.rejected, spec.beta);
    case LossKind::cpo: return cpo_loss(policy, s.context, s.chosen, s.rejected, spec.beta, spec.lambda);
    case LossKind::dpo_plus_nll:
      return dpo_loss(policy, need_ref(), s.context, s.chosen, s.rejected, spec.beta) +
             spec.lambda * nll_loss(policy, s.context, s.chosen);
  }
  throw ConfigError("bad loss kind");
}

Gradient zero_gradient(const ToyPolicy& policy) {
  Gradient g;
  for (const auto& r : policy.logits()) g.emplace_back(r.size(), 0.0);
  return g;
}

double accumulate_gradient(const LossSpec& spec, const ToyPolicy& policy, const Sample& s,
                           Gradient& grad, double weight) {
  const double value = loss_value(spec, policy, s);
  auto& g = grad.at(s.context);

  // d/dlogit_k of -log p(y) = p_k - [k == y]
  auto add_nll = [&](double w) {
    auto p = policy.probs(s.context);
    for (std::size_t k = 0; k < p.size(); ++k) g[k] += w * p[k];
    g[s.chosen] -= w;
  };
  // d/dz of softplus(-z) = -sigmoid(-z); z depends on logits only via
  // beta * (logit[y+] - logit[y-]).
  auto add_pref = [&](double z, double w) {
    double d = -sigmoid(-z) * spec.beta * w;
    g[s.chosen] += d;
    g[s.rejected] -= d;
  };

  switch (spec.kind) {
    case LossKind::nll:
      add_nll(weight);
      break;
    case LossKind::dpo:
      add_pref(dpo_argument(policy, *spec.reference, s.context, s.chosen, s.rejected, spec.beta), weight);
      break;
    case LossKind::cpo_pref:
      add_pref(spec.beta * policy.log_prob_diff(s.context, s.chosen, s.rejected), weight);
      break;
    case LossKind::cpo:
      add_pref(spec.beta * policy.log_prob_diff(s.context, s.chosen, s.rejected), weight);
      add_nll(weight * spec.lambda);
      break;
    case LossKind::dpo_plus_nll:
      add_pref(dpo_argument(policy, *spec.reference, s.context, s.chosen, s.rejected, spec.beta), weight);
      add_nll(weight * spec.lambda);
      break;
  }
  return value;
}

double grad_check(const LossSpec& spec, const ToyPolicy& policy, const Sample& s, double h) {
  auto analytic = zero_gradient(policy);
  accumulate_gradient(spec, policy, s, analytic);
  ToyPolicy probe = policy;
  double worst = 0.0;
  for (std::size_t x = 0; x < probe.logits().size(); ++x) {
    for (std::size_t k = 0; k < probe.logits()[x].size(); ++k) {
      double& theta = probe.logits()[x][k];
      const double orig = theta;
      theta = orig + h;
      double up = loss_value(spec, probe, s);
      theta = orig - h;
      double down = loss_value(spec, probe, s);
      theta = orig;
      double numeric = (up - down) / (2 * h);
      double a = analytic[x][k];
      double rel = std::abs(a - numeric) / std::max(1e-12, std::abs(a) + std::abs(numeric));
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

double grad_check(const LossSpec& spec, const ToyPolicy& policy, const Sample& s,
                  std::span<const double> steps) {
  double worst = 0.0;
  for (double h : steps) worst = std::max(worst, grad_check(spec, policy, s, h));
  return worst;
}

Method parse_method(std::string_view s) {
  if (s == "SFT") return Method::SFT;
  if (s == "DPO_sft") return Method::DPO_sft;
  if (s == "DPO_base") return Method::DPO_base;
  if (s == "DPO_base_plus_SFT" || s == "DPO_base+SFT") return Method::DPO_base_plus_SFT;
  if (s == "CPO") return Method::CPO;
  throw ConfigError("unknown training method '" + std::string(s) + "'");
}

std::string_view to_string(Method m) {
  switch (m) {
    case Method::SFT: return "SFT";
    case Method::DPO_sft: return "DPO_sft";
    case Method::DPO_base: return "DPO_base";
    case Method::DPO_base_plus_SFT: return "DPO_base_plus_SFT";
    case Method::CPO: return "CPO";
  }
  return "?";
}

void TrainerConfig::validate() const {
  if (!(beta > 0)) throw ConfigError("beta must be > 0");
  if (!(lambda >= 0)) throw ConfigError("lambda must be >= 0");
  if (!(learning_rate > 0)) throw ConfigError("learning_rate must be > 0");
  if (epochs <= 0) throw ConfigError("epochs must be > 0");
  if (!(init_scale >= 0)) throw ConfigError("init_scale must be >= 0");
}

TrainerConfig trainer_config_from_json(const json& j) {
  TrainerConfig c;
  if (j.contains("method")) c.method = parse_method(j["method"].get<std::string>());
  c.beta = j.value("beta", c.beta);
  c.lambda = j.value("lambda", c.lambda);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.epochs = j.value("epochs", c.epochs);
  c.seed = j.value("seed", c.seed);
  c.init_scale = j.value("init_scale", c.init_scale);
  c.validate();
  return c;
}

std::vector<std::size_t> PreferenceProblem::candidate_counts() const {
  std::vector<std::size_t> out;
  for (const auto& c : candidates) out.push_back(c.size());
  return out;
}

void PreferenceProblem::validate() const {
  if (samples.empty()) throw ValidationError("preference problem has no samples");
  if (context_names.size() != candidates.size())
    throw ValidationError("context names and candidate sets differ in size");
  for (const auto& s : samples) {
    if (s.context >= candidates.size()) throw ValidationError("sample references unknown context");
    auto n = candidates[s.context].size();
    if (s.chosen >= n || s.rejected >= n) throw ValidationError("sample references unknown candidate");
    if (s.chosen == s.rejected)
      throw ValidationError("sample in context '" + context_names[s.context] + "' prefers a candidate over itself");
  }
  if (base) {
    if (base->num_contexts() != candidates.size()) throw ValidationError("base policy has wrong context count");
    for (std::size_t x = 0; x < candidates.size(); ++x)
      if (base->num_candidates(x) != candidates[x].size())
        throw ValidationError("base policy has wrong candidate count for '" + context_names[x] + "'");
  }
}

PreferenceProblem problem_from_triples(const std::vector<prefs::PreferenceTriple>& triples) {
  PreferenceProblem p;
  std::map<std::string, std::size_t> ctx_index;
  std::vector<std::map<std::uint64_t, std::size_t>> cand_index;
  auto intern = [&](std::size_t ctx, const std::string& text) {
    auto h = fnv1a64(text);
    auto [it, inserted] = cand_index[ctx].emplace(h, p.candidates[ctx].size());
    if (inserted) p.candidates[ctx].push_back(text);
    return it->second;
  };
  for (const auto& t : triples) {
    auto [it, inserted] = ctx_index.emplace(t.source.id, p.context_names.size());
    if (inserted) {
      p.context_names.push_back(t.source.id);
      p.candidates.emplace_back();
      cand_index.emplace_back();
    }
    auto ctx = it->second;
    auto yp = intern(ctx, t.chosen.hypothesis.text);
    auto ym = intern(ctx, t.rejected.hypothesis.text);
    if (yp == ym) continue;  // identical texts carry no preference signal
    p.samples.push_back({ctx, yp, ym});
  }
  return p;
}

PreferenceProblem problem_from_fixture_rows(const std::vector<json>& rows) {
  PreferenceProblem p;
  std::map<std::string, std::size_t> ctx_index;
  std::vector<std::optional<std::vector<double>>> base_rows;
  for (const auto& r : rows) {
    auto name = r.at("context").is_string() ? r["context"].get<std::string>() : r["context"].dump();
    auto cands = r.at("candidates").get<std::vector<std::string>>();
    if (cands.size() < 2 || cands.size() > 16)
      throw ValidationError("context '" + name + "' must have 2..16 candidates");
    auto [it, inserted] = ctx_index.emplace(name, p.context_names.size());
    if (inserted) {
      p.context_names.push_back(name);
      p.candidates.push_back(cands);
      base_rows.emplace_back();
    } else if (p.candidates[it->second] != cands) {
      throw ValidationError("context '" + name + "' lists different candidates on different lines");
    }
    auto ctx = it->second;
    if (r.contains("base_logits")) {
      auto bl = r["base_logits"].get<std::vector<double>>();
      if (bl.size() != cands.size()) throw ValidationError("base_logits size mismatch for '" + name + "'");
      if (base_rows[ctx] && *base_rows[ctx] != bl)
        throw ValidationError("conflicting base_logits for '" + name + "'");
      base_rows[ctx] = bl;
    }
    p.samples.push_back({ctx, r.at("chosen_idx").get<std::size_t>(), r.at("rejected_idx").get<std::size_t>()});
  }
  bool any = std::any_of(base_rows.begin(), base_rows.end(), [](const auto& b) { return b.has_value(); });
  if (any) {
    std::vector<std::vector<double>> logits;
    for (std::size_t x = 0; x < base_rows.size(); ++x)
      logits.push_back(base_rows[x] ? *base_rows[x] : std::vector<double>(p.candidates[x].size(), 0.0));
    p.base = ToyPolicy(std::move(logits));
  }
  p.validate();
  return p;
}

PreferenceProblem load_fixture_problem(const std::filesystem::path& path) {
  std::vector<LineError> errs;
  auto rows = read_jsonl(path, &errs);
  if (!errs.empty())
    throw ValidationError("malformed fixture line " + std::to_string(errs[0].line_no) + " in " + path.string());
  return problem_from_fixture_rows(rows);
}

json to_json(const TraceStep& s) {
  return {{"step", s.step}, {"loss", s.loss}, {"lp_chosen", s.lp_chosen},
          {"lp_rejected", s.lp_rejected}, {"margin", s.margin}};
}

std::vector<std::pair<double, double>> sample_loglikes(const Policy& policy,
                                                       std::span<const Sample> samples) {
  std::vector<std::pair<double, double>> out;
  out.reserve(samples.size());
  for (const auto& s : samples)
    out.emplace_back(policy.log_prob(s.context, s.chosen), policy.log_prob(s.context, s.rejected));
  return out;
}

PolicyStats policy_stats(const Policy& policy, std::span<const Sample> samples) {
  std::vector<double> c, r, m;
  for (const auto& [lc, lr] : sample_loglikes(policy, samples)) {
    c.push_back(lc);
    r.push_back(lr);
    m.push_back(lc - lr);
  }
  const double n = static_cast<double>(samples.size());
  return {pairwise_sum(c) / n, pairwise_sum(r) / n, pairwise_sum(m) / n};
}

namespace {

void require_finite(double v, int step, const char* what) {
  if (!std::isfinite(v))
    throw Error("non_finite", std::string("non-finite ") + what + " at step " + std::to_string(step));
}

// Runs full-batch descent of `spec` from `init`; appends to `trace`.
ToyPolicy descend(const PreferenceProblem& problem, ToyPolicy policy, const LossSpec& spec,
                  const TrainerConfig& cfg, TrainingTrace& trace) {
  const auto& samples = problem.samples;
  const double w = 1.0 / static_cast<double>(samples.size());
  std::vector<double> losses(samples.size());
  for (int step = 0; step < cfg.epochs; ++step) {
    auto grad = zero_gradient(policy);
    for (std::size_t i = 0; i < samples.size(); ++i)
      losses[i] = accumulate_gradient(spec, policy, samples[i], grad, w);
    const double loss = pairwise_sum(losses) / static_cast<double>(samples.size());
    require_finite(loss, step, "loss");
    auto st = policy_stats(policy, samples);
    trace.push_back({step, loss, st.lp_chosen, st.lp_rejected, st.margin});
    for (std::size_t x = 0; x < grad.size(); ++x)
      for (std::size_t k = 0; k < grad[x].size(); ++k) {
        require_finite(grad[x][k], step, "gradient");
        policy.logits()[x][k] -= cfg.learning_rate * grad[x][k];
        require_finite(policy.logits()[x][k], step, "parameter");
      }
  }
  return policy;
}

}  // namespace

TrainResult train(const PreferenceProblem& problem, const TrainerConfig& cfg) {
  cfg.validate();
  problem.validate();
  const auto counts = problem.candidate_counts();
  ToyPolicy init = problem.base ? *problem.base : ToyPolicy::random(counts, cfg.seed, cfg.init_scale);

  TrainResult res;
  res.initial = policy_stats(init, problem.samples);
  switch (cfg.method) {
    case Method::SFT:
      res.policy = descend(problem, init, {LossKind::nll, cfg.beta, cfg.lambda, nullptr}, cfg, res.trace);
      break;
    case Method::CPO:
      res.policy = descend(problem, init, {LossKind::cpo, cfg.beta, cfg.lambda, nullptr}, cfg, res.trace);
      break;
    case Method::DPO_base:
    case Method::DPO_base_plus_SFT: {
      res.reference = init;
      auto kind = cfg.method == Method::DPO_base ? LossKind::dpo : LossKind::dpo_plus_nll;
      res.policy = descend(problem, init, {kind, cfg.beta, cfg.lambda, &*res.reference}, cfg, res.trace);
      break;
    }
    case Method::DPO_sft: {
      res.reference = descend(problem, init, {LossKind::nll, cfg.beta, cfg.lambda, nullptr}, cfg,
                              res.reference_trace);
      res.policy = descend(problem, *res.reference, {LossKind::dpo, cfg.beta, cfg.lambda, &*res.reference},
                           cfg, res.trace);
      break;
    }
  }
  res.final = policy_stats(res.policy, problem.samples);
  return res;
}

json policy_to_json(const ToyPolicy& policy, const PreferenceProblem& problem) {
  json ctxs = json::array();
  for (std::size_t x = 0; x < policy.num_contexts(); ++x)
    ctxs.push_back({{"context", x < problem.context_names.size() ? problem.context_names[x] : std::to_string(x)},
                    {"candidates", x < problem.candidates.size() ? json(problem.candidates[x]) : json::array()},
                    {"logits", policy.logits()[x]},
                    {"log_probs", policy.log_probs(x)}});
  return {{"contexts", ctxs}};
}

void write_trace(const std::filesystem::path& path, const TrainingTrace& trace) {
  std::vector<json> rows;
  rows.reserve(trace.size());
  for (const auto& s : trace) rows.push_back(to_json(s));
  write_jsonl(path, rows);
}

}  // namespace transpref::align

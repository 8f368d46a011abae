#include "transpref/pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <iomanip>
#include <set>
#include <sstream>

#include "transpref/prefs.hpp"
#include "transpref/syseval.hpp"

namespace transpref::pipeline {

namespace fs = std::filesystem;

const metrics::MetricSpec& RunConfig::metric(const std::string& id) const {
  for (const auto& m : metrics)
    if (m.metric_id == id) return m;
  throw ConfigError("unknown metric '" + id + "'");
}

std::string scorer_env_var(const std::string& metric_id) {
  std::string v = "TRANSPREF_SCORER_";
  for (unsigned char c : metric_id) v += std::isalnum(c) ? static_cast<char>(std::toupper(c)) : '_';
  return v;
}

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

template <class F>
auto config_section(const char* name, F&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid '") + name + "' section: " + e.what());
  }
}

}  // namespace

RunConfig run_config_from_json(const json& j, const fs::path& base_dir,
                               std::optional<std::uint64_t> seed_override) {
  if (!j.is_object()) throw ConfigError("run config must be a JSON object");
  RunConfig c;
  c.base_dir = base_dir;
  if (j.contains("seed")) c.seed = config_section("seed", [&] { return j["seed"].get<std::uint64_t>(); });
  if (seed_override) c.seed = seed_override;

  config_section("corpora", [&] {
    for (const auto& e : j.value("corpora", json::array()))
      c.corpora.push_back({resolve(base_dir, e.at("path").get<std::string>()), e.at("lang").get<std::string>()});
  });
  if (j.contains("filter"))
    c.filter = config_section("filter", [&] { return corpus::filter_config_from_json(j["filter"]); });
  config_section("targets", [&] {
    if (j.contains("targets"))
      c.targets = j["targets"].get<std::map<std::string, std::vector<std::string>>>();
  });
  if (j.contains("references")) c.references = resolve(base_dir, j["references"].get<std::string>());

  std::set<std::string> system_ids;
  config_section("systems", [&] {
    for (auto e : j.value("systems", json::array())) {
      if (e.value("kind", std::string{}) == "fixture" && e.contains("endpoint"))
        e["endpoint"] = resolve(base_dir, e["endpoint"].get<std::string>()).string();
      auto spec = systems::system_spec_from_json(e);
      if (!system_ids.insert(spec.system_id).second)
        throw ConfigError("duplicate system id '" + spec.system_id + "'");
      c.systems.push_back(std::move(spec));
    }
  });

  json metrics_fp = json::array();
  config_section("metrics", [&] {
    for (auto e : j.value("metrics", json::array())) {
      auto id = e.at("id").get<std::string>();
      if (const char* env = std::getenv(scorer_env_var(id).c_str()); env && *env) e["endpoint"] = env;
      if (e.value("precomputed", false)) {
        c.precomputed.insert(id);
        if (!e.contains("endpoint")) e["endpoint"] = "precomputed";
      }
      metrics_fp.push_back(e);
      c.metrics.push_back(metrics::metric_spec_from_json(e));
    }
  });
  metrics::validate_metric_set(c.metrics);

  if (j.contains("prefs")) {
    config_section("prefs", [&] {
      const auto& p = j["prefs"];
      c.prefs_metric = p.at("metric").get<std::string>();
      c.min_margin = p.value("min_margin", 0.0);
    });
    c.metric(c.prefs_metric);
    if (!(c.min_margin >= 0.0)) throw ConfigError("prefs.min_margin must be non-negative");
  }
  if (j.contains("trainer")) {
    config_section("trainer", [&] {
      c.trainer = align::trainer_config_from_json(j["trainer"]);
      if (j["trainer"].contains("fixture"))
        c.trainer_fixture = resolve(base_dir, j["trainer"]["fixture"].get<std::string>());
    });
  }
  if (j.contains("metaeval")) {
    config_section("metaeval", [&] {
      const auto& m = j["metaeval"];
      if (m.contains("ratings")) c.ratings = resolve(base_dir, m["ratings"].get<std::string>());
      if (m.contains("scores")) c.extra_scores = resolve(base_dir, m["scores"].get<std::string>());
      if (m.contains("mode")) c.grouping = metaeval::parse_grouping_mode(m["mode"].get<std::string>());
    });
  }
  if (j.contains("syseval")) {
    config_section("syseval", [&] {
      const auto& s = j["syseval"];
      c.syseval_metric = s.at("metric").get<std::string>();
      c.alpha = s.value("alpha", 0.05);
      if (s.contains("ratings") && !c.ratings) c.ratings = resolve(base_dir, s["ratings"].get<std::string>());
    });
    c.metric(c.syseval_metric);
    if (!(c.alpha > 0.0 && c.alpha < 1.0)) throw ConfigError("syseval.alpha must lie in (0, 1)");
  }

  auto section = [&](const char* name) { return j.contains(name) ? j[name].dump() : std::string("null"); };
  for (const char* name : {"corpora", "filter", "targets", "references", "systems", "prefs", "trainer",
                           "metaeval", "syseval"})
    c.fingerprints[name] = section(name);
  c.fingerprints["metrics"] = metrics_fp.dump();
  c.fingerprints["seed"] = c.seed ? std::to_string(*c.seed) : "null";
  return c;
}

RunConfig load_run_config(const fs::path& path, std::optional<std::uint64_t> seed_override) {
  json j = json::parse(read_file(path), nullptr, false);
  if (j.is_discarded()) throw ConfigError("run config " + path.string() + " is not valid JSON");
  return run_config_from_json(j, path.parent_path().empty() ? fs::path(".") : path.parent_path(),
                              seed_override);
}

// ---- lock -----------------------------------------------------------------

OutDirLock::OutDirLock(const fs::path& out) : path_(out / ".lock") {
  fs::create_directories(out);
  int fd = ::open(path_.c_str(), O_WRONLY | O_CREAT | O_EXCL | O_CLOEXEC, 0644);
  if (fd < 0)
    throw IoError("output directory " + out.string() + " is locked by another run (remove " +
                  path_.string() + " if that run is gone)");
  auto pid = std::to_string(::getpid()) + "\n";
  [[maybe_unused]] auto w = ::write(fd, pid.data(), pid.size());
  ::close(fd);
}

OutDirLock::~OutDirLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

// ---- step plumbing --------------------------------------------------------

namespace {

class Step {
 public:
  Step(std::string name, const Options& opts, std::vector<std::string> outputs)
      : name_(std::move(name)), opts_(opts), outputs_(std::move(outputs)), key_(fnv1a64(name_)) {
    fs::create_directories(opts_.out);
  }

  void add(std::string_view tag, std::string_view data) {
    key_ = fnv1a64(tag, key_);
    key_ = fnv1a64(std::to_string(data.size()), key_);
    key_ = fnv1a64(data, key_);
  }
  void add_file(const fs::path& p) { add(p.filename().string(), read_file(p)); }

  fs::path out(const std::string& name) const { return opts_.out / name; }

  // True when a previous run with the same key left every output in place.
  bool up_to_date() const {
    if (opts_.force) return false;
    auto cached = cache_path();
    if (!fs::exists(cached)) return false;
    for (const auto& o : outputs_)
      if (!fs::exists(out(o))) return false;
    return trim(read_file(cached)) == hex64(key_);
  }

  void invalidate() const {
    std::error_code ec;
    fs::remove(cache_path(), ec);
  }

  void commit() const {
    fs::create_directories(cache_path().parent_path());
    write_file_atomic(cache_path(), hex64(key_) + "\n");
  }

  StepResult cached_result() const {
    StepResult r{name_, true, 0, 0};
    auto summary = cache_path();
    summary += ".json";
    if (fs::exists(summary)) {
      auto j = json::parse(read_file(summary));
      r.records = j.value("records", std::size_t{0});
      r.record_errors = j.value("record_errors", std::size_t{0});
    }
    log("up to date");
    return r;
  }

  StepResult finish(std::size_t records, std::size_t errors) const {
    auto summary = cache_path();
    summary += ".json";
    fs::create_directories(summary.parent_path());
    write_file_atomic(summary, json{{"records", records}, {"record_errors", errors}}.dump() + "\n");
    commit();
    log(std::to_string(records) + " records, " + std::to_string(errors) + " record-level errors");
    return {name_, false, records, errors};
  }

  void log(const std::string& msg) const {
    if (opts_.log) *opts_.log << "[" << name_ << "] " << msg << "\n";
  }

 private:
  fs::path cache_path() const { return opts_.out / ".cache" / (name_ + ".key"); }

  std::string name_;
  const Options& opts_;
  std::vector<std::string> outputs_;
  std::uint64_t key_;
};

void require_input(const fs::path& p, const char* produced_by) {
  if (!fs::exists(p))
    throw ConfigError("missing input " + p.string() + " (run '" + produced_by + "' first)");
}

template <class T>
std::vector<json> rows_of(const std::vector<T>& v) {
  std::vector<json> out;
  out.reserve(v.size());
  for (const auto& x : v) out.push_back(to_json(x));
  return out;
}

std::vector<corpus::SourceSegment> load_segments(const fs::path& p) {
  auto res = corpus::ingest_segments(p, "");
  if (!res.rejects.empty()) throw ValidationError("corrupt segment file " + p.string());
  return res.segments;
}

std::vector<systems::Hypothesis> load_hypotheses(const fs::path& p) {
  std::vector<systems::Hypothesis> out;
  for (const auto& r : read_jsonl(p)) out.push_back(systems::hypothesis_from_json(r));
  return out;
}

std::string lp_of(const std::string& src, const std::string& tgt) { return src + "-" + tgt; }

std::vector<metaeval::MetricScore> gather_scores(const RunConfig& cfg, const Options& opts, Step& step,
                                                 std::vector<json>& errors) {
  std::vector<metaeval::MetricScore> scores;
  std::vector<fs::path> files;
  if (fs::exists(opts.out / "scores.jsonl")) files.push_back(opts.out / "scores.jsonl");
  if (cfg.extra_scores) files.push_back(*cfg.extra_scores);
  if (files.empty()) throw ConfigError("no metric scores: run 'score' or set metaeval.scores");
  for (const auto& f : files) {
    step.add_file(f);
    auto load = metaeval::load_scores(f);
    for (const auto& s : load.scores) cfg.metric(s.metric_id);
    scores.insert(scores.end(), load.scores.begin(), load.scores.end());
    errors.insert(errors.end(), load.errors.begin(), load.errors.end());
  }
  return scores;
}

}  // namespace

// ---- steps ------------------------------------------------------------------

StepResult run_ingest(const RunConfig& cfg, const Options& opts) {
  Step step("ingest", opts, {"segments.jsonl", "segment_rejects.jsonl"});
  if (cfg.corpora.empty()) throw ConfigError("no corpora configured");
  step.add("corpora", cfg.fingerprints.at("corpora"));
  step.add("filter", cfg.fingerprints.at("filter"));
  for (const auto& c : cfg.corpora) step.add_file(c.path);
  if (step.up_to_date()) return step.cached_result();
  step.invalidate();

  std::vector<corpus::SourceSegment> all;
  std::vector<json> rejects;
  std::set<std::string> ids;
  for (const auto& c : cfg.corpora) {
    auto res = corpus::ingest_segments(c.path, c.language);
    for (auto& r : res.rejects) {
      r["file"] = c.path.filename().string();
      rejects.push_back(std::move(r));
    }
    for (auto& s : res.segments) {
      if (!ids.insert(s.id).second) {
        auto r = corpus::to_json(s);
        r["error"] = "duplicate id across corpora";
        r["file"] = c.path.filename().string();
        rejects.push_back(std::move(r));
        continue;
      }
      all.push_back(std::move(s));
    }
  }
  auto kept = corpus::filter_segments(all, cfg.filter);
  step.log("kept " + std::to_string(kept.size()) + " of " + std::to_string(all.size()) + " segments");
  corpus::write_segments(step.out("segments.jsonl"), kept);
  write_jsonl(step.out("segment_rejects.jsonl"), rejects);
  return step.finish(kept.size(), rejects.size());
}

StepResult run_translate(const RunConfig& cfg, const Options& opts) {
  Step step("translate", opts, {"hypotheses.jsonl", "hypothesis_errors.jsonl"});
  auto seg_path = opts.out / "segments.jsonl";
  require_input(seg_path, "ingest");
  if (cfg.systems.empty()) throw ConfigError("no systems configured");
  step.add("systems", cfg.fingerprints.at("systems"));
  step.add("targets", cfg.fingerprints.at("targets"));
  step.add_file(seg_path);
  for (const auto& s : cfg.systems)
    if (s.kind == systems::SystemKind::fixture) step.add_file(s.endpoint);
  if (step.up_to_date()) return step.cached_result();
  step.invalidate();

  auto segments = load_segments(seg_path);
  std::map<std::string, std::vector<corpus::SourceSegment>> by_lang;
  for (const auto& s : segments) by_lang[s.language].push_back(s);

  std::vector<systems::Hypothesis> hyps;
  std::vector<systems::TranslationError> errors;
  for (const auto& [src, segs] : by_lang) {
    auto tgts = cfg.targets.find(src);
    if (tgts == cfg.targets.end()) {
      step.log("no targets for source language '" + src + "', " + std::to_string(segs.size()) + " segments unused");
      continue;
    }
    for (const auto& tgt : tgts->second) {
      for (const auto& spec : cfg.systems) {
        if (!spec.supports(src, tgt)) continue;
        auto res = systems::translate_batch(spec, segs, tgt);
        hyps.insert(hyps.end(), res.hypotheses.begin(), res.hypotheses.end());
        errors.insert(errors.end(), res.errors.begin(), res.errors.end());
      }
    }
  }
  write_jsonl(step.out("hypotheses.jsonl"), rows_of(hyps));
  write_jsonl(step.out("hypothesis_errors.jsonl"), rows_of(errors));
  return step.finish(hyps.size(), errors.size());
}

StepResult run_score(const RunConfig& cfg, const Options& opts) {
  Step step("score", opts, {"scores.jsonl", "score_errors.jsonl"});
  auto seg_path = opts.out / "segments.jsonl";
  auto hyp_path = opts.out / "hypotheses.jsonl";
  require_input(seg_path, "ingest");
  require_input(hyp_path, "translate");
  if (cfg.metrics.empty()) throw ConfigError("no metrics configured");
  step.add("metrics", cfg.fingerprints.at("metrics"));
  step.add_file(seg_path);
  step.add_file(hyp_path);
  if (cfg.references) step.add_file(*cfg.references);
  if (step.up_to_date()) return step.cached_result();
  step.invalidate();

  std::map<std::string, std::string> source_text;
  for (const auto& s : load_segments(seg_path)) source_text[s.id] = s.text;
  auto hyps = load_hypotheses(hyp_path);

  std::map<std::pair<std::string, std::string>, std::string> refs;  // (source_id, tgt_lang)
  if (cfg.references) {
    std::vector<LineError> errs;
    auto rows = read_jsonl(*cfg.references, &errs);
    if (!errs.empty()) throw ValidationError("malformed reference line " + std::to_string(errs[0].line_no));
    for (const auto& r : rows) {
      try {
        refs[{r.at("source_id").get<std::string>(), r.at("tgt_lang").get<std::string>()}] =
            r.at("text").get<std::string>();
      } catch (const json::exception& e) {
        throw ValidationError(std::string("malformed reference record: ") + e.what());
      }
    }
  }

  std::vector<metrics::ScoredHypothesis> scored;
  for (const auto& h : hyps) scored.push_back({h, {}});
  std::vector<json> errors;
  auto record_error = [&](const systems::Hypothesis& h, const std::string& metric, const std::string& msg) {
    errors.push_back({{"source_id", h.source_id}, {"system_id", h.system_id},
                      {"lp", lp_of(h.src_lang, h.tgt_lang)}, {"metric_id", metric}, {"error", msg}});
  };

  for (const auto& m : cfg.metrics) {
    if (cfg.precomputed.count(m.metric_id)) continue;
    if (m.kind == metrics::MetricKind::native_chrf) {
      for (auto& sh : scored) {
        auto ref = refs.find({sh.hypothesis.source_id, sh.hypothesis.tgt_lang});
        if (ref == refs.end()) {
          record_error(sh.hypothesis, m.metric_id, "no reference");
          continue;
        }
        sh.scores[m.metric_id] = metrics::chrf(sh.hypothesis.text, ref->second);
      }
    } else if (m.kind == metrics::MetricKind::qe_client) {
      std::vector<metrics::QePair> pairs;
      std::vector<std::size_t> index;
      for (std::size_t i = 0; i < scored.size(); ++i) {
        const auto& h = scored[i].hypothesis;
        metrics::QePair p{std::to_string(i), source_text.count(h.source_id) ? source_text[h.source_id] : "",
                          h.text, std::nullopt};
        if (m.needs_reference) {
          auto ref = refs.find({h.source_id, h.tgt_lang});
          if (ref == refs.end()) {
            record_error(h, m.metric_id, "no reference");
            continue;
          }
          p.ref = ref->second;
        }
        pairs.push_back(std::move(p));
        index.push_back(i);
      }
      if (pairs.empty()) continue;
      auto results = metrics::score_qe_batch(m, pairs);
      for (std::size_t k = 0; k < results.size(); ++k) {
        auto& sh = scored[index[k]];
        if (results[k].score)
          sh.scores[m.metric_id] = *results[k].score;
        else
          record_error(sh.hypothesis, m.metric_id, results[k].error);
      }
    }
  }

  std::vector<json> rows;
  for (auto& sh : scored) {
    metrics::apply_ensembles(cfg.metrics, sh);
    for (const auto& m : cfg.metrics) {
      auto it = sh.scores.find(m.metric_id);
      if (it == sh.scores.end()) continue;
      metaeval::MetricScore s{sh.hypothesis.source_id, sh.hypothesis.system_id, m.metric_id, it->second,
                              lp_of(sh.hypothesis.src_lang, sh.hypothesis.tgt_lang)};
      rows.push_back(metaeval::to_json(s));
    }
  }
  write_jsonl(step.out("scores.jsonl"), rows);
  write_jsonl(step.out("score_errors.jsonl"), errors);
  return step.finish(rows.size(), errors.size());
}

StepResult run_build_prefs(const RunConfig& cfg, const Options& opts) {
  Step step("build-prefs", opts, {"prefs.jsonl", "prefs_report.json"});
  if (cfg.prefs_metric.empty()) throw ConfigError("no 'prefs' section configured");
  auto seg_path = opts.out / "segments.jsonl";
  auto hyp_path = opts.out / "hypotheses.jsonl";
  auto score_path = opts.out / "scores.jsonl";
  require_input(seg_path, "ingest");
  require_input(hyp_path, "translate");
  require_input(score_path, "score");
  step.add("prefs", cfg.fingerprints.at("prefs"));
  step.add("metrics", cfg.fingerprints.at("metrics"));
  for (const auto& p : {seg_path, hyp_path, score_path}) step.add_file(p);
  if (step.up_to_date()) return step.cached_result();
  step.invalidate();

  auto segments = load_segments(seg_path);
  auto hyps = load_hypotheses(hyp_path);
  auto scores = metaeval::load_scores(score_path);
  if (!scores.errors.empty()) throw ValidationError("corrupt score file " + score_path.string());

  // (source, system, lp) -> metric -> score
  std::map<std::tuple<std::string, std::string, std::string>, std::map<std::string, double>> by_key;
  for (const auto& s : scores.scores) by_key[{s.source_id, s.system_id, s.language_pair}][s.metric_id] = s.score;

  std::map<std::pair<std::string, std::string>, std::vector<metrics::ScoredHypothesis>> cands;
  for (const auto& h : hyps) {
    metrics::ScoredHypothesis sh{h, {}};
    if (auto it = by_key.find({h.source_id, h.system_id, lp_of(h.src_lang, h.tgt_lang)}); it != by_key.end())
      sh.scores = it->second;
    cands[{h.source_id, h.tgt_lang}].push_back(std::move(sh));
  }

  std::vector<prefs::SourceWithCandidates> inputs;
  for (const auto& seg : segments) {
    auto lo = cands.lower_bound({seg.id, ""});
    for (auto it = lo; it != cands.end() && it->first.first == seg.id; ++it)
      inputs.push_back({seg, it->second});
  }
  auto ds = prefs::build_dataset(inputs, cfg.metric(cfg.prefs_metric), cfg.min_margin);
  prefs::write_dataset(step.out("prefs.jsonl"), ds.triples);
  auto report = prefs::to_json(ds.report);
  report["metric"] = cfg.prefs_metric;
  report["min_margin"] = cfg.min_margin;
  report["sources"] = inputs.size();
  report["triples"] = ds.triples.size();
  write_file_atomic(step.out("prefs_report.json"), report.dump(2) + "\n");
  return step.finish(ds.triples.size(), ds.report.errors.size());
}

StepResult run_align_train(const RunConfig& cfg, const Options& opts) {
  Step step("align-train", opts, {"trace.jsonl", "policy.json", "train_summary.json"});
  step.add("trainer", cfg.fingerprints.at("trainer"));
  step.add("seed", cfg.fingerprints.at("seed"));
  fs::path input = cfg.trainer_fixture ? *cfg.trainer_fixture : opts.out / "prefs.jsonl";
  require_input(input, "build-prefs");
  step.add_file(input);
  if (step.up_to_date()) return step.cached_result();
  step.invalidate();

  auto problem = cfg.trainer_fixture ? align::load_fixture_problem(input)
                                     : align::problem_from_triples(prefs::read_dataset(input));
  auto tc = cfg.trainer;
  if (cfg.seed)
    tc.seed = *cfg.seed;
  else if (!problem.base)
    throw ConfigError("align-train needs a seed (config 'seed' or --seed) to initialise the policy");

  auto res = align::train(problem, tc);
  align::write_trace(step.out("trace.jsonl"), res.trace);
  write_file_atomic(step.out("policy.json"), align::policy_to_json(res.policy, problem).dump(2) + "\n");

  auto stats = [](const align::PolicyStats& s) {
    return json{{"lp_chosen", s.lp_chosen}, {"lp_rejected", s.lp_rejected}, {"margin", s.margin}};
  };
  auto init_policy = problem.base ? *problem.base
                                  : align::ToyPolicy::random(problem.candidate_counts(), tc.seed, tc.init_scale);
  auto acc_before = syseval::best_over_worst_accuracy(align::sample_loglikes(init_policy, problem.samples));
  auto acc_after = syseval::best_over_worst_accuracy(align::sample_loglikes(res.policy, problem.samples));
  json summary = {{"method", align::to_string(tc.method)},
                  {"beta", tc.beta},
                  {"lambda", tc.lambda},
                  {"learning_rate", tc.learning_rate},
                  {"epochs", tc.epochs},
                  {"seed", tc.seed},
                  {"contexts", problem.context_names.size()},
                  {"samples", problem.samples.size()},
                  {"initial", stats(res.initial)},
                  {"final", stats(res.final)},
                  {"best_over_worst_acc_initial", acc_before},
                  {"best_over_worst_acc_final", acc_after}};
  if (!res.reference_trace.empty()) summary["sft_phase_epochs"] = res.reference_trace.size();
  write_file_atomic(step.out("train_summary.json"), summary.dump(2) + "\n");
  return step.finish(res.trace.size(), 0);
}

StepResult run_metaeval(const RunConfig& cfg, const Options& opts) {
  Step step("metaeval", opts, {"metaeval.json"});
  if (!cfg.ratings) throw ConfigError("no human ratings configured (metaeval.ratings)");
  step.add("metaeval", cfg.fingerprints.at("metaeval"));
  step.add("metrics", cfg.fingerprints.at("metrics"));
  step.add_file(*cfg.ratings);
  std::vector<json> errors;
  auto scores = gather_scores(cfg, opts, step, errors);
  if (step.up_to_date()) return step.cached_result();
  step.invalidate();

  auto ratings = metaeval::load_ratings(*cfg.ratings);
  errors.insert(errors.end(), ratings.errors.begin(), ratings.errors.end());
  std::vector<metaeval::MetricOrientation> mos;
  for (const auto& m : cfg.metrics) mos.push_back({m.metric_id, m.orientation});
  auto report = metaeval::meta_evaluate(ratings.ratings, scores, mos, cfg.grouping);
  report["errors"] = errors;
  write_file_atomic(step.out("metaeval.json"), report.dump(2) + "\n");
  return step.finish(ratings.ratings.size(), errors.size());
}

StepResult run_syseval(const RunConfig& cfg, const Options& opts) {
  Step step("syseval", opts, {"syseval.json"});
  if (cfg.syseval_metric.empty()) throw ConfigError("no 'syseval' section configured");
  step.add("syseval", cfg.fingerprints.at("syseval"));
  step.add("metrics", cfg.fingerprints.at("metrics"));
  if (cfg.ratings) step.add_file(*cfg.ratings);
  std::vector<json> errors;
  auto scores = gather_scores(cfg, opts, step, errors);
  if (step.up_to_date()) return step.cached_result();
  step.invalidate();

  std::vector<metaeval::HumanRating> ratings;
  if (cfg.ratings) {
    auto load = metaeval::load_ratings(*cfg.ratings);
    ratings = std::move(load.ratings);
    errors.insert(errors.end(), load.errors.begin(), load.errors.end());
  }
  auto report = system_level_report(scores, cfg.metrics, ratings, cfg.syseval_metric, cfg.alpha);
  report["errors"] = errors;
  write_file_atomic(step.out("syseval.json"), report.dump(2) + "\n");
  return step.finish(scores.size(), errors.size());
}

std::vector<StepResult> run_all(const RunConfig& cfg, const Options& opts) {
  std::vector<StepResult> out;
  out.push_back(run_ingest(cfg, opts));
  out.push_back(run_translate(cfg, opts));
  out.push_back(run_score(cfg, opts));
  if (!cfg.prefs_metric.empty()) out.push_back(run_build_prefs(cfg, opts));
  if (!cfg.prefs_metric.empty() || cfg.trainer_fixture) out.push_back(run_align_train(cfg, opts));
  if (cfg.ratings) out.push_back(run_metaeval(cfg, opts));
  if (!cfg.syseval_metric.empty()) out.push_back(run_syseval(cfg, opts));
  return out;
}

// ---- system level -----------------------------------------------------------

json system_level_report(const std::vector<metaeval::MetricScore>& scores,
                         const std::vector<metrics::MetricSpec>& specs,
                         const std::vector<metaeval::HumanRating>& ratings,
                         const std::string& primary_metric, double alpha) {
  // lp -> metric -> system -> source -> score
  std::map<std::string, std::map<std::string, std::map<std::string, std::map<std::string, double>>>> table;
  for (const auto& s : scores) table[s.language_pair][s.metric_id][s.system_id][s.source_id] = s.score;

  json out = {{"primary_metric", primary_metric}, {"alpha", alpha}, {"language_pairs", json::object()}};
  for (const auto& [lp, by_metric] : table) {
    std::map<std::string, std::pair<double, int>> human;
    for (const auto& r : ratings) {
      if (!lp.empty() && !r.language_pair.empty() && r.language_pair != lp) continue;
      auto& acc = human[r.system_id];
      acc.first += r.score;
      ++acc.second;
    }
    json lp_j = {{"metrics", json::object()}};
    for (const auto& spec : specs) {
      auto mit = by_metric.find(spec.metric_id);
      if (mit == by_metric.end()) continue;
      const auto& systems = mit->second;

      // Compare systems on the segments every one of them was scored on.
      std::set<std::string> common;
      bool first = true;
      for (const auto& [sys, segs] : systems) {
        std::set<std::string> ids;
        for (const auto& [src, v] : segs) ids.insert(src);
        if (first) {
          common = std::move(ids);
          first = false;
        } else {
          std::set<std::string> keep;
          std::set_intersection(common.begin(), common.end(), ids.begin(), ids.end(),
                                std::inserter(keep, keep.end()));
          common = std::move(keep);
        }
      }
      json m = {{"orientation", to_string(spec.orientation)}, {"segments", common.size()},
                {"means", json::object()}};
      std::vector<syseval::SystemScores> sys_scores;
      std::map<std::string, double> means;
      for (const auto& [sys, segs] : systems) {
        std::vector<std::pair<std::string, double>> per;
        for (const auto& id : common) per.emplace_back(id, segs.at(id));
        if (per.empty()) continue;
        auto ss = syseval::SystemScores::from_segments(sys, std::move(per));
        means[sys] = ss.mean;
        m["means"][sys] = ss.mean;
        sys_scores.push_back(std::move(ss));
      }

      std::map<std::string, double> human_means;
      for (const auto& [sys, _] : means)
        if (auto h = human.find(sys); h != human.end()) human_means[sys] = h->second.first / h->second.second;
      if (human_means.size() >= 2) {
        std::map<std::string, double> metric_means;
        for (const auto& [sys, _] : human_means) metric_means[sys] = means[sys];
        try {
          auto pa = syseval::pairwise_accuracy(metric_means, human_means, spec.orientation);
          m["pairwise_accuracy"] = {{"agree", pa.agree}, {"total", pa.total}};
        } catch (const ValidationError& e) {
          m["pairwise_accuracy"] = nullptr;
          m["pairwise_error"] = e.what();
        }
      }
      if (spec.metric_id == primary_metric && sys_scores.size() >= 2)
        lp_j["clusters"] = syseval::to_json(syseval::cluster_systems(sys_scores, alpha, spec.orientation));
      lp_j["metrics"][spec.metric_id] = std::move(m);
    }
    if (!human.empty()) {
      json h = json::object();
      for (const auto& [sys, acc] : human) h[sys] = acc.first / acc.second;
      lp_j["human"] = std::move(h);
    }
    out["language_pairs"][lp.empty() ? "all" : lp] = std::move(lp_j);
  }
  return out;
}

// ---- report -----------------------------------------------------------------

namespace {

std::string cell(const json& v, int precision) {
  if (v.is_null()) return "-";
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v.get<double>();
  return os.str();
}

std::string pad(const std::string& s, std::size_t w, bool right = false) {
  if (s.size() >= w) return s;
  return right ? std::string(w - s.size(), ' ') + s : s + std::string(w - s.size(), ' ');
}

}  // namespace

std::string render_metaeval_table(const json& report) {
  std::ostringstream os;
  os << "Segment-level meta-evaluation (" << report.value("mode", std::string{"per_group_mean"}) << ")\n";
  for (const auto& [lp, metrics] : report.at("language_pairs").items()) {
    os << "\n" << lp << "\n";
    os << pad("metric", 24) << pad("P", 8, true) << pad("S", 8, true) << pad("Tau", 8, true)
       << pad("P@1", 8, true) << pad("groups", 8, true) << "\n";
    for (const auto& [id, row] : metrics.items()) {
      os << pad(id, 24) << pad(cell(row.value("pearson", json()), 3), 8, true)
         << pad(cell(row.value("spearman", json()), 3), 8, true)
         << pad(cell(row.value("tau_b", json()), 3), 8, true)
         << pad(cell(row.value("precision_at_1", json()), 3), 8, true)
         << pad(std::to_string(row.value("groups", 0)), 8, true) << "\n";
    }
  }
  return os.str();
}

std::string render_syseval_table(const json& report) {
  std::ostringstream os;
  os << "System-level evaluation (primary metric " << report.value("primary_metric", std::string{}) << ")\n";
  for (const auto& [lp, body] : report.at("language_pairs").items()) {
    const auto& metrics = body.at("metrics");
    std::set<std::string> systems;
    for (const auto& [id, m] : metrics.items())
      for (const auto& [sys, _] : m.at("means").items()) systems.insert(sys);
    const json human = body.value("human", json::object());

    std::map<std::string, std::size_t> da_rank;
    if (!human.empty()) {
      std::vector<std::pair<double, std::string>> order;
      for (const auto& [sys, v] : human.items()) order.emplace_back(-v.get<double>(), sys);
      std::sort(order.begin(), order.end());
      for (std::size_t i = 0; i < order.size(); ++i) da_rank[order[i].second] = i + 1;
    }
    std::map<std::string, std::string> ranges;
    if (body.contains("clusters"))
      for (const auto& s : body["clusters"].at("systems"))
        ranges[s.at("system_id").get<std::string>()] =
            "[" + std::to_string(s.at("rank_range")[0].get<int>()) + "," +
            std::to_string(s.at("rank_range")[1].get<int>()) + "]";

    os << "\n" << lp << "\n" << pad("system", 16);
    for (const auto& [id, _] : metrics.items()) os << pad(id, 12, true);
    if (!human.empty()) os << pad("DA", 10, true) << pad("DA rank", 9, true);
    if (!ranges.empty()) os << pad("cluster", 10, true);
    os << "\n";
    for (const auto& sys : systems) {
      os << pad(sys, 16);
      for (const auto& [id, m] : metrics.items()) os << pad(cell(m.at("means").value(sys, json()), 4), 12, true);
      if (!human.empty()) {
        os << pad(cell(human.value(sys, json()), 2), 10, true);
        os << pad(da_rank.count(sys) ? std::to_string(da_rank[sys]) : "-", 9, true);
      }
      if (!ranges.empty()) os << pad(ranges.count(sys) ? ranges[sys] : "-", 10, true);
      os << "\n";
    }
    if (!human.empty()) {
      os << pad("Pairwise-Acc", 16);
      for (const auto& [id, m] : metrics.items()) {
        std::string v = "-";
        if (m.contains("pairwise_accuracy") && !m["pairwise_accuracy"].is_null())
          v = std::to_string(m["pairwise_accuracy"]["agree"].get<int>()) + "/" +
              std::to_string(m["pairwise_accuracy"]["total"].get<int>());
        os << pad(v, 12, true);
      }
      os << "\n";
    }
  }
  return os.str();
}

std::string render_report(const fs::path& out) {
  std::string text;
  auto me = out / "metaeval.json";
  auto se = out / "syseval.json";
  if (fs::exists(me)) text += render_metaeval_table(json::parse(read_file(me)));
  if (fs::exists(se)) text += (text.empty() ? "" : "\n") + render_syseval_table(json::parse(read_file(se)));
  if (text.empty()) throw ConfigError("nothing to report in " + out.string() + " (run metaeval or syseval)");
  return text;
}

}  // namespace transpref::pipeline

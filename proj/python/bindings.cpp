#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "transpref/align.hpp"
#include "transpref/metaeval.hpp"
#include "transpref/metrics.hpp"
#include "transpref/pipeline.hpp"
#include "transpref/prefs.hpp"
#include "transpref/syseval.hpp"

namespace py = pybind11;
using namespace transpref;

namespace {

// Two candidates in one context with the given log-probabilities.
class PairPolicy final : public align::Policy {
 public:
  PairPolicy(double chosen, double rejected) : lp_{chosen, rejected} {}
  std::size_t num_contexts() const override { return 1; }
  std::size_t num_candidates(std::size_t) const override { return 2; }
  double log_prob(std::size_t, std::size_t c) const override { return lp_[c]; }

 private:
  double lp_[2];
};

Orientation orientation(const std::string& s) { return parse_orientation(s); }

// rows: [{source_id, system_id, text, score, src?, src_lang?, tgt_lang?}]
std::string build_preferences(const std::string& rows_json, const std::string& orient, double min_margin) {
  auto rows = json::parse(rows_json);
  metrics::MetricSpec spec;
  spec.metric_id = "score";
  spec.kind = metrics::MetricKind::qe_client;
  spec.endpoint = "inline";
  spec.orientation = orientation(orient);
  std::map<std::string, prefs::SourceWithCandidates> by_source;
  for (const auto& r : rows) {
    std::string id = r.at("source_id");
    auto& in = by_source[id];
    in.source.id = id;
    in.source.text = r.value("src", "");
    in.source.language = r.value("src_lang", "");
    metrics::ScoredHypothesis h;
    h.hypothesis = {id, r.at("system_id"), r.at("text"), r.value("src_lang", ""), r.value("tgt_lang", "")};
    h.scores["score"] = r.at("score").get<double>();
    in.candidates.push_back(std::move(h));
  }
  std::vector<prefs::SourceWithCandidates> inputs;
  for (auto& [_, in] : by_source) inputs.push_back(std::move(in));
  auto ds = prefs::build_dataset(inputs, spec, min_margin);
  json triples = json::array();
  for (const auto& t : ds.triples) triples.push_back(prefs::to_json(t));
  return json{{"triples", triples}, {"report", prefs::to_json(ds.report)}}.dump();
}

py::dict train_fixture(const std::filesystem::path& path, const std::string& method, double beta, double lambda,
                       double lr, int epochs, std::uint64_t seed) {
  align::TrainerConfig cfg;
  cfg.method = align::parse_method(method);
  cfg.beta = beta;
  cfg.lambda = lambda;
  cfg.learning_rate = lr;
  cfg.epochs = epochs;
  cfg.seed = seed;
  auto prob = align::load_fixture_problem(path);
  align::TrainResult r;
  {
    py::gil_scoped_release release;
    r = align::train(prob, cfg);
  }
  auto stats = [](const align::PolicyStats& s) {
    py::dict d;
    d["lp_chosen"] = s.lp_chosen;
    d["lp_rejected"] = s.lp_rejected;
    d["margin"] = s.margin;
    return d;
  };
  py::list trace;
  for (const auto& t : r.trace) {
    py::dict d;
    d["step"] = t.step;
    d["loss"] = t.loss;
    d["lp_chosen"] = t.lp_chosen;
    d["lp_rejected"] = t.lp_rejected;
    d["margin"] = t.margin;
    trace.append(d);
  }
  py::dict out;
  out["initial"] = stats(r.initial);
  out["final"] = stats(r.final);
  out["trace"] = trace;
  out["logits"] = r.policy.logits();
  return out;
}

py::list run_pipeline(const std::filesystem::path& config, const std::filesystem::path& out,
                      std::optional<std::uint64_t> seed, bool force) {
  auto cfg = pipeline::load_run_config(config, seed);
  std::vector<pipeline::StepResult> results;
  {
    py::gil_scoped_release release;
    pipeline::OutDirLock lock(out);
    results = pipeline::run_all(cfg, {out, force, nullptr});
  }
  py::list steps;
  for (const auto& r : results) {
    py::dict d;
    d["step"] = r.step;
    d["cached"] = r.cached;
    d["records"] = r.records;
    d["record_errors"] = r.record_errors;
    steps.append(d);
  }
  return steps;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Native core of transpref";

  static py::exception<Error> error(m, "Error", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      PyErr_SetString(error.ptr(), ("[" + e.code() + "] " + e.what()).c_str());
    }
  });

  m.def("chrf", &metrics::chrf, py::arg("hypothesis"), py::arg("reference"), py::arg("max_order") = 6,
        py::arg("beta") = 2.0);

  m.def("pearson", [](const std::vector<double>& x, const std::vector<double>& y) { return metaeval::pearson(x, y); });
  m.def("spearman", [](const std::vector<double>& x, const std::vector<double>& y) { return metaeval::spearman(x, y); });
  m.def("kendall_tau_b",
        [](const std::vector<double>& x, const std::vector<double>& y) { return metaeval::kendall_tau_b(x, y); });

  m.def(
      "wilcoxon_rank_sum",
      [](const std::vector<double>& a, const std::vector<double>& b, std::size_t exact_limit) {
        return syseval::wilcoxon_rank_sum(a, b, exact_limit);
      },
      py::arg("a"), py::arg("b"), py::arg("exact_limit") = syseval::kDefaultExactLimit);

  m.def(
      "pairwise_accuracy",
      [](const std::map<std::string, double>& metric, const std::map<std::string, double>& human,
         const std::string& orient) {
        auto r = syseval::pairwise_accuracy(metric, human, orientation(orient));
        return std::make_pair(r.agree, r.total);
      },
      py::arg("metric_means"), py::arg("human_means"), py::arg("orientation") = "higher_better");

  m.def(
      "dpo_loss",
      [](double chosen, double rejected, double ref_chosen, double ref_rejected, double beta) {
        PairPolicy p(chosen, rejected), ref(ref_chosen, ref_rejected);
        return align::dpo_loss(p, ref, 0, 0, 1, beta);
      },
      py::arg("logp_chosen"), py::arg("logp_rejected"), py::arg("ref_logp_chosen"), py::arg("ref_logp_rejected"),
      py::arg("beta"));
  m.def(
      "cpo_pref_loss",
      [](double chosen, double rejected, double beta) {
        return align::cpo_pref_loss(PairPolicy(chosen, rejected), 0, 0, 1, beta);
      },
      py::arg("logp_chosen"), py::arg("logp_rejected"), py::arg("beta"));
  m.def(
      "cpo_loss",
      [](double chosen, double rejected, double beta, double lambda) {
        return align::cpo_loss(PairPolicy(chosen, rejected), 0, 0, 1, beta, lambda);
      },
      py::arg("logp_chosen"), py::arg("logp_rejected"), py::arg("beta"), py::arg("lam"));

  m.def("_build_preferences", &build_preferences, py::arg("rows_json"), py::arg("orientation"),
        py::arg("min_margin"));
  m.def("train_fixture", &train_fixture, py::arg("path"), py::arg("method") = "CPO", py::arg("beta") = 0.1,
        py::arg("lam") = 1.0, py::arg("learning_rate") = 0.1, py::arg("epochs") = 500, py::arg("seed") = 0);
  m.def("run_pipeline", &run_pipeline, py::arg("config"), py::arg("out"), py::arg("seed") = py::none(),
        py::arg("force") = false);
  m.def("render_report", &pipeline::render_report, py::arg("out"));
}

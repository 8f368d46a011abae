#include <csignal>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "transpref/annotate.hpp"
#include "transpref/pipeline.hpp"

namespace {

using namespace transpref;

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  bool allow_partial = false;
  bool force = false;
};

annotate::AnnotationServer* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

int run_steps(const Flags& f, const std::function<std::vector<pipeline::StepResult>(
                                  const pipeline::RunConfig&, const pipeline::Options&)>& fn) {
  if (f.config.empty()) throw ConfigError("--config is required");
  auto cfg = pipeline::load_run_config(f.config, f.seed);
  pipeline::Options opts{f.out, f.force, &std::cerr};
  pipeline::OutDirLock lock(opts.out);
  auto results = fn(cfg, opts);
  std::size_t errors = 0;
  for (const auto& r : results) errors += r.record_errors;
  if (errors > 0 && !f.allow_partial) {
    std::cerr << errors << " record-level error(s); see the *_errors / *_rejects files in " << f.out
              << " (pass --allow-partial to accept)\n";
    return 2;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Metric-induced translation preference toolkit"};
  app.require_subcommand(1);
  Flags f;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", f.config, "Run configuration (JSON)");
    sub->add_option("--seed", f.seed, "Override the run seed");
    sub->add_option("--out", f.out, "Output directory")->capture_default_str();
    sub->add_flag("--allow-partial", f.allow_partial, "Exit 0 despite record-level errors");
    sub->add_flag("--force", f.force, "Ignore the step cache");
  };

  using Fn = pipeline::StepResult (*)(const pipeline::RunConfig&, const pipeline::Options&);
  const std::vector<std::tuple<const char*, const char*, Fn>> steps = {
      {"ingest", "Ingest and filter source corpora", pipeline::run_ingest},
      {"translate", "Translate segments with every configured system", pipeline::run_translate},
      {"score", "Score hypotheses with every configured metric", pipeline::run_score},
      {"build-prefs", "Build the preference dataset", pipeline::run_build_prefs},
      {"align-train", "Train the toy policy on the preference data", pipeline::run_align_train},
      {"metaeval", "Correlate metric scores with human ratings", pipeline::run_metaeval},
      {"syseval", "System-level means, clusters and pairwise accuracy", pipeline::run_syseval},
  };
  std::vector<std::pair<CLI::App*, Fn>> step_cmds;
  for (const auto& [name, desc, fn] : steps) {
    auto* sub = app.add_subcommand(name, desc);
    add_common(sub);
    step_cmds.emplace_back(sub, fn);
  }

  auto* run = app.add_subcommand("run", "Run every configured step in order");
  add_common(run);

  auto* report = app.add_subcommand("report", "Render correlation and system-level tables");
  report->add_option("--out", f.out, "Output directory")->capture_default_str();

  std::string store_dir = "annotations", host = "127.0.0.1";
  int port = 8080;
  auto* serve = app.add_subcommand("annotate-serve", "Serve the annotation API");
  serve->add_option("--store", store_dir, "Session log directory")->capture_default_str();
  serve->add_option("--host", host)->capture_default_str();
  serve->add_option("--port", port)->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    for (const auto& [sub, fn] : step_cmds)
      if (sub->parsed())
        return run_steps(f, [fn = fn](const auto& cfg, const auto& opts) {
          return std::vector<pipeline::StepResult>{fn(cfg, opts)};
        });
    if (run->parsed()) return run_steps(f, pipeline::run_all);
    if (report->parsed()) {
      std::cout << pipeline::render_report(f.out);
      return 0;
    }
    if (serve->parsed()) {
      annotate::SessionStore store(store_dir);
      annotate::AnnotationServer server(store);
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cerr << "serving annotation API on http://" << host << ":" << port << "\n";
      if (!server.listen(host, port)) {
        std::cerr << "error: cannot listen on " << host << ":" << port << "\n";
        return 1;
      }
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error [" << e.code() << "]: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

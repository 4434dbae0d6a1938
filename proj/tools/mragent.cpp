// mragent: command-line front end for the agent engine.
//
//   run       simulate a scenario and print the timing table
//   report    print the table of a saved report
//   replay    check that a trace log reproduces under the state machine
//   serve     host the session API (and optionally a stub recognizer)
//   validate  check asset, scenario, config and anchor files
//
// Exit codes: 0 success, 1 runtime failure or divergence, 2 invalid input.

#include <csignal>
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "mragent/session_service.hpp"

namespace fs = std::filesystem;
using namespace mragent;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitInvalid = 2;

struct CommonPaths {
  std::string assets;
  std::string engine;
  std::string latency;
};

orchestrator::EngineConfig load_engine(const std::string& path) {
  auto config = path.empty() ? orchestrator::EngineConfig{} : orchestrator::engine_config_from_json(read_json(path));
  orchestrator::apply_env_overrides(config);
  return config;
}

LatencyModel load_latency(const CommonPaths& p) {
  if (!p.latency.empty()) return latency_model_from_json(read_json(p.latency));
  const auto fallback = fs::path(p.assets) / "latency.json";
  if (!p.assets.empty() && fs::exists(fallback)) return latency_model_from_json(read_json(fallback));
  return LatencyModel{};
}

void add_common(CLI::App* cmd, CommonPaths& p) {
  cmd->add_option("--assets", p.assets, "asset directory (kb.json, lexicon.json, ...)")->check(CLI::ExistingDirectory);
  cmd->add_option("--engine", p.engine, "engine configuration file")->check(CLI::ExistingFile);
  cmd->add_option("--latency", p.latency, "latency model file")->check(CLI::ExistingFile);
}

// ---- run ------------------------------------------------------------------------

struct RunArgs {
  CommonPaths paths;
  std::string scenario;
  std::uint64_t seed = 7;
  bool anchored = false;
  std::string out;
  std::string trace_dir;
  std::string save_anchors;
  bool json = false;
};

int do_run(const RunArgs& a) {
  auto assets = std::make_shared<const AgentAssets>(load_assets(a.paths.assets));
  auto scenario = sim::scenario_from_json(read_json(a.scenario));
  if (a.anchored) scenario = sim::anchored_variant(std::move(scenario));
  const auto config = load_engine(a.paths.engine);
  const auto model = load_latency(a.paths);

  const auto started = std::chrono::steady_clock::now();
  auto outcome = sim::run_detailed(scenario, model, config, a.seed, assets);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

  if (!a.out.empty()) write_file(a.out, sim::report_to_json(outcome.report).dump(2) + "\n");
  if (!a.trace_dir.empty()) {
    fs::create_directories(a.trace_dir);
    for (const auto& s : outcome.sessions)
      write_file(fs::path(a.trace_dir) / (s.session_id + ".ndjson"), wire::trace_to_ndjson(s.trace));
  }
  if (!a.save_anchors.empty())
    write_file(a.save_anchors, anchors::save(sim::build_store(scenario, config.placement_threshold)));

  if (a.json) {
    std::cout << sim::report_to_json(outcome.report).dump(2) << "\n";
  } else {
    std::cout << sim::format_table(outcome.report);
    std::cout << "sessions " << outcome.report.sessions << ", vision calls " << outcome.report.vision_calls
              << ", wall " << wall << " s\n";
  }
  return 0;
}

// ---- report / replay ------------------------------------------------------------

int do_report(const std::string& path, bool json) {
  const auto report = sim::report_from_json(read_json(path));
  if (json)
    std::cout << sim::report_to_json(report).dump(2) << "\n";
  else
    std::cout << sim::format_table(report);
  return 0;
}

int do_replay(const std::string& path, const std::string& engine) {
  const auto trace = wire::trace_from_ndjson(read_file(path));
  const auto result = sim::replay(trace, load_engine(engine).fsm);
  if (!result.ok()) {
    std::cout << "replay diverged at record " << *result.divergence << ": " << result.detail << "\n";
    return kExitFailure;
  }
  std::cout << "replay ok: " << result.records << " records\n";
  return 0;
}

// ---- serve ----------------------------------------------------------------------

struct ServeArgs {
  CommonPaths paths;
  std::vector<std::string> scenarios;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::uint64_t seed = 7;
  std::string console;
  int vision_port = -1;
  double time_scale = 1.0;
  bool live_vision = false;
  bool self_test = false;
};

std::atomic<bool> g_interrupted{false};

bool self_test(int port) {
  httplib::Client client("127.0.0.1", port);
  auto created = client.Post("/v1/sessions", R"({"binding":"garden/room1"})", "application/json");
  if (!created || created->status != 201) return false;
  const auto id = nlohmann::json::parse(created->body).at("session_id").get<std::string>();
  const std::string base = "/v1/sessions/" + id;
  const char* events[] = {R"({"type":"GazeOn","target":{"type":"Character"}})", R"({"type":"Tick","now":4.5})",
                          R"({"type":"VoiceCommand","text":"hello"})"};
  for (const char* e : events) {
    auto r = client.Post(base + "/events", e, "application/json");
    if (!r || r->status != 202) return false;
  }
  auto history = client.Get(base + "/history?from=0");
  if (!history || history->status != 200) return false;
  bool listening = false;
  for (const auto& e : nlohmann::json::parse(history->body))
    listening = listening || (e.value("type", "") == "StateChanged" && e.value("state", "") == "Listening");
  auto missing = client.Get("/v1/sessions/nope/history");
  return listening && missing && missing->status == 404;
}

int do_serve(const ServeArgs& a) {
  auto assets = std::make_shared<const AgentAssets>(load_assets(a.paths.assets));
  std::vector<sim::Scenario> scenarios;
  for (const auto& path : a.scenarios) scenarios.push_back(sim::scenario_from_json(read_json(path)));

  service::ServiceOptions options;
  options.config = load_engine(a.paths.engine);
  options.latency = load_latency(a.paths);
  options.seed = a.seed;

  std::unique_ptr<vision::StubVisionEndpoint> stub;
  if (a.vision_port >= 0 || a.live_vision) {
    auto fixtures = assets->fixtures;
    for (const auto& s : scenarios)
      for (auto& [k, v] : sim::scenario_fixtures(s)) fixtures.insert_or_assign(k, v);
    auto recognizer = std::make_shared<vision::StubRecognizer>(std::move(fixtures), options.latency.vision, a.seed);
    stub = std::make_unique<vision::StubVisionEndpoint>(recognizer, a.time_scale);
    stub->start(a.host, std::max(a.vision_port, 0));
    std::cerr << "stub recognizer on " << stub->url() << "\n";
    if (a.live_vision) {
      auto endpoint = options.config.endpoint;
      endpoint.endpoint_url = stub->url();
      options.live_vision = endpoint;
    }
  }

  service::SessionService svc(assets, std::move(scenarios), options);
  service::HttpSessionServer server(svc, a.console);
  const int port = server.start(a.host, a.port);
  std::cerr << "session api on http://" << a.host << ":" << port << "/v1\n";

  if (a.self_test) {
    const bool ok = self_test(port);
    std::cout << (ok ? "self-test ok" : "self-test FAILED") << "\n";
    return ok ? 0 : kExitFailure;
  }
  std::signal(SIGINT, [](int) { g_interrupted = true; });
  std::signal(SIGTERM, [](int) { g_interrupted = true; });
  while (!g_interrupted) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  return 0;
}

// ---- validate -------------------------------------------------------------------

struct ValidateArgs {
  CommonPaths paths;
  std::string kb, lexicon, clips, mapping, phonemes, visemes, fixtures;
  std::string scenario, anchors;
};

int do_validate(const ValidateArgs& a) {
  int failures = 0;
  int checked = 0;
  auto check = [&](const std::string& label, const std::string& path, auto&& body) {
    if (path.empty()) return;
    ++checked;
    try {
      body(path);
      std::cout << "ok    " << label << " " << path << "\n";
    } catch (const ValidationError& e) {
      ++failures;
      std::cout << "FAIL  " << label << " " << path << " [" << e.rule() << "] " << e.what() << "\n";
    } catch (const std::exception& e) {
      ++failures;
      std::cout << "FAIL  " << label << " " << path << " " << e.what() << "\n";
    }
  };

  if (!a.paths.assets.empty()) check("assets", a.paths.assets, [](const std::string& p) { load_assets(p); });
  check("kb", a.kb, [](const std::string& p) { dialogue::knowledge_base_from_json(read_json(p)).validate(); });
  check("lexicon", a.lexicon, [](const std::string& p) { dialogue::lexicon_from_json(read_json(p)).validate(); });
  check("clips", a.clips, [](const std::string& p) { composer::clips_from_json(read_json(p)); });
  check("mapping", a.mapping, [](const std::string& p) { composer::mapping_from_json(read_json(p)); });
  check("phonemes", a.phonemes,
        [](const std::string& p) { throw_first(composer::phonemes_from_json(read_json(p)).violations()); });
  check("visemes", a.visemes,
        [](const std::string& p) { throw_first(composer::visemes_from_json(read_json(p)).violations()); });
  check("fixtures", a.fixtures, [](const std::string& p) { vision::fixtures_from_json(read_json(p)); });
  check("scenario", a.scenario, [](const std::string& p) { sim::scenario_from_json(read_json(p)); });
  check("engine", a.paths.engine, [](const std::string& p) { orchestrator::engine_config_from_json(read_json(p)); });
  check("latency", a.paths.latency, [](const std::string& p) { latency_model_from_json(read_json(p)); });
  check("anchors", a.anchors, [](const std::string& p) { anchors::load(read_file(p)); });

  if (checked == 0) {
    std::cout << "nothing to validate\n";
    return kExitInvalid;
  }
  return failures == 0 ? 0 : kExitInvalid;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mixed-reality conversational agent engine"};
  app.require_subcommand(1);

  RunArgs run;
  auto* run_cmd = app.add_subcommand("run", "simulate a scenario and print the timing table");
  add_common(run_cmd, run.paths);
  run_cmd->get_option("--assets")->required();
  run_cmd->add_option("--scenario", run.scenario, "scenario file")->required()->check(CLI::ExistingFile);
  run_cmd->add_option("--seed", run.seed, "random seed");
  run_cmd->add_flag("--anchored", run.anchored, "pre-place anchors on every object");
  run_cmd->add_option("--out", run.out, "write the report as JSON");
  run_cmd->add_option("--trace-dir", run.trace_dir, "write one trace log per session");
  run_cmd->add_option("--save-anchors", run.save_anchors, "write the anchor store used by the run");
  run_cmd->add_flag("--json", run.json, "print the report as JSON");

  std::string report_path;
  bool report_json = false;
  auto* report_cmd = app.add_subcommand("report", "print the table of a saved report");
  report_cmd->add_option("report", report_path, "report file")->required()->check(CLI::ExistingFile);
  report_cmd->add_flag("--json", report_json, "print as JSON");

  std::string trace_path, replay_engine;
  auto* replay_cmd = app.add_subcommand("replay", "re-run a trace log through the state machine");
  replay_cmd->add_option("trace", trace_path, "trace log (one JSON record per line)")->required()->check(CLI::ExistingFile);
  replay_cmd->add_option("--engine", replay_engine, "engine configuration file")->check(CLI::ExistingFile);

  ServeArgs serve;
  auto* serve_cmd = app.add_subcommand("serve", "host the session API");
  add_common(serve_cmd, serve.paths);
  serve_cmd->get_option("--assets")->required();
  serve_cmd->add_option("--scenario", serve.scenarios, "scenario files providing bindings")->required()->check(CLI::ExistingFile);
  serve_cmd->add_option("--host", serve.host, "bind address");
  serve_cmd->add_option("--port", serve.port, "port, 0 picks a free one");
  serve_cmd->add_option("--seed", serve.seed, "base seed for per-session latency");
  serve_cmd->add_option("--console", serve.console, "static console directory")->check(CLI::ExistingDirectory);
  serve_cmd->add_option("--vision-port", serve.vision_port, "also start the stub recognizer on this port");
  serve_cmd->add_option("--time-scale", serve.time_scale, "stub recognizer sleep multiplier");
  serve_cmd->add_flag("--live-vision", serve.live_vision, "route recognition through the stub over HTTP");
  serve_cmd->add_flag("--self-test", serve.self_test, "drive one session over HTTP, then exit");

  ValidateArgs validate;
  auto* validate_cmd = app.add_subcommand("validate", "check input files");
  add_common(validate_cmd, validate.paths);
  validate_cmd->add_option("--kb", validate.kb)->check(CLI::ExistingFile);
  validate_cmd->add_option("--lexicon", validate.lexicon)->check(CLI::ExistingFile);
  validate_cmd->add_option("--clips", validate.clips)->check(CLI::ExistingFile);
  validate_cmd->add_option("--mapping", validate.mapping)->check(CLI::ExistingFile);
  validate_cmd->add_option("--phonemes", validate.phonemes)->check(CLI::ExistingFile);
  validate_cmd->add_option("--visemes", validate.visemes)->check(CLI::ExistingFile);
  validate_cmd->add_option("--fixtures", validate.fixtures)->check(CLI::ExistingFile);
  validate_cmd->add_option("--scenario", validate.scenario)->check(CLI::ExistingFile);
  validate_cmd->add_option("--anchors", validate.anchors)->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitInvalid;
  }

  try {
    if (*run_cmd) return do_run(run);
    if (*report_cmd) return do_report(report_path, report_json);
    if (*replay_cmd) return do_replay(trace_path, replay_engine);
    if (*serve_cmd) return do_serve(serve);
    if (*validate_cmd) return do_validate(validate);
  } catch (const ValidationError& e) {
    std::cerr << "invalid input [" << e.rule() << "]: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return 0;
}

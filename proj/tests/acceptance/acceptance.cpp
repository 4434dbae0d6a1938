// Acceptance gate. Prints one PASS/FAIL line per criterion with the measured
// values; exits non-zero if any selected criterion fails.
//
//   acceptance            run every criterion
//   acceptance <name>...  run the named criteria

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <sstream>

#include "support/oracles.hpp"
#include "support/service_script.hpp"

using namespace mragent;

namespace {

using Clock = std::chrono::steady_clock;

constexpr std::uint64_t kSeed = 7;

std::shared_ptr<const AgentAssets> garden() {
  static const auto a = std::make_shared<const AgentAssets>(load_assets(MRAGENT_DATA_DIR));
  return a;
}

sim::Scenario load_scenario(const char* file) {
  return sim::scenario_from_json(read_json(std::string(MRAGENT_DATA_DIR) + "/" + file));
}

const sim::Scenario& garden_scenario() {
  static const auto s = load_scenario("scenario.json");
  return s;
}

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

bool within(double value, double target, double tol) { return std::abs(value - target) <= tol; }

// ---- table1 ----------------------------------------------------------------------

Verdict table1() {
  const auto start = Clock::now();
  const auto report = sim::run(garden_scenario(), {}, {}, kSeed, garden());
  const double wall = std::chrono::duration<double>(Clock::now() - start).count();

  struct Row {
    QueryKind kind;
    double target;
  };
  const Row rows[] = {{QueryKind::AnchorLoad, 5.9}, {QueryKind::General, 3.1}, {QueryKind::ObjectQuery, 8.3}};
  bool pass = wall < 5.0;
  std::ostringstream detail;
  for (const auto& row : rows) {
    const auto agg = report.aggregate(row.kind);
    const double mean = agg.mean_total.value_or(0.0);
    const bool ok = agg.count == 30 && within(mean, row.target, 0.3) && agg.stddev_total >= 0.4 &&
                    agg.stddev_total <= 1.6;
    pass = pass && ok;
    detail << sim::table_label(row.kind) << " n=" << agg.count << fmt(" mean=%.3f (target %.1f±0.3) sd=%.3f; ", mean,
                                                                       row.target, agg.stddev_total);
  }
  detail << fmt("seed=%llu wall=%.3fs", static_cast<unsigned long long>(kSeed), wall);
  return {pass, detail.str()};
}

// ---- anchor_benefit ----------------------------------------------------------------

// Drives every flower question of one room through the service with the
// recognizer behind a real HTTP stub endpoint, and returns the endpoint's
// request count.
std::size_t stub_requests(bool anchored, std::size_t& answered) {
  auto fixtures = garden()->fixtures;
  for (auto& [k, v] : sim::scenario_fixtures(garden_scenario())) fixtures.insert_or_assign(k, v);
  auto recognizer = std::make_shared<vision::StubRecognizer>(fixtures, LatencyModel{}.vision, kSeed);
  vision::StubVisionEndpoint endpoint(recognizer, 0.0);
  endpoint.start();

  service::ServiceOptions options;
  options.live_vision = vision::EndpointConfig{endpoint.url(), 10.0, 1};
  auto sc = anchored ? sim::anchored_variant(garden_scenario()) : garden_scenario();
  service::SessionService svc(garden(), {sc}, options);
  const auto& room = *sc.room("room1");
  const auto id = svc.create_session("garden/room1").session_id;

  Seconds t = 0.0;
  svc.post_event(id, fsm::GazeOn{fsm::CharacterTarget{}});
  svc.post_event(id, fsm::Tick{t += 4.5});
  for (const auto& object : room.objects) {
    svc.post_event(id, fsm::GazeOn{sim::ray_towards(room.user_position, object.pose.position)});
    svc.post_event(id, fsm::VoiceCommand{"what is this"});
    svc.post_event(id, fsm::GazeOn{fsm::CharacterTarget{}});
    svc.post_event(id, fsm::Tick{t += 15.0});
    svc.post_event(id, fsm::Tick{t += 15.0});
  }
  answered = 0;
  for (const auto& m : svc.metrics(id))
    if (m.kind == QueryKind::ObjectQuery && m.outcome == "ok") ++answered;
  return endpoint.request_count();
}

Verdict anchor_benefit() {
  const LatencyModel model;
  const auto plain = sim::run(garden_scenario(), model, {}, kSeed, garden());
  const auto anchored = sim::run(sim::anchored_variant(garden_scenario()), model, {}, kSeed, garden());
  const auto agg = anchored.aggregate(QueryKind::ObjectQuery);
  const double target = model.chatbot.mean + model.processing_for(QueryKind::ObjectQuery);
  const double mean = agg.mean_total.value_or(0.0);

  std::size_t sim_vision_on_objects = 0;
  for (const auto& m : anchored.records)
    if (m.kind == QueryKind::ObjectQuery && (m.or_time || !m.anchor_hit)) ++sim_vision_on_objects;

  std::size_t answered_anchored = 0, answered_plain = 0;
  const auto anchored_calls = stub_requests(true, answered_anchored);
  const auto plain_calls = stub_requests(false, answered_plain);

  const bool pass = within(mean, target, 0.3) && sim_vision_on_objects == 0 && anchored_calls == 0 &&
                    answered_anchored == 5 && plain_calls == 5 && answered_plain == 5;
  return {pass, fmt("anchored ObjectQuery mean=%.3f (target %.2f±0.3, unanchored %.3f); "
                    "sim object queries using vision=%zu; stub endpoint requests anchored=%zu (answered %zu/5), "
                    "unanchored=%zu (answered %zu/5)",
                    mean, target, plain.aggregate(QueryKind::ObjectQuery).mean_total.value_or(0.0),
                    sim_vision_on_objects, anchored_calls, answered_anchored, plain_calls, answered_plain)};
}

// ---- response_band -----------------------------------------------------------------

Verdict response_band() {
  const auto band = load_scenario("band_scenario.json");
  const auto report = sim::run(band, {}, {}, kSeed, garden());
  std::size_t total = 0, in_band = 0, general = 0, general_in = 0, vision = 0, vision_in = 0;
  for (const auto& m : report.records) {
    if (m.kind == QueryKind::AnchorLoad) continue;
    ++total;
    if (m.or_time) {
      ++vision;
      if (m.total_time >= 5.0 && m.total_time <= 8.0) ++vision_in, ++in_band;
    } else {
      ++general;
      if (m.total_time >= 2.0 && m.total_time <= 4.0) ++general_in, ++in_band;
    }
  }
  const double frac = total ? static_cast<double>(in_band) / static_cast<double>(total) : 0.0;
  const bool pass = total >= 200 && frac >= 0.95;
  return {pass, fmt("%zu/%zu in band (%.1f%%, need >= 95%%): non-vision [2,4] %zu/%zu, vision-path [5,8] %zu/%zu",
                    in_band, total, 100.0 * frac, general_in, general, vision_in, vision)};
}

// ---- fsm_properties ------------------------------------------------------------------

Verdict fsm_properties() {
  const auto rep = oracle::check_fsm_properties(10000, 20190701);
  const bool exercised = rep.start_recognizer_seen > 0 && rep.greetings_seen > 0 && rep.leave_applicable > 0;
  return {rep.total() == 0 && rep.traces >= 10000 && exercised,
          fmt("traces=%zu violations: dwell=%zu greeting=%zu leave=%zu replay=%zu "
              "(recognizer starts=%zu greetings=%zu leave cases=%zu)",
              rep.traces, rep.dwell, rep.greeting, rep.leave, rep.replay, rep.start_recognizer_seen,
              rep.greetings_seen, rep.leave_applicable)};
}

// ---- composer_oracle -----------------------------------------------------------------

Verdict composer_oracle() {
  std::mt19937_64 rng(1234);
  const std::size_t cases = 2000;
  std::size_t body_mismatch = 0;
  for (std::size_t n = 0; n < cases; ++n) {
    const auto c = oracle::random_body_case(rng);
    if (composer::build_body_sequence(c.text, c.table) != oracle::body_sequence_brute(c.tokens, c.table))
      ++body_mismatch;
  }
  const auto& a = *garden();
  std::size_t timeline_bad = 0;
  for (std::size_t n = 0; n < cases; ++n) {
    const auto text = oracle::random_reply_text(rng);
    const auto t = composer::assemble(dialogue::make_reply(text, a.lexicon), a.performance);
    if (!composer::timeline_violations(t, oracle::expected_phonemes(text, a.performance.phonemes)).empty())
      ++timeline_bad;
  }
  return {body_mismatch == 0 && timeline_bad == 0,
          fmt("body sequence mismatches=%zu/%zu; timeline violations=%zu/%zu", body_mismatch, cases, timeline_bad,
              cases)};
}

// ---- anchor_geometry -----------------------------------------------------------------

Verdict anchor_geometry() {
  using namespace anchors;
  std::mt19937_64 rng(42);
  const std::size_t cases = 2000;
  std::size_t mismatch = 0, hits = 0;
  for (std::size_t n = 0; n < cases; ++n) {
    const auto c = oracle::random_hit_case(rng);
    const auto got = hit_test(c.anchors, c.origin, c.direction);
    const auto want = oracle::hit_test_brute(c.anchors, c.origin, c.direction);
    if (got.has_value() != want.has_value() || (got && got->id != *want)) ++mismatch;
    hits += got.has_value();
  }

  const auto store = sim::build_store(garden_scenario(), kDefaultPlacementThreshold);
  std::size_t fixture_ok = 0, fixture_total = 0;
  for (const auto& room : garden_scenario().rooms) {
    for (const auto& o : room.objects) {
      ++fixture_total;
      fixture_ok += resolve_room(store, {o.label}) == RoomResolution{ResolvedRoom{room.room_id}};
    }
  }
  const bool mixed_ambiguous =
      resolve_room(store, {"rose", "orchid"}) == RoomResolution{AmbiguousRoom{{"room1", "room2"}}};
  auto twins = add_signature({}, "east", {"rose", "tulip"});
  twins = add_signature(std::move(twins), "west", {"rose", "tulip"});
  const bool identical_ambiguous =
      resolve_room(twins, {"rose", "tulip"}) == RoomResolution{AmbiguousRoom{{"east", "west"}}};

  return {mismatch == 0 && fixture_ok == fixture_total && mixed_ambiguous && identical_ambiguous,
          fmt("hit_test mismatches=%zu/%zu (%zu hits); two-room fixture resolved %zu/%zu; "
              "identical signatures ambiguous=%s",
              mismatch, cases, hits, fixture_ok, fixture_total, identical_ambiguous ? "yes" : "no")};
}

// ---- dialogue_followup ---------------------------------------------------------------

Verdict dialogue_followup() {
  const auto& a = *garden();
  std::size_t pairs = 0, phrasings = 0, mismatch = 0;
  for (const auto& [label, intents] : a.kb.objects) {
    for (const auto& intent : intents) {
      ++pairs;
      for (const auto& pattern : intent.patterns) {
        ++phrasings;
        const std::string question = text::join({pattern.begin(), pattern.end()}, " ");
        const auto explicit_reply = dialogue::respond({question, label}, {}, a.kb, a.lexicon).reply;
        const auto context = dialogue::respond({"what is this", label}, {}, a.kb, a.lexicon).context;
        const auto follow_up = dialogue::respond({question, std::nullopt}, context, a.kb, a.lexicon).reply;
        if (!(follow_up == explicit_reply)) ++mismatch;
      }
    }
  }
  return {a.kb.objects.size() == 9 && mismatch == 0,
          fmt("objects=%zu (object, intent) pairs=%zu phrasings=%zu mismatches=%zu", a.kb.objects.size(), pairs,
              phrasings, mismatch)};
}

// ---- latency_masking -----------------------------------------------------------------

struct MaskingTally {
  std::size_t vision_queries = 0;
  std::size_t masked = 0;
  std::size_t chat_only = 0;
  std::size_t chat_only_with_filler = 0;
  Seconds worst_delay = 0.0;
};

// Walks one session's output stream. Queries in a session are sequential, so
// every filler belongs to the next metrics record.
void tally_session(const sim::SessionLog& log, Seconds budget, MaskingTally& t) {
  std::optional<orchestrator::OutputEvent> filler;
  std::uint64_t outcome_seq = 0;  // reply, apology or room resolution
  bool have_outcome = false;
  for (const auto& e : log.events) {
    if (const auto* p = std::get_if<orchestrator::AgentPerformance>(&e.payload)) {
      if (p->is_filler) filler = e;
      else if (p->purpose != "greeting") outcome_seq = e.seq, have_outcome = true;
    } else if (std::holds_alternative<orchestrator::RoomResolved>(e.payload)) {
      outcome_seq = e.seq, have_outcome = true;
    } else if (const auto* mu = std::get_if<orchestrator::MetricsUpdated>(&e.payload)) {
      const auto& m = mu->metrics;
      if (m.or_time) {
        ++t.vision_queries;
        if (filler && have_outcome && filler->seq < outcome_seq && m.filler_at && filler->at == *m.filler_at) {
          const Seconds delay = filler->at - m.started_at;
          t.worst_delay = std::max(t.worst_delay, delay);
          if (delay <= budget && filler->at < m.started_at + m.total_time) ++t.masked;
        }
      } else {
        ++t.chat_only;
        if (filler || m.filler_emitted) ++t.chat_only_with_filler;
      }
      filler.reset();
      have_outcome = false;
    }
  }
}

Verdict latency_masking() {
  const orchestrator::EngineConfig config;
  MaskingTally t;
  for (const auto& sc : {garden_scenario(), sim::anchored_variant(garden_scenario()), load_scenario("band_scenario.json")}) {
    const auto out = sim::run_detailed(sc, {}, config, kSeed, garden());
    for (const auto& log : out.sessions) tally_session(log, config.processing_budget, t);
  }
  const bool pass = t.vision_queries > 0 && t.masked == t.vision_queries && t.chat_only > 0 &&
                    t.chat_only_with_filler == 0;
  return {pass, fmt("vision queries masked %zu/%zu (worst filler delay %.3fs, budget %.1fs); "
                    "chatbot-only queries with filler %zu/%zu",
                    t.masked, t.vision_queries, t.worst_delay, config.processing_budget, t.chat_only_with_filler,
                    t.chat_only)};
}

// ---- service_equivalence ---------------------------------------------------------------

Verdict service_equivalence() {
  service::ServiceOptions options;
  options.seed = kSeed;
  std::size_t compared = 0, identical = 0;
  std::string first_error;
  for (const auto& room : garden_scenario().rooms) {
    service::SessionService svc(garden(), {garden_scenario()}, options);
    service::HttpSessionServer http(svc);
    const int port = http.start();
    const auto script = oracle::visitor_script(room);
    const auto remote = oracle::drive_over_http(port, "garden/" + room.room_id, script);
    const auto local = oracle::drive_in_process(script, garden_scenario(), room, garden(), options);
    ++compared;
    if (!remote.error.empty()) {
      if (first_error.empty()) first_error = remote.error;
      continue;
    }
    if (remote.trace == local.trace && remote.events == local.events && !local.trace.empty()) ++identical;
  }
  return {identical == compared,
          fmt("bit-identical traces and event streams %zu/%zu%s", identical, compared,
              first_error.empty() ? "" : ("; " + first_error).c_str())};
}

const std::vector<std::pair<std::string, std::function<Verdict()>>>& criteria() {
  static const std::vector<std::pair<std::string, std::function<Verdict()>>> all = {
      {"table1", table1},
      {"anchor_benefit", anchor_benefit},
      {"response_band", response_band},
      {"fsm_properties", fsm_properties},
      {"composer_oracle", composer_oracle},
      {"anchor_geometry", anchor_geometry},
      {"dialogue_followup", dialogue_followup},
      {"latency_masking", latency_masking},
      {"service_equivalence", service_equivalence},
  };
  return all;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> selected(argv + 1, argv + argc);
  int failures = 0;
  std::size_t ran = 0;
  for (const auto& [name, check] : criteria()) {
    if (!selected.empty() && std::find(selected.begin(), selected.end(), name) == selected.end()) continue;
    ++ran;
    Verdict v;
    try {
      v = check();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    std::cout << (v.pass ? "PASS " : "FAIL ") << name << ": " << v.detail << std::endl;
    failures += !v.pass;
  }
  if (ran != (selected.empty() ? criteria().size() : selected.size())) {
    std::cerr << "unknown criterion name\n";
    return 2;
  }
  return failures == 0 ? 0 : 1;
}

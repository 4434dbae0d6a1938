#pragma once

// Seeded discrete-event simulation of scripted visitors talking to the agent.
// Nothing here sleeps: every session runs on its own simulated clock and the
// runner interleaves sessions by (clock, session index).

#include <cstdio>
#include <deque>

#include "mragent/wire.hpp"

namespace mragent::sim {

using Json = nlohmann::ordered_json;
using orchestrator::QueryMetrics;

// ---- scenario -------------------------------------------------------------------

struct SceneObject {
  std::string label;
  anchors::Pose pose;
  double radius = 0.3;
  double confidence = 0.9;
};

struct Room {
  std::string room_id;
  std::string character;
  Vec3 user_position{0.0, 1.6, 0.0};
  std::vector<SceneObject> objects;

  const SceneObject* find(std::string_view label) const {
    for (const auto& o : objects)
      if (o.label == label) return &o;
    return nullptr;
  }
};

struct RawEvent {
  fsm::UserEvent event;
};
struct LoadRoom {
  std::string view;  // object label in view; empty picks the room's first object
};
struct Approach {};
struct AskGeneral {
  std::string text;
};
struct AskAboutObject {
  std::string label;  // "*" cycles through the room's objects per repetition
  bool gaze = true;
  std::string command = "what is this";
};
struct Leave {};
struct Wait {
  Seconds seconds = 0.0;
};

using StepAction = std::variant<RawEvent, LoadRoom, Approach, AskGeneral, AskAboutObject, Leave, Wait>;

struct ScriptStep {
  Seconds at = 0.0;  // earliest start, relative to the session start
  StepAction action;
};

struct UserEventScript {
  std::string room_id;
  std::size_t repeat = 1;  // number of independent sessions running this script
  std::vector<ScriptStep> steps;
};

struct Scenario {
  std::string name;
  std::vector<Room> rooms;
  std::vector<UserEventScript> scripts;
  bool anchored = false;

  const Room* room(std::string_view id) const {
    for (const auto& r : rooms)
      if (r.room_id == id) return &r;
    return nullptr;
  }

  std::vector<Violation> violations() const {
    std::vector<Violation> out;
    std::set<std::string> ids;
    for (const auto& r : rooms) {
      if (!ids.insert(r.room_id).second) out.push_back({"scenario.room_unique", "duplicate room '" + r.room_id + "'"});
      std::set<std::string> labels;
      for (const auto& o : r.objects) {
        if (!labels.insert(o.label).second)
          out.push_back({"scenario.label_unique", "room '" + r.room_id + "' repeats label '" + o.label + "'"});
        if (!(o.radius > 0.0)) out.push_back({"scenario.radius_positive", "object '" + o.label + "' radius <= 0"});
      }
    }
    for (std::size_t i = 0; i < scripts.size(); ++i) {
      const auto& s = scripts[i];
      if (!room(s.room_id))
        out.push_back({"scenario.script_room_exists", "script " + std::to_string(i) + " references unknown room '" +
                                                          s.room_id + "'"});
      Seconds previous = 0.0;
      for (const auto& step : s.steps) {
        if (step.at < previous)
          out.push_back({"scenario.step_times_ordered", "script " + std::to_string(i) + " step times decrease"});
        previous = step.at;
      }
    }
    return out;
  }
};

/// Same scripts, with an anchor pre-placed on every object so object
/// questions are answered from the anchor map.
inline Scenario anchored_variant(Scenario scenario) {
  scenario.anchored = true;
  return scenario;
}

/// Anchor store for a scenario: one signature per room, plus anchors when the
/// scenario is anchored.
inline anchors::AnchorStore build_store(const Scenario& scenario, double placement_threshold) {
  anchors::AnchorStore store;
  for (const auto& room : scenario.rooms) {
    std::set<std::string> labels;
    for (const auto& o : room.objects) labels.insert(o.label);
    if (!labels.empty()) store = anchors::add_signature(std::move(store), room.room_id, labels);
  }
  if (!scenario.anchored) return store;
  for (const auto& room : scenario.rooms) {
    for (const auto& o : room.objects) {
      if (o.confidence < placement_threshold) continue;
      store = anchors::place_anchor(std::move(store), room.room_id, {o.label, o.confidence}, o.pose, o.radius, 0.0,
                                    placement_threshold)
                  .store;
    }
  }
  return store;
}

inline std::string view_ref(std::string_view room_id, std::string_view label) {
  return std::string(room_id) + "/" + std::string(label) + "_view";
}

/// Recognition fixtures implied by the ground truth: one view per object.
inline vision::FixtureTable scenario_fixtures(const Scenario& scenario) {
  vision::FixtureTable table;
  for (const auto& room : scenario.rooms)
    for (const auto& o : room.objects) table[view_ref(room.room_id, o.label)] = {o.label, o.confidence};
  return table;
}

/// Camera model: the view reference of the ground-truth object the gaze ray
/// hits, so the recognizer sees what the user looks at.
inline orchestrator::SceneCapture scene_capture(const Room& room) {
  std::vector<anchors::Anchor> truth;
  for (const auto& o : room.objects) truth.push_back({o.label, room.room_id, o.label, o.pose, o.radius, 0.0});
  const std::string room_id = room.room_id;
  return [truth, room_id](const std::optional<vision::Ray>& ray) -> std::string {
    if (!ray) return room_id + "/overview";
    if (auto hit = anchors::hit_test(truth, ray->origin, ray->direction)) return view_ref(room_id, hit->object_label);
    return room_id + "/empty_view";
  };
}

inline fsm::WorldRay ray_towards(const Vec3& from, const Vec3& to) { return {from, normalized(to - from)}; }

// ---- report ---------------------------------------------------------------------

struct SimReport {
  std::string scenario;
  std::uint64_t seed = 0;
  bool anchored = false;
  std::size_t sessions = 0;
  std::size_t vision_calls = 0;
  std::size_t chat_calls = 0;
  std::vector<QueryMetrics> records;

  orchestrator::MetricsAggregate aggregate(QueryKind kind) const { return orchestrator::aggregate_metrics(records, kind); }
};

struct SessionLog {
  std::string session_id;
  std::vector<orchestrator::TraceRecord> trace;
  std::vector<orchestrator::OutputEvent> events;
};

struct SimOutcome {
  SimReport report;
  std::vector<SessionLog> sessions;
};

class ScriptError : public std::runtime_error {
 public:
  ScriptError(std::size_t step_index, const std::string& reason)
      : std::runtime_error("script step " + std::to_string(step_index) + ": " + reason), step_index(step_index), reason(reason) {}
  std::size_t step_index;
  std::string reason;
};

namespace detail {

// One visitor session and the micro-steps still to run.
class Runner {
 public:
  struct Post {
    fsm::UserEvent event;
  };
  struct Advance {
    Seconds by;
  };
  struct AdvanceTo {
    Seconds at;
  };
  struct WaitReady {};
  struct LoadView {
    std::string scene_ref;
  };
  struct EnsureListening {};
  using Micro = std::variant<Post, Advance, AdvanceTo, WaitReady, LoadView, EnsureListening>;

  Runner(std::unique_ptr<orchestrator::Session> session, const Room& room, const UserEventScript& script,
         std::size_t repetition)
      : session_(std::move(session)), room_(room), script_(script), repetition_(repetition) {
    log_.session_id = session_->id();
    collect(session_->open());
  }

  bool done() const { return next_step_ >= script_.steps.size() && pending_.empty(); }
  Seconds clock() const { return session_->clock(); }

  /// Runs one micro-step, expanding the next script step when needed.
  void advance() {
    if (pending_.empty()) expand(next_step_++);
    if (pending_.empty()) return;
    Micro m = std::move(pending_.front());
    pending_.pop_front();
    try {
      execute(m);
    } catch (const orchestrator::SessionEndedError&) {
      throw ScriptError(next_step_ - 1, "session already ended");
    } catch (const orchestrator::MalformedEvent& e) {
      throw ScriptError(next_step_ - 1, e.what());
    }
  }

  SessionLog finish() {
    log_.trace = session_->trace();
    return std::move(log_);
  }
  const orchestrator::Session& session() const { return *session_; }

 private:
  void expand(std::size_t index) {
    const auto& step = script_.steps.at(index);
    const auto& cfg = session_->config().fsm;
    pending_.push_back(AdvanceTo{step.at});
    std::visit(
        [&](const auto& s) {
          using S = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<S, RawEvent>) {
            if (const auto* tick = std::get_if<fsm::Tick>(&s.event)) {
              pending_.push_back(AdvanceTo{tick->now});
            } else {
              pending_.push_back(Post{s.event});
            }
          } else if constexpr (std::is_same_v<S, LoadRoom>) {
            std::string view = s.view;
            if (view.empty()) {
              if (room_.objects.empty()) throw ScriptError(index, "room '" + room_.room_id + "' has no objects to view");
              view = room_.objects.front().label;
            }
            if (!room_.find(view)) throw ScriptError(index, "unknown object '" + view + "'");
            pending_.push_back(LoadView{view_ref(room_.room_id, view)});
            pending_.push_back(WaitReady{});
          } else if constexpr (std::is_same_v<S, Approach>) {
            pending_.push_back(EnsureListening{});
          } else if constexpr (std::is_same_v<S, AskGeneral>) {
            if (text::trim(s.text).empty()) throw ScriptError(index, "empty utterance");
            const double words = static_cast<double>(text::tokenize(s.text).size());
            pending_.push_back(EnsureListening{});
            pending_.push_back(Post{fsm::SpeechStarted{}});
            pending_.push_back(Advance{std::max(0.3, words * 60.0 / 150.0)});
            pending_.push_back(Advance{cfg.end_of_utterance_window});
            pending_.push_back(Post{fsm::SpeechFinal{s.text}});
            pending_.push_back(WaitReady{});
          } else if constexpr (std::is_same_v<S, AskAboutObject>) {
            std::string label = s.label;
            if (label == "*") {
              if (room_.objects.empty()) throw ScriptError(index, "room '" + room_.room_id + "' has no objects");
              label = room_.objects[repetition_ % room_.objects.size()].label;
            }
            const auto* object = room_.find(label);
            if (!object) throw ScriptError(index, "unknown object '" + label + "' in room '" + room_.room_id + "'");
            pending_.push_back(EnsureListening{});
            if (s.gaze) {
              pending_.push_back(Post{fsm::GazeOn{ray_towards(room_.user_position, object->pose.position)}});
              pending_.push_back(Advance{0.5});
            }
            pending_.push_back(Post{fsm::VoiceCommand{s.command}});
            if (s.gaze) pending_.push_back(Post{fsm::GazeOn{fsm::CharacterTarget{}}});
            pending_.push_back(WaitReady{});
          } else if constexpr (std::is_same_v<S, Leave>) {
            pending_.push_back(Post{fsm::GazeOff{}});
            pending_.push_back(Advance{cfg.end_silence_timeout + 0.01});
          } else if constexpr (std::is_same_v<S, Wait>) {
            pending_.push_back(Advance{s.seconds});
          }
        },
        step.action);
  }

  void tick_to(Seconds t) {
    const auto last = session_->last_tick();
    if (last && t <= *last) t = *last + 1e-6;
    collect(session_->post(fsm::Tick{t}));
  }

  void execute(const Micro& m) {
    std::visit(
        [&](const auto& v) {
          using V = std::decay_t<decltype(v)>;
          if constexpr (std::is_same_v<V, Post>) {
            collect(session_->post(v.event));
          } else if constexpr (std::is_same_v<V, Advance>) {
            tick_to(session_->clock() + v.by);
          } else if constexpr (std::is_same_v<V, AdvanceTo>) {
            if (v.at > session_->clock()) tick_to(v.at);
          } else if constexpr (std::is_same_v<V, LoadView>) {
            collect(session_->initialize_room_from_view(v.scene_ref));
          } else if constexpr (std::is_same_v<V, WaitReady>) {
            if (!session_->ready()) {
              const auto due = session_->next_due();
              if (!due) throw ScriptError(next_step_ - 1, "session is waiting with nothing scheduled");
              tick_to(*due);
              pending_.push_front(WaitReady{});
            }
          } else if constexpr (std::is_same_v<V, EnsureListening>) {
            const auto& state = session_->state();
            if (std::holds_alternative<fsm::Listening>(state)) return;
            if (std::holds_alternative<fsm::Ended>(state)) throw orchestrator::SessionEndedError();
            if (!session_->ready()) {
              pending_.push_front(EnsureListening{});
              pending_.push_front(WaitReady{});
              return;
            }
            // Idle or Dwelling: look at the character for the dwell time.
            if (std::holds_alternative<fsm::Idle>(state)) collect(session_->post(fsm::GazeOn{fsm::CharacterTarget{}}));
            tick_to(session_->clock() + session_->config().fsm.dwell_threshold + 0.01);
            pending_.push_front(EnsureListening{});
          }
        },
        m);
  }

  void collect(std::vector<orchestrator::OutputEvent> events) {
    for (auto& e : events) log_.events.push_back(std::move(e));
  }

  std::unique_ptr<orchestrator::Session> session_;
  const Room& room_;
  const UserEventScript& script_;
  std::size_t repetition_;
  std::size_t next_step_ = 0;
  std::deque<Micro> pending_;
  SessionLog log_;
};

}  // namespace detail

/// Runs every script instance to completion. Identical inputs give identical
/// reports.
inline SimOutcome run_detailed(const Scenario& scenario, const LatencyModel& model,
                               const orchestrator::EngineConfig& config, std::uint64_t seed,
                               std::shared_ptr<const AgentAssets> assets) {
  throw_first(scenario.violations());
  auto sampler = std::make_shared<LatencySampler>(seed);
  auto services = orchestrator::simulated_services(assets, model, sampler, scenario_fixtures(scenario));
  auto store = std::make_shared<const anchors::AnchorStore>(build_store(scenario, config.placement_threshold));

  std::vector<std::unique_ptr<detail::Runner>> runners;
  for (std::size_t s = 0; s < scenario.scripts.size(); ++s) {
    const auto& script = scenario.scripts[s];
    const Room& room = *scenario.room(script.room_id);
    for (std::size_t k = 0; k < script.repeat; ++k) {
      char id[96];
      std::snprintf(id, sizeof id, "%s-s%zu-%03zu", script.room_id.c_str(), s, k);
      auto session = std::make_unique<orchestrator::Session>(id, config, model, assets, services, store,
                                                             scene_capture(room));
      runners.push_back(std::make_unique<detail::Runner>(std::move(session), room, script, k));
    }
  }

  // Earliest clock first; ties go to the lower session index.
  using Entry = std::pair<Seconds, std::size_t>;
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> queue;
  for (std::size_t i = 0; i < runners.size(); ++i)
    if (!runners[i]->done()) queue.push({runners[i]->clock(), i});
  while (!queue.empty()) {
    const auto [t, i] = queue.top();
    queue.pop();
    runners[i]->advance();
    if (!runners[i]->done()) queue.push({runners[i]->clock(), i});
  }

  SimOutcome outcome;
  auto& report = outcome.report;
  report.scenario = scenario.name;
  report.seed = seed;
  report.anchored = scenario.anchored;
  report.sessions = runners.size();
  report.vision_calls = services.vision->call_count();
  report.chat_calls = services.chat->call_count();
  for (auto& r : runners) {
    const auto& m = r->session().metrics();
    report.records.insert(report.records.end(), m.begin(), m.end());
    outcome.sessions.push_back(r->finish());
  }
  return outcome;
}

inline SimReport run(const Scenario& scenario, const LatencyModel& model, const orchestrator::EngineConfig& config,
                     std::uint64_t seed, std::shared_ptr<const AgentAssets> assets) {
  return run_detailed(scenario, model, config, seed, std::move(assets)).report;
}

// ---- replay ------------------------------------------------------------------------

struct ReplayResult {
  std::size_t records = 0;
  std::optional<std::size_t> divergence;  // index of the first mismatching record
  std::string detail;
  bool ok() const { return !divergence.has_value(); }
};

/// Re-runs the interaction state machine over a recorded trace and checks
/// that every recorded state and action list is reproduced.
inline ReplayResult replay(const std::vector<orchestrator::TraceRecord>& trace, const fsm::FsmConfig& config) {
  ReplayResult result;
  fsm::InteractionState state = fsm::Idle{};
  for (std::size_t i = 0; i < trace.size(); ++i) {
    const auto& r = trace[i];
    auto step = fsm::step(state, r.event, r.t, config);
    const auto expected = wire::to_json(r);
    const auto got = wire::to_json(orchestrator::TraceRecord{r.t, step.state, r.event, step.actions});
    if (expected != got) {
      result.divergence = i;
      result.detail = "expected " + expected.dump() + " got " + got.dump();
      return result;
    }
    state = std::move(step.state);
    ++result.records;
  }
  return result;
}

// ---- file formats ----------------------------------------------------------------

inline std::string_view table_label(QueryKind kind) {
  switch (kind) {
    case QueryKind::AnchorLoad: return "Query A";
    case QueryKind::General: return "Query B";
    case QueryKind::ObjectQuery: return "Query C";
  }
  return "Query B";
}

inline constexpr QueryKind kAllKinds[] = {QueryKind::AnchorLoad, QueryKind::General, QueryKind::ObjectQuery};

inline Json aggregate_json(QueryKind kind, const orchestrator::MetricsAggregate& a) {
  using wire::opt_json;
  return Json{{"kind", std::string(to_string(kind))},
              {"label", std::string(table_label(kind))},
              {"count", a.count},
              {"mean_or", opt_json(a.mean_or)},
              {"mean_chatbot", opt_json(a.mean_chatbot)},
              {"mean_processing", opt_json(a.mean_processing)},
              {"mean_total", opt_json(a.mean_total)},
              {"stddev_total", a.stddev_total}};
}

inline Json report_to_json(const SimReport& r) {
  Json summary = Json::array();
  for (auto kind : kAllKinds) summary.push_back(aggregate_json(kind, r.aggregate(kind)));
  Json records = Json::array();
  for (const auto& m : r.records) records.push_back(wire::to_json(m));
  return Json{{"format", "mragent-sim-report"},
              {"version", 1},
              {"scenario", r.scenario},
              {"seed", r.seed},
              {"anchored", r.anchored},
              {"sessions", r.sessions},
              {"vision_calls", r.vision_calls},
              {"chat_calls", r.chat_calls},
              {"summary", summary},
              {"records", records}};
}

inline SimReport report_from_json(const Json& j) {
  SimReport r;
  r.scenario = j.at("scenario").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.anchored = j.at("anchored").get<bool>();
  r.sessions = j.at("sessions").get<std::size_t>();
  r.vision_calls = j.at("vision_calls").get<std::size_t>();
  r.chat_calls = j.at("chat_calls").get<std::size_t>();
  for (const auto& m : j.at("records")) r.records.push_back(wire::metrics_from(m));
  return r;
}

/// Aligned table with the garden study's rows.
inline std::string format_table(const SimReport& r) {
  auto seconds = [](const std::optional<Seconds>& v) {
    if (!v) return std::string("n/a");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1fs", *v);
    return std::string(buf);
  };
  std::vector<std::vector<std::string>> rows = {{"Query"},          {"Total queries"}, {"Object recognition"},
                                                {"Chatbot"},        {"Processing time"}, {"Total Time"},
                                                {"Std Dev"}};
  for (auto kind : kAllKinds) {
    const auto a = r.aggregate(kind);
    char sd[32];
    std::snprintf(sd, sizeof sd, "%.2f", a.stddev_total);
    rows[0].push_back(std::string(table_label(kind)));
    rows[1].push_back(std::to_string(a.count));
    rows[2].push_back(seconds(a.mean_or));
    rows[3].push_back(seconds(a.mean_chatbot));
    rows[4].push_back(seconds(a.mean_processing));
    rows[5].push_back(seconds(a.mean_total));
    rows[6].push_back(a.count ? std::string(sd) : std::string("n/a"));
  }
  std::vector<std::size_t> width(rows[0].size(), 0);
  for (const auto& row : rows)
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  std::string out;
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      out += row[c];
      if (c + 1 < row.size()) out += std::string(width[c] - row[c].size() + 3, ' ');
    }
    out += "\n";
  }
  return out;
}

namespace detail {

inline anchors::Pose pose_from(const Json& j) {
  anchors::Pose p;
  p.position = wire::vec_from(j.at("position"));
  if (j.contains("orientation")) {
    const auto& q = j.at("orientation");
    p.orientation = {q.at(0).get<double>(), q.at(1).get<double>(), q.at(2).get<double>(), q.at(3).get<double>()};
  }
  return p;
}

inline StepAction step_action_from(const Json& j) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "Event") return RawEvent{wire::event_from(j.at("event"))};
  if (kind == "LoadRoom") return LoadRoom{j.value("view", std::string{})};
  if (kind == "Approach") return Approach{};
  if (kind == "AskGeneral") return AskGeneral{j.at("text").get<std::string>()};
  if (kind == "AskAboutObject")
    return AskAboutObject{j.at("label").get<std::string>(), j.value("gaze", true),
                          j.value("command", std::string("what is this"))};
  if (kind == "Leave") return Leave{};
  if (kind == "Wait") return Wait{j.at("seconds").get<double>()};
  throw ValidationError("scenario.step_kind", "unknown step kind '" + kind + "'");
}

}  // namespace detail

inline Scenario scenario_from_json(const Json& j) {
  Scenario s;
  try {
    s.name = j.value("name", std::string("scenario"));
    s.anchored = j.value("anchored", false);
    for (const auto& r : j.at("rooms")) {
      Room room;
      room.room_id = r.at("room_id").get<std::string>();
      room.character = r.value("character", std::string{});
      if (r.contains("user_position")) room.user_position = wire::vec_from(r.at("user_position"));
      for (const auto& o : r.at("objects")) {
        room.objects.push_back({o.at("label").get<std::string>(), detail::pose_from(o), o.value("radius", 0.3),
                                o.value("confidence", 0.9)});
      }
      s.rooms.push_back(std::move(room));
    }
    for (const auto& sc : j.at("scripts")) {
      UserEventScript script;
      script.room_id = sc.at("room_id").get<std::string>();
      script.repeat = sc.value("repeat", std::size_t{1});
      for (const auto& step : sc.at("steps")) script.steps.push_back({step.value("at", 0.0), detail::step_action_from(step)});
      s.scripts.push_back(std::move(script));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("scenario.schema", e.what());
  } catch (const wire::WireError& e) {
    throw ValidationError("scenario.event", e.what());
  }
  throw_first(s.violations());
  return s;
}

}  // namespace mragent::sim

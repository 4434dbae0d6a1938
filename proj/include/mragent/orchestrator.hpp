#pragma once

// The module manager: one Session per user. A session feeds user events to
// the interaction machine, routes the resulting actions through the anchor
// map, the vision gateway, the chatbot and the composer, and records per-query
// timings.
//
// Sessions run on their own clock. Service latencies are added to that clock
// and the results are released as scheduled items when a later Tick passes
// their due time, so live and simulated sessions share one code path.

#include <cstdlib>
#include <functional>
#include <memory>
#include <queue>

#include "mragent/anchor_map.hpp"
#include "mragent/assets.hpp"
#include "mragent/interaction_fsm.hpp"
#include "mragent/latency.hpp"
#include "mragent/performance_composer.hpp"
#include "mragent/vision_gateway.hpp"

namespace mragent::orchestrator {

using Json = nlohmann::ordered_json;
using dialogue::Reply;
using dialogue::SentimentClass;
using dialogue::SentimentLevel;

// ---- configuration ----------------------------------------------------------

struct EngineConfig {
  fsm::FsmConfig fsm;
  vision::EndpointConfig endpoint;
  Seconds filler_threshold = 2.5;
  std::vector<std::string> filler_texts = {"let me see, let me think about it"};
  // Engine-side time to start the filler after a vision call is issued.
  Seconds filler_delay = 0.1;
  Seconds processing_budget = 1.0;
  double placement_threshold = anchors::kDefaultPlacementThreshold;

  std::vector<Violation> violations() const {
    auto out = fsm.violations();
    auto endpoint_v = endpoint.violations();
    out.insert(out.end(), endpoint_v.begin(), endpoint_v.end());
    if (!(filler_threshold > 0.0)) out.push_back({"engine.filler_threshold_positive", "filler_threshold must be > 0"});
    if (filler_texts.empty()) out.push_back({"engine.filler_texts_nonempty", "filler_texts is empty"});
    if (!(filler_delay >= 0.0)) out.push_back({"engine.filler_delay_nonnegative", "filler_delay must be >= 0"});
    if (!(processing_budget > 0.0)) out.push_back({"engine.processing_budget_positive", "processing_budget must be > 0"});
    if (filler_delay > processing_budget)
      out.push_back({"engine.filler_within_budget", "filler_delay exceeds processing_budget"});
    return out;
  }
};

/// Environment overrides: MRAGENT_VISION_URL, MRAGENT_VISION_TIMEOUT,
/// MRAGENT_VISION_RETRIES.
inline void apply_env_overrides(EngineConfig& config,
                                const std::function<const char*(const char*)>& getenv = [](const char* name) {
                                  return std::getenv(name);
                                }) {
  if (const char* url = getenv("MRAGENT_VISION_URL"); url && *url) config.endpoint.endpoint_url = url;
  if (const char* t = getenv("MRAGENT_VISION_TIMEOUT"); t && *t) config.endpoint.timeout = std::stod(t);
  if (const char* r = getenv("MRAGENT_VISION_RETRIES"); r && *r) config.endpoint.retries = std::stoi(r);
}

inline EngineConfig engine_config_from_json(const Json& j) {
  EngineConfig c;
  try {
    if (j.contains("fsm")) {
      const auto& f = j.at("fsm");
      c.fsm.dwell_threshold = f.value("dwell_threshold", c.fsm.dwell_threshold);
      c.fsm.greeting_silence_delay = f.value("greeting_silence_delay", c.fsm.greeting_silence_delay);
      c.fsm.end_silence_timeout = f.value("end_silence_timeout", c.fsm.end_silence_timeout);
      c.fsm.end_of_utterance_window = f.value("end_of_utterance_window", c.fsm.end_of_utterance_window);
      c.fsm.greeting_text = f.value("greeting_text", c.fsm.greeting_text);
      if (f.contains("trigger_commands")) {
        c.fsm.trigger_commands.clear();
        for (const auto& t : f.at("trigger_commands")) c.fsm.trigger_commands.insert(fsm::normalize_command(t.get<std::string>()));
      }
    }
    if (j.contains("endpoint")) {
      const auto& e = j.at("endpoint");
      c.endpoint.endpoint_url = e.value("url", c.endpoint.endpoint_url);
      c.endpoint.timeout = e.value("timeout", c.endpoint.timeout);
      c.endpoint.retries = e.value("retries", c.endpoint.retries);
    }
    c.filler_threshold = j.value("filler_threshold", c.filler_threshold);
    if (j.contains("filler_texts")) c.filler_texts = j.at("filler_texts").get<std::vector<std::string>>();
    c.filler_delay = j.value("filler_delay", c.filler_delay);
    c.processing_budget = j.value("processing_budget", c.processing_budget);
    c.placement_threshold = j.value("placement_threshold", c.placement_threshold);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("engine.schema", e.what());
  }
  throw_first(c.violations());
  return c;
}

// ---- metrics ----------------------------------------------------------------

struct QueryMetrics {
  std::string session_id;
  std::size_t query_index = 0;
  QueryKind kind = QueryKind::General;
  Seconds started_at = 0.0;
  std::optional<Seconds> or_time;
  std::optional<Seconds> chatbot_time;
  Seconds processing_time = 0.0;
  Seconds total_time = 0.0;
  bool anchor_hit = false;
  bool filler_emitted = false;
  std::optional<Seconds> filler_at;
  std::string outcome = "ok";

  void finalize() { total_time = or_time.value_or(0.0) + chatbot_time.value_or(0.0) + processing_time; }
  friend bool operator==(const QueryMetrics&, const QueryMetrics&) = default;
};

struct MetricsAggregate {
  std::size_t count = 0;
  std::optional<Seconds> mean_or;
  std::optional<Seconds> mean_chatbot;
  std::optional<Seconds> mean_processing;
  std::optional<Seconds> mean_total;
  Seconds stddev_total = 0.0;
};

/// Means over present fields and the sample standard deviation of totals.
inline MetricsAggregate aggregate_metrics(const std::vector<QueryMetrics>& log, QueryKind kind) {
  MetricsAggregate agg;
  double sum_or = 0, sum_chat = 0, sum_proc = 0, sum_total = 0;
  std::size_t n_or = 0, n_chat = 0;
  std::vector<double> totals;
  for (const auto& m : log) {
    if (m.kind != kind) continue;
    ++agg.count;
    if (m.or_time) sum_or += *m.or_time, ++n_or;
    if (m.chatbot_time) sum_chat += *m.chatbot_time, ++n_chat;
    sum_proc += m.processing_time;
    sum_total += m.total_time;
    totals.push_back(m.total_time);
  }
  if (agg.count == 0) return agg;
  const double n = static_cast<double>(agg.count);
  if (n_or) agg.mean_or = sum_or / static_cast<double>(n_or);
  if (n_chat) agg.mean_chatbot = sum_chat / static_cast<double>(n_chat);
  agg.mean_processing = sum_proc / n;
  agg.mean_total = sum_total / n;
  if (agg.count > 1) {
    double ss = 0.0;
    for (double t : totals) ss += (t - *agg.mean_total) * (t - *agg.mean_total);
    agg.stddev_total = std::sqrt(ss / (n - 1.0));
  }
  return agg;
}

// ---- chatbot service ----------------------------------------------------------

struct ChatOutcome {
  std::optional<dialogue::Response> response;
  std::string error;
  Seconds duration = 0.0;
};

class ChatService {
 public:
  virtual ~ChatService() = default;
  virtual ChatOutcome respond(const dialogue::Query& query, const dialogue::DialogueContext& context) = 0;
  virtual std::size_t call_count() const = 0;
};

/// In-process chatbot whose latency is sampled on the simulated clock.
class LocalChatService : public ChatService {
 public:
  LocalChatService(std::shared_ptr<const AgentAssets> assets, NormalLatency latency,
                   std::shared_ptr<LatencySampler> sampler)
      : assets_(std::move(assets)), latency_(latency), sampler_(std::move(sampler)) {}

  ChatOutcome respond(const dialogue::Query& query, const dialogue::DialogueContext& context) override {
    ++calls_;
    ChatOutcome out;
    out.response = dialogue::respond(query, context, assets_->kb, assets_->lexicon);
    out.duration = sampler_->sample(latency_);
    return out;
  }
  std::size_t call_count() const override { return calls_; }

 private:
  std::shared_ptr<const AgentAssets> assets_;
  NormalLatency latency_;
  std::shared_ptr<LatencySampler> sampler_;
  std::size_t calls_ = 0;
};

struct Services {
  std::shared_ptr<vision::VisionService> vision;
  std::shared_ptr<ChatService> chat;
};

/// Builds simulated vision and chat services that draw from one sampler.
inline Services simulated_services(std::shared_ptr<const AgentAssets> assets, const LatencyModel& model,
                                   std::shared_ptr<LatencySampler> sampler, vision::FixtureTable fixtures) {
  auto stub = std::make_shared<vision::StubRecognizer>(std::move(fixtures), model.vision, sampler);
  return {std::make_shared<vision::SimulatedVision>(stub),
          std::make_shared<LocalChatService>(std::move(assets), model.chatbot, sampler)};
}

// ---- output events --------------------------------------------------------------

struct StateChanged {
  std::string state;
};
struct AgentPerformance {
  composer::PerformanceTimeline timeline;
  bool is_filler = false;
  Reply reply;
  std::string purpose;  // reply | filler | greeting | apology | clarification
};
struct MetricsUpdated {
  QueryMetrics metrics;
};
struct RoomResolved {
  std::string room_id;
  std::vector<anchors::Anchor> anchors;
};
struct SessionEnded {};

using OutputPayload = std::variant<StateChanged, AgentPerformance, MetricsUpdated, RoomResolved, SessionEnded>;

inline std::string_view payload_name(const OutputPayload& p) {
  static constexpr std::string_view names[] = {"StateChanged", "AgentPerformance", "MetricsUpdated", "RoomResolved",
                                               "SessionEnded"};
  return names[p.index()];
}

struct OutputEvent {
  std::uint64_t seq = 0;
  Seconds at = 0.0;
  OutputPayload payload;
};

struct TraceRecord {
  Seconds t = 0.0;
  fsm::InteractionState state;
  fsm::UserEvent event;
  std::vector<fsm::FsmAction> actions;
};

class SessionEndedError : public std::runtime_error {
 public:
  SessionEndedError() : std::runtime_error("session has ended") {}
};
class MalformedEvent : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Maps the headset camera's current view to a recognition scene reference.
using SceneCapture = std::function<std::string(const std::optional<vision::Ray>&)>;

// ---- session ----------------------------------------------------------------------

class Session {
 public:
  Session(std::string id, EngineConfig config, LatencyModel latency, std::shared_ptr<const AgentAssets> assets,
          Services services, std::shared_ptr<const anchors::AnchorStore> store, SceneCapture capture)
      : id_(std::move(id)),
        config_(std::move(config)),
        latency_(std::move(latency)),
        assets_(std::move(assets)),
        services_(std::move(services)),
        store_(std::move(store)),
        capture_(std::move(capture)) {
    throw_first(config_.violations());
    if (!store_) store_ = std::make_shared<anchors::AnchorStore>();
  }

  /// First events of a fresh session.
  std::vector<OutputEvent> open() {
    std::vector<OutputEvent> out;
    emit(out, StateChanged{std::string(fsm::state_name(state_))});
    return out;
  }

  /// Feeds one user event. Tick first releases every scheduled item due at
  /// or before its time, in due order.
  std::vector<OutputEvent> post(const fsm::UserEvent& event) {
    if (ended_) throw SessionEndedError();
    validate_event(event);
    std::vector<OutputEvent> out;
    if (const auto* tick = std::get_if<fsm::Tick>(&event)) {
      run_due(tick->now, out);
      last_tick_ = tick->now;
      clock_ = tick->now;
      if (ended_) return out;
    }
    track_gaze(event);
    apply(event, out);
    return out;
  }

  /// Runs one machine action at the current clock.
  std::vector<OutputEvent> handle_action(const fsm::FsmAction& action) {
    std::vector<OutputEvent> out;
    handle(action, out);
    return out;
  }

  /// Resolves and loads the room from a camera view (one recognition call).
  std::vector<OutputEvent> initialize_room_from_view(const std::string& scene_ref) {
    if (ended_) throw SessionEndedError();
    std::vector<OutputEvent> out;
    QueryMetrics m = new_metrics(QueryKind::AnchorLoad);
    maybe_filler(m, out);
    const auto outcome = services_.vision->recognize({scene_ref, std::nullopt});
    m.or_time = outcome.duration;
    std::set<std::string> labels;
    if (outcome.ok() && outcome.value().recognized()) {
      labels.insert(outcome.value().label);
    } else {
      m.outcome = outcome.ok() ? "not_recognized" : "vision_" + std::string(vision::to_string(outcome.error().kind));
    }
    finish_room_load(std::move(m), std::move(labels), out);
    return out;
  }

  /// Resolves and loads the room from labels the caller already knows; no
  /// recognition is involved.
  std::vector<OutputEvent> initialize_room(const std::set<std::string>& observed_labels) {
    if (ended_) throw SessionEndedError();
    std::vector<OutputEvent> out;
    finish_room_load(new_metrics(QueryKind::AnchorLoad), observed_labels, out);
    return out;
  }

  /// Directly activates a known room (session bound to a room at creation).
  std::vector<OutputEvent> bind_room(const std::string& room_id) {
    std::vector<OutputEvent> out;
    loaded_ = anchors::load_room(*store_, room_id);
    active_room_ = room_id;
    emit(out, RoomResolved{room_id, loaded_});
    return out;
  }

  std::optional<Seconds> next_due() const {
    if (scheduled_.empty()) return std::nullopt;
    return scheduled_.top().due;
  }
  /// No pending service work and the agent is not replying.
  bool ready() const {
    return scheduled_.empty() && !ended_ &&
           (std::holds_alternative<fsm::Idle>(state_) || std::holds_alternative<fsm::Dwelling>(state_) ||
            std::holds_alternative<fsm::Listening>(state_));
  }
  bool ended() const { return ended_; }
  Seconds clock() const { return clock_; }
  std::optional<Seconds> last_tick() const { return last_tick_; }
  const std::string& id() const { return id_; }
  const fsm::InteractionState& state() const { return state_; }
  const std::vector<TraceRecord>& trace() const { return trace_; }
  const std::vector<QueryMetrics>& metrics() const { return metrics_; }
  const std::optional<std::string>& active_room() const { return active_room_; }
  const std::vector<anchors::Anchor>& loaded_anchors() const { return loaded_; }
  const dialogue::DialogueContext& dialogue_context() const { return context_; }
  const EngineConfig& config() const { return config_; }

 private:
  using Job = std::function<void(Session&, std::vector<OutputEvent>&)>;
  struct Scheduled {
    Seconds due;
    std::uint64_t order;
    Job job;
  };
  struct Later {
    bool operator()(const Scheduled& a, const Scheduled& b) const {
      return a.due != b.due ? a.due > b.due : a.order > b.order;
    }
  };

  void validate_event(const fsm::UserEvent& event) const {
    if (const auto* tick = std::get_if<fsm::Tick>(&event)) {
      if (!std::isfinite(tick->now) || tick->now < 0.0) throw MalformedEvent("tick time must be finite and >= 0");
      if ((last_tick_ && tick->now <= *last_tick_) || tick->now < clock_)
        throw MalformedEvent("tick times must strictly increase");
    } else if (const auto* fin = std::get_if<fsm::SpeechFinal>(&event)) {
      if (text::trim(fin->text).empty()) throw MalformedEvent("SpeechFinal text is empty");
    } else if (const auto* on = std::get_if<fsm::GazeOn>(&event)) {
      if (const auto* ray = std::get_if<fsm::WorldRay>(&on->target); ray && !is_unit(ray->direction))
        throw MalformedEvent("gaze ray direction is not unit length");
    }
  }

  void track_gaze(const fsm::UserEvent& event) {
    if (const auto* on = std::get_if<fsm::GazeOn>(&event)) {
      if (const auto* ray = std::get_if<fsm::WorldRay>(&on->target))
        gaze_ray_ = vision::Ray{ray->origin, ray->direction};
      else
        gaze_ray_.reset();
    } else if (std::holds_alternative<fsm::GazeOff>(event)) {
      gaze_ray_.reset();
    }
  }

  void run_due(Seconds until, std::vector<OutputEvent>& out) {
    while (!scheduled_.empty() && scheduled_.top().due <= until && !ended_) {
      Scheduled item = scheduled_.top();
      scheduled_.pop();
      clock_ = std::max(clock_, item.due);
      item.job(*this, out);
    }
  }

  void schedule(Seconds due, Job job) { scheduled_.push({due, next_order_++, std::move(job)}); }

  void emit(std::vector<OutputEvent>& out, OutputPayload payload) {
    out.push_back({next_seq_++, clock_, std::move(payload)});
  }

  void apply(const fsm::UserEvent& event, std::vector<OutputEvent>& out) {
    auto result = fsm::step(state_, event, clock_, config_.fsm);
    const bool changed = result.state.index() != state_.index();
    state_ = std::move(result.state);
    trace_.push_back({clock_, state_, event, result.actions});
    if (changed) emit(out, StateChanged{std::string(fsm::state_name(state_))});
    for (const auto& action : result.actions) handle(action, out);
  }

  void handle(const fsm::FsmAction& action, std::vector<OutputEvent>& out) {
    std::visit(
        [&](const auto& a) {
          using A = std::decay_t<decltype(a)>;
          if constexpr (std::is_same_v<A, fsm::EmitGreeting>) {
            perform(dialogue::make_reply(a.text, assets_->lexicon), "greeting", false, out);
          } else if constexpr (std::is_same_v<A, fsm::CaptureGazeTarget>) {
            captured_ray_ = gaze_ray_;
            capture_pending_ = true;
          } else if constexpr (std::is_same_v<A, fsm::SubmitQuery>) {
            submit(a, out);
          } else if constexpr (std::is_same_v<A, fsm::EndConversation>) {
            ended_ = true;
            emit(out, SessionEnded{});
          }
        },
        action);
  }

  QueryMetrics new_metrics(QueryKind kind) {
    QueryMetrics m;
    m.session_id = id_;
    m.query_index = query_count_++;
    m.kind = kind;
    m.started_at = clock_;
    return m;
  }

  void maybe_filler(QueryMetrics& m, std::vector<OutputEvent>&) {
    if (!(services_.vision->expected_latency() > config_.filler_threshold)) return;
    const auto& texts = config_.filler_texts;
    Reply filler{texts[filler_count_++ % texts.size()], SentimentClass::Neutral, SentimentLevel::Low};
    m.filler_emitted = true;
    m.filler_at = clock_ + config_.filler_delay;
    schedule(*m.filler_at, [filler](Session& s, std::vector<OutputEvent>& out) {
      s.perform(filler, "filler", true, out);
      s.apply(fsm::FillerStarted{}, out);
    });
  }

  static Reply apology(std::string text) { return Reply{std::move(text), SentimentClass::Neutral, SentimentLevel::Low}; }

  static std::string apology_text(vision::VisionErrorKind kind) {
    switch (kind) {
      case vision::VisionErrorKind::Timeout:
        return "Sorry, it is taking me too long to see that. Could you ask me again?";
      case vision::VisionErrorKind::EndpointError: return "Sorry, I cannot see properly right now.";
      case vision::VisionErrorKind::MalformedResponse: return "Sorry, I could not make sense of what I saw.";
    }
    return "Sorry, I cannot see properly right now.";
  }

  void submit(const fsm::SubmitQuery& query, std::vector<OutputEvent>& out) {
    QueryMetrics m = new_metrics(query.needs_object ? QueryKind::ObjectQuery : QueryKind::General);
    std::optional<std::string> object;
    std::optional<Reply> reply;

    if (query.needs_object) {
      const auto ray = capture_pending_ ? captured_ray_ : gaze_ray_;
      capture_pending_ = false;
      std::optional<anchors::Anchor> hit;
      if (ray && is_unit(ray->direction)) hit = anchors::hit_test(loaded_, ray->origin, ray->direction);
      if (hit) {
        object = hit->object_label;
        m.anchor_hit = true;
      } else {
        maybe_filler(m, out);
        const auto outcome = services_.vision->recognize({capture_(ray), ray});
        m.or_time = outcome.duration;
        if (!outcome.ok()) {
          reply = apology(apology_text(outcome.error().kind));
          m.outcome = "vision_" + std::string(vision::to_string(outcome.error().kind));
        } else if (!outcome.value().recognized()) {
          reply = apology("Sorry, I do not recognize that. Could you look at it again?");
          m.outcome = "not_recognized";
        } else {
          object = outcome.value().label;
        }
      }
    }

    if (!reply) {
      auto chat = services_.chat->respond({query.text, object}, context_);
      m.chatbot_time = chat.duration;
      if (chat.response) {
        reply = chat.response->reply;
        context_ = std::move(chat.response->context);
      } else {
        reply = apology("Sorry, I lost my train of thought. Could you say that again?");
        m.outcome = "chat_error";
      }
    }

    m.processing_time = latency_.processing_for(m.kind);
    m.finalize();
    const Seconds ready_at = m.started_at + m.total_time;
    const std::string purpose = m.outcome == "ok" ? "reply" : "apology";
    schedule(ready_at, [reply = *reply, m, purpose](Session& s, std::vector<OutputEvent>& out) {
      const Seconds duration = s.perform(reply, purpose, false, out);
      s.metrics_.push_back(m);
      s.emit(out, MetricsUpdated{m});
      const Seconds until = s.clock_ + duration;
      s.apply(fsm::ReplyStarted{until}, out);
      s.schedule(until, [](Session& inner, std::vector<OutputEvent>& o) { inner.apply(fsm::AgentSpeechDone{}, o); });
    });
  }

  void finish_room_load(QueryMetrics m, std::set<std::string> labels, std::vector<OutputEvent>&) {
    m.processing_time = latency_.processing_for(QueryKind::AnchorLoad);
    m.finalize();
    const Seconds ready_at = m.started_at + m.total_time;
    schedule(ready_at, [m, labels = std::move(labels)](Session& s, std::vector<OutputEvent>& out) mutable {
      std::optional<std::string> room;
      if (!labels.empty()) {
        const auto resolution = anchors::resolve_room(*s.store_, labels);
        if (const auto* r = std::get_if<anchors::ResolvedRoom>(&resolution)) room = r->room_id;
      }
      if (room) {
        s.loaded_ = anchors::load_room(*s.store_, *room);
        s.active_room_ = room;
        s.emit(out, RoomResolved{*room, s.loaded_});
      } else {
        s.active_room_.reset();
        s.loaded_.clear();
        if (m.outcome == "ok") m.outcome = "room_unresolved";
        s.perform(apology("I am not sure which room we are in. Could you look at one of the flowers for me?"),
                  "clarification", false, out);
      }
      s.metrics_.push_back(m);
      s.emit(out, MetricsUpdated{m});
    });
  }

  Seconds perform(const Reply& reply, const std::string& purpose, bool is_filler, std::vector<OutputEvent>& out) {
    auto timeline = composer::assemble(reply, assets_->performance);
    const Seconds duration = timeline.total_duration;
    emit(out, AgentPerformance{std::move(timeline), is_filler, reply, purpose});
    return duration;
  }

  std::string id_;
  EngineConfig config_;
  LatencyModel latency_;
  std::shared_ptr<const AgentAssets> assets_;
  Services services_;
  std::shared_ptr<const anchors::AnchorStore> store_;
  SceneCapture capture_;

  fsm::InteractionState state_ = fsm::Idle{};
  dialogue::DialogueContext context_;
  std::optional<std::string> active_room_;
  std::vector<anchors::Anchor> loaded_;
  Seconds clock_ = 0.0;
  std::optional<Seconds> last_tick_;
  bool ended_ = false;

  std::optional<vision::Ray> gaze_ray_;
  std::optional<vision::Ray> captured_ray_;
  bool capture_pending_ = false;

  std::priority_queue<Scheduled, std::vector<Scheduled>, Later> scheduled_;
  std::uint64_t next_order_ = 0;
  std::uint64_t next_seq_ = 0;
  std::size_t query_count_ = 0;
  std::size_t filler_count_ = 0;

  std::vector<TraceRecord> trace_;
  std::vector<QueryMetrics> metrics_;
};

}  // namespace mragent::orchestrator

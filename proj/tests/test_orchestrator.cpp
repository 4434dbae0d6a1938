#include <gtest/gtest.h>

#include "mragent/sim_harness.hpp"

using namespace mragent;
using namespace mragent::orchestrator;

namespace {

std::shared_ptr<const AgentAssets> garden() {
  static const auto a = std::make_shared<const AgentAssets>(load_assets(MRAGENT_DATA_DIR));
  return a;
}

const sim::Scenario& scenario() {
  static const auto s = sim::scenario_from_json(read_json(std::string(MRAGENT_DATA_DIR) + "/scenario.json"));
  return s;
}

// Fixed latencies so every timing below is exact.
LatencyModel fixed() {
  LatencyModel m;
  m.vision = {5.0, 0.0};
  m.chatbot = {2.0, 0.0};
  return m;
}

struct Rig {
  Services services;
  std::unique_ptr<Session> session;
  std::vector<OutputEvent> log;

  explicit Rig(bool anchored = false, LatencyModel model = fixed(), std::optional<Seconds> vision_timeout = {},
               EngineConfig config = {}) {
    auto sampler = std::make_shared<LatencySampler>(1);
    auto fixtures = garden()->fixtures;
    for (auto& [k, v] : sim::scenario_fixtures(scenario())) fixtures[k] = v;
    auto stub = std::make_shared<vision::StubRecognizer>(fixtures, model.vision, sampler);
    services = {std::make_shared<vision::SimulatedVision>(stub, vision_timeout),
                std::make_shared<LocalChatService>(garden(), model.chatbot, sampler)};
    auto sc = anchored ? sim::anchored_variant(scenario()) : scenario();
    auto store = std::make_shared<const anchors::AnchorStore>(sim::build_store(sc, config.placement_threshold));
    session = std::make_unique<Session>("t", config, model, garden(), services, store,
                                        sim::scene_capture(*scenario().room("room1")));
    take(session->open());
  }

  void take(std::vector<OutputEvent> events) { log.insert(log.end(), events.begin(), events.end()); }
  void post(const fsm::UserEvent& e) { take(session->post(e)); }

  // Idle to Listening at t = 4.
  void approach() {
    post(fsm::GazeOn{fsm::CharacterTarget{}});
    post(fsm::Tick{4.0});
    ASSERT_TRUE(std::holds_alternative<fsm::Listening>(session->state()));
  }

  void look_at(const std::string& label) {
    const auto* room = scenario().room("room1");
    post(fsm::GazeOn{sim::ray_towards(room->user_position, room->find(label)->pose.position)});
  }

  std::vector<const AgentPerformance*> performances(const std::string& purpose = {}) const {
    std::vector<const AgentPerformance*> out;
    for (const auto& e : log)
      if (const auto* p = std::get_if<AgentPerformance>(&e.payload); p && (purpose.empty() || p->purpose == purpose))
        out.push_back(p);
    return out;
  }

  const OutputEvent* first(const std::string& purpose) const {
    for (const auto& e : log)
      if (const auto* p = std::get_if<AgentPerformance>(&e.payload); p && p->purpose == purpose) return &e;
    return nullptr;
  }
};

}  // namespace

TEST(Session, GeneralQueryTimingAndMetrics) {
  Rig rig;
  rig.approach();
  rig.post(fsm::SpeechStarted{});
  rig.post(fsm::SpeechFinal{"hello what is your name"});
  EXPECT_TRUE(std::holds_alternative<fsm::AwaitingReply>(rig.session->state()));
  EXPECT_EQ(rig.session->next_due(), 4.0 + 2.0 + 1.0);
  rig.post(fsm::Tick{6.9});
  EXPECT_TRUE(rig.performances("reply").empty());
  rig.post(fsm::Tick{7.5});
  const auto* reply = rig.first("reply");
  ASSERT_NE(reply, nullptr);
  EXPECT_DOUBLE_EQ(reply->at, 7.0);
  ASSERT_EQ(rig.session->metrics().size(), 1u);
  const auto& m = rig.session->metrics()[0];
  EXPECT_EQ(m.kind, QueryKind::General);
  EXPECT_FALSE(m.or_time);
  EXPECT_DOUBLE_EQ(*m.chatbot_time, 2.0);
  EXPECT_DOUBLE_EQ(m.total_time, 3.0);
  EXPECT_FALSE(m.filler_emitted);
  EXPECT_TRUE(rig.performances("filler").empty());
  EXPECT_TRUE(std::holds_alternative<fsm::AgentSpeaking>(rig.session->state()));
  // Once the reply has been spoken the agent listens again.
  rig.post(fsm::Tick{30.0});
  EXPECT_TRUE(std::holds_alternative<fsm::Listening>(rig.session->state()));
  EXPECT_TRUE(rig.session->ready());
}

TEST(Session, ObjectQueryEmitsFillerBeforeReply) {
  Rig rig;
  rig.approach();
  rig.look_at("rose");
  rig.post(fsm::SpeechFinal{"what is this"});
  // The filler fires a fixed engine delay after the query, well inside the budget.
  rig.post(fsm::Tick{4.1});
  const auto* filler = rig.first("filler");
  ASSERT_NE(filler, nullptr);
  EXPECT_DOUBLE_EQ(filler->at, 4.1);
  EXPECT_TRUE(std::get<AgentPerformance>(filler->payload).is_filler);
  EXPECT_TRUE(std::get<fsm::AwaitingReply>(rig.session->state()).filler_active);
  rig.post(fsm::Tick{12.0});
  const auto* reply = rig.first("reply");
  ASSERT_NE(reply, nullptr);
  EXPECT_LT(filler->seq, reply->seq);
  EXPECT_DOUBLE_EQ(reply->at, 4.0 + 5.0 + 2.0 + 1.0);
  const auto& p = std::get<AgentPerformance>(reply->payload);
  EXPECT_EQ(p.reply.text, garden()->kb.objects.at("rose").front().answer);
  const auto& m = rig.session->metrics().back();
  EXPECT_EQ(m.kind, QueryKind::ObjectQuery);
  EXPECT_TRUE(m.filler_emitted);
  EXPECT_LE(*m.filler_at - m.started_at, rig.session->config().processing_budget);
  EXPECT_DOUBLE_EQ(m.total_time, *m.or_time + *m.chatbot_time + m.processing_time);
  EXPECT_EQ(rig.services.vision->call_count(), 1u);
  EXPECT_EQ(rig.session->dialogue_context().current_object, "rose");
}

TEST(Session, AnchoredQuerySkipsVisionAndFiller) {
  Rig rig(true);
  rig.take(rig.session->bind_room("room1"));
  EXPECT_EQ(rig.session->loaded_anchors().size(), 5u);
  rig.approach();
  rig.look_at("iris");
  rig.post(fsm::SpeechFinal{"what is this"});
  rig.post(fsm::Tick{10.0});
  const auto& m = rig.session->metrics().back();
  EXPECT_TRUE(m.anchor_hit);
  EXPECT_FALSE(m.or_time);
  EXPECT_FALSE(m.filler_emitted);
  EXPECT_DOUBLE_EQ(m.total_time, 3.0);
  EXPECT_EQ(rig.services.vision->call_count(), 0u);
  EXPECT_EQ(std::get<AgentPerformance>(rig.first("reply")->payload).reply.text,
            garden()->kb.objects.at("iris").front().answer);
}

TEST(Session, AnchorMissFallsBackToVision) {
  Rig rig(true);
  rig.take(rig.session->bind_room("room1"));
  rig.approach();
  // Straight ahead at eye level passes above every flower.
  rig.post(fsm::GazeOn{fsm::WorldRay{{0, 1.6, 0}, {0, 0, 1}}});
  rig.post(fsm::SpeechFinal{"what is this"});
  rig.post(fsm::Tick{20.0});
  const auto& m = rig.session->metrics().back();
  EXPECT_FALSE(m.anchor_hit);
  EXPECT_EQ(m.outcome, "not_recognized");
  EXPECT_EQ(rig.services.vision->call_count(), 1u);
  EXPECT_EQ(rig.services.chat->call_count(), 0u);
  ASSERT_EQ(rig.performances("apology").size(), 1u);
  EXPECT_DOUBLE_EQ(m.total_time, 5.0 + 1.0);
}

TEST(Session, VisionTimeoutBecomesApology) {
  Rig rig(false, fixed(), 3.0);
  rig.approach();
  rig.look_at("tulip");
  rig.post(fsm::SpeechFinal{"what is this"});
  rig.post(fsm::Tick{20.0});
  const auto& m = rig.session->metrics().back();
  EXPECT_EQ(m.outcome, "vision_Timeout");
  EXPECT_DOUBLE_EQ(*m.or_time, 3.0);
  EXPECT_FALSE(m.chatbot_time);
  EXPECT_EQ(rig.services.chat->call_count(), 0u);
  const auto apologies = rig.performances("apology");
  ASSERT_EQ(apologies.size(), 1u);
  EXPECT_EQ(apologies[0]->reply.text.rfind("Sorry", 0), 0u);
  EXPECT_EQ(rig.performances("filler").size(), 1u);
}

TEST(Session, FastVisionNeedsNoFiller) {
  auto model = fixed();
  model.vision = {1.0, 0.0};
  Rig rig(false, model);
  rig.approach();
  rig.look_at("lily");
  rig.post(fsm::SpeechFinal{"what is this"});
  rig.post(fsm::Tick{20.0});
  EXPECT_TRUE(rig.performances("filler").empty());
  EXPECT_FALSE(rig.session->metrics().back().filler_emitted);
}

TEST(Session, GreetingAfterSilence) {
  Rig rig;
  rig.approach();
  rig.post(fsm::Tick{7.0});
  const auto greetings = rig.performances("greeting");
  ASSERT_EQ(greetings.size(), 1u);
  EXPECT_EQ(greetings[0]->reply.text, "Hello, do you need help?");
  EXPECT_EQ(greetings[0]->timeline.body_track.front().value, "Wave");
}

TEST(Session, RoomLoadFromView) {
  Rig rig;
  rig.take(rig.session->initialize_room_from_view("room1/daisy_view"));
  EXPECT_FALSE(rig.session->active_room());
  rig.post(fsm::Tick{6.0});
  ASSERT_EQ(rig.session->active_room(), "room1");
  const auto& m = rig.session->metrics().back();
  EXPECT_EQ(m.kind, QueryKind::AnchorLoad);
  EXPECT_DOUBLE_EQ(m.total_time, 5.0 + 0.5);
  EXPECT_FALSE(m.chatbot_time);
  EXPECT_TRUE(m.filler_emitted);
  bool resolved = false;
  for (const auto& e : rig.log) resolved |= std::holds_alternative<RoomResolved>(e.payload);
  EXPECT_TRUE(resolved);
}

TEST(Session, UnresolvedRoomAsksForHelp) {
  Rig rig;
  rig.take(rig.session->initialize_room_from_view("nowhere/overview"));
  rig.post(fsm::Tick{6.0});
  EXPECT_FALSE(rig.session->active_room());
  EXPECT_EQ(rig.session->metrics().back().outcome, "not_recognized");
  EXPECT_EQ(rig.performances("clarification").size(), 1u);

  Rig labels;
  labels.take(labels.session->initialize_room({"rose", "orchid"}));
  labels.post(fsm::Tick{1.0});
  EXPECT_EQ(labels.session->metrics().back().outcome, "room_unresolved");
  EXPECT_DOUBLE_EQ(labels.session->metrics().back().total_time, 0.5);
}

TEST(Session, RejectsMalformedEvents) {
  Rig rig;
  rig.post(fsm::Tick{1.0});
  EXPECT_THROW(rig.post(fsm::Tick{1.0}), MalformedEvent);
  EXPECT_THROW(rig.post(fsm::Tick{0.5}), MalformedEvent);
  EXPECT_THROW(rig.post(fsm::Tick{std::nan("")}), MalformedEvent);
  EXPECT_THROW(rig.post(fsm::SpeechFinal{"   "}), MalformedEvent);
  EXPECT_THROW(rig.post(fsm::GazeOn{fsm::WorldRay{{0, 0, 0}, {0, 0, 2}}}), MalformedEvent);
  // Rejected events leave no trace.
  EXPECT_EQ(rig.session->trace().size(), 1u);
}

TEST(Session, EndedSessionRejectsEvents) {
  Rig rig;
  rig.approach();
  rig.post(fsm::GazeOff{});
  rig.post(fsm::Tick{10.0});
  ASSERT_TRUE(rig.session->ended());
  EXPECT_TRUE(std::holds_alternative<SessionEnded>(rig.log.back().payload));
  EXPECT_THROW(rig.post(fsm::Tick{11.0}), SessionEndedError);
  EXPECT_THROW(rig.session->initialize_room({"rose"}), SessionEndedError);
}

TEST(Session, SequenceNumbersAreDense) {
  Rig rig;
  rig.approach();
  rig.post(fsm::SpeechFinal{"hello"});
  rig.post(fsm::Tick{30.0});
  for (std::size_t i = 0; i < rig.log.size(); ++i) EXPECT_EQ(rig.log[i].seq, i);
}

TEST(Session, TraceReplaysThroughMachine) {
  Rig rig;
  rig.approach();
  rig.look_at("rose");
  rig.post(fsm::SpeechFinal{"what is this"});
  rig.post(fsm::Tick{40.0});
  const auto result = sim::replay(rig.session->trace(), rig.session->config().fsm);
  EXPECT_TRUE(result.ok()) << result.detail;
  EXPECT_EQ(result.records, rig.session->trace().size());
}

TEST(EngineConfig, Violations) {
  EngineConfig c;
  EXPECT_TRUE(c.violations().empty());
  c.filler_delay = 2.0;
  ASSERT_FALSE(c.violations().empty());
  EXPECT_EQ(c.violations().front().rule, "engine.filler_within_budget");
  c = {};
  c.filler_texts.clear();
  EXPECT_THROW(Session("x", c, {}, garden(), {}, nullptr, {}), ValidationError);
}

TEST(EngineConfig, EnvironmentOverrides) {
  EngineConfig c;
  const std::map<std::string, std::string> env = {{"MRAGENT_VISION_URL", "http://10.0.0.2:9000/r"},
                                                  {"MRAGENT_VISION_TIMEOUT", "4.5"}};
  apply_env_overrides(c, [&](const char* name) -> const char* {
    auto it = env.find(name);
    return it == env.end() ? nullptr : it->second.c_str();
  });
  EXPECT_EQ(c.endpoint.endpoint_url, "http://10.0.0.2:9000/r");
  EXPECT_DOUBLE_EQ(c.endpoint.timeout, 4.5);
  EXPECT_EQ(c.endpoint.retries, 1);
}

TEST(Metrics, AggregateMatchesHandComputation) {
  std::vector<QueryMetrics> log;
  for (double t : {3.0, 4.0, 8.0}) {
    QueryMetrics m;
    m.kind = QueryKind::General;
    m.chatbot_time = t - 1.0;
    m.processing_time = 1.0;
    m.finalize();
    log.push_back(m);
  }
  QueryMetrics other;
  other.kind = QueryKind::ObjectQuery;
  other.total_time = 100.0;
  log.push_back(other);
  const auto a = aggregate_metrics(log, QueryKind::General);
  EXPECT_EQ(a.count, 3u);
  EXPECT_DOUBLE_EQ(*a.mean_total, 5.0);
  EXPECT_DOUBLE_EQ(*a.mean_chatbot, 4.0);
  EXPECT_FALSE(a.mean_or);
  // Sample deviation: sqrt((4 + 1 + 9) / 2).
  EXPECT_DOUBLE_EQ(a.stddev_total, std::sqrt(7.0));
  EXPECT_EQ(aggregate_metrics(log, QueryKind::AnchorLoad).count, 0u);
}

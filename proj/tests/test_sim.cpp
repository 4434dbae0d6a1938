#include <gtest/gtest.h>

#include <chrono>

#include "mragent/sim_harness.hpp"

using namespace mragent;
using namespace mragent::sim;

namespace {

std::shared_ptr<const AgentAssets> garden() {
  static const auto a = std::make_shared<const AgentAssets>(load_assets(MRAGENT_DATA_DIR));
  return a;
}

const Scenario& scenario() {
  static const auto s = scenario_from_json(read_json(std::string(MRAGENT_DATA_DIR) + "/scenario.json"));
  return s;
}

Json scenario_json() { return read_json(std::string(MRAGENT_DATA_DIR) + "/scenario.json"); }

std::string validation_rule(const Json& j) {
  try {
    scenario_from_json(j);
  } catch (const ValidationError& e) {
    return e.rule();
  }
  return "";
}

}  // namespace

TEST(Sim, SameSeedSameReport) {
  const auto a = run(scenario(), {}, {}, 7, garden());
  const auto b = run(scenario(), {}, {}, 7, garden());
  EXPECT_EQ(report_to_json(a).dump(), report_to_json(b).dump());
  const auto c = run(scenario(), {}, {}, 8, garden());
  EXPECT_NE(report_to_json(a).dump(), report_to_json(c).dump());
}

TEST(Sim, ThirtyQueriesPerKind) {
  const auto r = run(scenario(), {}, {}, 7, garden());
  EXPECT_EQ(r.sessions, 30u);
  for (auto kind : kAllKinds) EXPECT_EQ(r.aggregate(kind).count, 30u) << to_string(kind);
  // Room loads and object questions each need one recognition call.
  EXPECT_EQ(r.vision_calls, 60u);
  EXPECT_EQ(r.chat_calls, 60u);
  for (const auto& m : r.records) {
    EXPECT_EQ(m.outcome, "ok") << m.session_id << " #" << m.query_index;
    EXPECT_EQ(m.filler_emitted, m.kind != QueryKind::General);
  }
}

TEST(Sim, FixedLatenciesGiveExactMeans) {
  LatencyModel model;
  model.vision = {4.0, 0.0};
  model.chatbot = {1.5, 0.0};
  const auto r = run(scenario(), model, {}, 1, garden());
  EXPECT_DOUBLE_EQ(*r.aggregate(QueryKind::AnchorLoad).mean_total, 4.5);
  EXPECT_DOUBLE_EQ(*r.aggregate(QueryKind::General).mean_total, 2.5);
  EXPECT_DOUBLE_EQ(*r.aggregate(QueryKind::ObjectQuery).mean_total, 6.5);
  EXPECT_DOUBLE_EQ(r.aggregate(QueryKind::ObjectQuery).stddev_total, 0.0);
}

TEST(Sim, AnchoredVariantNeedsNoVisionForObjects) {
  const auto r = run(anchored_variant(scenario()), {}, {}, 7, garden());
  EXPECT_TRUE(r.anchored);
  // Only the room loads still use recognition.
  EXPECT_EQ(r.vision_calls, 30u);
  for (const auto& m : r.records) {
    if (m.kind != QueryKind::ObjectQuery) continue;
    EXPECT_TRUE(m.anchor_hit);
    EXPECT_FALSE(m.or_time);
    EXPECT_FALSE(m.filler_emitted);
  }
}

TEST(Sim, EveryQuestionIsAnsweredFromTheRightFlower) {
  const auto out = run_detailed(scenario(), {}, {}, 7, garden());
  std::size_t answered = 0;
  for (const auto& log : out.sessions) {
    for (const auto& e : log.events) {
      const auto* p = std::get_if<orchestrator::AgentPerformance>(&e.payload);
      if (!p || p->purpose != "reply") continue;
      for (const auto& [label, intents] : garden()->kb.objects)
        if (p->reply.text == intents.front().answer) ++answered;
    }
    ASSERT_FALSE(log.events.empty());
    EXPECT_TRUE(std::holds_alternative<orchestrator::SessionEnded>(log.events.back().payload)) << log.session_id;
  }
  EXPECT_EQ(answered, 30u);
}

TEST(Sim, TracesReplay) {
  const auto out = run_detailed(scenario(), {}, {}, 7, garden());
  for (const auto& log : out.sessions) {
    const auto r = replay(log.trace, {});
    EXPECT_TRUE(r.ok()) << log.session_id << ": " << r.detail;
    const auto reparsed = wire::trace_from_ndjson(wire::trace_to_ndjson(log.trace));
    EXPECT_TRUE(replay(reparsed, {}).ok());
  }
}

TEST(Sim, ReplayDetectsTampering) {
  auto trace = run_detailed(scenario(), {}, {}, 7, garden()).sessions.front().trace;
  ASSERT_GT(trace.size(), 3u);
  trace[2].state = fsm::Ended{};
  const auto r = replay(trace, {});
  ASSERT_FALSE(r.ok());
  EXPECT_EQ(*r.divergence, 2u);
}

TEST(Sim, FinishesWellUnderFiveSeconds) {
  const auto start = std::chrono::steady_clock::now();
  run(scenario(), {}, {}, 7, garden());
  const std::chrono::duration<double> wall = std::chrono::steady_clock::now() - start;
  EXPECT_LT(wall.count(), 5.0);
}

TEST(SimReport, JsonRoundTrip) {
  const auto r = run(scenario(), {}, {}, 7, garden());
  const auto j = report_to_json(r);
  EXPECT_EQ(report_to_json(report_from_json(j)).dump(), j.dump());
  const auto table = format_table(r);
  for (const char* row : {"Query A", "Query B", "Query C"}) EXPECT_NE(table.find(row), std::string::npos);
}

TEST(ScenarioFile, Validation) {
  auto j = scenario_json();
  j["scripts"][0]["room_id"] = "attic";
  EXPECT_EQ(validation_rule(j), "scenario.script_room_exists");

  j = scenario_json();
  j["rooms"][0]["objects"][1]["label"] = j["rooms"][0]["objects"][0]["label"];
  EXPECT_EQ(validation_rule(j), "scenario.label_unique");

  j = scenario_json();
  j["scripts"][0]["steps"][0]["at"] = 5.0;
  EXPECT_EQ(validation_rule(j), "scenario.step_times_ordered");

  j = scenario_json();
  j["scripts"][0]["steps"][0]["kind"] = "Dance";
  EXPECT_EQ(validation_rule(j), "scenario.step_kind");

  j = scenario_json();
  j.erase("rooms");
  EXPECT_EQ(validation_rule(j), "scenario.schema");
}

TEST(ScenarioFile, BandScenarioLoads) {
  const auto band = scenario_from_json(read_json(std::string(MRAGENT_DATA_DIR) + "/band_scenario.json"));
  std::size_t sessions = 0;
  for (const auto& s : band.scripts) sessions += s.repeat;
  EXPECT_EQ(sessions, 100u);
}

#pragma once

// Structured-text encodings shared by the session service, trace logs and
// simulator reports. Field names are listed in docs/api.md.

#include "mragent/orchestrator.hpp"

namespace mragent::wire {

using Json = nlohmann::ordered_json;

class WireError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline Json vec_json(const Vec3& v) { return Json::array({v.x, v.y, v.z}); }
inline Vec3 vec_from(const Json& j) {
  if (!j.is_array() || j.size() != 3) throw WireError("expected a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}
inline Json opt_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }
inline std::optional<double> opt_from(const Json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

// ---- gaze / events ------------------------------------------------------------

inline Json to_json(const fsm::GazeTarget& t) {
  return std::visit(
      [](const auto& v) -> Json {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, fsm::CharacterTarget>) return Json{{"type", "Character"}};
        else if constexpr (std::is_same_v<T, fsm::WorldRay>)
          return Json{{"type", "WorldRay"}, {"origin", vec_json(v.origin)}, {"direction", vec_json(v.direction)}};
        else return Json{{"type", "None"}};
      },
      t);
}

inline fsm::GazeTarget gaze_target_from(const Json& j) {
  const auto type = j.at("type").get<std::string>();
  if (type == "Character") return fsm::CharacterTarget{};
  if (type == "None") return fsm::NoTarget{};
  if (type == "WorldRay") return fsm::WorldRay{vec_from(j.at("origin")), vec_from(j.at("direction"))};
  throw WireError("unknown gaze target '" + type + "'");
}

inline Json to_json(const fsm::UserEvent& e) {
  Json j{{"type", std::string(fsm::event_name(e))}};
  std::visit(
      [&](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, fsm::GazeOn>) j["target"] = to_json(v.target);
        else if constexpr (std::is_same_v<T, fsm::SpeechFinal> || std::is_same_v<T, fsm::VoiceCommand>) j["text"] = v.text;
        else if constexpr (std::is_same_v<T, fsm::Tick>) j["now"] = v.now;
        else if constexpr (std::is_same_v<T, fsm::ReplyStarted>) j["until"] = v.until;
      },
      e);
  return j;
}

/// Parses a wire event. Agent-side events are accepted only when
/// `allow_agent_events` is set (trace replay); clients may not post them.
inline fsm::UserEvent event_from(const Json& j, bool allow_agent_events = false) {
  try {
    if (!j.is_object()) throw WireError("event must be an object");
    const auto type = j.at("type").get<std::string>();
    if (type == "GazeOn") return fsm::GazeOn{gaze_target_from(j.at("target"))};
    if (type == "GazeOff") return fsm::GazeOff{};
    if (type == "SpeechStarted") return fsm::SpeechStarted{};
    if (type == "SpeechFinal") return fsm::SpeechFinal{j.at("text").get<std::string>()};
    if (type == "Tick") return fsm::Tick{j.at("now").get<double>()};
    if (type == "VoiceCommand") return fsm::VoiceCommand{j.at("text").get<std::string>()};
    if (type == "AgentSpeechDone") return fsm::AgentSpeechDone{};
    if (allow_agent_events) {
      if (type == "FillerStarted") return fsm::FillerStarted{};
      if (type == "ReplyStarted") return fsm::ReplyStarted{j.at("until").get<double>()};
    }
    throw WireError("unknown event type '" + type + "'");
  } catch (const nlohmann::json::exception& e) {
    throw WireError(std::string("malformed event: ") + e.what());
  }
}

// ---- states / actions -----------------------------------------------------------

inline Json to_json(const fsm::InteractionState& s) {
  Json j{{"type", std::string(fsm::state_name(s))}};
  std::visit(
      [&](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, fsm::Dwelling>) {
          j["dwell_started_at"] = v.dwell_started_at;
        } else if constexpr (std::is_same_v<T, fsm::Listening>) {
          j["listening_since"] = v.listening_since;
          j["last_user_sound_at"] = opt_json(v.last_user_sound_at);
          j["greeted"] = v.greeted;
          j["gaze_away_since"] = opt_json(v.gaze_away_since);
          j["speaking"] = v.speaking;
        } else if constexpr (std::is_same_v<T, fsm::AwaitingReply>) {
          j["filler_active"] = v.filler_active;
          j["resume_listening"] = v.resume_listening;
          j["gaze_away_since"] = opt_json(v.gaze_away_since);
        } else if constexpr (std::is_same_v<T, fsm::AgentSpeaking>) {
          j["until"] = v.until;
          j["resume_listening"] = v.resume_listening;
          j["gaze_away_since"] = opt_json(v.gaze_away_since);
        }
      },
      s);
  return j;
}

inline fsm::InteractionState state_from(const Json& j) {
  const auto type = j.at("type").get<std::string>();
  if (type == "Idle") return fsm::Idle{};
  if (type == "Ended") return fsm::Ended{};
  if (type == "Dwelling") return fsm::Dwelling{j.at("dwell_started_at").get<double>()};
  if (type == "Listening")
    return fsm::Listening{j.at("listening_since").get<double>(), opt_from(j, "last_user_sound_at"),
                          j.at("greeted").get<bool>(), opt_from(j, "gaze_away_since"),
                          j.value("speaking", false)};
  if (type == "AwaitingReply")
    return fsm::AwaitingReply{j.at("filler_active").get<bool>(), j.at("resume_listening").get<bool>(),
                              opt_from(j, "gaze_away_since")};
  if (type == "AgentSpeaking")
    return fsm::AgentSpeaking{j.at("until").get<double>(), j.at("resume_listening").get<bool>(),
                              opt_from(j, "gaze_away_since")};
  throw WireError("unknown state '" + type + "'");
}

inline Json to_json(const fsm::FsmAction& a) {
  Json j{{"type", std::string(fsm::action_name(a))}};
  std::visit(
      [&](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, fsm::EmitGreeting>) {
          j["text"] = v.text;
        } else if constexpr (std::is_same_v<T, fsm::SubmitQuery>) {
          j["text"] = v.text;
          j["needs_object"] = v.needs_object;
        }
      },
      a);
  return j;
}

inline fsm::FsmAction action_from(const Json& j) {
  const auto type = j.at("type").get<std::string>();
  if (type == "StartRecognizer") return fsm::StartRecognizer{};
  if (type == "StopRecognizer") return fsm::StopRecognizer{};
  if (type == "EmitGreeting") return fsm::EmitGreeting{j.at("text").get<std::string>()};
  if (type == "CaptureGazeTarget") return fsm::CaptureGazeTarget{};
  if (type == "SubmitQuery") return fsm::SubmitQuery{j.at("text").get<std::string>(), j.at("needs_object").get<bool>()};
  if (type == "EndConversation") return fsm::EndConversation{};
  throw WireError("unknown action '" + type + "'");
}

// ---- trace log (one JSON record per line) ---------------------------------------

inline Json to_json(const orchestrator::TraceRecord& r) {
  Json actions = Json::array();
  for (const auto& a : r.actions) actions.push_back(to_json(a));
  return Json{{"t", r.t}, {"state", to_json(r.state)}, {"event", to_json(r.event)}, {"actions", actions}};
}

inline orchestrator::TraceRecord trace_record_from(const Json& j) {
  orchestrator::TraceRecord r;
  r.t = j.at("t").get<double>();
  r.state = state_from(j.at("state"));
  r.event = event_from(j.at("event"), true);
  for (const auto& a : j.at("actions")) r.actions.push_back(action_from(a));
  return r;
}

inline std::string trace_to_ndjson(const std::vector<orchestrator::TraceRecord>& trace) {
  std::string out;
  for (const auto& r : trace) out += to_json(r).dump() + "\n";
  return out;
}

inline std::vector<orchestrator::TraceRecord> trace_from_ndjson(std::string_view text) {
  std::vector<orchestrator::TraceRecord> out;
  std::size_t line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const auto nl = text.find('\n');
    const auto line = text::trim(text.substr(0, nl));
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (line.empty()) continue;
    try {
      out.push_back(trace_record_from(Json::parse(line.begin(), line.end())));
    } catch (const std::exception& e) {
      throw WireError("trace line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

// ---- metrics / output events --------------------------------------------------------

inline Json to_json(const orchestrator::QueryMetrics& m) {
  return Json{{"session_id", m.session_id},
              {"query_index", m.query_index},
              {"kind", std::string(to_string(m.kind))},
              {"started_at", m.started_at},
              {"or_time", opt_json(m.or_time)},
              {"chatbot_time", opt_json(m.chatbot_time)},
              {"processing_time", m.processing_time},
              {"total_time", m.total_time},
              {"anchor_hit", m.anchor_hit},
              {"filler_emitted", m.filler_emitted},
              {"filler_at", opt_json(m.filler_at)},
              {"outcome", m.outcome}};
}

inline orchestrator::QueryMetrics metrics_from(const Json& j) {
  orchestrator::QueryMetrics m;
  m.session_id = j.at("session_id").get<std::string>();
  m.query_index = j.at("query_index").get<std::size_t>();
  auto kind = query_kind_from_string(j.at("kind").get<std::string>());
  if (!kind) throw WireError("unknown query kind");
  m.kind = *kind;
  m.started_at = j.at("started_at").get<double>();
  m.or_time = opt_from(j, "or_time");
  m.chatbot_time = opt_from(j, "chatbot_time");
  m.processing_time = j.at("processing_time").get<double>();
  m.total_time = j.at("total_time").get<double>();
  m.anchor_hit = j.value("anchor_hit", false);
  m.filler_emitted = j.value("filler_emitted", false);
  m.filler_at = opt_from(j, "filler_at");
  m.outcome = j.value("outcome", std::string("ok"));
  return m;
}

inline Json anchor_json(const anchors::Anchor& a) {
  const auto& q = a.pose.orientation;
  return Json{{"id", a.id},
              {"room_id", a.room_id},
              {"label", a.object_label},
              {"position", vec_json(a.pose.position)},
              {"orientation", {q.w, q.x, q.y, q.z}},
              {"radius", a.radius}};
}

inline Json to_json(const orchestrator::OutputEvent& e) {
  Json j{{"seq", e.seq}, {"at", e.at}, {"type", std::string(orchestrator::payload_name(e.payload))}};
  std::visit(
      [&](const auto& p) {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, orchestrator::StateChanged>) {
          j["state"] = p.state;
        } else if constexpr (std::is_same_v<P, orchestrator::AgentPerformance>) {
          j["is_filler"] = p.is_filler;
          j["purpose"] = p.purpose;
          j["reply"] = dialogue::reply_to_json(p.reply);
          j["timeline"] = composer::timeline_to_json(p.timeline);
        } else if constexpr (std::is_same_v<P, orchestrator::MetricsUpdated>) {
          j["metrics"] = to_json(p.metrics);
        } else if constexpr (std::is_same_v<P, orchestrator::RoomResolved>) {
          j["room_id"] = p.room_id;
          Json list = Json::array();
          for (const auto& a : p.anchors) list.push_back(anchor_json(a));
          j["anchors"] = list;
        }
      },
      e.payload);
  return j;
}

}  // namespace mragent::wire

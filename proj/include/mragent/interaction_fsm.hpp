#pragma once

// Gaze-and-speech interaction state machine.
//
// The machine is a pure transition function: the enclosing session owns the
// state and feeds it one event at a time together with the session clock.
// Only Tick carries its own timestamp; every other event happens "now".

#include <set>
#include <string>
#include <variant>
#include <vector>

#include "mragent/common.hpp"

namespace mragent::fsm {

// ---- states ---------------------------------------------------------------

struct Idle {
  friend bool operator==(const Idle&, const Idle&) = default;
};

struct Dwelling {
  Seconds dwell_started_at = 0.0;
  friend bool operator==(const Dwelling&, const Dwelling&) = default;
};

struct Listening {
  Seconds listening_since = 0.0;
  std::optional<Seconds> last_user_sound_at;
  bool greeted = false;
  // Set while the user's gaze is off the character; drives the end countdown.
  std::optional<Seconds> gaze_away_since;
  // Between SpeechStarted and SpeechFinal; the user is not silent.
  bool speaking = false;
  friend bool operator==(const Listening&, const Listening&) = default;
};

struct AwaitingReply {
  bool filler_active = false;
  // False when the query came from a voice command outside a conversation;
  // the agent then returns to Idle instead of Listening.
  bool resume_listening = true;
  std::optional<Seconds> gaze_away_since;
  friend bool operator==(const AwaitingReply&, const AwaitingReply&) = default;
};

struct AgentSpeaking {
  Seconds until = 0.0;
  bool resume_listening = true;
  std::optional<Seconds> gaze_away_since;
  friend bool operator==(const AgentSpeaking&, const AgentSpeaking&) = default;
};

struct Ended {
  friend bool operator==(const Ended&, const Ended&) = default;
};

using InteractionState = std::variant<Idle, Dwelling, Listening, AwaitingReply, AgentSpeaking, Ended>;

inline std::string_view state_name(const InteractionState& s) {
  static constexpr std::string_view names[] = {"Idle",          "Dwelling",      "Listening",
                                               "AwaitingReply", "AgentSpeaking", "Ended"};
  return names[s.index()];
}

// ---- gaze targets and events ---------------------------------------------

struct CharacterTarget {
  friend bool operator==(const CharacterTarget&, const CharacterTarget&) = default;
};
struct WorldRay {
  Vec3 origin;
  Vec3 direction;  // unit norm
  friend bool operator==(const WorldRay&, const WorldRay&) = default;
};
struct NoTarget {
  friend bool operator==(const NoTarget&, const NoTarget&) = default;
};
using GazeTarget = std::variant<CharacterTarget, WorldRay, NoTarget>;

struct GazeOn {
  GazeTarget target;
  friend bool operator==(const GazeOn&, const GazeOn&) = default;
};
struct GazeOff {
  friend bool operator==(const GazeOff&, const GazeOff&) = default;
};
struct SpeechStarted {
  friend bool operator==(const SpeechStarted&, const SpeechStarted&) = default;
};
struct SpeechFinal {
  std::string text;
  friend bool operator==(const SpeechFinal&, const SpeechFinal&) = default;
};
struct Tick {
  Seconds now = 0.0;
  friend bool operator==(const Tick&, const Tick&) = default;
};
struct VoiceCommand {
  std::string text;
  friend bool operator==(const VoiceCommand&, const VoiceCommand&) = default;
};
struct AgentSpeechDone {
  friend bool operator==(const AgentSpeechDone&, const AgentSpeechDone&) = default;
};
// Agent-side feedback events, posted by the session when its own
// performances start.
struct FillerStarted {
  friend bool operator==(const FillerStarted&, const FillerStarted&) = default;
};
struct ReplyStarted {
  Seconds until = 0.0;
  friend bool operator==(const ReplyStarted&, const ReplyStarted&) = default;
};

using UserEvent = std::variant<GazeOn, GazeOff, SpeechStarted, SpeechFinal, Tick, VoiceCommand,
                               AgentSpeechDone, FillerStarted, ReplyStarted>;

inline std::string_view event_name(const UserEvent& e) {
  static constexpr std::string_view names[] = {"GazeOn",       "GazeOff",         "SpeechStarted",
                                               "SpeechFinal",  "Tick",            "VoiceCommand",
                                               "AgentSpeechDone", "FillerStarted", "ReplyStarted"};
  return names[e.index()];
}

// ---- actions --------------------------------------------------------------

struct StartRecognizer {
  friend bool operator==(const StartRecognizer&, const StartRecognizer&) = default;
};
struct StopRecognizer {
  friend bool operator==(const StopRecognizer&, const StopRecognizer&) = default;
};
struct EmitGreeting {
  std::string text;
  friend bool operator==(const EmitGreeting&, const EmitGreeting&) = default;
};
struct CaptureGazeTarget {
  friend bool operator==(const CaptureGazeTarget&, const CaptureGazeTarget&) = default;
};
struct SubmitQuery {
  std::string text;
  bool needs_object = false;
  friend bool operator==(const SubmitQuery&, const SubmitQuery&) = default;
};
struct EndConversation {
  friend bool operator==(const EndConversation&, const EndConversation&) = default;
};

using FsmAction =
    std::variant<StartRecognizer, StopRecognizer, EmitGreeting, CaptureGazeTarget, SubmitQuery, EndConversation>;

inline std::string_view action_name(const FsmAction& a) {
  static constexpr std::string_view names[] = {"StartRecognizer",   "StopRecognizer", "EmitGreeting",
                                               "CaptureGazeTarget", "SubmitQuery",    "EndConversation"};
  return names[a.index()];
}

// ---- configuration --------------------------------------------------------

struct FsmConfig {
  Seconds dwell_threshold = 4.0;
  Seconds greeting_silence_delay = 3.0;
  Seconds end_silence_timeout = 5.0;
  // Applied by the simulated recognizer, not by the machine itself.
  Seconds end_of_utterance_window = 1.2;
  std::string greeting_text = "Hello, do you need help?";
  std::set<std::string> trigger_commands = {"what is this", "tell me about this"};

  std::vector<Violation> violations() const {
    std::vector<Violation> out;
    auto positive = [&](Seconds v, const char* name) {
      if (!(v > 0.0)) out.push_back({std::string("fsm.") + name + "_positive", std::string(name) + " must be > 0"});
    };
    positive(dwell_threshold, "dwell_threshold");
    positive(greeting_silence_delay, "greeting_silence_delay");
    positive(end_silence_timeout, "end_silence_timeout");
    positive(end_of_utterance_window, "end_of_utterance_window");
    if (trigger_commands.empty()) out.push_back({"fsm.trigger_commands_nonempty", "trigger_commands is empty"});
    return out;
  }
  void validate() const { throw_first(violations()); }
};

/// Lowercase, trim, strip terminal punctuation and collapse inner whitespace.
inline std::string normalize_command(std::string_view raw) {
  std::string lowered = text::to_lower(text::trim(raw));
  while (!lowered.empty() && std::string_view(".?!,;:").find(lowered.back()) != std::string_view::npos) {
    lowered.pop_back();
    while (!lowered.empty() && std::isspace(static_cast<unsigned char>(lowered.back()))) lowered.pop_back();
  }
  std::string out;
  bool pending_space = false;
  for (unsigned char c : lowered) {
    if (std::isspace(c)) {
      pending_space = !out.empty();
    } else {
      if (pending_space) out.push_back(' ');
      pending_space = false;
      out.push_back(static_cast<char>(c));
    }
  }
  return out;
}

struct StepResult {
  InteractionState state;
  std::vector<FsmAction> actions;
};

namespace detail {

inline bool is_trigger(std::string_view text, const FsmConfig& config) {
  return config.trigger_commands.count(normalize_command(text)) > 0;
}

inline bool looks_at_character(const GazeTarget& t) { return std::holds_alternative<CharacterTarget>(t); }

// Gaze change inside a conversation: returns the updated away-since marker.
inline std::optional<Seconds> gaze_update(std::optional<Seconds> away_since, const UserEvent& event, Seconds now) {
  if (const auto* on = std::get_if<GazeOn>(&event)) {
    if (looks_at_character(on->target)) return std::nullopt;
    return away_since ? away_since : std::optional<Seconds>(now);
  }
  if (std::holds_alternative<GazeOff>(event)) return away_since ? away_since : std::optional<Seconds>(now);
  return away_since;
}

inline bool is_gaze_event(const UserEvent& e) {
  return std::holds_alternative<GazeOn>(e) || std::holds_alternative<GazeOff>(e);
}

}  // namespace detail

/// Advances the machine by one event. `now` is the session clock when the
/// event arrives; for Tick the later of `now` and the tick's own time is used.
/// Unknown (state, event) pairs self-loop with no actions.
inline StepResult step(const InteractionState& state, const UserEvent& event, Seconds now, const FsmConfig& config) {
  if (const auto* tick = std::get_if<Tick>(&event)) now = std::max(now, tick->now);
  StepResult r{state, {}};

  if (std::holds_alternative<Ended>(state)) return r;

  // Voice commands are recognized in every live state, including mid-reply
  // phases where dictation is ignored.
  if (const auto* cmd = std::get_if<VoiceCommand>(&event)) {
    if (!detail::is_trigger(cmd->text, config)) return r;
    const std::string text = normalize_command(cmd->text);
    bool resume = true;
    std::optional<Seconds> away;
    if (std::holds_alternative<Idle>(state) || std::holds_alternative<Dwelling>(state)) {
      resume = false;
    } else if (const auto* l = std::get_if<Listening>(&state)) {
      away = l->gaze_away_since;
    } else if (const auto* a = std::get_if<AwaitingReply>(&state)) {
      // A query is already in flight; a second trigger is ignored.
      (void)a;
      return r;
    } else if (std::holds_alternative<AgentSpeaking>(state)) {
      return r;
    }
    r.state = AwaitingReply{false, resume, away};
    r.actions = {CaptureGazeTarget{}, SubmitQuery{text, true}};
    return r;
  }

  return std::visit(
      [&](const auto& s) -> StepResult {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, Idle>) {
          if (const auto* on = std::get_if<GazeOn>(&event); on && detail::looks_at_character(on->target)) {
            r.state = Dwelling{now};
          }
        } else if constexpr (std::is_same_v<S, Dwelling>) {
          if (detail::is_gaze_event(event)) {
            const auto* on = std::get_if<GazeOn>(&event);
            if (!on || !detail::looks_at_character(on->target)) r.state = Idle{};
          } else if (std::holds_alternative<Tick>(event)) {
            if (now - s.dwell_started_at >= config.dwell_threshold) {
              r.state = Listening{now, std::nullopt, false, std::nullopt, false};
              r.actions.push_back(StartRecognizer{});
            }
          }
        } else if constexpr (std::is_same_v<S, Listening>) {
          Listening next = s;
          if (detail::is_gaze_event(event)) {
            next.gaze_away_since = detail::gaze_update(s.gaze_away_since, event, now);
            r.state = next;
          } else if (std::holds_alternative<SpeechStarted>(event)) {
            next.last_user_sound_at = now;
            next.speaking = true;
            r.state = next;
          } else if (const auto* fin = std::get_if<SpeechFinal>(&event)) {
            if (text::trim(fin->text).empty()) return r;
            if (detail::is_trigger(fin->text, config)) {
              r.actions = {CaptureGazeTarget{}, SubmitQuery{normalize_command(fin->text), true}};
            } else {
              r.actions = {SubmitQuery{std::string(text::trim(fin->text)), false}};
            }
            r.state = AwaitingReply{false, true, s.gaze_away_since};
          } else if (std::holds_alternative<Tick>(event) && !s.speaking) {
            Seconds silent_from = s.listening_since;
            if (s.last_user_sound_at) silent_from = std::max(silent_from, *s.last_user_sound_at);
            if (s.gaze_away_since &&
                now - std::max(silent_from, *s.gaze_away_since) >= config.end_silence_timeout) {
              r.state = Ended{};
              r.actions = {StopRecognizer{}, EndConversation{}};
            } else if (!s.greeted && now - silent_from >= config.greeting_silence_delay) {
              next.greeted = true;
              r.state = next;
              r.actions.push_back(EmitGreeting{config.greeting_text});
            }
          }
        } else if constexpr (std::is_same_v<S, AwaitingReply>) {
          AwaitingReply next = s;
          if (detail::is_gaze_event(event)) {
            next.gaze_away_since = detail::gaze_update(s.gaze_away_since, event, now);
            r.state = next;
          } else if (std::holds_alternative<FillerStarted>(event)) {
            next.filler_active = true;
            r.state = next;
          } else if (const auto* rs = std::get_if<ReplyStarted>(&event)) {
            r.state = AgentSpeaking{std::max(rs->until, now), s.resume_listening, s.gaze_away_since};
          }
        } else if constexpr (std::is_same_v<S, AgentSpeaking>) {
          AgentSpeaking next = s;
          if (detail::is_gaze_event(event)) {
            next.gaze_away_since = detail::gaze_update(s.gaze_away_since, event, now);
            r.state = next;
          } else if (std::holds_alternative<AgentSpeechDone>(event)) {
            if (s.resume_listening) {
              r.state = Listening{now, std::nullopt, false, s.gaze_away_since, false};
            } else {
              r.state = Idle{};
            }
          }
        }
        return r;
      },
      state);
}

}  // namespace mragent::fsm

#pragma once

// Turns a sentiment-tagged reply into parallel speech, body, face and viseme
// tracks over the speech duration.

#include <map>
#include <set>

#include <nlohmann/json.hpp>

#include "mragent/common.hpp"
#include "mragent/dialogue.hpp"

namespace mragent::composer {

using Json = nlohmann::ordered_json;
using dialogue::SentimentClass;
using dialogue::SentimentLevel;

/// ARPAbet, stress-free. Every phoneme lexicon and viseme map is checked
/// against this inventory.
inline const std::set<std::string>& phoneme_inventory() {
  static const std::set<std::string> inventory = {
      "AA", "AE", "AH", "AO", "AW", "AY", "B",  "CH", "D",  "DH", "EH", "ER", "EY",
      "F",  "G",  "HH", "IH", "IY", "JH", "K",  "L",  "M",  "N",  "NG", "OW", "OY",
      "P",  "R",  "S",  "SH", "T",  "TH", "UH", "UW", "V",  "W",  "Y",  "Z",  "ZH"};
  return inventory;
}

struct AnimationClip {
  std::string id;
  std::string display_name;
  Seconds duration = 1.0;
};

class ClipLibrary {
 public:
  ClipLibrary() = default;
  explicit ClipLibrary(std::vector<AnimationClip> clips) {
    for (auto& c : clips) add(std::move(c));
  }

  void add(AnimationClip clip) {
    if (!(clip.duration > 0.0)) throw ValidationError("clips.duration_positive", "clip '" + clip.id + "' duration <= 0");
    if (clips_.count(clip.id)) throw ValidationError("clips.id_unique", "duplicate clip '" + clip.id + "'");
    clips_.emplace(clip.id, std::move(clip));
  }
  bool contains(std::string_view id) const { return clips_.count(std::string(id)) > 0; }
  const AnimationClip& at(std::string_view id) const {
    auto it = clips_.find(std::string(id));
    if (it == clips_.end()) throw ValidationError("clips.known", "unknown clip '" + std::string(id) + "'");
    return it->second;
  }
  std::size_t size() const { return clips_.size(); }

 private:
  std::map<std::string, AnimationClip> clips_;
};

using TokenSequence = std::vector<std::string>;

struct MappingTable {
  std::map<TokenSequence, std::string> entries;
  std::string default_clip;

  std::size_t longest_key() const {
    std::size_t n = 0;
    for (const auto& [k, v] : entries) n = std::max(n, k.size());
    return n;
  }

  std::vector<Violation> violations(const ClipLibrary& clips) const {
    std::vector<Violation> out;
    for (const auto& [key, clip] : entries) {
      if (key.empty()) out.push_back({"mapping.key_nonempty", "mapping has an empty key"});
      if (!clips.contains(clip))
        out.push_back({"mapping.clip_exists", "'" + text::join(key, " ") + "' maps to unknown clip '" + clip + "'"});
    }
    if (!clips.contains(default_clip))
      out.push_back({"mapping.default_clip_exists", "default clip '" + default_clip + "' is not in the library"});
    return out;
  }
};

struct PhonemeLexicon {
  std::map<std::string, std::vector<std::string>> word_to_phonemes;
  std::map<char, std::string> letter_fallback;

  std::vector<Violation> violations() const {
    std::vector<Violation> out;
    const auto& inv = phoneme_inventory();
    for (const auto& [word, seq] : word_to_phonemes)
      for (const auto& p : seq)
        if (!inv.count(p)) out.push_back({"phonemes.inventory", "'" + word + "' uses unknown phoneme '" + p + "'"});
    for (char c = 'a'; c <= 'z'; ++c) {
      auto it = letter_fallback.find(c);
      if (it == letter_fallback.end())
        out.push_back({"phonemes.fallback_total", std::string("no fallback for letter '") + c + "'"});
      else if (!inv.count(it->second))
        out.push_back({"phonemes.inventory", std::string("fallback for '") + c + "' is unknown phoneme"});
    }
    return out;
  }
};

struct VisemeMap {
  std::map<std::string, std::string> phoneme_to_shape;

  std::vector<Violation> violations() const {
    std::vector<Violation> out;
    for (const auto& p : phoneme_inventory())
      if (!phoneme_to_shape.count(p)) out.push_back({"visemes.total", "phoneme '" + p + "' has no lip shape"});
    for (const auto& [p, shape] : phoneme_to_shape) {
      if (!phoneme_inventory().count(p)) out.push_back({"visemes.inventory", "unknown phoneme '" + p + "'"});
      if (shape.empty()) out.push_back({"visemes.shape_nonempty", "phoneme '" + p + "' maps to empty shape"});
    }
    return out;
  }
  const std::string& shape(const std::string& phoneme) const { return phoneme_to_shape.at(phoneme); }
};

struct SpeechRate {
  double words_per_minute = 150.0;
  Seconds minimum = 0.5;
};

// ---- timeline ---------------------------------------------------------------

template <typename Payload>
struct Segment {
  Payload value;
  Seconds start = 0.0;
  Seconds end = 0.0;
  friend bool operator==(const Segment&, const Segment&) = default;
};

struct FaceExpression {
  SentimentClass sentiment_class = SentimentClass::Neutral;
  SentimentLevel level = SentimentLevel::Low;
  friend bool operator==(const FaceExpression&, const FaceExpression&) = default;
};

struct PerformanceTimeline {
  std::string text;
  Seconds total_duration = 0.0;
  std::vector<Segment<std::string>> speech_track;
  std::vector<Segment<std::string>> body_track;
  std::vector<Segment<FaceExpression>> face_track;
  std::vector<Segment<std::string>> viseme_track;
  friend bool operator==(const PerformanceTimeline&, const PerformanceTimeline&) = default;
};

// ---- operations -------------------------------------------------------------

/// Greedy longest match, left to right. Each maximal run of unmatched tokens
/// becomes a single default clip.
inline std::vector<std::string> build_body_sequence(std::string_view reply_text, const MappingTable& table) {
  const auto tokens = text::tokenize(reply_text);
  const std::size_t longest = table.longest_key();
  std::vector<std::string> clips;
  bool in_default_run = false;
  std::size_t i = 0;
  while (i < tokens.size()) {
    const std::string* match = nullptr;
    std::size_t match_len = 0;
    for (std::size_t len = std::min(longest, tokens.size() - i); len >= 1; --len) {
      TokenSequence key(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                        tokens.begin() + static_cast<std::ptrdiff_t>(i + len));
      if (auto it = table.entries.find(key); it != table.entries.end()) {
        match = &it->second;
        match_len = len;
        break;
      }
    }
    if (match) {
      clips.push_back(*match);
      in_default_run = false;
      i += match_len;
    } else {
      if (!in_default_run) clips.push_back(table.default_clip);
      in_default_run = true;
      ++i;
    }
  }
  return clips;
}

inline std::vector<std::string> text_to_phonemes(std::string_view reply_text, const PhonemeLexicon& lexicon) {
  std::vector<std::string> out;
  for (const auto& word : text::tokenize(reply_text)) {
    if (auto it = lexicon.word_to_phonemes.find(word); it != lexicon.word_to_phonemes.end()) {
      out.insert(out.end(), it->second.begin(), it->second.end());
      continue;
    }
    for (char c : word) {
      if (auto f = lexicon.letter_fallback.find(c); f != lexicon.letter_fallback.end()) out.push_back(f->second);
    }
  }
  return out;
}

class EmptyDuration : public std::invalid_argument {
 public:
  EmptyDuration() : std::invalid_argument("phonemes present but speech duration is not positive") {}
};

/// Equal slices; boundaries are computed as duration * i / n so the last
/// segment ends exactly at `speech_duration`.
inline std::vector<Segment<std::string>> make_viseme_track(const std::vector<std::string>& phonemes,
                                                           Seconds speech_duration, const VisemeMap& visemes) {
  std::vector<Segment<std::string>> track;
  if (phonemes.empty()) return track;
  if (!(speech_duration > 0.0)) throw EmptyDuration();
  const double n = static_cast<double>(phonemes.size());
  track.reserve(phonemes.size());
  for (std::size_t i = 0; i < phonemes.size(); ++i) {
    const Seconds start = speech_duration * static_cast<double>(i) / n;
    const Seconds end = i + 1 == phonemes.size() ? speech_duration : speech_duration * static_cast<double>(i + 1) / n;
    track.push_back({visemes.shape(phonemes[i]), start, end});
  }
  return track;
}

inline Seconds speech_duration(std::string_view reply_text, const SpeechRate& rate = {}) {
  if (!(rate.words_per_minute > 0.0)) throw std::invalid_argument("speech rate must be > 0");
  const auto words = static_cast<double>(text::tokenize(reply_text).size());
  return std::max(rate.minimum, words * 60.0 / rate.words_per_minute);
}

namespace detail {

// Lays `weights` head to tail over [0, total], proportionally.
inline std::vector<std::pair<Seconds, Seconds>> spread(const std::vector<double>& weights, Seconds total) {
  std::vector<std::pair<Seconds, Seconds>> spans;
  double sum = 0.0;
  for (double w : weights) sum += w;
  if (weights.empty() || !(sum > 0.0)) return spans;
  double cumulative = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const Seconds start = total * cumulative / sum;
    cumulative += weights[i];
    const Seconds end = i + 1 == weights.size() ? total : total * cumulative / sum;
    spans.emplace_back(start, end);
  }
  return spans;
}

}  // namespace detail

/// Everything a reply needs to become a performance.
struct Assets {
  MappingTable mapping;
  ClipLibrary clips;
  PhonemeLexicon phonemes;
  VisemeMap visemes;
  SpeechRate rate;
};

inline PerformanceTimeline assemble(const dialogue::Reply& reply, const Assets& assets) {
  PerformanceTimeline t;
  t.text = reply.text;
  t.total_duration = speech_duration(reply.text, assets.rate);

  const auto words = text::tokenize(reply.text);
  std::vector<double> word_weights;
  for (const auto& w : words) word_weights.push_back(static_cast<double>(w.size()));
  const auto word_spans = detail::spread(word_weights, t.total_duration);
  for (std::size_t i = 0; i < word_spans.size(); ++i)
    t.speech_track.push_back({words[i], word_spans[i].first, word_spans[i].second});

  const auto clip_ids = build_body_sequence(reply.text, assets.mapping);
  std::vector<double> clip_weights;
  for (const auto& id : clip_ids) clip_weights.push_back(assets.clips.at(id).duration);
  const auto clip_spans = detail::spread(clip_weights, t.total_duration);
  for (std::size_t i = 0; i < clip_spans.size(); ++i)
    t.body_track.push_back({clip_ids[i], clip_spans[i].first, clip_spans[i].second});

  t.face_track.push_back({FaceExpression{reply.sentiment_class, reply.sentiment_level}, 0.0, t.total_duration});
  t.viseme_track = make_viseme_track(text_to_phonemes(reply.text, assets.phonemes), t.total_duration, assets.visemes);
  return t;
}

/// Structural checks shared by tests and the session layer.
inline std::vector<Violation> timeline_violations(const PerformanceTimeline& t, std::size_t expected_phonemes) {
  std::vector<Violation> out;
  auto check_track = [&](const auto& track, const char* name) {
    Seconds previous_end = 0.0;
    for (const auto& seg : track) {
      if (!(seg.start < seg.end)) out.push_back({std::string(name) + ".positive_length", "segment with start >= end"});
      if (seg.start < previous_end) out.push_back({std::string(name) + ".ordered", "segments overlap or are unordered"});
      if (seg.start < 0.0 || seg.end > t.total_duration)
        out.push_back({std::string(name) + ".bounds", "segment outside [0, total_duration]"});
      previous_end = seg.end;
    }
  };
  check_track(t.speech_track, "speech");
  check_track(t.body_track, "body");
  check_track(t.face_track, "face");
  check_track(t.viseme_track, "viseme");
  if (t.face_track.size() != 1 || t.face_track.front().start != 0.0 || t.face_track.front().end != t.total_duration)
    out.push_back({"face.full_coverage", "face track must be one segment spanning the whole reply"});
  if (t.viseme_track.size() != expected_phonemes)
    out.push_back({"viseme.count", "viseme count " + std::to_string(t.viseme_track.size()) + " != phoneme count " +
                                       std::to_string(expected_phonemes)});
  return out;
}

// ---- file formats -----------------------------------------------------------

inline ClipLibrary clips_from_json(const Json& j) {
  ClipLibrary lib;
  try {
    for (const auto& c : j.at("clips"))
      lib.add({c.at("id").get<std::string>(), c.value("display_name", c.at("id").get<std::string>()),
               c.at("duration").get<double>()});
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("clips.schema", e.what());
  }
  return lib;
}

inline MappingTable mapping_from_json(const Json& j) {
  MappingTable table;
  try {
    table.default_clip = j.at("default_clip").get<std::string>();
    for (const auto& e : j.at("entries")) {
      auto key = text::tokenize(e.at("phrase").get<std::string>());
      if (key.empty()) throw ValidationError("mapping.key_nonempty", "mapping entry with empty phrase");
      table.entries[key] = e.at("clip").get<std::string>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("mapping.schema", e.what());
  }
  return table;
}

inline PhonemeLexicon phonemes_from_json(const Json& j) {
  PhonemeLexicon lex;
  try {
    for (const auto& [word, seq] : j.at("words").items())
      lex.word_to_phonemes[text::to_lower(word)] = seq.get<std::vector<std::string>>();
    for (const auto& [letter, p] : j.at("letters").items()) {
      if (letter.size() != 1) throw ValidationError("phonemes.letter_key", "fallback key '" + letter + "' is not a letter");
      lex.letter_fallback[static_cast<char>(std::tolower(static_cast<unsigned char>(letter[0])))] = p.get<std::string>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("phonemes.schema", e.what());
  }
  return lex;
}

inline VisemeMap visemes_from_json(const Json& j) {
  VisemeMap map;
  try {
    for (const auto& [p, shape] : j.at("map").items()) map.phoneme_to_shape[p] = shape.get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("visemes.schema", e.what());
  }
  return map;
}

inline Json timeline_to_json(const PerformanceTimeline& t) {
  auto track = [](const std::vector<Segment<std::string>>& segs, const char* field) {
    Json arr = Json::array();
    for (const auto& s : segs) arr.push_back(Json{{field, s.value}, {"start", s.start}, {"end", s.end}});
    return arr;
  };
  Json face = Json::array();
  for (const auto& s : t.face_track)
    face.push_back(Json{{"class", std::string(dialogue::to_string(s.value.sentiment_class))},
                        {"level", std::string(dialogue::to_string(s.value.level))},
                        {"start", s.start},
                        {"end", s.end}});
  return Json{{"text", t.text},
              {"total_duration", t.total_duration},
              {"speech", track(t.speech_track, "word")},
              {"body", track(t.body_track, "clip")},
              {"face", face},
              {"visemes", track(t.viseme_track, "shape")}};
}

inline PerformanceTimeline timeline_from_json(const Json& j) {
  PerformanceTimeline t;
  t.text = j.at("text").get<std::string>();
  t.total_duration = j.at("total_duration").get<double>();
  auto track = [&](const char* name, const char* field) {
    std::vector<Segment<std::string>> segs;
    for (const auto& s : j.at(name))
      segs.push_back({s.at(field).get<std::string>(), s.at("start").get<double>(), s.at("end").get<double>()});
    return segs;
  };
  t.speech_track = track("speech", "word");
  t.body_track = track("body", "clip");
  t.viseme_track = track("visemes", "shape");
  for (const auto& s : j.at("face")) {
    auto cls = dialogue::sentiment_class_from_string(s.at("class").get<std::string>());
    auto level = dialogue::sentiment_level_from_string(s.at("level").get<std::string>());
    if (!cls || !level) throw std::invalid_argument("bad face segment");
    t.face_track.push_back({FaceExpression{*cls, *level}, s.at("start").get<double>(), s.at("end").get<double>()});
  }
  return t;
}

}  // namespace mragent::composer

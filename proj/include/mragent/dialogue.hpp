#pragma once

// Domain chatbot: (query, object) -> (reply, sentiment class, sentiment level).
//
// Intents are matched by keyword-set containment. Replies carry a sentiment
// computed from the answer text with a weighted lexicon.

#include <deque>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

#include "mragent/common.hpp"

namespace mragent::dialogue {

using Json = nlohmann::ordered_json;

enum class SentimentClass { Joy, Angry, Sad, Fear, Neutral };
enum class SentimentLevel { Low, Medium, High };

inline std::string_view to_string(SentimentClass c) {
  switch (c) {
    case SentimentClass::Joy: return "Joy";
    case SentimentClass::Angry: return "Angry";
    case SentimentClass::Sad: return "Sad";
    case SentimentClass::Fear: return "Fear";
    case SentimentClass::Neutral: return "Neutral";
  }
  return "Neutral";
}
inline std::string_view to_string(SentimentLevel l) {
  switch (l) {
    case SentimentLevel::Low: return "Low";
    case SentimentLevel::Medium: return "Medium";
    case SentimentLevel::High: return "High";
  }
  return "Low";
}
inline std::optional<SentimentClass> sentiment_class_from_string(std::string_view s) {
  for (auto c : {SentimentClass::Joy, SentimentClass::Angry, SentimentClass::Sad, SentimentClass::Fear,
                 SentimentClass::Neutral})
    if (to_string(c) == s) return c;
  return std::nullopt;
}
inline std::optional<SentimentLevel> sentiment_level_from_string(std::string_view s) {
  for (auto l : {SentimentLevel::Low, SentimentLevel::Medium, SentimentLevel::High})
    if (to_string(l) == s) return l;
  return std::nullopt;
}

struct Query {
  std::string text;
  std::optional<std::string> object_label;
};

struct Reply {
  std::string text;
  SentimentClass sentiment_class = SentimentClass::Neutral;
  SentimentLevel sentiment_level = SentimentLevel::Low;
  friend bool operator==(const Reply&, const Reply&) = default;
};

using KeywordSet = std::set<std::string>;

struct Intent {
  std::string tag;
  std::vector<KeywordSet> patterns;
  std::string answer;
};

struct KnowledgeBase {
  std::map<std::string, std::vector<Intent>> objects;
  std::vector<Intent> general;
  std::string fallback;

  std::vector<Violation> violations() const {
    std::vector<Violation> out;
    auto check_intent = [&](const Intent& intent, const std::string& where) {
      if (intent.patterns.empty())
        out.push_back({"kb.intent_has_pattern", where + " intent '" + intent.tag + "' has no pattern"});
      for (const auto& p : intent.patterns)
        if (p.empty()) out.push_back({"kb.pattern_nonempty", where + " intent '" + intent.tag + "' has an empty pattern"});
      if (intent.answer.empty())
        out.push_back({"kb.answer_nonempty", where + " intent '" + intent.tag + "' has no answer"});
    };
    for (const auto& [label, intents] : objects) {
      std::set<std::string> tags;
      if (intents.empty()) out.push_back({"kb.object_has_intent", "object '" + label + "' has no intents"});
      for (const auto& intent : intents) {
        if (!tags.insert(intent.tag).second)
          out.push_back({"kb.intent_tag_unique", "object '" + label + "' repeats intent '" + intent.tag + "'"});
        check_intent(intent, "object '" + label + "'");
      }
    }
    for (const auto& intent : general) check_intent(intent, "general");
    if (text::trim(fallback).empty()) out.push_back({"kb.fallback_present", "knowledge base has no fallback answer"});
    return out;
  }
  void validate() const { throw_first(violations()); }
};

struct Turn {
  Query query;
  Reply reply;
};

struct DialogueContext {
  static constexpr std::size_t kHistoryCap = 50;
  std::optional<std::string> current_object;
  std::deque<Turn> turns;
};

struct LexiconEntry {
  SentimentClass sentiment_class = SentimentClass::Joy;
  double weight = 0.0;
};

struct SentimentLexicon {
  std::map<std::string, LexiconEntry> entries;
  std::set<std::string> negators;
  double low_max = 0.4;
  double medium_max = 0.9;

  std::vector<Violation> violations() const {
    std::vector<Violation> out;
    if (!(0.0 < low_max && low_max < medium_max))
      out.push_back({"lexicon.thresholds_ordered", "need 0 < low_max < medium_max"});
    for (const auto& [word, e] : entries) {
      if (!(e.weight > 0.0 && e.weight <= 1.0))
        out.push_back({"lexicon.weight_range", "weight of '" + word + "' outside (0,1]"});
      if (e.sentiment_class == SentimentClass::Neutral)
        out.push_back({"lexicon.class_not_neutral", "'" + word + "' cannot carry the Neutral class"});
    }
    return out;
  }
  void validate() const { throw_first(violations()); }
};

// ---- matching -------------------------------------------------------------

struct IntentMatch {
  double score = 0.0;
  std::size_t pattern_index = 0;
};

inline constexpr double kMatchThreshold = 0.5;

/// Best containment score over `patterns`; the earliest pattern wins ties.
/// Returns nullopt when the best score is below the match threshold.
inline std::optional<IntentMatch> match_intent(std::string_view query_text, const std::vector<KeywordSet>& patterns) {
  const auto words = text::tokenize(query_text);
  const std::set<std::string> tokens(words.begin(), words.end());
  std::optional<IntentMatch> best;
  for (std::size_t i = 0; i < patterns.size(); ++i) {
    if (patterns[i].empty()) continue;
    std::size_t hit = 0;
    for (const auto& k : patterns[i]) hit += tokens.count(k);
    const double score = static_cast<double>(hit) / static_cast<double>(patterns[i].size());
    if (!best || score > best->score) best = IntentMatch{score, i};
  }
  if (!best || best->score < kMatchThreshold) return std::nullopt;
  return best;
}

/// Highest-scoring intent; earlier intents win ties.
inline const Intent* best_intent(std::string_view query_text, const std::vector<Intent>& intents) {
  const Intent* best = nullptr;
  double best_score = 0.0;
  for (const auto& intent : intents) {
    if (auto m = match_intent(query_text, intent.patterns); m && (!best || m->score > best_score)) {
      best = &intent;
      best_score = m->score;
    }
  }
  return best;
}

// ---- sentiment ------------------------------------------------------------

inline constexpr std::size_t kNegationWindow = 2;

/// Sums lexicon weights per class. A lexicon word preceded by a negator
/// within two tokens contributes nothing. No positive score gives
/// (Neutral, Low).
inline std::pair<SentimentClass, SentimentLevel> classify_sentiment(std::string_view reply_text,
                                                                    const SentimentLexicon& lexicon) {
  const auto words = text::tokenize(reply_text);
  constexpr SentimentClass order[] = {SentimentClass::Joy, SentimentClass::Angry, SentimentClass::Sad,
                                      SentimentClass::Fear};
  std::map<SentimentClass, double> score;
  for (std::size_t i = 0; i < words.size(); ++i) {
    auto it = lexicon.entries.find(words[i]);
    if (it == lexicon.entries.end()) continue;
    bool negated = false;
    for (std::size_t back = 1; back <= kNegationWindow && back <= i; ++back)
      negated = negated || lexicon.negators.count(words[i - back]) > 0;
    if (!negated) score[it->second.sentiment_class] += it->second.weight;
  }
  SentimentClass winner = SentimentClass::Neutral;
  double top = 0.0;
  for (auto c : order) {
    if (score[c] > top) {
      top = score[c];
      winner = c;
    }
  }
  if (winner == SentimentClass::Neutral) return {SentimentClass::Neutral, SentimentLevel::Low};
  if (top <= lexicon.low_max) return {winner, SentimentLevel::Low};
  if (top <= lexicon.medium_max) return {winner, SentimentLevel::Medium};
  return {winner, SentimentLevel::High};
}

// ---- responding -----------------------------------------------------------

inline Reply make_reply(std::string text, const SentimentLexicon& lexicon) {
  auto [cls, level] = classify_sentiment(text, lexicon);
  return Reply{std::move(text), cls, level};
}

struct Response {
  Reply reply;
  DialogueContext context;
};

/// Resolution order: explicit object intents, then intents of the object in
/// context (follow-ups), then general chit-chat, then the fallback.
inline Response respond(const Query& query, DialogueContext context, const KnowledgeBase& kb,
                        const SentimentLexicon& lexicon) {
  const Intent* chosen = nullptr;

  if (query.object_label) {
    if (auto it = kb.objects.find(*query.object_label); it != kb.objects.end()) {
      context.current_object = it->first;
      chosen = best_intent(query.text, it->second);
    }
  } else if (context.current_object) {
    if (auto it = kb.objects.find(*context.current_object); it != kb.objects.end())
      chosen = best_intent(query.text, it->second);
  }
  if (!chosen) chosen = best_intent(query.text, kb.general);

  Reply reply = make_reply(chosen ? chosen->answer : kb.fallback, lexicon);
  context.turns.push_back({query, reply});
  while (context.turns.size() > DialogueContext::kHistoryCap) context.turns.pop_front();
  return {std::move(reply), std::move(context)};
}

// ---- file formats ---------------------------------------------------------

inline KnowledgeBase knowledge_base_from_json(const Json& j) {
  KnowledgeBase kb;
  auto read_intent = [](const Json& e) {
    Intent intent;
    intent.tag = e.value("tag", std::string{});
    intent.answer = e.at("answer").get<std::string>();
    for (const auto& p : e.at("patterns")) {
      KeywordSet set;
      for (const auto& k : p) set.insert(text::to_lower(k.get<std::string>()));
      intent.patterns.push_back(std::move(set));
    }
    return intent;
  };
  try {
    if (j.contains("objects"))
      for (const auto& [label, obj] : j.at("objects").items())
        for (const auto& e : obj.at("intents")) kb.objects[label].push_back(read_intent(e));
    if (j.contains("general"))
      for (const auto& e : j.at("general")) kb.general.push_back(read_intent(e));
    kb.fallback = j.value("fallback", std::string{});
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("kb.schema", e.what());
  }
  return kb;
}

inline SentimentLexicon lexicon_from_json(const Json& j) {
  SentimentLexicon lex;
  try {
    lex.low_max = j.at("thresholds").at("low_max").get<double>();
    lex.medium_max = j.at("thresholds").at("medium_max").get<double>();
    for (const auto& n : j.value("negators", Json::array())) lex.negators.insert(text::to_lower(n.get<std::string>()));
    for (const auto& e : j.at("entries")) {
      const auto cls_name = e.at("class").get<std::string>();
      auto cls = sentiment_class_from_string(cls_name);
      if (!cls) throw ValidationError("lexicon.class_known", "unknown sentiment class '" + cls_name + "'");
      lex.entries[text::to_lower(e.at("word").get<std::string>())] = {*cls, e.at("weight").get<double>()};
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("lexicon.schema", e.what());
  }
  return lex;
}

inline Json reply_to_json(const Reply& r) {
  return Json{{"reply", r.text},
              {"sentiment_class", std::string(to_string(r.sentiment_class))},
              {"sentiment_level", std::string(to_string(r.sentiment_level))}};
}

}  // namespace mragent::dialogue

#pragma once

// Loading of the on-disk asset bundle (knowledge base, lexicons, clips,
// mapping table, visemes, recognition fixtures). File schemas are described
// in docs/formats.md.

#include <filesystem>
#include <fstream>
#include <sstream>

#include "mragent/dialogue.hpp"
#include "mragent/performance_composer.hpp"
#include "mragent/vision_gateway.hpp"

namespace mragent {

struct AgentAssets {
  dialogue::KnowledgeBase kb;
  dialogue::SentimentLexicon lexicon;
  composer::Assets performance;
  vision::FixtureTable fixtures;

  std::vector<Violation> violations() const {
    std::vector<Violation> out = kb.violations();
    auto append = [&](std::vector<Violation> v) { out.insert(out.end(), v.begin(), v.end()); };
    append(lexicon.violations());
    append(performance.mapping.violations(performance.clips));
    append(performance.phonemes.violations());
    append(performance.visemes.violations());
    return out;
  }
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
}

inline nlohmann::ordered_json read_json(const std::filesystem::path& path) {
  const auto text = read_file(path);
  try {
    return nlohmann::ordered_json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("json.syntax", path.string() + ": " + e.what());
  }
}

/// Reads every asset file from `dir` and validates the bundle.
inline AgentAssets load_assets(const std::filesystem::path& dir) {
  AgentAssets a;
  a.kb = dialogue::knowledge_base_from_json(read_json(dir / "kb.json"));
  a.lexicon = dialogue::lexicon_from_json(read_json(dir / "lexicon.json"));
  a.performance.clips = composer::clips_from_json(read_json(dir / "clips.json"));
  a.performance.mapping = composer::mapping_from_json(read_json(dir / "mapping.json"));
  a.performance.phonemes = composer::phonemes_from_json(read_json(dir / "phonemes.json"));
  a.performance.visemes = composer::visemes_from_json(read_json(dir / "visemes.json"));
  a.fixtures = vision::fixtures_from_json(read_json(dir / "vision_fixtures.json"));
  throw_first(a.violations());
  return a;
}

}  // namespace mragent

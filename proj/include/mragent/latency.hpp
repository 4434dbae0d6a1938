#pragma once

// Service latency models and the seeded sampler shared by the simulator and
// the stub endpoints.

#include <map>
#include <random>

#include <nlohmann/json.hpp>

#include "mragent/common.hpp"

namespace mragent {

struct NormalLatency {
  Seconds mean = 0.0;
  Seconds stddev = 0.0;
  friend bool operator==(const NormalLatency&, const NormalLatency&) = default;
};

/// Defaults reproduce the garden deployment's measured timings.
struct LatencyModel {
  NormalLatency vision{5.35, 0.7};
  NormalLatency chatbot{2.05, 0.5};
  std::map<QueryKind, Seconds> processing{
      {QueryKind::AnchorLoad, 0.5}, {QueryKind::General, 1.0}, {QueryKind::ObjectQuery, 1.0}};

  Seconds processing_for(QueryKind kind) const {
    auto it = processing.find(kind);
    return it == processing.end() ? 0.0 : it->second;
  }

  std::vector<Violation> violations() const {
    std::vector<Violation> out;
    for (const auto& [name, n] : {std::pair{"vision", vision}, std::pair{"chatbot", chatbot}}) {
      if (!(n.mean >= 0.0)) out.push_back({"latency.mean_nonnegative", std::string(name) + " mean < 0"});
      if (!(n.stddev >= 0.0)) out.push_back({"latency.stddev_nonnegative", std::string(name) + " stddev < 0"});
    }
    for (const auto& [kind, t] : processing)
      if (!(t >= 0.0))
        out.push_back({"latency.processing_nonnegative", std::string(to_string(kind)) + " processing < 0"});
    return out;
  }

  static LatencyModel zero() {
    LatencyModel m;
    m.vision = {0.0, 0.0};
    m.chatbot = {0.0, 0.0};
    for (auto& [kind, t] : m.processing) t = 0.0;
    return m;
  }
};

/// Normal samples truncated at zero by rejection. The sequence is a pure
/// function of the seed and the call order.
class LatencySampler {
 public:
  explicit LatencySampler(std::uint64_t seed) : engine_(seed) {}

  Seconds sample(const NormalLatency& dist) {
    if (dist.stddev <= 0.0) return std::max(0.0, dist.mean);
    std::normal_distribution<double> normal(dist.mean, dist.stddev);
    for (int attempt = 0; attempt < 1000; ++attempt) {
      const double x = normal(engine_);
      if (x >= 0.0) return x;
    }
    return 0.0;
  }

 private:
  std::mt19937_64 engine_;
};

inline void to_json(nlohmann::ordered_json& j, const NormalLatency& n) {
  j = nlohmann::ordered_json{{"mean", n.mean}, {"stddev", n.stddev}};
}
inline void from_json(const nlohmann::ordered_json& j, NormalLatency& n) {
  n.mean = j.at("mean").get<double>();
  n.stddev = j.at("stddev").get<double>();
}

inline nlohmann::ordered_json to_json(const LatencyModel& m) {
  nlohmann::ordered_json processing = nlohmann::ordered_json::object();
  for (const auto& [kind, t] : m.processing) processing[std::string(to_string(kind))] = t;
  return {{"vision", m.vision}, {"chatbot", m.chatbot}, {"processing", processing}};
}

inline LatencyModel latency_model_from_json(const nlohmann::ordered_json& j) {
  LatencyModel m;
  if (j.contains("vision")) m.vision = j.at("vision").get<NormalLatency>();
  if (j.contains("chatbot")) m.chatbot = j.at("chatbot").get<NormalLatency>();
  if (j.contains("processing")) {
    for (const auto& [key, value] : j.at("processing").items()) {
      auto kind = query_kind_from_string(key);
      if (!kind) throw ValidationError("latency.processing_kind", "unknown query kind '" + key + "'");
      m.processing[*kind] = value.get<double>();
    }
  }
  throw_first(m.violations());
  return m;
}

}  // namespace mragent

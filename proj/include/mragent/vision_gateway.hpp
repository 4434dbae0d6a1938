#pragma once

// Object-recognition client surface. Any backend that answers a scene
// reference with a top-1 label can sit behind VisionService; this header has
// the in-process pieces, vision_http.hpp the web client and stub endpoint.

#include <map>
#include <memory>
#include <mutex>
#include <variant>

#include <nlohmann/json.hpp>

#include "mragent/latency.hpp"
#include "mragent/vision_types.hpp"

namespace mragent::vision {

struct EndpointConfig {
  std::string endpoint_url = "http://127.0.0.1:8081/v1/recognize";
  Seconds timeout = 10.0;
  int retries = 1;

  std::vector<Violation> violations() const {
    std::vector<Violation> out;
    if (endpoint_url.empty()) out.push_back({"endpoint.url_nonempty", "endpoint_url is empty"});
    if (!(timeout > 0.0)) out.push_back({"endpoint.timeout_positive", "timeout must be > 0"});
    if (retries < 0) out.push_back({"endpoint.retries_nonnegative", "retries must be >= 0"});
    return out;
  }
};

enum class VisionErrorKind { Timeout, EndpointError, MalformedResponse };

inline std::string_view to_string(VisionErrorKind k) {
  switch (k) {
    case VisionErrorKind::Timeout: return "Timeout";
    case VisionErrorKind::EndpointError: return "EndpointError";
    case VisionErrorKind::MalformedResponse: return "MalformedResponse";
  }
  return "EndpointError";
}

struct VisionError {
  VisionErrorKind kind = VisionErrorKind::EndpointError;
  Seconds elapsed = 0.0;
  int status = 0;
  std::string body_excerpt;
};

struct VisionOutcome {
  std::variant<RecognitionResult, VisionError> result;
  Seconds duration = 0.0;

  bool ok() const { return std::holds_alternative<RecognitionResult>(result); }
  const RecognitionResult& value() const { return std::get<RecognitionResult>(result); }
  const VisionError& error() const { return std::get<VisionError>(result); }
};

class VisionService {
 public:
  virtual ~VisionService() = default;
  virtual VisionOutcome recognize(const RecognitionRequest& request) = 0;
  /// Latency the orchestrator plans for when deciding on a filler.
  virtual Seconds expected_latency() const = 0;
  virtual std::size_t call_count() const = 0;
};

using FixtureTable = std::map<std::string, RecognitionResult>;

/// Deterministic fixture lookup with sampled latency. Unknown scene
/// references are answered with an empty, zero-confidence result.
class StubRecognizer {
 public:
  StubRecognizer(FixtureTable fixtures, NormalLatency latency, std::shared_ptr<LatencySampler> sampler)
      : fixtures_(std::move(fixtures)), latency_(latency), sampler_(std::move(sampler)) {
    if (fixtures_.empty()) throw ValidationError("vision.fixtures_nonempty", "stub endpoint needs fixtures");
  }
  StubRecognizer(FixtureTable fixtures, NormalLatency latency, std::uint64_t seed)
      : StubRecognizer(std::move(fixtures), latency, std::make_shared<LatencySampler>(seed)) {}

  struct Answer {
    RecognitionResult result;
    Seconds latency = 0.0;
  };

  Answer next(std::string_view scene_ref) {
    std::lock_guard lock(mutex_);
    Answer a;
    if (auto it = fixtures_.find(std::string(scene_ref)); it != fixtures_.end()) a.result = it->second;
    a.latency = sampler_->sample(latency_);
    return a;
  }

  const FixtureTable& fixtures() const { return fixtures_; }
  const NormalLatency& latency() const { return latency_; }

 private:
  FixtureTable fixtures_;
  NormalLatency latency_;
  std::shared_ptr<LatencySampler> sampler_;
  std::mutex mutex_;
};

/// Vision service on the simulated clock: returns the stub's answer and its
/// sampled latency without sleeping.
class SimulatedVision : public VisionService {
 public:
  explicit SimulatedVision(std::shared_ptr<StubRecognizer> stub, std::optional<Seconds> timeout = std::nullopt)
      : stub_(std::move(stub)), timeout_(timeout) {}

  VisionOutcome recognize(const RecognitionRequest& request) override {
    ++calls_;
    auto answer = stub_->next(request.scene_ref);
    if (timeout_ && answer.latency > *timeout_) {
      return {VisionError{VisionErrorKind::Timeout, *timeout_, 0, {}}, *timeout_};
    }
    return {answer.result, answer.latency};
  }
  Seconds expected_latency() const override { return stub_->latency().mean; }
  std::size_t call_count() const override { return calls_; }

 private:
  std::shared_ptr<StubRecognizer> stub_;
  std::optional<Seconds> timeout_;
  std::size_t calls_ = 0;
};

// ---- wire format ----------------------------------------------------------

inline nlohmann::ordered_json request_to_json(const RecognitionRequest& r) {
  nlohmann::ordered_json j{{"scene_ref", r.scene_ref}};
  if (r.ray) {
    j["ray"] = {{"origin", {r.ray->origin.x, r.ray->origin.y, r.ray->origin.z}},
                {"direction", {r.ray->direction.x, r.ray->direction.y, r.ray->direction.z}}};
  }
  return j;
}

inline nlohmann::ordered_json result_to_json(const RecognitionResult& r) {
  return {{"label", r.label}, {"confidence", r.confidence}};
}

/// Parses a `{label, confidence}` body; nullopt when malformed.
inline std::optional<RecognitionResult> parse_result(std::string_view body) {
  auto j = nlohmann::json::parse(body.begin(), body.end(), nullptr, false);
  if (j.is_discarded() || !j.is_object()) return std::nullopt;
  if (!j.contains("label") || !j["label"].is_string()) return std::nullopt;
  if (!j.contains("confidence") || !j["confidence"].is_number()) return std::nullopt;
  RecognitionResult r{j["label"].get<std::string>(), j["confidence"].get<double>()};
  if (!(r.confidence >= 0.0 && r.confidence <= 1.0)) return std::nullopt;
  return r;
}

inline FixtureTable fixtures_from_json(const nlohmann::ordered_json& j) {
  FixtureTable table;
  for (const auto& [scene, value] : j.at("fixtures").items()) {
    RecognitionResult r{value.at("label").get<std::string>(), value.at("confidence").get<double>()};
    if (!(r.confidence >= 0.0 && r.confidence <= 1.0))
      throw ValidationError("vision.confidence_range", "fixture '" + scene + "' confidence outside [0,1]");
    table.emplace(scene, r);
  }
  if (table.empty()) throw ValidationError("vision.fixtures_nonempty", "no fixtures");
  return table;
}

}  // namespace mragent::vision

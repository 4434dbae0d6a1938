#pragma once

#include <optional>
#include <string>

#include "mragent/common.hpp"

namespace mragent::vision {

struct Ray {
  Vec3 origin;
  Vec3 direction;
  friend bool operator==(const Ray&, const Ray&) = default;
};

struct RecognitionRequest {
  std::string scene_ref;
  std::optional<Ray> ray;
};

/// Top-1 recognition. An empty label with confidence 0 means "not recognized".
struct RecognitionResult {
  std::string label;
  double confidence = 0.0;
  friend bool operator==(const RecognitionResult&, const RecognitionResult&) = default;

  bool recognized() const { return !label.empty() && confidence > 0.0; }
};

}  // namespace mragent::vision

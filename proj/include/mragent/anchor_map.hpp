#pragma once

// Persistent registry of recognized static objects.
//
// Anchors live in per-room local coordinates. A room is identified by its
// signature, the set of object labels seen there, which lets two physically
// identical rooms be told apart by what is in them before anchors are loaded.

#include <map>
#include <set>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "mragent/common.hpp"
#include "mragent/vision_types.hpp"

namespace mragent::anchors {

using Json = nlohmann::ordered_json;

inline constexpr int kStoreFormatVersion = 1;
inline constexpr double kDefaultPlacementThreshold = 0.6;

struct Quaternion {
  double w = 1.0;
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  friend bool operator==(const Quaternion&, const Quaternion&) = default;
};

struct Pose {
  Vec3 position;
  Quaternion orientation;
  friend bool operator==(const Pose&, const Pose&) = default;

  bool valid() const {
    const auto& q = orientation;
    const double n = std::sqrt(q.w * q.w + q.x * q.x + q.y * q.y + q.z * q.z);
    return std::abs(n - 1.0) <= kUnitTolerance && std::isfinite(position.x) && std::isfinite(position.y) &&
           std::isfinite(position.z);
  }
};

struct Anchor {
  std::string id;
  std::string room_id;
  std::string object_label;
  Pose pose;
  double radius = 0.3;
  double created_at = 0.0;
  friend bool operator==(const Anchor&, const Anchor&) = default;
};

struct RoomSignature {
  std::string room_id;
  std::set<std::string> labels;
  friend bool operator==(const RoomSignature&, const RoomSignature&) = default;
};

struct AnchorStore {
  std::vector<Anchor> anchors;
  std::vector<RoomSignature> signatures;
  int version = kStoreFormatVersion;
  friend bool operator==(const AnchorStore&, const AnchorStore&) = default;

  const RoomSignature* signature(std::string_view room_id) const {
    for (const auto& s : signatures)
      if (s.room_id == room_id) return &s;
    return nullptr;
  }
};

// ---- errors ---------------------------------------------------------------

enum class AnchorErrorKind {
  ConfidenceTooLow,
  DuplicateAnchor,
  InvalidPose,
  InvalidRadius,
  UnknownRoom,
  EmptyObservation,
  NonUnitDirection,
  MalformedStore,
  UnsupportedVersion,
};

class AnchorError : public std::runtime_error {
 public:
  AnchorError(AnchorErrorKind kind, const std::string& message) : std::runtime_error(message), kind_(kind) {}
  AnchorErrorKind kind() const noexcept { return kind_; }

 private:
  AnchorErrorKind kind_;
};

class ConfidenceTooLow : public AnchorError {
 public:
  ConfidenceTooLow(double got, double threshold)
      : AnchorError(AnchorErrorKind::ConfidenceTooLow,
                    "recognition confidence " + std::to_string(got) + " below threshold " + std::to_string(threshold)),
        got(got),
        threshold(threshold) {}
  double got;
  double threshold;
};

class MalformedStore : public AnchorError {
 public:
  MalformedStore(std::size_t position, const std::string& reason)
      : AnchorError(AnchorErrorKind::MalformedStore,
                    "malformed anchor store at byte " + std::to_string(position) + ": " + reason),
        position(position),
        reason(reason) {}
  std::size_t position;
  std::string reason;
};

// ---- invariants -----------------------------------------------------------

inline std::vector<Violation> store_violations(const AnchorStore& store) {
  std::vector<Violation> out;
  std::set<std::string> rooms;
  for (const auto& sig : store.signatures) {
    if (!rooms.insert(sig.room_id).second)
      out.push_back({"anchors.room_unique", "duplicate room signature '" + sig.room_id + "'"});
    if (sig.labels.empty()) out.push_back({"anchors.signature_nonempty", "room '" + sig.room_id + "' has no labels"});
  }
  std::set<std::string> ids;
  for (const auto& a : store.anchors) {
    if (!ids.insert(a.id).second) out.push_back({"anchors.id_unique", "duplicate anchor id '" + a.id + "'"});
    if (!(a.radius > 0.0)) out.push_back({"anchors.radius_positive", "anchor '" + a.id + "' radius must be > 0"});
    if (a.object_label.empty()) out.push_back({"anchors.label_nonempty", "anchor '" + a.id + "' has no label"});
    if (!a.pose.valid()) out.push_back({"anchors.pose_valid", "anchor '" + a.id + "' orientation is not unit"});
    const auto* sig = store.signature(a.room_id);
    if (!sig) {
      out.push_back({"anchors.room_has_signature", "anchor '" + a.id + "' references unknown room '" + a.room_id + "'"});
    } else if (!sig->labels.count(a.object_label)) {
      out.push_back({"anchors.label_in_signature",
                     "anchor '" + a.id + "' label '" + a.object_label + "' missing from room signature"});
    }
  }
  return out;
}

// ---- mutation -------------------------------------------------------------

/// Creates or extends the signature of `room_id` with `labels` (room scan).
inline AnchorStore add_signature(AnchorStore store, const std::string& room_id, const std::set<std::string>& labels) {
  for (auto& sig : store.signatures) {
    if (sig.room_id == room_id) {
      sig.labels.insert(labels.begin(), labels.end());
      return store;
    }
  }
  store.signatures.push_back({room_id, labels});
  return store;
}

struct Placement {
  AnchorStore store;
  Anchor anchor;
};

inline Placement place_anchor(AnchorStore store, const std::string& room_id, const vision::RecognitionResult& recognition,
                              const Pose& pose, double radius, double created_at = 0.0,
                              double threshold = kDefaultPlacementThreshold) {
  if (recognition.confidence < threshold) throw ConfidenceTooLow(recognition.confidence, threshold);
  if (recognition.label.empty()) throw AnchorError(AnchorErrorKind::ConfidenceTooLow, "recognition has no label");
  if (!pose.valid()) throw AnchorError(AnchorErrorKind::InvalidPose, "pose orientation is not a unit quaternion");
  if (!(radius > 0.0)) throw AnchorError(AnchorErrorKind::InvalidRadius, "anchor radius must be > 0");
  for (const auto& a : store.anchors) {
    if (a.room_id == room_id && a.object_label == recognition.label &&
        norm(a.pose.position - pose.position) <= radius) {
      throw AnchorError(AnchorErrorKind::DuplicateAnchor, "anchor '" + a.id + "' already covers this position");
    }
  }

  std::set<std::string> taken;
  for (const auto& a : store.anchors) taken.insert(a.id);
  std::string id;
  for (std::size_t n = 1;; ++n) {
    id = room_id + "/" + recognition.label + "#" + std::to_string(n);
    if (!taken.count(id)) break;
  }

  Anchor anchor{id, room_id, recognition.label, pose, radius, created_at};
  store = add_signature(std::move(store), room_id, {recognition.label});
  store.anchors.push_back(anchor);
  return {std::move(store), std::move(anchor)};
}

// ---- queries --------------------------------------------------------------

struct ResolvedRoom {
  std::string room_id;
  friend bool operator==(const ResolvedRoom&, const ResolvedRoom&) = default;
};
struct AmbiguousRoom {
  std::vector<std::string> candidates;  // sorted
  friend bool operator==(const AmbiguousRoom&, const AmbiguousRoom&) = default;
};
struct NoRoomMatch {
  friend bool operator==(const NoRoomMatch&, const NoRoomMatch&) = default;
};
using RoomResolution = std::variant<ResolvedRoom, AmbiguousRoom, NoRoomMatch>;

/// Picks the room whose signature overlaps `observed` the most, provided the
/// maximum is unique and non-zero.
inline RoomResolution resolve_room(const AnchorStore& store, const std::set<std::string>& observed) {
  if (observed.empty()) throw AnchorError(AnchorErrorKind::EmptyObservation, "no labels observed");
  std::size_t best = 0;
  std::vector<std::string> leaders;
  for (const auto& sig : store.signatures) {
    std::size_t overlap = 0;
    for (const auto& label : observed) overlap += sig.labels.count(label);
    if (overlap == 0) continue;
    if (overlap > best) {
      best = overlap;
      leaders = {sig.room_id};
    } else if (overlap == best) {
      leaders.push_back(sig.room_id);
    }
  }
  if (leaders.empty()) return NoRoomMatch{};
  if (leaders.size() == 1) return ResolvedRoom{leaders.front()};
  std::sort(leaders.begin(), leaders.end());
  return AmbiguousRoom{std::move(leaders)};
}

inline std::vector<Anchor> load_room(const AnchorStore& store, std::string_view room_id) {
  if (!store.signature(room_id)) throw AnchorError(AnchorErrorKind::UnknownRoom, "unknown room '" + std::string(room_id) + "'");
  std::vector<Anchor> out;
  std::copy_if(store.anchors.begin(), store.anchors.end(), std::back_inserter(out),
               [&](const Anchor& a) { return a.room_id == room_id; });
  std::sort(out.begin(), out.end(), [](const Anchor& a, const Anchor& b) { return a.id < b.id; });
  return out;
}

/// Nearest anchor in front of the ray whose centre lies within its selection
/// radius of the ray line. Ties on distance go to the smaller id.
inline std::optional<Anchor> hit_test(std::span<const Anchor> anchors, const Vec3& origin, const Vec3& direction) {
  if (!is_unit(direction)) throw AnchorError(AnchorErrorKind::NonUnitDirection, "gaze direction is not unit length");
  const Anchor* best = nullptr;
  double best_t = 0.0;
  for (const auto& a : anchors) {
    const Vec3 offset = a.pose.position - origin;
    const double t = dot(offset, direction);
    if (t <= 0.0) continue;
    const double perpendicular = norm(offset - direction * t);
    if (perpendicular > a.radius) continue;
    if (!best || t < best_t || (t == best_t && a.id < best->id)) {
      best = &a;
      best_t = t;
    }
  }
  if (!best) return std::nullopt;
  return *best;
}

// ---- persistence ----------------------------------------------------------
//
// See docs/formats.md. Field order is fixed so that save(load(bytes)) == bytes
// for any file produced by save().

inline Json to_json(const AnchorStore& store) {
  Json rooms = Json::array();
  for (const auto& sig : store.signatures) {
    Json labels = Json::array();
    for (const auto& l : sig.labels) labels.push_back(l);
    rooms.push_back(Json{{"room_id", sig.room_id}, {"labels", labels}});
  }
  Json anchors = Json::array();
  for (const auto& a : store.anchors) {
    const auto& p = a.pose.position;
    const auto& q = a.pose.orientation;
    anchors.push_back(Json{{"id", a.id},
                           {"room_id", a.room_id},
                           {"label", a.object_label},
                           {"position", {p.x, p.y, p.z}},
                           {"orientation", {q.w, q.x, q.y, q.z}},
                           {"radius", a.radius},
                           {"created_at", a.created_at}});
  }
  return Json{{"format", "mragent-anchor-store"}, {"version", store.version}, {"rooms", rooms}, {"anchors", anchors}};
}

inline std::string save(const AnchorStore& store) { return to_json(store).dump(2) + "\n"; }

inline AnchorStore from_json(const Json& doc) {
  auto fail = [](const std::string& reason) -> MalformedStore { return MalformedStore(0, reason); };
  if (!doc.is_object()) throw fail("top level is not an object");
  if (!doc.contains("version") || !doc["version"].is_number_integer()) throw fail("missing integer 'version'");
  const int version = doc["version"].get<int>();
  if (version != kStoreFormatVersion)
    throw AnchorError(AnchorErrorKind::UnsupportedVersion, "unsupported anchor store version " + std::to_string(version));

  AnchorStore store;
  store.version = version;
  try {
    for (const auto& room : doc.at("rooms")) {
      RoomSignature sig;
      sig.room_id = room.at("room_id").get<std::string>();
      for (const auto& l : room.at("labels")) sig.labels.insert(l.get<std::string>());
      store.signatures.push_back(std::move(sig));
    }
    for (const auto& a : doc.at("anchors")) {
      Anchor anchor;
      anchor.id = a.at("id").get<std::string>();
      anchor.room_id = a.at("room_id").get<std::string>();
      anchor.object_label = a.at("label").get<std::string>();
      const auto& p = a.at("position");
      const auto& q = a.at("orientation");
      if (p.size() != 3 || q.size() != 4) throw fail("anchor '" + anchor.id + "' has wrong vector arity");
      anchor.pose.position = {p[0].get<double>(), p[1].get<double>(), p[2].get<double>()};
      anchor.pose.orientation = {q[0].get<double>(), q[1].get<double>(), q[2].get<double>(), q[3].get<double>()};
      anchor.radius = a.at("radius").get<double>();
      anchor.created_at = a.at("created_at").get<double>();
      store.anchors.push_back(std::move(anchor));
    }
  } catch (const nlohmann::json::exception& e) {
    throw fail(e.what());
  }
  const auto violations = store_violations(store);
  if (!violations.empty()) throw fail(violations.front().rule + ": " + violations.front().message);
  return store;
}

inline AnchorStore load(std::string_view bytes) {
  Json doc;
  try {
    doc = Json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw MalformedStore(e.byte, e.what());
  }
  return from_json(doc);
}

}  // namespace mragent::anchors

#include <gtest/gtest.h>

#include "support/oracles.hpp"

using namespace mragent;
using namespace mragent::anchors;

namespace {

Pose at(double x, double y, double z) { return Pose{{x, y, z}, {}}; }

// The garden fixture: five flowers in one room, four in the other.
AnchorStore garden() {
  AnchorStore s;
  s = add_signature(std::move(s), "room1", {"rose", "tulip", "lily", "daisy", "iris"});
  s = add_signature(std::move(s), "room2", {"orchid", "peony", "lotus", "sunflower"});
  return s;
}

template <typename F>
AnchorErrorKind error_kind(F&& f) {
  try {
    f();
  } catch (const AnchorError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected an AnchorError";
  return AnchorErrorKind::MalformedStore;
}

}  // namespace

TEST(AnchorPlace, AssignsSequentialIdsAndExtendsSignature) {
  auto p1 = place_anchor({}, "room1", {"rose", 0.9}, at(0, 0, 2), 0.3);
  EXPECT_EQ(p1.anchor.id, "room1/rose#1");
  auto p2 = place_anchor(p1.store, "room1", {"rose", 0.9}, at(3, 0, 2), 0.3);
  EXPECT_EQ(p2.anchor.id, "room1/rose#2");
  ASSERT_NE(p2.store.signature("room1"), nullptr);
  EXPECT_EQ(p2.store.signature("room1")->labels, std::set<std::string>{"rose"});
  EXPECT_TRUE(store_violations(p2.store).empty());
}

TEST(AnchorPlace, RejectsInOrder) {
  try {
    place_anchor({}, "room1", {"rose", 0.59}, at(0, 0, 0), 0.3);
    FAIL();
  } catch (const ConfidenceTooLow& e) {
    EXPECT_DOUBLE_EQ(e.got, 0.59);
    EXPECT_DOUBLE_EQ(e.threshold, 0.6);
  }
  // Exactly at the threshold is accepted.
  EXPECT_NO_THROW(place_anchor({}, "room1", {"rose", 0.6}, at(0, 0, 0), 0.3));
  EXPECT_EQ(error_kind([] { place_anchor({}, "r", {"rose", 0.9}, Pose{{0, 0, 0}, {2, 0, 0, 0}}, 0.3); }),
            AnchorErrorKind::InvalidPose);
  EXPECT_EQ(error_kind([] { place_anchor({}, "r", {"rose", 0.9}, at(0, 0, 0), 0.0); }), AnchorErrorKind::InvalidRadius);
  auto first = place_anchor({}, "r", {"rose", 0.9}, at(0, 0, 0), 0.3);
  EXPECT_EQ(error_kind([&] { place_anchor(first.store, "r", {"rose", 0.9}, at(0.2, 0, 0), 0.3); }),
            AnchorErrorKind::DuplicateAnchor);
  // Same spot, different label or room is fine.
  EXPECT_NO_THROW(place_anchor(first.store, "r", {"tulip", 0.9}, at(0.2, 0, 0), 0.3));
  EXPECT_NO_THROW(place_anchor(first.store, "other", {"rose", 0.9}, at(0.2, 0, 0), 0.3));
}

TEST(AnchorResolve, SeparatesGardenRooms) {
  const auto store = garden();
  EXPECT_EQ(resolve_room(store, {"rose"}), RoomResolution{ResolvedRoom{"room1"}});
  EXPECT_EQ(resolve_room(store, {"lotus", "peony"}), RoomResolution{ResolvedRoom{"room2"}});
  EXPECT_EQ(resolve_room(store, {"rose", "tulip", "orchid"}), RoomResolution{ResolvedRoom{"room1"}});
  EXPECT_EQ(resolve_room(store, {"rose", "orchid"}), (RoomResolution{AmbiguousRoom{{"room1", "room2"}}}));
  EXPECT_EQ(resolve_room(store, {"cactus"}), RoomResolution{NoRoomMatch{}});
  EXPECT_EQ(error_kind([&] { resolve_room(store, {}); }), AnchorErrorKind::EmptyObservation);
}

TEST(AnchorResolve, IdenticalRoomsAreAmbiguous) {
  auto s = add_signature({}, "b", {"rose", "tulip"});
  s = add_signature(std::move(s), "a", {"rose", "tulip"});
  EXPECT_EQ(resolve_room(s, {"rose"}), (RoomResolution{AmbiguousRoom{{"a", "b"}}}));
  EXPECT_EQ(resolve_room(s, {"rose", "tulip"}), (RoomResolution{AmbiguousRoom{{"a", "b"}}}));
}

TEST(AnchorLoad, SortedById) {
  auto s = garden();
  s = place_anchor(s, "room1", {"tulip", 0.9}, at(1, 0, 0), 0.3).store;
  s = place_anchor(s, "room2", {"lotus", 0.9}, at(1, 0, 0), 0.3).store;
  s = place_anchor(s, "room1", {"iris", 0.9}, at(2, 0, 0), 0.3).store;
  const auto loaded = load_room(s, "room1");
  ASSERT_EQ(loaded.size(), 2u);
  EXPECT_EQ(loaded[0].id, "room1/iris#1");
  EXPECT_EQ(loaded[1].id, "room1/tulip#1");
  EXPECT_TRUE(load_room(garden(), "room2").empty());
  EXPECT_EQ(error_kind([&] { load_room(s, "attic"); }), AnchorErrorKind::UnknownRoom);
}

TEST(AnchorHit, NearestForwardWins) {
  std::vector<Anchor> anchors = {{"b", "r", "far", at(0, 0, 5), 0.3, 0}, {"a", "r", "near", at(0, 0.1, 2), 0.3, 0},
                                 {"c", "r", "behind", at(0, 0, -1), 0.3, 0}};
  auto hit = hit_test(anchors, {0, 0, 0}, {0, 0, 1});
  ASSERT_TRUE(hit);
  EXPECT_EQ(hit->object_label, "near");
  EXPECT_FALSE(hit_test(anchors, {0, 0, 0}, {1, 0, 0}));
  EXPECT_EQ(error_kind([&] { hit_test(anchors, {0, 0, 0}, {0, 0, 2}); }), AnchorErrorKind::NonUnitDirection);
}

TEST(AnchorHit, TiesGoToSmallerId) {
  std::vector<Anchor> anchors = {{"r/z#1", "r", "z", at(0, 0, 3), 0.3, 0}, {"r/a#1", "r", "a", at(0, 0, 3), 0.3, 0}};
  EXPECT_EQ(hit_test(anchors, {0, 0, 0}, {0, 0, 1})->id, "r/a#1");
}

TEST(AnchorHit, MatchesBruteForceOnRandomCases) {
  std::mt19937_64 rng(42);
  std::size_t hits = 0;
  for (int n = 0; n < 5000; ++n) {
    const auto c = oracle::random_hit_case(rng);
    const auto got = hit_test(c.anchors, c.origin, c.direction);
    const auto want = oracle::hit_test_brute(c.anchors, c.origin, c.direction);
    ASSERT_EQ(got.has_value(), want.has_value()) << "case " << n;
    if (got) {
      EXPECT_EQ(got->id, *want) << "case " << n;
      ++hits;
    }
  }
  EXPECT_GT(hits, 1000u);
}

TEST(AnchorStoreFile, RoundTripIsByteIdentical) {
  auto s = garden();
  s = place_anchor(s, "room1", {"rose", 0.9}, Pose{{0.125, 1.5, -2.0}, {0.7071067811865476, 0, 0.7071067811865476, 0}},
                   0.35, 12.5)
          .store;
  s = place_anchor(s, "room2", {"lotus", 0.8}, at(1e-3, 2.0 / 3.0, 1e6), 0.2, 99.0).store;
  const auto bytes = save(s);
  const auto reloaded = load(bytes);
  EXPECT_EQ(reloaded, s);
  EXPECT_EQ(save(reloaded), bytes);
}

TEST(AnchorStoreFile, RandomStoresRoundTrip) {
  std::mt19937_64 rng(9);
  for (int n = 0; n < 200; ++n) {
    AnchorStore s;
    const int anchors = static_cast<int>(oracle::pick(rng, 8));
    for (int i = 0; i < anchors; ++i) {
      const std::string room = "room" + std::to_string(oracle::pick(rng, 3));
      const std::string label = "f" + std::to_string(oracle::pick(rng, 5));
      const Vec3 axis = oracle::random_unit(rng);
      const double half = oracle::uniform(rng, 0, 3.14159);
      Pose pose{{oracle::uniform(rng, -9, 9), oracle::uniform(rng, -9, 9), oracle::uniform(rng, -9, 9)},
                {std::cos(half), axis.x * std::sin(half), axis.y * std::sin(half), axis.z * std::sin(half)}};
      try {
        s = place_anchor(s, room, {label, 0.9}, pose, oracle::uniform(rng, 0.01, 1), oracle::uniform(rng, 0, 100))
                .store;
      } catch (const AnchorError&) {
        // duplicate placements are skipped
      }
    }
    const auto bytes = save(s);
    EXPECT_EQ(save(load(bytes)), bytes);
  }
}

TEST(AnchorStoreFile, MalformedInputReportsPosition) {
  try {
    load("{\"version\": 1, \"rooms\": [");
    FAIL();
  } catch (const MalformedStore& e) {
    EXPECT_GT(e.position, 0u);
  }
  EXPECT_EQ(error_kind([] { load(R"({"format":"mragent-anchor-store","version":2,"rooms":[],"anchors":[]})"); }),
            AnchorErrorKind::UnsupportedVersion);
  EXPECT_EQ(error_kind([] { load(R"({"version":1,"rooms":[],"anchors":[{"id":"x"}]})"); }),
            AnchorErrorKind::MalformedStore);
  // An anchor whose room has no signature violates the store invariants.
  EXPECT_EQ(error_kind([] {
              load(R"({"version":1,"rooms":[],"anchors":[{"id":"x","room_id":"r","label":"rose","position":[0,0,0],)"
                   R"("orientation":[1,0,0,0],"radius":0.3,"created_at":0}]})");
            }),
            AnchorErrorKind::MalformedStore);
}

TEST(AnchorStoreFile, ShippedExampleLoads) {
  const auto store = load(read_file(std::string(MRAGENT_DATA_DIR) + "/anchors.json"));
  EXPECT_EQ(store.signatures.size(), 2u);
  EXPECT_EQ(store.anchors.size(), 9u);
}

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>

#include "qteam/preference.hpp"
#include "qteam/rng.hpp"
#include "test_util.hpp"

using namespace qteam;

TEST_CASE("record basics and top-k semantics") {
  PreferenceStore store(2, 2);
  const Box b(0.5, 0.5, 0.2, 0.2);

  store.record(0, b, 0.9);
  REQUIRE(store.entries(0).size() == 1);

  store.record(0, b, 0.5);
  store.record(0, b, 0.7);
  const auto& kept = store.entries(0);
  REQUIRE(kept.size() == 2);
  CHECK(kept[0].confidence == 0.9);
  CHECK(kept[1].confidence == 0.7);

  CHECK_THROWS_AS(store.record(5, b, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(store.record(0, b, 1.5), std::invalid_argument);
  CHECK_THROWS_AS(PreferenceStore(0, 3), std::invalid_argument);
  CHECK_THROWS_AS(PreferenceStore(3, 0), std::invalid_argument);
}

TEST_CASE("retention equals stable sort-and-truncate over the full sequence") {
  Rng rng(61);
  const int tau = 16;
  PreferenceStore store(1, tau);
  struct Rec {
    Box box;
    double conf;
    int order;
  };
  std::vector<Rec> history;
  for (int t = 0; t < 10000; ++t) {
    // Coarse confidence grid provokes plenty of ties.
    const double conf = rng.uniform_int(0, 20) / 20.0;
    const Box b = qtest::random_box(rng);
    store.record(0, b, conf);
    history.push_back({b, conf, t});
  }
  std::stable_sort(history.begin(), history.end(),
                   [](const Rec& a, const Rec& b) { return a.conf > b.conf; });
  const auto& kept = store.entries(0);
  REQUIRE(kept.size() == static_cast<std::size_t>(tau));
  for (int i = 0; i < tau; ++i) {
    REQUIRE(kept[i].confidence == history[i].conf);
    REQUIRE(kept[i].box == history[i].box);
  }
}

TEST_CASE("extraction on singletons and worked means") {
  const auto p = build_partition({0.2, 0.4});
  auto team = init_team(p, {0.4, 0.3, 0.3}, 6, 11);
  PreferenceStore store(6, 4);

  const Box lone(0.31, 0.42, 0.15, 0.18);
  store.record(0, lone, 0.8);
  store.record(1, Box(0.4, 0.4, 0.2, 0.2), 0.9);
  store.record(1, Box(0.6, 0.6, 0.4, 0.4), 0.7);

  const auto anchors = extract_preferences(store, team);
  CHECK(anchors[0] == lone);
  CHECK(anchors[1].cx == Catch::Approx(0.5).margin(1e-15));
  CHECK(anchors[1].cy == Catch::Approx(0.5).margin(1e-15));
  CHECK(anchors[1].w == Catch::Approx(0.3).margin(1e-15));
  CHECK(anchors[1].h == Catch::Approx(0.3).margin(1e-15));
  for (int i = 2; i < 6; ++i) CHECK(anchors[i] == team.anchors[i]);  // untouched

  // Idempotence given a frozen store.
  const auto again = extract_preferences(store, team);
  for (int i = 0; i < 6; ++i) CHECK(anchors[i] == again[i]);
}

TEST_CASE("extracted anchors stay in the per-coordinate envelope") {
  const auto p = build_partition({0.2, 0.4});
  auto team = init_team(p, {0.4, 0.3, 0.3}, 8, 5);
  Rng rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    PreferenceStore store(8, 8);
    std::vector<std::vector<Box>> recorded(8);
    for (int r = 0; r < 40; ++r) {
      const int qi = static_cast<int>(rng.uniform_int(0, 7));
      const Box b = qtest::random_box(rng);
      store.record(qi, b, rng.uniform());
      recorded[qi].push_back(b);
    }
    const auto anchors = extract_preferences(store, team);
    for (int qi = 0; qi < 8; ++qi) {
      const auto& kept = store.entries(qi);
      if (kept.empty()) {
        REQUIRE(anchors[qi] == team.anchors[qi]);
        continue;
      }
      double lo_cx = 1e9, hi_cx = -1e9, lo_w = 1e9, hi_w = -1e9;
      for (const auto& e : kept) {
        lo_cx = std::min(lo_cx, e.box.cx);
        hi_cx = std::max(hi_cx, e.box.cx);
        lo_w = std::min(lo_w, e.box.w);
        hi_w = std::max(hi_w, e.box.w);
      }
      REQUIRE(anchors[qi].cx >= lo_cx - 1e-12);
      REQUIRE(anchors[qi].cx <= hi_cx + 1e-12);
      REQUIRE(anchors[qi].w >= lo_w - 1e-12);
      REQUIRE(anchors[qi].w <= hi_w + 1e-12);
      REQUIRE(anchors[qi].cx >= 0.0);
      REQUIRE(anchors[qi].cx <= 1.0);
      REQUIRE(anchors[qi].w > 0.0);
      REQUIRE(anchors[qi].w <= 1.0);
    }
  }
}

TEST_CASE("extraction swaps anchors without touching group structure") {
  const auto p = build_partition({0.2, 0.4});
  auto team = init_team(p, {0.4, 0.3, 0.3}, 6, 3);
  const auto group_of = team.group_of;
  const auto sizes = team.group_sizes;
  PreferenceStore store(6, 2);
  store.record(3, Box(0.9, 0.9, 0.9, 0.9), 1.0);
  team.anchors = extract_preferences(store, team);
  CHECK(team.group_of == group_of);
  CHECK(team.group_sizes == sizes);
  CHECK(team.anchors[3] == Box(0.9, 0.9, 0.9, 0.9));
}

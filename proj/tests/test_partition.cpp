#include <catch2/catch_amalgamated.hpp>

#include "qteam/partition.hpp"
#include "test_util.hpp"

using namespace qteam;

TEST_CASE("build_partition from the standard bounds") {
  const auto p = build_partition({0.2, 0.4});
  REQUIRE(p.group_count() == 3);
  CHECK(p.ranges[0].s_min == 0.0);
  CHECK(p.ranges[0].s_max == 0.2);
  CHECK(p.ranges[1].s_min == 0.2);
  CHECK(p.ranges[1].s_max == 0.4);
  CHECK(p.ranges[2].s_min == 0.4);
  CHECK(p.ranges[2].s_max == 1.0);
}

TEST_CASE("build_partition degenerate and invalid inputs") {
  const auto single = build_partition({});
  REQUIRE(single.group_count() == 1);
  CHECK(single.ranges[0].s_min == 0.0);
  CHECK(single.ranges[0].s_max == 1.0);

  CHECK_THROWS_AS(build_partition({0.5, 0.3}), std::invalid_argument);
  CHECK_THROWS_AS(build_partition({0.0, 0.5}), std::invalid_argument);
  CHECK_THROWS_AS(build_partition({0.5, 1.0}), std::invalid_argument);
  CHECK_THROWS_AS(build_partition({0.5, 0.5}), std::invalid_argument);
}

TEST_CASE("scale assignment boundaries") {
  const auto p = build_partition({0.2, 0.4});
  CHECK(assign_scale_group(p, 0.2) == 0);  // boundary belongs to the lower range
  CHECK(assign_scale_group(p, 0.2 + 1e-12) == 1);
  CHECK(assign_scale_group(p, 0.3) == 1);
  CHECK(assign_scale_group(p, 0.4) == 1);
  CHECK(assign_scale_group(p, 1.0) == 2);
  CHECK_THROWS_AS(assign_scale_group(p, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(assign_scale_group(p, 1.5), std::invalid_argument);
}

TEST_CASE("group assignment agrees with a linear scan") {
  const auto p = build_partition({0.1, 0.35, 0.6});
  Rng rng(17);
  for (int t = 0; t < 10000; ++t) {
    const Box b = qtest::random_box(rng);
    const int k = assign_object_group(p, b);
    int hits = 0, linear = -1;
    for (int g = 0; g < p.group_count(); ++g) {
      if (p.ranges[g].contains(relative_scale(b))) {
        ++hits;
        linear = g;
      }
    }
    REQUIRE(hits == 1);
    REQUIRE(k == linear);
  }
}

TEST_CASE("partition coverage over dense samples and boundaries") {
  const auto p = build_partition({0.2, 0.4});
  Rng rng(23);
  const auto covered_once = [&](double s) {
    int hits = 0;
    for (const auto& r : p.ranges) hits += r.contains(s);
    return hits == 1;
  };
  for (int t = 0; t < 100000; ++t) {
    const double s = 1.0 - rng.uniform();  // (0, 1]
    REQUIRE(covered_once(s));
  }
  for (double boundary : {0.2, 0.4, 1.0}) {
    REQUIRE(covered_once(boundary));
    REQUIRE(covered_once(boundary - 1e-12));
  }
  REQUIRE(covered_once(1e-15));
}

TEST_CASE("init_team reproduces the published split") {
  const auto p = build_partition({0.2, 0.4});
  const auto team = init_team(p, {0.65, 0.20, 0.15}, 300, 99);
  REQUIRE(team.group_sizes == std::vector<int>{195, 60, 45});
  REQUIRE(team.size() == 300);

  // Group-1 anchors start at the mid-range size (0.2 + 0.4) / 2.
  const auto [begin, end] = team.block(1);
  for (int i = begin; i < end; ++i) {
    CHECK(team.anchors[i].w == Catch::Approx(0.3).margin(1e-15));
    CHECK(team.anchors[i].h == Catch::Approx(0.3).margin(1e-15));
    CHECK(team.group_of[i] == 1);
  }
}

TEST_CASE("init_team determinism and remainders") {
  const auto p = build_partition({0.2, 0.4});
  const auto a = init_team(p, {0.65, 0.20, 0.15}, 61, 4);
  const auto b = init_team(p, {0.65, 0.20, 0.15}, 61, 4);
  REQUIRE(a.anchors.size() == b.anchors.size());
  for (std::size_t i = 0; i < a.anchors.size(); ++i) REQUIRE(a.anchors[i] == b.anchors[i]);

  // 61 * (0.65, 0.20, 0.15) = (39.65, 12.2, 9.15): the largest remainder
  // takes the leftover query.
  CHECK(a.group_sizes == std::vector<int>{40, 12, 9});

  // Equal remainders break toward the lower group index.
  const auto p2 = build_partition({0.5});
  const auto t2 = init_team(p2, {0.5, 0.5}, 5, 1);
  CHECK(t2.group_sizes == std::vector<int>{3, 2});
}

TEST_CASE("init_team size sum and contiguity properties") {
  Rng rng(31);
  for (int t = 0; t < 200; ++t) {
    const int k = 1 + static_cast<int>(rng.uniform_int(0, 3));
    std::vector<double> bounds;
    double b = 0.0;
    for (int i = 0; i < k - 1; ++i) {
      b += rng.uniform(0.05, 0.8 / k);
      bounds.push_back(b);
    }
    const auto p = build_partition(bounds);
    std::vector<double> props(k);
    double sum = 0.0;
    for (auto& v : props) {
      v = rng.uniform(0.05, 1.0);
      sum += v;
    }
    for (auto& v : props) v /= sum;
    // Renormalize exactly.
    double acc = 0.0;
    for (int i = 0; i + 1 < k; ++i) acc += props[i];
    props[k - 1] = 1.0 - acc;

    const int n = k + static_cast<int>(rng.uniform_int(0, 200));
    const auto team = init_team(p, props, n, rng.next_u64());
    int total = 0;
    for (int s : team.group_sizes) total += s;
    REQUIRE(total == n);
    REQUIRE(static_cast<int>(team.group_of.size()) == n);
    for (int i = 1; i < n; ++i) REQUIRE(team.group_of[i] >= team.group_of[i - 1]);
    for (int g = 0; g < team.group_count(); ++g) {
      const auto [begin, end] = team.block(g);
      const double expect = 0.5 * (p.ranges[g].s_min + p.ranges[g].s_max);
      for (int i = begin; i < end; ++i) {
        REQUIRE(team.group_of[i] == g);
        REQUIRE(team.anchors[i].w == expect);
        REQUIRE(team.anchors[i].h == expect);
      }
    }
  }
}

TEST_CASE("init_team rejects bad input") {
  const auto p = build_partition({0.2, 0.4});
  CHECK_THROWS_AS(init_team(p, {0.65, 0.20, 0.15}, 2, 1), std::invalid_argument);
  CHECK_THROWS_AS(init_team(p, {0.65, 0.20}, 10, 1), std::invalid_argument);
  CHECK_THROWS_AS(init_team(p, {0.65, 0.20, 0.20}, 10, 1), std::invalid_argument);
  CHECK_THROWS_AS(init_team(p, {0.8, 0.4, -0.2}, 10, 1), std::invalid_argument);
}

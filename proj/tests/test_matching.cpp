#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "qteam/matching.hpp"
#include "qteam/rng.hpp"
#include "test_util.hpp"

using namespace qteam;

namespace {

CostMatrix make_matrix(int rows, int cols, const std::vector<double>& entries) {
  CostMatrix c;
  c.rows = rows;
  c.cols = cols;
  c.costs = entries;
  c.row_ids.resize(rows);
  c.col_ids.resize(cols);
  std::iota(c.row_ids.begin(), c.row_ids.end(), 0);
  std::iota(c.col_ids.begin(), c.col_ids.end(), 0);
  return c;
}

CostMatrix random_matrix(Rng& rng, int rows, int cols, double lo = -1.0, double hi = 1.0) {
  CostMatrix c = make_matrix(rows, cols, std::vector<double>(rows * cols));
  for (auto& v : c.costs) v = rng.uniform(lo, hi);
  return c;
}

Prediction make_pred(const Box& b, std::vector<double> probs, int qi) {
  Prediction p{b, std::move(probs), qi};
  return p;
}

std::vector<Prediction> anchor_predictions(const QueryTeam& team, int classes, Rng& rng) {
  std::vector<Prediction> preds;
  for (int i = 0; i < team.size(); ++i) {
    std::vector<double> probs(classes);
    for (auto& p : probs) p = rng.uniform();
    preds.push_back(make_pred(team.anchors[i], std::move(probs), i));
  }
  return preds;
}

}  // namespace

TEST_CASE("cost matrix isolates its terms") {
  const Box b(0.4, 0.4, 0.2, 0.2);
  const std::vector<GtObject> gts{{b, 1}};
  CostWeights w;

  const auto perfect = cost_matrix({make_pred(b, {0.0, 1.0, 0.0}, 0)}, gts, w);
  CHECK(perfect.at(0, 0) == Catch::Approx(0.0).margin(1e-12));

  const auto class_only = cost_matrix({make_pred(b, {0.0, 0.0, 0.0}, 0)}, gts, w);
  CHECK(class_only.at(0, 0) == Catch::Approx(w.cls).margin(1e-12));
}

TEST_CASE("cost matrix matches a term-by-term recomputation") {
  Rng rng(5);
  CostWeights w{1.7, 4.2, 2.5};
  for (int t = 0; t < 50; ++t) {
    std::vector<Prediction> preds;
    for (int i = 0; i < 4; ++i) {
      std::vector<double> probs(3);
      for (auto& p : probs) p = rng.uniform();
      preds.push_back(make_pred(qtest::random_box(rng), std::move(probs), i));
    }
    std::vector<GtObject> gts;
    for (int j = 0; j < 3; ++j) {
      gts.push_back({qtest::random_box(rng), static_cast<int>(rng.uniform_int(0, 2))});
    }
    const auto c = cost_matrix(preds, gts, w);
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j < 3; ++j) {
        const double expect = w.cls * (1.0 - preds[i].class_probs[gts[j].class_id]) +
                              w.l1 * l1_box_distance(preds[i].box, gts[j].box) +
                              w.giou * (1.0 - giou(preds[i].box, gts[j].box));
        REQUIRE(c.at(i, j) == Catch::Approx(expect).margin(1e-12));
      }
    }
  }
}

TEST_CASE("cost matrix edge cases") {
  const Box b(0.4, 0.4, 0.2, 0.2);
  CHECK_THROWS_AS(cost_matrix({make_pred(b, {0.5}, 0)}, {{b, 3}}, {}), std::invalid_argument);
  CHECK_THROWS_AS(cost_matrix({make_pred(b, {0.5}, 0)}, {{b, 0}}, {-1.0, 5.0, 2.0}),
                  std::invalid_argument);
  const auto empty_rows = cost_matrix({}, {{b, 0}}, {});
  CHECK(empty_rows.rows == 0);
  CHECK(empty_rows.cols == 1);
  const auto m = hungarian(empty_rows);
  CHECK(m.pairs.empty());
  CHECK(m.unmatched_objects == std::vector<int>{0});
}

TEST_CASE("hungarian trivial instances") {
  const auto one = hungarian(make_matrix(1, 1, {3.5}));
  REQUIRE(one.pairs == std::vector<std::pair<int, int>>{{0, 0}});
  CHECK(one.total_cost == 3.5);

  const auto diag = hungarian(make_matrix(2, 2, {1, 2, 2, 1}));
  REQUIRE(diag.pairs == std::vector<std::pair<int, int>>{{0, 0}, {1, 1}});
  CHECK(diag.total_cost == Catch::Approx(2.0).margin(1e-12));
}

TEST_CASE("hungarian equals brute force on 500 random instances") {
  Rng rng(99);
  for (int t = 0; t < 500; ++t) {
    const int rows = 1 + static_cast<int>(rng.uniform_int(0, 6));
    const int cols = 1 + static_cast<int>(rng.uniform_int(0, 6));
    const auto c = random_matrix(rng, rows, cols);
    const auto fast = hungarian(c);
    const auto exact = brute_force_match(c);
    REQUIRE(std::abs(fast.total_cost - exact.total_cost) <= 1e-9);
    REQUIRE(fast.pairs.size() == static_cast<std::size_t>(std::min(rows, cols)));
    // One-to-one on both sides.
    std::vector<char> row_used(rows, 0), col_used(cols, 0);
    for (const auto& [q, o] : fast.pairs) {
      REQUIRE(!row_used[q]);
      REQUIRE(!col_used[o]);
      row_used[q] = col_used[o] = 1;
    }
    REQUIRE(fast.pairs.size() + fast.unmatched_objects.size() == static_cast<std::size_t>(cols));
  }
}

TEST_CASE("forbidden pairs are honored or rejected") {
  // Feasible: forbidden diagonal forces the anti-diagonal.
  auto c = make_matrix(2, 2, {kForbidden, 1.0, 2.0, kForbidden});
  const auto m = hungarian(c);
  REQUIRE(m.pairs == std::vector<std::pair<int, int>>{{0, 1}, {1, 0}});
  CHECK(m.total_cost == Catch::Approx(3.0).margin(1e-12));
  CHECK(brute_force_match(c).total_cost == Catch::Approx(3.0).margin(1e-12));

  // Infeasible: a column only reachable through forbidden entries.
  const auto bad = make_matrix(2, 2, {kForbidden, 1.0, kForbidden, 2.0});
  CHECK_THROWS_AS(hungarian(bad), std::runtime_error);
  CHECK_THROWS_AS(brute_force_match(bad), std::runtime_error);
}

TEST_CASE("brute force bound") {
  Rng rng(1);
  CHECK_THROWS_AS(brute_force_match(random_matrix(rng, 9, 9)), std::invalid_argument);
}

TEST_CASE("team match respects scale discipline") {
  const auto p = build_partition({0.2, 0.4});
  Rng rng(7);
  const auto team = init_team(p, {0.5, 0.3, 0.2}, 12, 3);
  auto preds = anchor_predictions(team, 4, rng);

  const std::vector<GtObject> gts{{Box(0.5, 0.5, 0.3, 0.3), 2}};  // scale 0.3 -> group 1
  const auto m = team_match(team, preds, gts, p, {});
  REQUIRE(m.pairs.size() == 1);
  const auto [q, o] = m.pairs[0];
  CHECK(o == 0);
  CHECK(team.group_of[q] == 1);

  for (int t = 0; t < 50; ++t) {
    std::vector<GtObject> batch;
    for (int j = 0; j < 3; ++j) {
      batch.push_back({qtest::random_box(rng), static_cast<int>(rng.uniform_int(0, 3))});
    }
    const auto mm = team_match(team, preds, batch, p, {});
    for (const auto& [qi, oj] : mm.pairs) {
      REQUIRE(team.group_of[qi] == assign_object_group(p, batch[oj].box));
    }
  }
}

TEST_CASE("K=1 team match equals plain hungarian") {
  const auto p = build_partition({});
  Rng rng(13);
  const auto team = init_team(p, {1.0}, 8, 5);
  for (int t = 0; t < 30; ++t) {
    auto preds = anchor_predictions(team, 4, rng);
    std::vector<GtObject> gts;
    const int n_obj = 1 + static_cast<int>(rng.uniform_int(0, 5));
    for (int j = 0; j < n_obj; ++j) {
      gts.push_back({qtest::random_box(rng), static_cast<int>(rng.uniform_int(0, 3))});
    }
    const auto grouped = team_match(team, preds, gts, p, {});
    const auto plain = hungarian(cost_matrix(preds, gts, {}));
    REQUIRE(grouped.pairs == plain.pairs);
    REQUIRE(grouped.total_cost == plain.total_cost);
  }
}

TEST_CASE("team match equals the masked global solve on random scenes") {
  const auto p = build_partition({0.2, 0.4});
  Rng rng(21);
  const auto team = init_team(p, {0.5, 0.3, 0.2}, 20, 9);
  for (int scene = 0; scene < 200; ++scene) {
    auto preds = anchor_predictions(team, 5, rng);
    std::vector<GtObject> gts;
    const int n_obj = 1 + static_cast<int>(rng.uniform_int(0, 3));
    for (int j = 0; j < n_obj; ++j) {
      gts.push_back({qtest::random_box(rng), static_cast<int>(rng.uniform_int(0, 4))});
    }
    const auto grouped = team_match(team, preds, gts, p, {});

    // Oracle: one global solve with cross-group entries forbidden.
    CostMatrix masked = cost_matrix(preds, gts, {});
    for (int i = 0; i < masked.rows; ++i) {
      for (int j = 0; j < masked.cols; ++j) {
        if (team.group_of[i] != assign_object_group(p, gts[j].box)) {
          masked.at(i, j) = kForbidden;
        }
      }
    }
    const auto oracle = hungarian(masked);
    REQUIRE(grouped.pairs == oracle.pairs);
    REQUIRE(grouped.total_cost == oracle.total_cost);
  }
}

TEST_CASE("object overflow lands in unmatched_objects") {
  const auto p = build_partition({0.2, 0.4});
  Rng rng(3);
  const auto team = init_team(p, {0.4, 0.4, 0.2}, 5, 2);  // sizes 2, 2, 1
  auto preds = anchor_predictions(team, 2, rng);
  std::vector<GtObject> gts;
  for (int j = 0; j < 3; ++j) {
    gts.push_back({Box(0.2 + 0.2 * j, 0.5, 0.3, 0.3), 0});  // all scale 0.3 -> group 1
  }
  const auto m = team_match(team, preds, gts, p, {});
  REQUIRE(m.pairs.size() == 2);
  REQUIRE(m.unmatched_objects.size() == 1);
  for (const auto& [qi, oj] : m.pairs) REQUIRE(team.group_of[qi] == 1);
}

TEST_CASE("team match validates prediction indexing") {
  const auto p = build_partition({0.5});
  Rng rng(4);
  const auto team = init_team(p, {0.5, 0.5}, 4, 1);
  auto preds = anchor_predictions(team, 2, rng);
  preds[2].query_index = 0;
  CHECK_THROWS_AS(team_match(team, preds, {{Box(0.5, 0.5, 0.3, 0.3), 0}}, p, {}),
                  std::invalid_argument);
}

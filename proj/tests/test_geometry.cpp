#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "qteam/geometry.hpp"
#include "qteam/rng.hpp"
#include "test_util.hpp"

using namespace qteam;

TEST_CASE("box construction validates and clamps") {
  CHECK_THROWS_AS(Box(1.5, 0.5, 0.1, 0.1), std::invalid_argument);
  CHECK_THROWS_AS(Box(0.5, -0.1, 0.1, 0.1), std::invalid_argument);
  CHECK_THROWS_AS(Box(0.5, 0.5, 0.0, 0.1), std::invalid_argument);
  CHECK_THROWS_AS(Box(0.5, 0.5, -0.2, 0.1), std::invalid_argument);
  CHECK_THROWS_AS(Box(0.5, 0.5, 1.1, 0.1), std::invalid_argument);

  const Box clamped(-1e-10, 1.0 + 1e-10, 1.0 + 1e-10, 0.5);
  CHECK(clamped.cx == 0.0);
  CHECK(clamped.cy == 1.0);
  CHECK(clamped.w == 1.0);
}

TEST_CASE("giou on the worked examples") {
  const Box b(0.5, 0.5, 0.2, 0.2);
  CHECK(giou(b, b) == Catch::Approx(1.0).margin(1e-12));

  // Disjoint corners: IoU 0, union 0.02, enclosing 0.36.
  const Box lo(0.25, 0.25, 0.1, 0.1);
  const Box hi(0.75, 0.75, 0.1, 0.1);
  CHECK(giou(lo, hi) == Catch::Approx(-17.0 / 18.0).margin(1e-12));
  CHECK(giou(lo, hi) == Catch::Approx(qtest::grid_giou(lo, hi)).margin(2e-3));

  // Containment: enclosing equals union, so GIoU collapses to IoU.
  const Box outer(0.5, 0.5, 0.4, 0.4);
  const Box inner(0.5, 0.5, 0.2, 0.2);
  CHECK(iou(outer, inner) == Catch::Approx(0.25).margin(1e-12));
  CHECK(giou(outer, inner) == Catch::Approx(0.25).margin(1e-12));
  CHECK(giou(outer, inner) == Catch::Approx(qtest::grid_giou(outer, inner)).margin(2e-3));
}

TEST_CASE("giou matches grid integration on random interior pairs") {
  Rng rng(2024);
  for (int t = 0; t < 20; ++t) {
    const Box a = qtest::random_inner_box(rng);
    const Box b = qtest::random_inner_box(rng);
    CHECK(giou(a, b) == Catch::Approx(qtest::grid_giou(a, b)).margin(2e-3));
  }
}

TEST_CASE("giou range, symmetry and iou bound") {
  Rng rng(7);
  for (int t = 0; t < 10000; ++t) {
    const Box a = qtest::random_box(rng);
    const Box b = qtest::random_box(rng);
    const double g = giou(a, b);
    REQUIRE(g >= -1.0);
    REQUIRE(g <= 1.0);
    REQUIRE(g == giou(b, a));
    REQUIRE(g <= iou(a, b) + 1e-12);
  }
}

TEST_CASE("giou gradient matches central differences") {
  Rng rng(11);
  const double h = 1e-5;
  int checked = 0;
  while (checked < 100) {
    const Box a = qtest::random_inner_box(rng, 0.1, 0.5);
    const Box b = qtest::random_inner_box(rng, 0.1, 0.5);
    // Skip kink neighborhoods: near-equal corner coordinates or near-contact
    // intersections are nondifferentiable.
    const double ax1 = a.cx - 0.5 * a.w, ax2 = a.cx + 0.5 * a.w;
    const double ay1 = a.cy - 0.5 * a.h, ay2 = a.cy + 0.5 * a.h;
    const double bx1 = b.cx - 0.5 * b.w, bx2 = b.cx + 0.5 * b.w;
    const double by1 = b.cy - 0.5 * b.h, by2 = b.cy + 0.5 * b.h;
    const double margin = 1e-3;
    if (std::abs(ax1 - bx1) < margin || std::abs(ax2 - bx2) < margin ||
        std::abs(ay1 - by1) < margin || std::abs(ay2 - by2) < margin ||
        std::abs(std::min(ax2, bx2) - std::max(ax1, bx1)) < margin ||
        std::abs(std::min(ay2, by2) - std::max(ay1, by1)) < margin) {
      continue;
    }
    const auto [value, grad] = giou_with_grad(a, b);
    const double analytic[4] = {grad.cx, grad.cy, grad.w, grad.h};
    for (int c = 0; c < 4; ++c) {
      double coords[4] = {a.cx, a.cy, a.w, a.h};
      coords[c] += h;
      const double up = giou(Box(coords[0], coords[1], coords[2], coords[3]), b);
      coords[c] -= 2 * h;
      const double dn = giou(Box(coords[0], coords[1], coords[2], coords[3]), b);
      const double fd = (up - dn) / (2 * h);
      REQUIRE(qtest::close_rel(analytic[c], fd, 1e-4));
    }
    ++checked;
  }
}

TEST_CASE("l1 distance") {
  const Box a(0.1, 0.1, 0.1, 0.1);
  const Box b(0.2, 0.2, 0.1, 0.1);
  CHECK(l1_box_distance(a, a) == 0.0);
  CHECK(l1_box_distance(a, b) == Catch::Approx(0.2).margin(1e-15));

  Rng rng(3);
  for (int t = 0; t < 1000; ++t) {
    const Box x = qtest::random_box(rng);
    const Box y = qtest::random_box(rng);
    const Box z = qtest::random_box(rng);
    // Per-field summation oracle.
    const double expect = std::abs(x.cx - y.cx) + std::abs(x.cy - y.cy) +
                          std::abs(x.w - y.w) + std::abs(x.h - y.h);
    REQUIRE(l1_box_distance(x, y) == expect);
    REQUIRE(l1_box_distance(x, y) == l1_box_distance(y, x));
    REQUIRE(l1_box_distance(x, z) <= l1_box_distance(x, y) + l1_box_distance(y, z) + 1e-12);
  }
}

TEST_CASE("center distance") {
  CHECK(center_distance(Box(0.3, 0.4, 0.2, 0.2), Box(0.3, 0.4, 0.5, 0.5)) == 0.0);
  CHECK(center_distance(Box(0.5, 0.5, 0.1, 0.1), Box(0.9, 0.5, 0.1, 0.1)) ==
        Catch::Approx(0.4).margin(1e-15));
  CHECK(center_distance(Box(0.1, 0.1, 0.1, 0.1), Box(0.4, 0.5, 0.1, 0.1)) ==
        Catch::Approx(0.5).margin(1e-15));
}

TEST_CASE("relative scale") {
  CHECK(relative_scale(Box(0.5, 0.5, 1.0, 1.0)) == 1.0);
  CHECK(relative_scale(Box(0.5, 0.5, 0.2, 0.2)) == Catch::Approx(0.2).margin(1e-15));
  CHECK(relative_scale(Box(0.5, 0.5, 0.1, 0.4)) == Catch::Approx(0.2).margin(1e-15));

  Rng rng(5);
  for (int t = 0; t < 1000; ++t) {
    const Box b = qtest::random_box(rng, 0.05);
    const double s = relative_scale(b);
    REQUIRE(s > 0.0);
    REQUIRE(s <= 1.0);
    if (b.w < 0.99) {
      REQUIRE(relative_scale(Box(b.cx, b.cy, b.w + 0.01, b.h)) > s);
    }
    if (b.h < 0.99) {
      REQUIRE(relative_scale(Box(b.cx, b.cy, b.w, b.h + 0.01)) > s);
    }
  }
}

#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>

namespace qteam {

namespace detail {

inline double checked_unit(double v, const char* field) {
  constexpr double kSlack = 1e-9;
  if (v < 0.0) {
    if (v >= -kSlack) return 0.0;
    throw std::invalid_argument(std::string("Box: ") + field + " = " + std::to_string(v) +
                                " outside [0, 1]");
  }
  if (v > 1.0) {
    if (v <= 1.0 + kSlack) return 1.0;
    throw std::invalid_argument(std::string("Box: ") + field + " = " + std::to_string(v) +
                                " outside [0, 1]");
  }
  return v;
}

inline double checked_size(double v, const char* field) {
  constexpr double kSlack = 1e-9;
  if (v <= 0.0) {
    throw std::invalid_argument(std::string("Box: ") + field + " = " + std::to_string(v) +
                                " must be positive");
  }
  if (v > 1.0) {
    if (v <= 1.0 + kSlack) return 1.0;
    throw std::invalid_argument(std::string("Box: ") + field + " = " + std::to_string(v) +
                                " outside (0, 1]");
  }
  return v;
}

}  // namespace detail

/// Axis-aligned box in normalized image coordinates, center format.
/// Centers live in [0, 1], sizes in (0, 1]. Inputs off by at most 1e-9 are
/// clamped; anything worse is rejected at construction.
struct Box {
  double cx, cy, w, h;

  Box(double cx_, double cy_, double w_, double h_)
      : cx(detail::checked_unit(cx_, "cx")),
        cy(detail::checked_unit(cy_, "cy")),
        w(detail::checked_size(w_, "w")),
        h(detail::checked_size(h_, "h")) {}
};

inline bool operator==(const Box& a, const Box& b) {
  return a.cx == b.cx && a.cy == b.cy && a.w == b.w && a.h == b.h;
}

/// Sum of absolute differences over (cx, cy, w, h).
inline double l1_box_distance(const Box& a, const Box& b) {
  return std::abs(a.cx - b.cx) + std::abs(a.cy - b.cy) + std::abs(a.w - b.w) +
         std::abs(a.h - b.h);
}

/// Euclidean distance between box centers.
inline double center_distance(const Box& a, const Box& b) {
  const double dx = a.cx - b.cx;
  const double dy = a.cy - b.cy;
  return std::sqrt(dx * dx + dy * dy);
}

/// Relative scale s = sqrt(w * h), the geometric-mean side length. Always in
/// (0, 1] for a valid box, strictly increasing in each of w and h.
inline double relative_scale(const Box& b) { return std::sqrt(b.w * b.h); }

inline double iou(const Box& a, const Box& b) {
  const double iw = std::min(a.cx + 0.5 * a.w, b.cx + 0.5 * b.w) -
                    std::max(a.cx - 0.5 * a.w, b.cx - 0.5 * b.w);
  const double ih = std::min(a.cy + 0.5 * a.h, b.cy + 0.5 * b.h) -
                    std::max(a.cy - 0.5 * a.h, b.cy - 0.5 * b.h);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.w * a.h + b.w * b.h - inter);
}

/// Generalized IoU: IoU - (enclosing - union) / enclosing. In [-1, 1];
/// equals IoU when the smallest enclosing box coincides with the union.
inline double giou(const Box& a, const Box& b) {
  const double ax1 = a.cx - 0.5 * a.w, ax2 = a.cx + 0.5 * a.w;
  const double ay1 = a.cy - 0.5 * a.h, ay2 = a.cy + 0.5 * a.h;
  const double bx1 = b.cx - 0.5 * b.w, bx2 = b.cx + 0.5 * b.w;
  const double by1 = b.cy - 0.5 * b.h, by2 = b.cy + 0.5 * b.h;

  const double iw = std::min(ax2, bx2) - std::max(ax1, bx1);
  const double ih = std::min(ay2, by2) - std::max(ay1, by1);
  const double inter = (iw > 0.0 && ih > 0.0) ? iw * ih : 0.0;
  const double uni = a.w * a.h + b.w * b.h - inter;
  const double enc = (std::max(ax2, bx2) - std::min(ax1, bx1)) *
                     (std::max(ay2, by2) - std::min(ay1, by1));
  return inter / uni - (enc - uni) / enc;
}

/// Gradient of a scalar with respect to one box's (cx, cy, w, h).
struct BoxGrad {
  double cx = 0.0, cy = 0.0, w = 0.0, h = 0.0;
};

/// GIoU value plus its gradient with respect to the first box. The function
/// is piecewise smooth; at exact edge contact or equal corner coordinates a
/// one-sided subgradient is returned (strict comparisons decide the branch).
inline std::pair<double, BoxGrad> giou_with_grad(const Box& a, const Box& b) {
  const double ax1 = a.cx - 0.5 * a.w, ax2 = a.cx + 0.5 * a.w;
  const double ay1 = a.cy - 0.5 * a.h, ay2 = a.cy + 0.5 * a.h;
  const double bx1 = b.cx - 0.5 * b.w, bx2 = b.cx + 0.5 * b.w;
  const double by1 = b.cy - 0.5 * b.h, by2 = b.cy + 0.5 * b.h;

  const double iw = std::min(ax2, bx2) - std::max(ax1, bx1);
  const double ih = std::min(ay2, by2) - std::max(ay1, by1);
  const bool overlap = iw > 0.0 && ih > 0.0;
  const double inter = overlap ? iw * ih : 0.0;
  const double uni = a.w * a.h + b.w * b.h - inter;
  const double ew = std::max(ax2, bx2) - std::min(ax1, bx1);
  const double eh = std::max(ay2, by2) - std::min(ay1, by1);
  const double enc = ew * eh;
  const double value = inter / uni - (enc - uni) / enc;

  // d(inter)/d(corner of a): only the corner currently realizing the
  // min/max moves the intersection.
  double di_x1 = 0.0, di_x2 = 0.0, di_y1 = 0.0, di_y2 = 0.0;
  if (overlap) {
    if (ax1 > bx1) di_x1 = -ih;
    if (ax2 < bx2) di_x2 = ih;
    if (ay1 > by1) di_y1 = -iw;
    if (ay2 < by2) di_y2 = iw;
  }
  // d(area_a)/d(corner).
  const double da_x1 = -a.h, da_x2 = a.h, da_y1 = -a.w, da_y2 = a.w;
  // d(enclosing)/d(corner).
  double de_x1 = 0.0, de_x2 = 0.0, de_y1 = 0.0, de_y2 = 0.0;
  if (ax1 < bx1) de_x1 = -eh;
  if (ax2 > bx2) de_x2 = eh;
  if (ay1 < by1) de_y1 = -ew;
  if (ay2 > by2) de_y2 = ew;

  // giou = inter/uni - 1 + uni/enc.
  const auto corner = [&](double di, double da, double de) {
    const double du = da - di;
    return (di * uni - inter * du) / (uni * uni) + (du * enc - uni * de) / (enc * enc);
  };
  const double gx1 = corner(di_x1, da_x1, de_x1);
  const double gx2 = corner(di_x2, da_x2, de_x2);
  const double gy1 = corner(di_y1, da_y1, de_y1);
  const double gy2 = corner(di_y2, da_y2, de_y2);

  BoxGrad g;
  g.cx = gx1 + gx2;
  g.cy = gy1 + gy2;
  g.w = 0.5 * (gx2 - gx1);
  g.h = 0.5 * (gy2 - gy1);
  return {value, g};
}

}  // namespace qteam

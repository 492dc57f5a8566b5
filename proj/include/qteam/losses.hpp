#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "qteam/geometry.hpp"
#include "qteam/matching.hpp"
#include "qteam/partition.hpp"

namespace qteam {

struct LossWeights {
  double cls = 2.0;
  double l1 = 5.0;
  double giou = 2.0;
  double pos = 5.0;
};

/// The four unweighted loss parts plus their weighted sum.
struct LossBreakdown {
  double cls = 0.0;
  double l1 = 0.0;
  double giou = 0.0;
  double pos = 0.0;
  double total = 0.0;
  LossWeights weights;
};

inline LossBreakdown total_loss(double cls, double l1, double giou_part, double pos,
                                const LossWeights& w) {
  if (w.cls < 0.0 || w.l1 < 0.0 || w.giou < 0.0 || w.pos < 0.0) {
    throw std::invalid_argument("total_loss: negative weight");
  }
  LossBreakdown b;
  b.cls = cls;
  b.l1 = l1;
  b.giou = giou_part;
  b.pos = pos;
  b.weights = w;
  b.total = w.cls * cls + w.l1 * l1 + w.giou * giou_part + w.pos * pos;
  return b;
}

struct FocalParams {
  double alpha = 0.25;
  double gamma = 2.0;
};

struct ClassificationLossResult {
  double value = 0.0;
  /// d(value)/d(logit) per query per class, where prob = sigmoid(logit).
  std::vector<std::vector<double>> dlogits;
};

/// Per-class sigmoid focal loss, averaged over queries. Matched queries
/// target their object's class; unmatched queries target all-zero
/// (background). The gradient is returned with respect to logits, which
/// keeps it finite even at prob 0 or 1.
inline ClassificationLossResult classification_loss(const std::vector<Prediction>& preds,
                                                    const MatchResult& match,
                                                    const std::vector<GtObject>& gts,
                                                    const FocalParams& fp = {}) {
  const int n = static_cast<int>(preds.size());
  ClassificationLossResult out;
  out.dlogits.resize(n);
  if (n == 0) return out;

  std::vector<int> target(n, -1);
  for (const auto& [qi, oj] : match.pairs) {
    if (qi < 0 || qi >= n) throw std::invalid_argument("classification_loss: bad query index");
    target[qi] = gts[oj].class_id;
  }

  const double a = fp.alpha, g = fp.gamma;
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    const auto& probs = preds[i].class_probs;
    out.dlogits[i].assign(probs.size(), 0.0);
    for (std::size_t c = 0; c < probs.size(); ++c) {
      const double p = probs[c];
      if (target[i] == static_cast<int>(c)) {
        const double q = 1.0 - p;
        if (q > 0.0 && p < 1.0) {
          const double logp = std::log(std::max(p, 1e-300));
          sum += -a * std::pow(q, g) * logp;
          // d/dlogit = dfl/dp * p(1-p); both factors stay bounded.
          out.dlogits[i][c] = a * g * p * std::pow(q, g) * logp - a * std::pow(q, g + 1.0);
        }
      } else {
        if (p > 0.0) {
          const double log1mp = std::log(std::max(1.0 - p, 1e-300));
          sum += -(1.0 - a) * std::pow(p, g) * log1mp;
          out.dlogits[i][c] =
              -(1.0 - a) * g * std::pow(p, g) * (1.0 - p) * log1mp + (1.0 - a) * std::pow(p, g + 1.0);
        }
      }
    }
  }
  out.value = sum / n;
  const double inv_n = 1.0 / n;
  for (auto& row : out.dlogits) {
    for (double& d : row) d *= inv_n;
  }
  return out;
}

struct BoxLossResult {
  double l1 = 0.0;
  double giou = 0.0;
  /// Per-query gradients with respect to the predicted box; zero for
  /// unmatched queries.
  std::vector<BoxGrad> dl1;
  std::vector<BoxGrad> dgiou;
};

/// L1 and GIoU box losses averaged over matched pairs only (both zero when
/// nothing is matched). giou part follows the 1 - GIoU convention.
inline BoxLossResult box_losses(const std::vector<Prediction>& preds, const MatchResult& match,
                                const std::vector<GtObject>& gts) {
  const int n = static_cast<int>(preds.size());
  BoxLossResult out;
  out.dl1.assign(n, {});
  out.dgiou.assign(n, {});
  const int m = static_cast<int>(match.pairs.size());
  if (m == 0) return out;

  const double inv_m = 1.0 / m;
  const auto sgn = [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); };
  for (const auto& [qi, oj] : match.pairs) {
    const Box& pb = preds[qi].box;
    const Box& gb = gts[oj].box;
    out.l1 += l1_box_distance(pb, gb);
    out.dl1[qi].cx = sgn(pb.cx - gb.cx) * inv_m;
    out.dl1[qi].cy = sgn(pb.cy - gb.cy) * inv_m;
    out.dl1[qi].w = sgn(pb.w - gb.w) * inv_m;
    out.dl1[qi].h = sgn(pb.h - gb.h) * inv_m;

    const auto [gv, gg] = giou_with_grad(pb, gb);
    out.giou += 1.0 - gv;
    out.dgiou[qi].cx = -gg.cx * inv_m;
    out.dgiou[qi].cy = -gg.cy * inv_m;
    out.dgiou[qi].w = -gg.w * inv_m;
    out.dgiou[qi].h = -gg.h * inv_m;
  }
  out.l1 *= inv_m;
  out.giou *= inv_m;
  return out;
}

struct PositionLossResult {
  double value = 0.0;
  std::vector<int> violators;  // queries whose center strayed beyond eta
  /// d(value)/d(predicted center) per query; zero for non-violators.
  std::vector<std::array<double, 2>> dcenters;
};

/// Mean center deviation over the queries whose prediction center strayed
/// more than eta from their anchor center; zero when no query violates.
/// The violator set and its size are treated as locally constant, so the
/// gradient is the subgradient of the active piece.
inline PositionLossResult position_loss(const std::vector<Box>& anchors,
                                        const std::vector<Prediction>& preds, double eta) {
  if (!(eta > 0.0)) throw std::invalid_argument("position_loss: eta must be positive");
  if (anchors.size() != preds.size()) {
    throw std::invalid_argument("position_loss: anchor/prediction count mismatch");
  }
  const int n = static_cast<int>(preds.size());
  PositionLossResult out;
  out.dcenters.assign(n, {0.0, 0.0});
  for (int i = 0; i < n; ++i) {
    if (center_distance(preds[i].box, anchors[i]) > eta) out.violators.push_back(i);
  }
  if (out.violators.empty()) return out;

  const double inv_sigma = 1.0 / static_cast<double>(out.violators.size());
  for (int i : out.violators) {
    const double dx = preds[i].box.cx - anchors[i].cx;
    const double dy = preds[i].box.cy - anchors[i].cy;
    const double d = std::sqrt(dx * dx + dy * dy);
    out.value += d * inv_sigma;
    out.dcenters[i][0] = dx / d * inv_sigma;
    out.dcenters[i][1] = dy / d * inv_sigma;
  }
  return out;
}

inline PositionLossResult position_loss(const QueryTeam& team,
                                        const std::vector<Prediction>& preds, double eta) {
  return position_loss(team.anchors, preds, eta);
}

}  // namespace qteam

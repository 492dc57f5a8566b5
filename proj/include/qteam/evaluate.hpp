#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "qteam/decoder.hpp"
#include "qteam/geometry.hpp"
#include "qteam/mask.hpp"
#include "qteam/matching.hpp"
#include "qteam/partition.hpp"
#include "qteam/scene.hpp"

namespace qteam {

enum class GroupingMode { kRelative, kAbsolute };

struct EvalOptions {
  CostWeights match_weights;
  double eta = 0.25;
  GroupingMode grouping = GroupingMode::kRelative;
  double iou_threshold = 0.5;
};

struct Metrics {
  double ap = 0.0;
  std::vector<double> ap_buckets;
  double scale_std_mean = 0.0;         // mean per-query std of matched scales
  double center_within_eta_frac = 0.0; // matched predictions near their anchor
};

namespace detail {

struct RankedDetection {
  double conf;
  int scene, query;
  int gt_bucket;  // bucket of the greedily matched object, -1 if unmatched
};

inline bool rank_before(const RankedDetection& a, const RankedDetection& b) {
  if (a.conf != b.conf) return a.conf > b.conf;
  if (a.scene != b.scene) return a.scene < b.scene;
  return a.query < b.query;
}

/// 101-point interpolated AP over a ranked TP/FP sequence.
inline double interpolated_ap(const std::vector<char>& tp_flags, int npos) {
  if (npos == 0) return 0.0;
  const int n = static_cast<int>(tp_flags.size());
  std::vector<double> precision(n), recall(n);
  int tp = 0;
  for (int i = 0; i < n; ++i) {
    tp += tp_flags[i] != 0;
    precision[i] = static_cast<double>(tp) / (i + 1);
    recall[i] = static_cast<double>(tp) / npos;
  }
  // Running-max precision from the right makes the envelope monotone.
  for (int i = n - 2; i >= 0; --i) precision[i] = std::max(precision[i], precision[i + 1]);
  double ap = 0.0;
  int idx = 0;
  for (int r = 0; r <= 100; ++r) {
    const double target = r / 100.0;
    while (idx < n && recall[idx] < target) ++idx;
    if (idx < n) ap += precision[idx];
  }
  return ap / 101.0;
}

}  // namespace detail

/// Greedy confidence-ranked detection AP at a single IoU threshold, overall
/// and per scale bucket. A detection is the argmax class of a prediction
/// with its max probability as confidence; zero-confidence predictions are
/// discarded. Matching is greedy per scene in rank order against same-class
/// objects; for bucket AP, detections matched to an out-of-bucket object are
/// ignored rather than counted as false positives.
inline Metrics detection_metrics(const std::vector<std::vector<Prediction>>& scene_preds,
                                 const std::vector<Scene>& scenes,
                                 const ScalePartition& buckets, double iou_threshold) {
  if (scenes.empty()) throw std::invalid_argument("detection_metrics: empty dataset");
  if (scene_preds.size() != scenes.size()) {
    throw std::invalid_argument("detection_metrics: prediction/scene count mismatch");
  }

  std::vector<detail::RankedDetection> dets;
  int npos_total = 0;
  std::vector<int> npos_bucket(buckets.group_count(), 0);
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    const auto& gts = scenes[s].objects;
    npos_total += static_cast<int>(gts.size());
    for (const auto& g : gts) npos_bucket[assign_object_group(buckets, g.box)] += 1;

    struct LocalDet {
      double conf;
      int cls, query;
      const Box* box;
    };
    std::vector<LocalDet> local;
    for (const Prediction& p : scene_preds[s]) {
      int cls = 0;
      double conf = 0.0;
      for (std::size_t c = 0; c < p.class_probs.size(); ++c) {
        if (p.class_probs[c] > conf) {
          conf = p.class_probs[c];
          cls = static_cast<int>(c);
        }
      }
      if (conf <= 0.0) continue;
      local.push_back({conf, cls, p.query_index, &p.box});
    }
    std::sort(local.begin(), local.end(), [](const LocalDet& a, const LocalDet& b) {
      if (a.conf != b.conf) return a.conf > b.conf;
      return a.query < b.query;
    });

    std::vector<char> gt_used(gts.size(), 0);
    for (const LocalDet& d : local) {
      int best = -1;
      double best_iou = 0.0;
      for (std::size_t j = 0; j < gts.size(); ++j) {
        if (gt_used[j] || gts[j].class_id != d.cls) continue;
        const double v = iou(*d.box, gts[j].box);
        if (v >= iou_threshold && v > best_iou) {
          best_iou = v;
          best = static_cast<int>(j);
        }
      }
      detail::RankedDetection rd{d.conf, static_cast<int>(s), d.query, -1};
      if (best >= 0) {
        gt_used[best] = 1;
        rd.gt_bucket = assign_object_group(buckets, gts[best].box);
      }
      dets.push_back(rd);
    }
  }
  std::sort(dets.begin(), dets.end(), detail::rank_before);

  Metrics m;
  {
    std::vector<char> tp(dets.size());
    for (std::size_t i = 0; i < dets.size(); ++i) tp[i] = dets[i].gt_bucket >= 0;
    m.ap = detail::interpolated_ap(tp, npos_total);
  }
  for (int b = 0; b < buckets.group_count(); ++b) {
    std::vector<char> tp;
    tp.reserve(dets.size());
    for (const auto& d : dets) {
      if (d.gt_bucket >= 0 && d.gt_bucket != b) continue;  // ignored
      tp.push_back(d.gt_bucket == b);
    }
    m.ap_buckets.push_back(detail::interpolated_ap(tp, npos_bucket[b]));
  }
  return m;
}

/// Per-query diagnostics from group-wise matching of the final predictions:
/// the mean per-query spread of matched object scales, and the fraction of
/// matched predictions whose center stayed within eta of their anchor.
inline void matched_diagnostics(const std::vector<std::vector<Prediction>>& scene_preds,
                                const std::vector<Scene>& scenes, const QueryTeam& team,
                                const ScalePartition& match_partition, const EvalOptions& opts,
                                Metrics& m) {
  std::vector<std::vector<double>> matched_scales(team.size());
  long within = 0, total = 0;
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    const auto& gts = scenes[s].objects;
    if (gts.empty()) continue;
    MatchResult match;
    if (opts.grouping == GroupingMode::kAbsolute) {
      const auto groups = absolute_object_groups(match_partition, gts,
                                                 scene_size_factor(scenes[s].seed));
      match = team_match_grouped(team, scene_preds[s], gts, groups, opts.match_weights);
    } else {
      match = team_match(team, scene_preds[s], gts, match_partition, opts.match_weights);
    }
    for (const auto& [qi, oj] : match.pairs) {
      matched_scales[qi].push_back(relative_scale(gts[oj].box));
      total += 1;
      if (center_distance(scene_preds[s][qi].box, team.anchors[qi]) <= opts.eta) within += 1;
    }
  }
  double std_sum = 0.0;
  int std_count = 0;
  for (const auto& scales : matched_scales) {
    if (scales.size() < 2) continue;
    double mean = 0.0, sq = 0.0;
    for (double v : scales) mean += v;
    mean /= static_cast<double>(scales.size());
    for (double v : scales) sq += (v - mean) * (v - mean);
    std_sum += std::sqrt(sq / static_cast<double>(scales.size()));
    std_count += 1;
  }
  m.scale_std_mean = std_count > 0 ? std_sum / std_count : 0.0;
  m.center_within_eta_frac = total > 0 ? static_cast<double>(within) / total : 0.0;
}

/// Decodes every scene and reports the full metric set. match_partition
/// drives the group-wise matcher; bucket_partition only buckets the AP
/// numbers (kept fixed across ablation arms).
inline Metrics evaluate(const ModelParams& params, const std::vector<Scene>& scenes,
                        const QueryTeam& team, const ScalePartition& match_partition,
                        const ScalePartition& bucket_partition, const EvalOptions& opts) {
  if (scenes.empty()) throw std::invalid_argument("evaluate: empty dataset");
  const AttentionMask mask = build_attention_mask(team.group_sizes);
  std::vector<std::vector<Prediction>> scene_preds;
  scene_preds.reserve(scenes.size());
  for (const Scene& s : scenes) {
    scene_preds.push_back(decode(s.features, team, params, mask).final_preds());
  }
  Metrics m = detection_metrics(scene_preds, scenes, bucket_partition, opts.iou_threshold);
  matched_diagnostics(scene_preds, scenes, team, match_partition, opts, m);
  return m;
}

}  // namespace qteam

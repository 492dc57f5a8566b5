#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "qteam/checkpoint.hpp"
#include "qteam/config.hpp"
#include "qteam/decoder.hpp"
#include "qteam/evaluate.hpp"
#include "qteam/preference.hpp"
#include "qteam/scene.hpp"

namespace qteam {

namespace detail {

inline constexpr std::uint64_t kSaltTeam = 1;
inline constexpr std::uint64_t kSaltParams = 2;
inline constexpr std::uint64_t kSaltShuffle = 3;
inline constexpr std::uint64_t kSaltTrainScenes = 4;
inline constexpr std::uint64_t kSaltValScenes = 5;

inline std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

}  // namespace detail

inline const char* kMetricsCsvHeader =
    "epoch,ap,ap_bucket0,ap_bucket1,ap_bucket2,scale_std_mean,center_within_eta_frac,"
    "loss_total,loss_cls,loss_l1,loss_giou,loss_pos";

struct EpochRow {
  int epoch = 0;
  Metrics metrics;
  LossBreakdown train_loss;  // epoch mean over training scenes
};

struct TrainReport {
  std::vector<EpochRow> rows;
  std::string metrics_csv;  // full CSV, also written to <out>/metrics.csv
  Metrics final_metrics;
  ModelParams params;
  QueryTeam team;
  ScalePartition partition;
};

namespace detail {

inline std::string csv_row(const EpochRow& r) {
  std::string line = std::to_string(r.epoch);
  const auto bucket = [&](std::size_t i) {
    return i < r.metrics.ap_buckets.size() ? r.metrics.ap_buckets[i] : 0.0;
  };
  for (double v : {r.metrics.ap, bucket(0), bucket(1), bucket(2), r.metrics.scale_std_mean,
                   r.metrics.center_within_eta_frac, r.train_loss.total, r.train_loss.cls,
                   r.train_loss.l1, r.train_loss.giou, r.train_loss.pos}) {
    line += "," + fmt_double(v);
  }
  return line;
}

inline nlohmann::json anchors_json(const std::vector<Box>& anchors) {
  nlohmann::json arr = nlohmann::json::array();
  for (const Box& b : anchors) arr.push_back({b.cx, b.cy, b.w, b.h});
  return arr;
}

}  // namespace detail

/// Full training run: seeded scene synthesis, minibatch gradient descent
/// with momentum and a late-stage learning-rate drop, a validation pass per
/// epoch, and optional preference extraction at each epoch boundary. Every
/// number is a deterministic function of the config.
inline TrainReport train(const RunConfig& cfg, const std::string& out_dir = "",
                         const std::vector<Scene>* train_override = nullptr) {
  const ScalePartition partition = build_partition(cfg.partition_bounds);
  const ScalePartition buckets = build_partition(cfg.eval_bucket_bounds);
  QueryTeam team = init_team(partition, cfg.proportions, cfg.n_queries,
                             Rng::mix(cfg.seed, detail::kSaltTeam));
  const AttentionMask mask = build_attention_mask(team.group_sizes);
  ModelParams params = init_params(cfg.model, Rng::mix(cfg.seed, detail::kSaltParams));

  const SceneConfig scene_cfg = cfg.scene_config();
  const std::vector<Scene> train_scenes =
      train_override != nullptr
          ? *train_override
          : generate_dataset(scene_cfg, cfg.seed, cfg.train_scenes, detail::kSaltTrainScenes);
  const std::vector<Scene> val_scenes =
      generate_dataset(scene_cfg, cfg.seed, cfg.val_scenes, detail::kSaltValScenes);
  if (train_scenes.empty() || val_scenes.empty()) {
    throw std::invalid_argument("train: need at least one train and one val scene");
  }

  SceneLossOptions loss_opts;
  loss_opts.lambda = cfg.lambda;
  if (!cfg.position_constraint) loss_opts.lambda.pos = 0.0;
  loss_opts.match_weights = cfg.match_weights;
  loss_opts.focal = cfg.focal;
  loss_opts.eta = cfg.eta;

  EvalOptions eval_opts;
  eval_opts.match_weights = cfg.match_weights;
  eval_opts.eta = cfg.eta;
  eval_opts.grouping = cfg.grouping;

  ModelParams grads = zeros_like(params);
  ModelParams velocity = zeros_like(params);  // first moment under adam
  ModelParams second_moment = zeros_like(params);
  long step = 0;
  const bool adam = cfg.optimizer.algo == "adam";
  Rng shuffle_rng(Rng::mix(cfg.seed, detail::kSaltShuffle));
  PreferenceStore store(team.size(), cfg.tau);

  TrainReport report;
  report.metrics_csv = std::string(kMetricsCsvHeader) + "\n";
  nlohmann::json run_log;
  run_log["epochs"] = nlohmann::json::array();

  const int lr_drop_epoch =
      static_cast<int>(cfg.optimizer.epochs * cfg.optimizer.lr_drop_at);
  std::vector<int> order(train_scenes.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.optimizer.epochs; ++epoch) {
    const double lr = epoch >= lr_drop_epoch ? cfg.optimizer.lr * cfg.optimizer.lr_drop_factor
                                             : cfg.optimizer.lr;
    shuffle_rng.shuffle(order);

    double sum_cls = 0.0, sum_l1 = 0.0, sum_giou = 0.0, sum_pos = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.optimizer.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.optimizer.batch_size);
      for (auto& ref : tensor_refs(grads)) ref.mat->setZero();
      for (std::size_t b = start; b < stop; ++b) {
        const Scene& scene = train_scenes[order[b]];
        SceneLossOptions opts = loss_opts;
        std::vector<int> abs_groups;
        if (cfg.grouping == GroupingMode::kAbsolute) {
          abs_groups = absolute_object_groups(partition, scene.objects,
                                              scene_size_factor(scene.seed));
          opts.object_groups = &abs_groups;
        }
        SceneLoss sl;
        try {
          sl = scene_loss_and_gradients(scene.features, scene.objects, team, params, mask,
                                        partition, opts, &grads);
        } catch (const std::runtime_error& e) {
          throw std::runtime_error("train: diverged at epoch " + std::to_string(epoch) +
                                   ", scene " + std::to_string(order[b]) + ": " + e.what());
        }
        sum_cls += sl.breakdown.cls;
        sum_l1 += sl.breakdown.l1;
        sum_giou += sl.breakdown.giou;
        sum_pos += sl.breakdown.pos;
      }
      const double inv_batch = 1.0 / static_cast<double>(stop - start);
      auto vel_refs = tensor_refs(velocity);
      auto mom2_refs = tensor_refs(second_moment);
      auto grad_refs = tensor_refs(grads);
      auto par_refs = tensor_refs(params);
      double grad_scale = inv_batch;
      if (cfg.optimizer.clip_norm > 0.0) {
        double sq = 0.0;
        for (auto& ref : grad_refs) sq += ref.mat->squaredNorm();
        const double norm = std::sqrt(sq) * inv_batch;
        if (norm > cfg.optimizer.clip_norm) grad_scale *= cfg.optimizer.clip_norm / norm;
      }
      ++step;
      const double b1 = cfg.optimizer.momentum, b2 = cfg.optimizer.beta2;
      const double bias1 = 1.0 - std::pow(b1, static_cast<double>(step));
      const double bias2 = 1.0 - std::pow(b2, static_cast<double>(step));
      for (std::size_t t = 0; t < par_refs.size(); ++t) {
        if (adam) {
          const MatrixXd g = grad_scale * (*grad_refs[t].mat);
          *vel_refs[t].mat = b1 * (*vel_refs[t].mat) + (1.0 - b1) * g;
          *mom2_refs[t].mat =
              (b2 * mom2_refs[t].mat->array() + (1.0 - b2) * g.array().square()).matrix();
          par_refs[t].mat->array() -= lr * (vel_refs[t].mat->array() / bias1) /
                                      ((mom2_refs[t].mat->array() / bias2).sqrt() + 1e-8);
        } else {
          *vel_refs[t].mat = b1 * (*vel_refs[t].mat) + grad_scale * (*grad_refs[t].mat);
          *par_refs[t].mat -= lr * (*vel_refs[t].mat);
        }
      }
    }
    const double inv_n = 1.0 / static_cast<double>(train_scenes.size());
    const LossBreakdown epoch_loss = total_loss(sum_cls * inv_n, sum_l1 * inv_n,
                                                sum_giou * inv_n, sum_pos * inv_n,
                                                loss_opts.lambda);

    // Validation pass: decode once per scene, reuse for preference
    // recording and for metrics.
    std::vector<std::vector<Prediction>> val_preds;
    val_preds.reserve(val_scenes.size());
    for (const Scene& scene : val_scenes) {
      val_preds.push_back(decode(scene.features, team, params, mask).final_preds());
    }
    if (cfg.preference_extraction) {
      for (const auto& preds : val_preds) {
        for (const Prediction& p : preds) {
          double conf = 0.0;
          for (double v : p.class_probs) conf = std::max(conf, v);
          store.record(p.query_index, p.box, conf);
        }
      }
    }
    Metrics metrics = detection_metrics(val_preds, val_scenes, buckets, eval_opts.iou_threshold);
    matched_diagnostics(val_preds, val_scenes, team, partition, eval_opts, metrics);

    EpochRow row{epoch, metrics, epoch_loss};
    report.metrics_csv += detail::csv_row(row) + "\n";
    report.rows.push_back(row);

    if (cfg.preference_extraction) {
      nlohmann::json entry;
      entry["epoch"] = epoch;
      entry["anchors_before"] = detail::anchors_json(team.anchors);
      std::vector<Box> updated = extract_preferences(store, team);
      int drifted = 0;
      for (int i = 0; i < team.size(); ++i) {
        if (!partition.ranges[team.group_of[i]].contains(relative_scale(updated[i]))) ++drifted;
      }
      team.anchors = updated;
      store.clear();
      entry["anchors_after"] = detail::anchors_json(team.anchors);
      entry["anchors_outside_group_range"] = drifted;
      run_log["epochs"].push_back(std::move(entry));
    }
  }

  report.final_metrics = report.rows.back().metrics;
  report.params = params;
  report.team = team;
  report.partition = partition;

  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    std::ofstream csv(out_dir + "/metrics.csv");
    csv << report.metrics_csv;
    run_log["final_anchors"] = detail::anchors_json(team.anchors);
    run_log["config"] = to_json(cfg);
    std::ofstream log(out_dir + "/run_log.json");
    log << run_log.dump(2) << "\n";
    save_checkpoint(params, out_dir + "/checkpoint.bin", out_dir + "/checkpoint.json");
  }
  return report;
}

}  // namespace qteam

#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "qteam/decoder.hpp"
#include "qteam/evaluate.hpp"
#include "qteam/losses.hpp"
#include "qteam/matching.hpp"
#include "qteam/scene.hpp"

namespace qteam {

/// "adam" keeps per-tensor moment buffers updated in a fixed order, so runs
/// stay bit-exact reproducible; "sgd" is plain momentum descent.
struct OptimizerConfig {
  std::string algo = "adam";
  double lr = 1e-3;
  double momentum = 0.9;     // beta1 under adam
  double beta2 = 0.999;
  int batch_size = 16;
  int epochs = 20;
  double lr_drop_factor = 0.1;
  double lr_drop_at = 0.8;   // fraction of epochs after which lr drops
  double clip_norm = 0.1;    // global gradient-norm clip; 0 disables
};

/// Full experiment description; everything a run needs, and the unit of
/// determinism: (RunConfig, seed) fixes every emitted number.
struct RunConfig {
  std::vector<double> partition_bounds{0.2, 0.4};
  std::vector<double> proportions{0.65, 0.20, 0.15};
  int n_queries = 60;
  LossWeights lambda;
  CostWeights match_weights;
  FocalParams focal;
  double eta = 0.25;
  int tau = 300;
  ModelConfig model;
  OptimizerConfig optimizer;
  GroupingMode grouping = GroupingMode::kRelative;
  bool position_constraint = true;
  bool preference_extraction = true;
  // Scene generation; scale_bounds defaults to partition_bounds but stays
  // fixed across ablation arms so every arm sees identical scenes.
  std::vector<double> scene_scale_bounds{0.2, 0.4};
  std::vector<double> scene_mixture{0.65, 0.20, 0.15};
  int scene_min_objects = 2;
  int scene_max_objects = 6;
  double scene_noise = 0.05;
  int scene_distractors = 6;
  int train_scenes = 2000;
  int val_scenes = 500;
  // AP bucketing for reports; defaults to partition_bounds.
  std::vector<double> eval_bucket_bounds{0.2, 0.4};
  std::uint64_t seed = 1;

  SceneConfig scene_config() const {
    SceneConfig sc;
    sc.scale_buckets = build_partition(scene_scale_bounds);
    sc.mixture = scene_mixture;
    sc.min_objects = scene_min_objects;
    sc.max_objects = scene_max_objects;
    sc.classes = model.classes;
    sc.noise = scene_noise;
    sc.distractors = scene_distractors;
    sc.feature_dim = model.feature_dim;
    return sc;
  }
};

inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j;
  j["partition_bounds"] = c.partition_bounds;
  j["proportions"] = c.proportions;
  j["n_queries"] = c.n_queries;
  j["lambda"] = {{"cls", c.lambda.cls}, {"l1", c.lambda.l1}, {"giou", c.lambda.giou},
                 {"pos", c.lambda.pos}};
  j["match_weights"] = {{"cls", c.match_weights.cls}, {"l1", c.match_weights.l1},
                        {"giou", c.match_weights.giou}};
  j["focal"] = {{"alpha", c.focal.alpha}, {"gamma", c.focal.gamma}};
  j["eta"] = c.eta;
  j["tau"] = c.tau;
  j["model"] = {{"embed_dim", c.model.embed_dim}, {"layers", c.model.layers},
                {"classes", c.model.classes}, {"feature_dim", c.model.feature_dim},
                {"ffn_dim", c.model.ffn_dim}, {"pe_base", c.model.pe_base}};
  j["optimizer"] = {{"algo", c.optimizer.algo}, {"lr", c.optimizer.lr},
                    {"momentum", c.optimizer.momentum}, {"beta2", c.optimizer.beta2},
                    {"batch_size", c.optimizer.batch_size}, {"epochs", c.optimizer.epochs},
                    {"lr_drop_factor", c.optimizer.lr_drop_factor},
                    {"lr_drop_at", c.optimizer.lr_drop_at},
                    {"clip_norm", c.optimizer.clip_norm}};
  j["grouping"] = c.grouping == GroupingMode::kAbsolute ? "absolute" : "relative";
  j["position_constraint"] = c.position_constraint;
  j["preference_extraction"] = c.preference_extraction;
  j["scene"] = {{"scale_bounds", c.scene_scale_bounds}, {"mixture", c.scene_mixture},
                {"min_objects", c.scene_min_objects}, {"max_objects", c.scene_max_objects},
                {"noise", c.scene_noise}, {"distractors", c.scene_distractors}};
  j["train_scenes"] = c.train_scenes;
  j["val_scenes"] = c.val_scenes;
  j["eval_bucket_bounds"] = c.eval_bucket_bounds;
  j["seed"] = c.seed;
  return j;
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  const auto get = [&](const char* key, auto& dst) {
    if (j.contains(key)) dst = j.at(key).get<std::decay_t<decltype(dst)>>();
  };
  get("partition_bounds", c.partition_bounds);
  get("proportions", c.proportions);
  get("n_queries", c.n_queries);
  if (j.contains("lambda")) {
    const auto& l = j.at("lambda");
    c.lambda.cls = l.value("cls", c.lambda.cls);
    c.lambda.l1 = l.value("l1", c.lambda.l1);
    c.lambda.giou = l.value("giou", c.lambda.giou);
    c.lambda.pos = l.value("pos", c.lambda.pos);
  }
  if (j.contains("match_weights")) {
    const auto& w = j.at("match_weights");
    c.match_weights.cls = w.value("cls", c.match_weights.cls);
    c.match_weights.l1 = w.value("l1", c.match_weights.l1);
    c.match_weights.giou = w.value("giou", c.match_weights.giou);
  }
  if (j.contains("focal")) {
    c.focal.alpha = j.at("focal").value("alpha", c.focal.alpha);
    c.focal.gamma = j.at("focal").value("gamma", c.focal.gamma);
  }
  get("eta", c.eta);
  get("tau", c.tau);
  if (j.contains("model")) {
    const auto& m = j.at("model");
    c.model.embed_dim = m.value("embed_dim", c.model.embed_dim);
    c.model.layers = m.value("layers", c.model.layers);
    c.model.classes = m.value("classes", c.model.classes);
    c.model.feature_dim = m.value("feature_dim", c.model.feature_dim);
    c.model.ffn_dim = m.value("ffn_dim", c.model.ffn_dim);
    c.model.pe_base = m.value("pe_base", c.model.pe_base);
  }
  if (j.contains("optimizer")) {
    const auto& o = j.at("optimizer");
    c.optimizer.algo = o.value("algo", c.optimizer.algo);
    if (c.optimizer.algo != "adam" && c.optimizer.algo != "sgd") {
      throw std::invalid_argument("config: unknown optimizer '" + c.optimizer.algo + "'");
    }
    c.optimizer.lr = o.value("lr", c.optimizer.lr);
    c.optimizer.beta2 = o.value("beta2", c.optimizer.beta2);
    c.optimizer.momentum = o.value("momentum", c.optimizer.momentum);
    c.optimizer.batch_size = o.value("batch_size", c.optimizer.batch_size);
    c.optimizer.epochs = o.value("epochs", c.optimizer.epochs);
    c.optimizer.lr_drop_factor = o.value("lr_drop_factor", c.optimizer.lr_drop_factor);
    c.optimizer.lr_drop_at = o.value("lr_drop_at", c.optimizer.lr_drop_at);
    c.optimizer.clip_norm = o.value("clip_norm", c.optimizer.clip_norm);
  }
  if (j.contains("grouping")) {
    const std::string g = j.at("grouping").get<std::string>();
    if (g == "absolute") {
      c.grouping = GroupingMode::kAbsolute;
    } else if (g == "relative") {
      c.grouping = GroupingMode::kRelative;
    } else {
      throw std::invalid_argument("config: unknown grouping mode '" + g + "'");
    }
  }
  get("position_constraint", c.position_constraint);
  get("preference_extraction", c.preference_extraction);
  c.scene_scale_bounds = c.partition_bounds;
  c.scene_mixture = c.proportions;
  if (j.contains("scene")) {
    const auto& s = j.at("scene");
    if (s.contains("scale_bounds")) c.scene_scale_bounds = s.at("scale_bounds").get<std::vector<double>>();
    if (s.contains("mixture")) c.scene_mixture = s.at("mixture").get<std::vector<double>>();
    c.scene_min_objects = s.value("min_objects", c.scene_min_objects);
    c.scene_max_objects = s.value("max_objects", c.scene_max_objects);
    c.scene_noise = s.value("noise", c.scene_noise);
    c.scene_distractors = s.value("distractors", c.scene_distractors);
  }
  get("train_scenes", c.train_scenes);
  get("val_scenes", c.val_scenes);
  c.eval_bucket_bounds = c.partition_bounds;
  get("eval_bucket_bounds", c.eval_bucket_bounds);
  get("seed", c.seed);
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_run_config: cannot open " + path);
  nlohmann::json j;
  in >> j;
  return run_config_from_json(j);
}

/// FNV-1a over the canonical JSON dump; ties report rows to their config.
inline std::string config_hash(const RunConfig& c) {
  const std::string s = to_json(c).dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

}  // namespace qteam

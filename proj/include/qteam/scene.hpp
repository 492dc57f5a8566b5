#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "qteam/geometry.hpp"
#include "qteam/matching.hpp"
#include "qteam/partition.hpp"
#include "qteam/rng.hpp"

namespace qteam {

/// Synthetic scene generator configuration. Ground-truth scales are drawn
/// from a mixture over the scale buckets; features are noisy per-object
/// descriptor tokens plus box-shaped distractor tokens.
struct SceneConfig {
  ScalePartition scale_buckets;    // buckets the mixture refers to
  std::vector<double> mixture;     // per bucket, sums to 1
  int min_objects = 2;
  int max_objects = 6;
  int classes = 8;
  double noise = 0.05;
  int distractors = 6;
  int feature_dim = 24;

  int informative_dims() const { return 4 + classes + 1; }

  void validate() const {
    if (min_objects < 0 || max_objects < min_objects) {
      throw std::invalid_argument("SceneConfig: bad object count range");
    }
    if (static_cast<int>(mixture.size()) != scale_buckets.group_count()) {
      throw std::invalid_argument("SceneConfig: mixture size != bucket count");
    }
    double sum = 0.0;
    for (double m : mixture) {
      if (m < 0.0) throw std::invalid_argument("SceneConfig: negative mixture weight");
      sum += m;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
      throw std::invalid_argument("SceneConfig: mixture sums to " + std::to_string(sum));
    }
    if (noise < 0.0) throw std::invalid_argument("SceneConfig: negative noise");
    if (classes < 1) throw std::invalid_argument("SceneConfig: need at least one class");
    if (feature_dim < informative_dims()) {
      throw std::invalid_argument("SceneConfig: feature_dim " + std::to_string(feature_dim) +
                                  " < informative layout " + std::to_string(informative_dims()));
    }
  }
};

struct Scene {
  std::vector<GtObject> objects;
  Eigen::MatrixXd features;  // (objects + distractors) x feature_dim
  std::uint64_t seed = 0;
};

/// Per-scene synthetic image-size factor, derived from the scene seed so it
/// survives dataset round-trips without being stored. Used only by the
/// absolute-scale grouping variant.
inline double scene_size_factor(std::uint64_t scene_seed) {
  Rng rng(Rng::mix(scene_seed, 0x5ca1eULL));
  return std::exp(rng.uniform(std::log(0.75), std::log(1.3333333333333333)));
}

/// Buckets objects by absolute scale: relative scale times the scene's size
/// factor, clamped into (0, 1], looked up against the same numeric bounds.
inline std::vector<int> absolute_object_groups(const ScalePartition& p,
                                               const std::vector<GtObject>& gts,
                                               double size_factor) {
  std::vector<int> groups(gts.size());
  for (std::size_t j = 0; j < gts.size(); ++j) {
    const double abs_scale = std::min(relative_scale(gts[j].box) * size_factor, 1.0);
    groups[j] = assign_scale_group(p, abs_scale);
  }
  return groups;
}

/// Deterministic scene synthesis. Object tokens carry the box coordinates,
/// a class one-hot and an objectness flag; distractor tokens mimic the
/// layout with the flag off. Gaussian noise of the configured level is added
/// to every feature entry.
inline Scene generate_scene(const SceneConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  Scene scene;
  scene.seed = seed;

  const int n = static_cast<int>(rng.uniform_int(cfg.min_objects, cfg.max_objects));
  scene.objects.reserve(n);
  for (int i = 0; i < n; ++i) {
    const double pick = rng.uniform();
    int bucket = 0;
    double acc = 0.0;
    for (std::size_t k = 0; k < cfg.mixture.size(); ++k) {
      acc += cfg.mixture[k];
      if (pick < acc) {
        bucket = static_cast<int>(k);
        break;
      }
      bucket = static_cast<int>(k);
    }
    const ScaleRange& r = cfg.scale_buckets.ranges[bucket];
    // s_max - u * (s_max - s_min) lands in (s_min, s_max] for u in [0, 1).
    const double s = r.s_max - rng.uniform() * (r.s_max - r.s_min);
    const double a_lo = std::max(0.5, s * s);
    const double a_hi = std::min(2.0, 1.0 / (s * s));
    const double aspect = std::exp(rng.uniform(std::log(a_lo), std::log(a_hi)));
    const double w = std::min(s * std::sqrt(aspect), 1.0);
    const double h = std::min(s / std::sqrt(aspect), 1.0);
    const double cx = rng.uniform(0.5 * w, 1.0 - 0.5 * w);
    const double cy = rng.uniform(0.5 * h, 1.0 - 0.5 * h);
    const int cls = static_cast<int>(rng.uniform_int(0, cfg.classes - 1));
    scene.objects.push_back({Box(cx, cy, w, h), cls});
  }

  const int t = n + cfg.distractors;
  scene.features = Eigen::MatrixXd::Zero(t, cfg.feature_dim);
  for (int i = 0; i < n; ++i) {
    const GtObject& o = scene.objects[i];
    scene.features(i, 0) = o.box.cx;
    scene.features(i, 1) = o.box.cy;
    scene.features(i, 2) = o.box.w;
    scene.features(i, 3) = o.box.h;
    scene.features(i, 4 + o.class_id) = 1.0;
    scene.features(i, 4 + cfg.classes) = 1.0;
  }
  for (int d = 0; d < cfg.distractors; ++d) {
    const int row = n + d;
    for (int c = 0; c < 4; ++c) scene.features(row, c) = rng.uniform();
    const int fake_cls = static_cast<int>(rng.uniform_int(0, cfg.classes - 1));
    scene.features(row, 4 + fake_cls) = 1.0;
  }
  if (cfg.noise > 0.0) {
    for (int i = 0; i < t; ++i) {
      for (int c = 0; c < cfg.feature_dim; ++c) scene.features(i, c) += cfg.noise * rng.normal();
    }
  }
  return scene;
}

inline std::vector<Scene> generate_dataset(const SceneConfig& cfg, std::uint64_t base_seed,
                                           int count, std::uint64_t salt) {
  std::vector<Scene> scenes;
  scenes.reserve(count);
  for (int i = 0; i < count; ++i) {
    scenes.push_back(generate_scene(cfg, Rng::mix(Rng::mix(base_seed, salt), i)));
  }
  return scenes;
}

/// One scene per line: {"objects":[{"box":[cx,cy,w,h],"class":k}],
/// "features":[[...]],"seed":n}.
inline void write_scenes_jsonl(const std::vector<Scene>& scenes, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_scenes_jsonl: cannot open " + path);
  for (const Scene& s : scenes) {
    nlohmann::json j;
    j["objects"] = nlohmann::json::array();
    for (const GtObject& o : s.objects) {
      j["objects"].push_back({{"box", {o.box.cx, o.box.cy, o.box.w, o.box.h}},
                              {"class", o.class_id}});
    }
    j["features"] = nlohmann::json::array();
    for (Eigen::Index r = 0; r < s.features.rows(); ++r) {
      nlohmann::json row = nlohmann::json::array();
      for (Eigen::Index c = 0; c < s.features.cols(); ++c) row.push_back(s.features(r, c));
      j["features"].push_back(std::move(row));
    }
    j["seed"] = s.seed;
    out << j.dump() << "\n";
  }
}

inline std::vector<Scene> read_scenes_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_scenes_jsonl: cannot open " + path);
  std::vector<Scene> scenes;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const nlohmann::json j = nlohmann::json::parse(line);
    Scene s;
    for (const auto& jo : j.at("objects")) {
      const auto& b = jo.at("box");
      s.objects.push_back({Box(b.at(0), b.at(1), b.at(2), b.at(3)), jo.at("class").get<int>()});
    }
    const auto& feats = j.at("features");
    const int rows = static_cast<int>(feats.size());
    const int cols = rows > 0 ? static_cast<int>(feats.at(0).size()) : 0;
    s.features = Eigen::MatrixXd::Zero(rows, cols);
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) s.features(r, c) = feats.at(r).at(c).get<double>();
    }
    s.seed = j.at("seed").get<std::uint64_t>();
    scenes.push_back(std::move(s));
  }
  return scenes;
}

}  // namespace qteam

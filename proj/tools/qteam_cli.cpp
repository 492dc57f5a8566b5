// Command-line harness: dataset synthesis, training, evaluation, the
// five-arm ablation, and a one-off matcher over a scene file.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "qteam/ablate.hpp"
#include "qteam/checkpoint.hpp"
#include "qteam/config.hpp"
#include "qteam/evaluate.hpp"
#include "qteam/scene.hpp"
#include "qteam/train.hpp"

namespace {

qteam::RunConfig load_config_or_default(const std::string& path, std::optional<std::uint64_t> seed) {
  qteam::RunConfig cfg = path.empty() ? qteam::RunConfig{} : qteam::load_run_config(path);
  if (seed) cfg.seed = *seed;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Scale-grouped query set prediction on synthetic scenes"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "out", dataset_path, checkpoint_prefix;
  std::optional<std::uint64_t> seed;
  int scene_index = 0;
  int n_seeds = 3;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON run configuration");
    cmd->add_option("--seed", seed, "Override the config seed");
    cmd->add_option("--out", out_dir, "Output directory");
  };

  auto* generate = app.add_subcommand("generate", "Write a scene dataset (JSON Lines)");
  add_common(generate);

  auto* train_cmd = app.add_subcommand("train", "Train on synthetic or loaded scenes");
  add_common(train_cmd);
  train_cmd->add_option("--dataset", dataset_path, "Training scenes (JSONL); default synthesizes");

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  add_common(eval_cmd);
  eval_cmd->add_option("--dataset", dataset_path, "Scenes to evaluate (JSONL)")->required();
  eval_cmd->add_option("--checkpoint", checkpoint_prefix,
                       "Checkpoint prefix (expects <prefix>.bin and <prefix>.json)")
      ->required();

  auto* ablate_cmd = app.add_subcommand("ablate", "Run the S1..S5 ablation");
  add_common(ablate_cmd);
  ablate_cmd->add_option("--seeds", n_seeds, "Number of seeds per setting");

  auto* match_cmd = app.add_subcommand("match", "Group-wise match one scene, print JSON");
  add_common(match_cmd);
  match_cmd->add_option("--dataset", dataset_path, "Scene file (JSONL)")->required();
  match_cmd->add_option("--index", scene_index, "Scene line to match");
  match_cmd->add_option("--checkpoint", checkpoint_prefix,
                        "Optional checkpoint; without it anchors act as predictions");

  CLI11_PARSE(app, argc, argv);

  try {
    const qteam::RunConfig cfg = load_config_or_default(config_path, seed);

    if (*generate) {
      std::filesystem::create_directories(out_dir);
      const auto scenes = qteam::generate_dataset(cfg.scene_config(), cfg.seed, cfg.train_scenes,
                                                  qteam::detail::kSaltTrainScenes);
      const std::string path = out_dir + "/dataset.jsonl";
      qteam::write_scenes_jsonl(scenes, path);
      std::cout << "wrote " << scenes.size() << " scenes to " << path << "\n";
    } else if (*train_cmd) {
      std::optional<std::vector<qteam::Scene>> loaded;
      if (!dataset_path.empty()) loaded = qteam::read_scenes_jsonl(dataset_path);
      const auto report = qteam::train(cfg, out_dir, loaded ? &*loaded : nullptr);
      std::cout << "final ap=" << report.final_metrics.ap
                << " scale_std=" << report.final_metrics.scale_std_mean
                << " center_frac=" << report.final_metrics.center_within_eta_frac << "\n"
                << "artifacts in " << out_dir << "\n";
    } else if (*eval_cmd) {
      const auto scenes = qteam::read_scenes_jsonl(dataset_path);
      const auto params =
          qteam::load_checkpoint(checkpoint_prefix + ".bin", checkpoint_prefix + ".json");
      const auto partition = qteam::build_partition(cfg.partition_bounds);
      const auto buckets = qteam::build_partition(cfg.eval_bucket_bounds);
      const auto team = qteam::init_team(partition, cfg.proportions, cfg.n_queries,
                                         qteam::Rng::mix(cfg.seed, qteam::detail::kSaltTeam));
      qteam::EvalOptions opts;
      opts.match_weights = cfg.match_weights;
      opts.eta = cfg.eta;
      opts.grouping = cfg.grouping;
      const auto m = qteam::evaluate(params, scenes, team, partition, buckets, opts);
      nlohmann::json j{{"ap", m.ap},
                       {"ap_buckets", m.ap_buckets},
                       {"scale_std_mean", m.scale_std_mean},
                       {"center_within_eta_frac", m.center_within_eta_frac}};
      std::cout << j.dump(2) << "\n";
    } else if (*ablate_cmd) {
      const auto report = qteam::ablate(cfg, n_seeds, out_dir);
      for (const auto& row : report.rows) {
        std::cout << row.setting << " mean_ap=" << qteam::detail::fmt_double(row.mean_ap) << "\n";
      }
      std::cout << "s3/s1 scale-std ratio=" << report.s3_s1_scale_std_ratio << "\n"
                << "reports in " << out_dir << "\n";
    } else if (*match_cmd) {
      const auto scenes = qteam::read_scenes_jsonl(dataset_path);
      if (scene_index < 0 || scene_index >= static_cast<int>(scenes.size())) {
        throw std::runtime_error("match: scene index out of range");
      }
      const auto& scene = scenes[scene_index];
      const auto partition = qteam::build_partition(cfg.partition_bounds);
      const auto team = qteam::init_team(partition, cfg.proportions, cfg.n_queries,
                                         qteam::Rng::mix(cfg.seed, qteam::detail::kSaltTeam));
      std::vector<qteam::Prediction> preds;
      if (!checkpoint_prefix.empty()) {
        const auto params =
            qteam::load_checkpoint(checkpoint_prefix + ".bin", checkpoint_prefix + ".json");
        const auto mask = qteam::build_attention_mask(team.group_sizes);
        preds = qteam::decode(scene.features, team, params, mask).final_preds();
      } else {
        for (int i = 0; i < team.size(); ++i) {
          qteam::Prediction p{team.anchors[i],
                              std::vector<double>(static_cast<std::size_t>(cfg.model.classes), 0.5),
                              i};
          preds.push_back(std::move(p));
        }
      }
      const auto match = qteam::team_match(team, preds, scene.objects, partition,
                                           cfg.match_weights);
      nlohmann::json j;
      j["pairs"] = nlohmann::json::array();
      for (const auto& [q, o] : match.pairs) j["pairs"].push_back({{"query", q}, {"object", o}});
      j["unmatched_objects"] = match.unmatched_objects;
      j["total_cost"] = match.total_cost;
      std::cout << j.dump(2) << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

#pragma once

#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "qteam/config.hpp"
#include "qteam/train.hpp"

namespace qteam {

/// The five ablation arms, cumulative as in the study this mirrors:
///   S1 baseline (single group), S2 + grouping by absolute scales,
///   S3 + grouping by relative scales, S4 + position constraint,
///   S5 + preference extraction.
inline std::vector<std::pair<std::string, RunConfig>> ablation_settings(const RunConfig& base) {
  std::vector<std::pair<std::string, RunConfig>> settings;

  RunConfig s1 = base;
  s1.partition_bounds.clear();
  s1.proportions = {1.0};
  s1.grouping = GroupingMode::kRelative;
  s1.position_constraint = false;
  s1.preference_extraction = false;
  settings.emplace_back("S1", s1);

  RunConfig s2 = base;
  s2.grouping = GroupingMode::kAbsolute;
  s2.position_constraint = false;
  s2.preference_extraction = false;
  settings.emplace_back("S2", s2);

  RunConfig s3 = base;
  s3.grouping = GroupingMode::kRelative;
  s3.position_constraint = false;
  s3.preference_extraction = false;
  settings.emplace_back("S3", s3);

  RunConfig s4 = s3;
  s4.position_constraint = true;
  settings.emplace_back("S4", s4);

  RunConfig s5 = s4;
  s5.preference_extraction = true;
  settings.emplace_back("S5", s5);

  // Scene synthesis and AP bucketing stay fixed so every arm sees the same
  // data and the same report axes.
  for (auto& [name, cfg] : settings) {
    cfg.scene_scale_bounds = base.scene_scale_bounds;
    cfg.scene_mixture = base.scene_mixture;
    cfg.eval_bucket_bounds = base.partition_bounds;
  }
  return settings;
}

struct AblationRow {
  std::string setting;
  std::vector<double> seed_ap;
  double mean_ap = 0.0;
  double mean_scale_std = 0.0;
  double mean_center_frac = 0.0;
  std::string config_hash;
};

struct AblationReport {
  std::vector<AblationRow> rows;  // S1..S5
  double s3_s1_scale_std_ratio = 0.0;
  std::string csv;
  nlohmann::json json;
};

/// Runs every setting on the same seed list (base.seed + i) and collects the
/// final-epoch metrics. Writes report.csv / report.json when out_dir given.
inline AblationReport ablate(const RunConfig& base, int n_seeds = 3,
                             const std::string& out_dir = "") {
  if (n_seeds < 1) throw std::invalid_argument("ablate: need at least one seed");
  const auto settings = ablation_settings(base);
  const std::string hash = config_hash(base);

  AblationReport report;
  report.csv =
      "setting,seed,ap,ap_bucket0,ap_bucket1,ap_bucket2,scale_std_mean,center_within_eta_frac\n";
  report.json["config_hash"] = hash;
  report.json["config"] = to_json(base);
  report.json["settings"] = nlohmann::json::array();

  for (const auto& [name, cfg] : settings) {
    AblationRow row;
    row.setting = name;
    row.config_hash = hash;
    nlohmann::json setting_json;
    setting_json["name"] = name;
    setting_json["runs"] = nlohmann::json::array();
    for (int s = 0; s < n_seeds; ++s) {
      RunConfig run_cfg = cfg;
      run_cfg.seed = base.seed + static_cast<std::uint64_t>(s);
      const TrainReport tr = train(run_cfg);
      const Metrics& m = tr.final_metrics;
      row.seed_ap.push_back(m.ap);
      row.mean_ap += m.ap;
      row.mean_scale_std += m.scale_std_mean;
      row.mean_center_frac += m.center_within_eta_frac;
      const auto bucket = [&](std::size_t i) {
        return i < m.ap_buckets.size() ? m.ap_buckets[i] : 0.0;
      };
      report.csv += name + "," + std::to_string(run_cfg.seed);
      for (double v : {m.ap, bucket(0), bucket(1), bucket(2), m.scale_std_mean,
                       m.center_within_eta_frac}) {
        report.csv += "," + detail::fmt_double(v);
      }
      report.csv += "\n";
      setting_json["runs"].push_back({{"seed", run_cfg.seed},
                                      {"ap", m.ap},
                                      {"ap_buckets", m.ap_buckets},
                                      {"scale_std_mean", m.scale_std_mean},
                                      {"center_within_eta_frac", m.center_within_eta_frac}});
    }
    row.mean_ap /= n_seeds;
    row.mean_scale_std /= n_seeds;
    row.mean_center_frac /= n_seeds;
    setting_json["mean_ap"] = row.mean_ap;
    setting_json["mean_scale_std"] = row.mean_scale_std;
    setting_json["mean_center_within_eta_frac"] = row.mean_center_frac;
    setting_json["config_hash"] = hash;
    report.json["settings"].push_back(std::move(setting_json));
    report.rows.push_back(std::move(row));
  }

  report.s3_s1_scale_std_ratio =
      report.rows[0].mean_scale_std > 0.0
          ? report.rows[2].mean_scale_std / report.rows[0].mean_scale_std
          : 0.0;
  report.json["s3_s1_scale_std_ratio"] = report.s3_s1_scale_std_ratio;
  report.json["s1_center_within_eta_frac"] = report.rows[0].mean_center_frac;
  report.json["s4_center_within_eta_frac"] = report.rows[3].mean_center_frac;
  report.json["s5_center_within_eta_frac"] = report.rows[4].mean_center_frac;

  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    std::ofstream csv(out_dir + "/report.csv");
    csv << report.csv;
    std::ofstream js(out_dir + "/report.json");
    js << report.json.dump(2) << "\n";
  }
  return report;
}

}  // namespace qteam

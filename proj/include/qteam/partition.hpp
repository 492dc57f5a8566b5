#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "qteam/geometry.hpp"
#include "qteam/rng.hpp"

namespace qteam {

/// Half-open relative-scale range (s_min, s_max].
struct ScaleRange {
  double s_min, s_max;
  bool contains(double s) const { return s > s_min && s <= s_max; }
};

/// Ordered, contiguous scale ranges covering (0, 1]. Built via
/// build_partition, which establishes the invariants.
struct ScalePartition {
  std::vector<ScaleRange> ranges;
  int group_count() const { return static_cast<int>(ranges.size()); }
};

/// Builds K = bounds.size() + 1 contiguous ranges from strictly increasing
/// interior bounds. An empty bound list yields the single range (0, 1]
/// (grouping disabled).
inline ScalePartition build_partition(const std::vector<double>& bounds) {
  double prev = 0.0;
  for (double b : bounds) {
    if (b <= 0.0 || b >= 1.0) {
      throw std::invalid_argument("build_partition: bound " + std::to_string(b) +
                                  " outside (0, 1)");
    }
    if (b <= prev) {
      throw std::invalid_argument("build_partition: bound " + std::to_string(b) +
                                  " not strictly increasing after " + std::to_string(prev));
    }
    prev = b;
  }
  ScalePartition p;
  double lo = 0.0;
  for (double b : bounds) {
    p.ranges.push_back({lo, b});
    lo = b;
  }
  p.ranges.push_back({lo, 1.0});
  return p;
}

/// Index of the unique range containing scale s in (0, 1]. Contiguity makes
/// this the first range whose s_max >= s.
inline int assign_scale_group(const ScalePartition& p, double s) {
  if (!(s > 0.0) || s > 1.0) {
    throw std::invalid_argument("assign_scale_group: scale " + std::to_string(s) +
                                " outside (0, 1]");
  }
  const auto it = std::lower_bound(p.ranges.begin(), p.ranges.end(), s,
                                   [](const ScaleRange& r, double v) { return r.s_max < v; });
  return static_cast<int>(it - p.ranges.begin());
}

inline int assign_object_group(const ScalePartition& p, const Box& b) {
  return assign_scale_group(p, relative_scale(b));
}

/// N query anchors with group labels. Each group occupies a contiguous index
/// block; blocks appear in group order.
struct QueryTeam {
  std::vector<Box> anchors;
  std::vector<int> group_of;
  std::vector<int> group_sizes;

  int size() const { return static_cast<int>(anchors.size()); }
  int group_count() const { return static_cast<int>(group_sizes.size()); }

  /// Index block [begin, end) of group k.
  std::pair<int, int> block(int k) const {
    int begin = 0;
    for (int g = 0; g < k; ++g) begin += group_sizes[g];
    return {begin, begin + group_sizes[k]};
  }
};

/// Initializes N queries split across the partition's groups. Group sizes
/// follow floor(proportion * N) with leftover queries handed to the largest
/// remainders (ties to the lower group index). Anchor centers are uniform on
/// the unit square; group-k anchors start with w = h = (s_min + s_max) / 2.
inline QueryTeam init_team(const ScalePartition& p, const std::vector<double>& proportions,
                           int n_total, std::uint64_t seed) {
  const int k_groups = p.group_count();
  if (static_cast<int>(proportions.size()) != k_groups) {
    throw std::invalid_argument("init_team: expected " + std::to_string(k_groups) +
                                " proportions, got " + std::to_string(proportions.size()));
  }
  double sum = 0.0;
  for (double q : proportions) {
    if (q < 0.0) throw std::invalid_argument("init_team: negative proportion");
    sum += q;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw std::invalid_argument("init_team: proportions sum to " + std::to_string(sum));
  }
  if (n_total < k_groups) {
    throw std::invalid_argument("init_team: " + std::to_string(n_total) +
                                " queries cannot cover " + std::to_string(k_groups) +
                                " groups");
  }

  std::vector<int> sizes(k_groups);
  std::vector<double> remainder(k_groups);
  int assigned = 0;
  for (int k = 0; k < k_groups; ++k) {
    const double exact = proportions[k] * n_total;
    sizes[k] = static_cast<int>(std::floor(exact));
    remainder[k] = exact - sizes[k];
    assigned += sizes[k];
  }
  std::vector<int> order(k_groups);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return remainder[a] > remainder[b];
  });
  for (int i = 0; i < n_total - assigned; ++i) sizes[order[i % k_groups]] += 1;

  QueryTeam team;
  team.group_sizes = sizes;
  Rng rng(seed);
  for (int k = 0; k < k_groups; ++k) {
    const double wh = 0.5 * (p.ranges[k].s_min + p.ranges[k].s_max);
    for (int i = 0; i < sizes[k]; ++i) {
      const double cx = rng.uniform();
      const double cy = rng.uniform();
      team.anchors.emplace_back(cx, cy, wh, wh);
      team.group_of.push_back(k);
    }
  }
  return team;
}

}  // namespace qteam

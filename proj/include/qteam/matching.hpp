#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "qteam/geometry.hpp"
#include "qteam/partition.hpp"

namespace qteam {

/// Sentinel cost for pairs that must never be assigned. Kept non-finite so a
/// forced forbidden assignment surfaces as infeasibility instead of a large
/// but silently absorbed cost.
inline constexpr double kForbidden = std::numeric_limits<double>::infinity();

struct Prediction {
  Box box;
  std::vector<double> class_probs;  // independent per-class confidences
  int query_index = -1;
};

struct GtObject {
  Box box;
  int class_id = 0;
};

struct CostWeights {
  double cls = 2.0;
  double l1 = 5.0;
  double giou = 2.0;
};

/// Dense rectangular cost matrix. row_ids / col_ids map rows and columns
/// back to query and object identities, so submatrices keep global indexing.
struct CostMatrix {
  int rows = 0, cols = 0;
  std::vector<double> costs;
  std::vector<int> row_ids, col_ids;

  double at(int i, int j) const { return costs[static_cast<std::size_t>(i) * cols + j]; }
  double& at(int i, int j) { return costs[static_cast<std::size_t>(i) * cols + j]; }
};

struct MatchResult {
  std::vector<std::pair<int, int>> pairs;  // (query id, object id), sorted by query id
  std::vector<int> unmatched_objects;      // sorted ascending
  double total_cost = 0.0;
};

/// DETR-style matching cost: w_cls * (1 - p[class]) + w_l1 * L1 + w_giou *
/// (1 - GIoU), one entry per (prediction, object) pair.
inline CostMatrix cost_matrix(const std::vector<Prediction>& preds,
                              const std::vector<GtObject>& gts, const CostWeights& w) {
  if (w.cls < 0.0 || w.l1 < 0.0 || w.giou < 0.0) {
    throw std::invalid_argument("cost_matrix: negative weight");
  }
  CostMatrix c;
  c.rows = static_cast<int>(preds.size());
  c.cols = static_cast<int>(gts.size());
  c.costs.resize(static_cast<std::size_t>(c.rows) * c.cols);
  c.row_ids.resize(c.rows);
  c.col_ids.resize(c.cols);
  for (int i = 0; i < c.rows; ++i) c.row_ids[i] = preds[i].query_index >= 0 ? preds[i].query_index : i;
  std::iota(c.col_ids.begin(), c.col_ids.end(), 0);
  for (int i = 0; i < c.rows; ++i) {
    for (int j = 0; j < c.cols; ++j) {
      const int cls = gts[j].class_id;
      if (cls < 0 || cls >= static_cast<int>(preds[i].class_probs.size())) {
        throw std::invalid_argument("cost_matrix: class id " + std::to_string(cls) +
                                    " out of range");
      }
      c.at(i, j) = w.cls * (1.0 - preds[i].class_probs[cls]) +
                   w.l1 * l1_box_distance(preds[i].box, gts[j].box) +
                   w.giou * (1.0 - giou(preds[i].box, gts[j].box));
    }
  }
  return c;
}

namespace detail {

// Canonical total: sum selected entries in ascending row order so that two
// solvers agreeing on the pair set agree bitwise on the cost.
inline void finalize_match(const CostMatrix& c, const std::vector<std::pair<int, int>>& local_pairs,
                           MatchResult& out) {
  std::vector<std::pair<int, int>> sorted = local_pairs;
  std::sort(sorted.begin(), sorted.end());
  out.total_cost = 0.0;
  std::vector<char> col_used(c.cols, 0);
  for (const auto& [i, j] : sorted) {
    out.total_cost += c.at(i, j);
    out.pairs.emplace_back(c.row_ids[i], c.col_ids[j]);
    col_used[j] = 1;
  }
  std::sort(out.pairs.begin(), out.pairs.end());
  for (int j = 0; j < c.cols; ++j) {
    if (!col_used[j]) out.unmatched_objects.push_back(c.col_ids[j]);
  }
  std::sort(out.unmatched_objects.begin(), out.unmatched_objects.end());
}

// Shortest-augmenting-path assignment with potentials on an n x m matrix,
// n <= m. a(i, j) may be +inf (forbidden). Returns col -> row (-1 if free).
// Throws if no full assignment of the n rows avoids forbidden entries.
inline std::vector<int> solve_rect_assignment(int n, int m,
                                              const std::vector<double>& a) {
  const double inf = std::numeric_limits<double>::infinity();
  // Shift so all finite entries are nonnegative; the optimum is unchanged
  // because every complete assignment has exactly n entries.
  double cmin = 0.0;
  for (double v : a) {
    if (std::isnan(v)) throw std::invalid_argument("hungarian: NaN cost entry");
    if (v < cmin) cmin = v;
  }
  const auto cost = [&](int i, int j) {
    const double v = a[static_cast<std::size_t>(i) * m + j];
    return v == inf ? inf : v - cmin;
  };

  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0), minv(m + 1, 0.0);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);
  std::vector<char> used(m + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      int j1 = -1;
      double delta = inf;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      if (j1 < 0 || !(delta < inf)) {
        throw std::runtime_error(
            "hungarian: every completion of the assignment uses a forbidden pair");
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> row_of_col(m, -1);
  for (int j = 1; j <= m; ++j) {
    if (p[j] != 0) row_of_col[j - 1] = p[j] - 1;
  }
  return row_of_col;
}

}  // namespace detail

/// Exact minimum-cost assignment of min(rows, cols) pairs. Forbidden entries
/// are never selected; if they make a full-size assignment impossible the
/// call throws.
inline MatchResult hungarian(const CostMatrix& c) {
  MatchResult out;
  if (c.rows == 0 || c.cols == 0) {
    for (int j = 0; j < c.cols; ++j) out.unmatched_objects.push_back(c.col_ids[j]);
    return out;
  }
  std::vector<std::pair<int, int>> local;
  if (c.rows <= c.cols) {
    const auto row_of_col = detail::solve_rect_assignment(c.rows, c.cols, c.costs);
    for (int j = 0; j < c.cols; ++j) {
      if (row_of_col[j] >= 0) local.emplace_back(row_of_col[j], j);
    }
  } else {
    std::vector<double> t(static_cast<std::size_t>(c.cols) * c.rows);
    for (int i = 0; i < c.rows; ++i) {
      for (int j = 0; j < c.cols; ++j) t[static_cast<std::size_t>(j) * c.rows + i] = c.at(i, j);
    }
    const auto col_of_row = detail::solve_rect_assignment(c.cols, c.rows, t);
    for (int i = 0; i < c.rows; ++i) {
      if (col_of_row[i] >= 0) local.emplace_back(i, col_of_row[i]);
    }
  }
  detail::finalize_match(c, local, out);
  return out;
}

/// Exhaustive-enumeration optimum, usable when min(rows, cols) <= 8. Serves
/// as the independent ground truth for the solver above.
inline MatchResult brute_force_match(const CostMatrix& c) {
  const int n = std::min(c.rows, c.cols);
  if (n > 8) {
    throw std::invalid_argument("brute_force_match: min side " + std::to_string(n) +
                                " exceeds enumeration bound 8");
  }
  MatchResult out;
  if (n == 0) {
    for (int j = 0; j < c.cols; ++j) out.unmatched_objects.push_back(c.col_ids[j]);
    return out;
  }
  const bool rows_small = c.rows <= c.cols;
  const int small = rows_small ? c.rows : c.cols;
  const int large = rows_small ? c.cols : c.rows;

  std::vector<int> pick(small, -1);
  std::vector<char> used(large, 0);
  std::vector<int> best;
  double best_cost = std::numeric_limits<double>::infinity();
  const auto entry = [&](int s, int l) { return rows_small ? c.at(s, l) : c.at(l, s); };

  const auto recurse = [&](auto&& self, int s, double acc) -> void {
    if (s == small) {
      if (acc < best_cost) {
        best_cost = acc;
        best.assign(pick.begin(), pick.end());
      }
      return;
    }
    for (int l = 0; l < large; ++l) {
      if (used[l]) continue;
      const double e = entry(s, l);
      if (e == kForbidden) continue;
      used[l] = 1;
      pick[s] = l;
      self(self, s + 1, acc + e);
      used[l] = 0;
    }
  };
  recurse(recurse, 0, 0.0);
  if (best.empty()) {
    throw std::runtime_error(
        "brute_force_match: every completion of the assignment uses a forbidden pair");
  }
  std::vector<std::pair<int, int>> local;
  for (int s = 0; s < small; ++s) {
    local.emplace_back(rows_small ? s : best[s], rows_small ? best[s] : s);
  }
  detail::finalize_match(c, local, out);
  return out;
}

/// Group-wise matching: objects are bucketed by relative scale, each group's
/// queries are matched only against that bucket, and the disjoint per-group
/// assignments are joined. Groups holding more objects than queries leave
/// the excess unmatched (reported, and warned once per call).
inline MatchResult team_match_grouped(const QueryTeam& team, const std::vector<Prediction>& preds,
                                      const std::vector<GtObject>& gts,
                                      const std::vector<int>& object_groups,
                                      const CostWeights& weights) {
  if (static_cast<int>(preds.size()) != team.size()) {
    throw std::invalid_argument("team_match: prediction count " + std::to_string(preds.size()) +
                                " does not match team size " + std::to_string(team.size()));
  }
  for (int i = 0; i < static_cast<int>(preds.size()); ++i) {
    if (preds[i].query_index >= 0 && preds[i].query_index != i) {
      throw std::invalid_argument("team_match: prediction " + std::to_string(i) +
                                  " carries query index " + std::to_string(preds[i].query_index));
    }
  }
  if (object_groups.size() != gts.size()) {
    throw std::invalid_argument("team_match: object group list size mismatch");
  }
  const CostMatrix full = cost_matrix(preds, gts, weights);

  MatchResult out;
  std::vector<std::pair<int, int>> all_pairs;
  for (int k = 0; k < team.group_count(); ++k) {
    const auto [begin, end] = team.block(k);
    std::vector<int> cols;
    for (int j = 0; j < static_cast<int>(gts.size()); ++j) {
      if (object_groups[j] == k) cols.push_back(j);
    }
    if (cols.empty()) continue;
    const int n_rows = end - begin;
    if (static_cast<int>(cols.size()) > n_rows) {
      std::fprintf(stderr,
                   "team_match: group %d has %zu objects for %d queries; excess unmatched\n", k,
                   cols.size(), n_rows);
    }
    CostMatrix sub;
    sub.rows = n_rows;
    sub.cols = static_cast<int>(cols.size());
    sub.costs.resize(static_cast<std::size_t>(sub.rows) * sub.cols);
    for (int i = 0; i < sub.rows; ++i) {
      sub.row_ids.push_back(begin + i);
      for (int j = 0; j < sub.cols; ++j) sub.at(i, j) = full.at(begin + i, cols[j]);
    }
    sub.col_ids = cols;
    const MatchResult part = hungarian(sub);
    all_pairs.insert(all_pairs.end(), part.pairs.begin(), part.pairs.end());
  }

  // Re-finalize on the full matrix so the joined cost is bitwise identical
  // to a masked global solve selecting the same pairs.
  std::vector<std::pair<int, int>> local;
  for (const auto& [q, o] : all_pairs) local.emplace_back(q, o);
  detail::finalize_match(full, local, out);
  return out;
}

inline MatchResult team_match(const QueryTeam& team, const std::vector<Prediction>& preds,
                              const std::vector<GtObject>& gts, const ScalePartition& p,
                              const CostWeights& weights) {
  std::vector<int> object_groups(gts.size());
  for (std::size_t j = 0; j < gts.size(); ++j) {
    object_groups[j] = assign_object_group(p, gts[j].box);
  }
  return team_match_grouped(team, preds, gts, object_groups, weights);
}

}  // namespace qteam

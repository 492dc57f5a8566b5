#pragma once

#include <algorithm>
#include <stdexcept>
#include <string>
#include <vector>

#include "qteam/geometry.hpp"
#include "qteam/partition.hpp"

namespace qteam {

struct PreferenceEntry {
  Box box;
  double confidence;
};

/// Per-query bounded collection of the highest-confidence prediction boxes
/// seen so far. Entries are kept sorted by confidence descending; insertion
/// is stable among equals and a full store only admits strictly better
/// confidences, so the retained set always equals sort-and-truncate over the
/// full record sequence.
class PreferenceStore {
 public:
  PreferenceStore(int n_queries, int capacity) : entries_(n_queries), capacity_(capacity) {
    if (n_queries < 1) throw std::invalid_argument("PreferenceStore: need at least one query");
    if (capacity < 1) throw std::invalid_argument("PreferenceStore: capacity must be positive");
  }

  void record(int query_index, const Box& box, double confidence) {
    if (query_index < 0 || query_index >= static_cast<int>(entries_.size())) {
      throw std::invalid_argument("PreferenceStore::record: unknown query index " +
                                  std::to_string(query_index));
    }
    if (confidence < 0.0 || confidence > 1.0) {
      throw std::invalid_argument("PreferenceStore::record: confidence " +
                                  std::to_string(confidence) + " outside [0, 1]");
    }
    auto& list = entries_[query_index];
    if (static_cast<int>(list.size()) == capacity_ && confidence <= list.back().confidence) {
      return;
    }
    const auto pos = std::upper_bound(
        list.begin(), list.end(), confidence,
        [](double c, const PreferenceEntry& e) { return c > e.confidence; });
    list.insert(pos, {box, confidence});
    if (static_cast<int>(list.size()) > capacity_) list.pop_back();
  }

  const std::vector<PreferenceEntry>& entries(int query_index) const {
    return entries_.at(query_index);
  }

  int capacity() const { return capacity_; }
  int query_count() const { return static_cast<int>(entries_.size()); }

  void clear() {
    for (auto& list : entries_) list.clear();
  }

 private:
  std::vector<std::vector<PreferenceEntry>> entries_;
  int capacity_;
};

/// Fuses each query's retained boxes into a new anchor by per-coordinate
/// arithmetic mean, clamped back to valid box bounds (sizes floored at
/// 1e-3). Queries with an empty store keep their current anchor. Group
/// membership is untouched; only ground-truth-free predictions enter.
inline std::vector<Box> extract_preferences(const PreferenceStore& store, const QueryTeam& team) {
  if (store.query_count() != team.size()) {
    throw std::invalid_argument("extract_preferences: store/team size mismatch");
  }
  std::vector<Box> anchors;
  anchors.reserve(team.size());
  for (int i = 0; i < team.size(); ++i) {
    const auto& list = store.entries(i);
    if (list.empty()) {
      anchors.push_back(team.anchors[i]);
      continue;
    }
    double cx = 0.0, cy = 0.0, w = 0.0, h = 0.0;
    for (const auto& e : list) {
      cx += e.box.cx;
      cy += e.box.cy;
      w += e.box.w;
      h += e.box.h;
    }
    const double inv = 1.0 / static_cast<double>(list.size());
    anchors.emplace_back(std::clamp(cx * inv, 0.0, 1.0), std::clamp(cy * inv, 0.0, 1.0),
                         std::clamp(w * inv, 1e-3, 1.0), std::clamp(h * inv, 1e-3, 1.0));
  }
  return anchors;
}

}  // namespace qteam

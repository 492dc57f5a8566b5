#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace qteam {

/// N x N self-attention mask. blocked(i, j) == true forbids query i from
/// attending to query j; entries are false exactly within same-group blocks.
/// The block list lets dense scans be skipped entirely.
struct AttentionMask {
  int n = 0;
  std::vector<std::uint8_t> data;               // row-major, 1 = blocked
  std::vector<std::pair<int, int>> blocks;      // [begin, end) per group

  bool blocked(int i, int j) const { return data[static_cast<std::size_t>(i) * n + j] != 0; }
};

/// Block-diagonal mask from group sizes: false inside each group's diagonal
/// block, true everywhere else.
inline AttentionMask build_attention_mask(const std::vector<int>& group_sizes) {
  if (group_sizes.empty()) {
    throw std::invalid_argument("build_attention_mask: empty group size list");
  }
  int n = 0;
  for (int s : group_sizes) {
    if (s < 1) {
      throw std::invalid_argument("build_attention_mask: group size " + std::to_string(s) +
                                  " < 1");
    }
    n += s;
  }
  AttentionMask m;
  m.n = n;
  m.data.assign(static_cast<std::size_t>(n) * n, 1);
  int begin = 0;
  for (int s : group_sizes) {
    const int end = begin + s;
    m.blocks.emplace_back(begin, end);
    for (int i = begin; i < end; ++i) {
      for (int j = begin; j < end; ++j) {
        m.data[static_cast<std::size_t>(i) * n + j] = 0;
      }
    }
    begin = end;
  }
  return m;
}

}  // namespace qteam

#pragma once

#include "cbmi/ops.hpp"

#include <vector>

namespace cbmi {

/// Sentences laid end to end without padding. Row r of any per-token matrix
/// belongs to the sentence whose segment covers r.
struct PackedBatch {
  std::vector<TokenId> src;
  std::vector<Segment> src_segments;
  std::vector<TokenId> tgt_in;   // <bos> y_1 .. y_{N-1}
  std::vector<TokenId> tgt_out;  // y_1 .. y_N (ends with <eos>)
  std::vector<Segment> tgt_segments;

  std::size_t sentences() const { return tgt_segments.size(); }
  std::size_t target_tokens() const { return tgt_out.size(); }

  /// Position of every packed row inside its own sentence.
  static std::vector<Index> positions(const std::vector<Segment>& segments) {
    std::vector<Index> pos;
    for (const auto& s : segments)
      for (Index i = 0; i < s.length; ++i) pos.push_back(i);
    return pos;
  }
};

}  // namespace cbmi

#pragma once

#include "cbmi/corpus.hpp"

#include <cstdint>

namespace cbmi {

struct SubstitutionTask {
  int vocab_size = 50;  // total target vocabulary including the reserved ids
  std::size_t pairs = 2000;
  std::size_t min_len = 3;
  std::size_t max_len = 10;
  std::uint64_t seed = 1;
};

/// Deterministic word-for-word substitution: source word "s<i>" always
/// translates to target word "t<perm(i)>", order preserved. Both sides use
/// vocab_size - 4 word types so that each vocabulary, reserved ids included,
/// has exactly vocab_size entries once every word has been seen.
ParallelCorpus make_substitution_corpus(const SubstitutionTask& task);

}  // namespace cbmi

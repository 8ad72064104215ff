#include "cbmi/synthetic.hpp"

#include "cbmi/random.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace cbmi {

ParallelCorpus make_substitution_corpus(const SubstitutionTask& task) {
  const int words = task.vocab_size - Vocabulary::kReserved;
  if (words < 2) throw std::invalid_argument("substitution task needs vocab_size >= 6");
  if (task.min_len < 1 || task.min_len > task.max_len) throw std::invalid_argument("invalid sentence length range");
  Rng rng(task.seed);
  std::vector<int> perm(static_cast<std::size_t>(words));
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng.engine());

  ParallelCorpus corpus;
  int fresh = 0;
  const auto span = static_cast<std::uint64_t>(task.max_len - task.min_len + 1);
  for (std::size_t n = 0; n < task.pairs; ++n) {
    const std::size_t len = task.min_len + static_cast<std::size_t>(rng.next() % span);
    std::string src, tgt;
    for (std::size_t i = 0; i < len; ++i) {
      // Cycling through the word list first guarantees full coverage.
      const int w = fresh < words ? fresh++ : static_cast<int>(rng.next() % static_cast<std::uint64_t>(words));
      if (i) {
        src += ' ';
        tgt += ' ';
      }
      src += "s" + std::to_string(w);
      tgt += "t" + std::to_string(perm[static_cast<std::size_t>(w)]);
    }
    corpus.src.push_back(std::move(src));
    corpus.tgt.push_back(std::move(tgt));
  }
  return corpus;
}

}  // namespace cbmi

#pragma once

#include "cbmi/model.hpp"

#include <array>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace cbmi {

struct BeamConfig {
  int beam_size = 4;
  double length_penalty = 0.6;
  /// Decoding stops after ceil(max_len_ratio * source length) target tokens.
  double max_len_ratio = 2.0;

  void validate() const;
};

/// Length-normalized hypothesis score
///   logp / ((5 + len) / 6)^alpha
/// where len counts every generated token, </s> included.
double length_normalized_score(double logp, std::size_t len, double alpha);

struct Hypothesis {
  std::vector<TokenId> tokens;  // generated tokens; ends in </s> when finished
  double logp = 0.0;
  double score = 0.0;
  bool finished = false;
};

/// Next-token log-probabilities for a set of prefixes. Row i of the result
/// scores prefix i; prefixes exclude the implicit leading <s>.
using PrefixScorer = std::function<MatrixXd(const std::vector<std::vector<TokenId>>& prefixes)>;

/// Always extends with the arg-max token (lowest id on ties).
Hypothesis greedy_search(const PrefixScorer& scorer, std::size_t max_steps, TokenId eos, double length_penalty);

/// Beam search with a shrinking beam: each step keeps the best
/// beam_size - |finished| extensions by cumulative log-probability; those
/// ending in </s> retire. Hypotheses still open after max_steps are kept as
/// unfinished candidates. The result is the best candidate by
/// length_normalized_score, with the greedy hypothesis included in the pool
/// so the result never scores below greedy decoding.
Hypothesis beam_search(const PrefixScorer& scorer, const BeamConfig& config, std::size_t max_steps, TokenId eos);

/// Scorer backed by the NMT model in inference mode. The source is encoded
/// once; every prefix attends to the same memory rows.
template <typename Scalar>
PrefixScorer nmt_scorer(ModelParams<Scalar>& params, std::span<const TokenId> src);

std::size_t max_decode_steps(std::size_t src_len, const BeamConfig& config);

/// Beam-decodes each source (ids ending in </s>) and strips the final </s>.
template <typename Scalar>
std::vector<std::vector<TokenId>> translate(ModelParams<Scalar>& params,
                                            const std::vector<std::vector<TokenId>>& sources,
                                            const BeamConfig& config);

struct BleuReport {
  double bleu = 0.0;  // 0..100
  std::array<double, 4> precisions{};  // modified n-gram precisions, 0..1
  std::array<std::size_t, 4> matches{};
  std::array<std::size_t, 4> totals{};
  double brevity_penalty = 0.0;
  double length_ratio = 0.0;
  std::size_t hyp_length = 0;
  std::size_t ref_length = 0;

  std::string to_string() const;
};

/// Corpus-level, case-sensitive 4-gram BLEU on whitespace tokens with the
/// standard brevity penalty and no smoothing: any zero precision gives 0.
BleuReport bleu(std::span<const std::string> hypotheses, std::span<const std::string> references);

}  // namespace cbmi

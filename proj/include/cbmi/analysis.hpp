#pragma once

#include "cbmi/corpus.hpp"
#include "cbmi/model.hpp"
#include "cbmi/trainer.hpp"
#include "cbmi/weighting.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace cbmi {

struct HistogramSpec {
  double low = -10.0;
  double high = 10.0;
  int bins = 20;

  void validate() const;
  /// Bin of a value; values outside [low, high) land in the edge bins.
  int bin_of(double value) const;
  double edge(int i) const { return low + (high - low) * i / bins; }
};

struct TokenRecord {
  std::size_t sentence = 0;
  std::size_t position = 0;
  TokenId token = 0;
  double p_nmt = 0.0;
  double p_lm = 0.0;
  double cbmi = 0.0;
};

struct SentenceRecord {
  std::size_t sentence = 0;
  std::size_t length = 0;
  double cbmi = 0.0;
};

/// Per-bin top-1 accuracy of the three prior distributions on the gold token.
struct PriorAccuracy {
  std::size_t count = 0;
  std::size_t lm_correct = 0;
  std::size_t tm_correct = 0;
  std::size_t cbmi_correct = 0;
};

struct CbmiAnalysis {
  HistogramSpec spec;
  std::vector<TokenRecord> tokens;
  std::vector<SentenceRecord> sentences;
  std::vector<std::size_t> histogram;
  std::vector<PriorAccuracy> accuracy;

  /// Structured text report; `checkpoint` identifies the model in the header.
  void write(std::ostream& out, const std::string& checkpoint) const;
};

/// Teacher-forced pass of both models over `pairs` in inference mode.
template <typename Scalar>
CbmiAnalysis analyze_cbmi(ModelParams<Scalar>& params, std::span<const SentencePair> pairs,
                          const HistogramSpec& spec, std::size_t token_budget = 1024);

/// Writes "step sent_idx pos token_id cbmi w_t w_s w_final" lines for the
/// weights `scheme` assigns to each target token of data.pairs, treating
/// consecutive groups of sentences within `token_budget` as mini-batches
/// (inference mode). The step column is 0.
template <typename Scalar>
void dump_weights(ModelParams<Scalar>& params, const TrainingData& data, const WeightScheme& scheme,
                  std::size_t token_budget, std::ostream& out);

/// Consecutive sentence groups whose padded size fits the budget.
std::vector<std::vector<std::size_t>> sequential_groups(std::span<const SentencePair> pairs,
                                                        std::size_t token_budget);

}  // namespace cbmi

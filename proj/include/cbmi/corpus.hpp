#pragma once

#include "cbmi/batch.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace cbmi {

/// Token <-> id bijection with fixed reserved ids.
class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kBos = 1;
  static constexpr TokenId kEos = 2;
  static constexpr TokenId kUnk = 3;
  static constexpr int kReserved = 4;

  Vocabulary();

  /// Ids follow the reserved block ordered by count (descending) then token
  /// (lexicographic). Tokens seen fewer than `min_count` times are left out and
  /// encode to <unk>. Throws on an empty corpus.
  static Vocabulary build(std::span<const std::string> lines, int min_count);

  TokenId id(const std::string& token) const;
  const std::string& token(TokenId id) const;
  std::int64_t count(TokenId id) const { return counts_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return tokens_.size(); }

  /// Whitespace tokenization plus a trailing </s>.
  std::vector<TokenId> encode(const std::string& line) const;
  /// Drops <pad>/<s> and stops at the first </s>.
  std::string decode(std::span<const TokenId> ids) const;

  /// "token<TAB>count" per line, reserved tokens first.
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);
  std::string serialize() const;

  std::uint64_t fingerprint() const;

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_ && counts_ == other.counts_; }

 private:
  void add(const std::string& token, std::int64_t count);

  std::vector<std::string> tokens_;
  std::vector<std::int64_t> counts_;
  std::unordered_map<std::string, TokenId> index_;
};

std::vector<std::string> tokenize(const std::string& line);
std::string detokenize(std::span<const std::string> tokens);

struct ParallelCorpus {
  std::vector<std::string> src;
  std::vector<std::string> tgt;

  std::size_t size() const { return src.size(); }

  /// Two aligned UTF-8 files, one sentence per line.
  static ParallelCorpus load(const std::filesystem::path& src_path, const std::filesystem::path& tgt_path);
};

struct Vocabularies {
  Vocabulary src;
  Vocabulary tgt;
};

/// With `share`, both sides get the vocabulary built from the union of lines.
Vocabularies build_vocab(const ParallelCorpus& corpus, int min_count, bool share);

/// Token-id sequences, each ending in </s>.
struct SentencePair {
  std::vector<TokenId> src;
  std::vector<TokenId> tgt;

  std::size_t length() const { return std::max(src.size(), tgt.size()); }
};

/// Encodes the corpus and drops pairs longer than `max_len` on either side.
std::vector<SentencePair> encode_corpus(const ParallelCorpus& corpus, const Vocabularies& vocabs,
                                        std::size_t max_len);

/// Unigram counts over the encoded corpus on both sides, plus binary
/// sentence-pair co-occurrence counts of (source token, target token).
struct FrequencyTable {
  std::vector<std::int64_t> src_counts;
  std::vector<std::int64_t> tgt_counts;
  std::int64_t src_total = 0;
  std::int64_t tgt_total = 0;
  std::int64_t pairs = 0;
  std::unordered_map<std::uint64_t, std::int64_t> cooccurrence;

  static FrequencyTable build(std::span<const SentencePair> pairs, std::size_t src_vocab, std::size_t tgt_vocab);

  std::int64_t src_count(TokenId id) const;
  std::int64_t tgt_count(TokenId id) const;
  std::int64_t cooc(TokenId src, TokenId tgt) const;

  static std::uint64_t key(TokenId src, TokenId tgt) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(src)) << 32) | static_cast<std::uint32_t>(tgt);
  }
};

/// Bilingual mutual information of a target token against a whole source
/// sentence:  sum_i log( f(x_i, y) / (f(x_i) f(y)) ).
/// f(x) and f(y) are add-one smoothed relative frequencies (count + 1) /
/// (total + 1); f(x, y) is the add-one smoothed fraction of sentence pairs in
/// which both occur. Repeated source tokens contribute once per position.
double bmi_value(std::span<const TokenId> src_sentence, TokenId tgt_token, const FrequencyTable& freq);

/// Per-target-token BMI: the mean of bmi_value over every target-side
/// occurrence of the token in the corpus.
class BmiTable {
 public:
  static BmiTable build(std::span<const SentencePair> pairs, const FrequencyTable& freq);

  /// Zero for tokens that never occur on the target side.
  double value(TokenId id) const;
  const std::vector<std::pair<TokenId, double>>& entries() const { return entries_; }

  void save(const std::filesystem::path& path) const;
  static BmiTable load(const std::filesystem::path& path);

 private:
  std::vector<std::pair<TokenId, double>> entries_;  // sorted by id
  std::unordered_map<TokenId, double> lookup_;
};

/// Padded view of a group of sentence pairs.
struct SentencePairBatch {
  using IdMatrix = Eigen::Matrix<TokenId, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MaskMatrix = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  IdMatrix src;
  IdMatrix tgt;
  MaskMatrix src_mask;
  MaskMatrix tgt_mask;
  std::vector<std::size_t> indices;  // positions of the pairs in the encoded corpus
  std::size_t sentences = 0;
  std::size_t target_tokens = 0;

  static SentencePairBatch from_pairs(std::span<const SentencePair> pairs, std::span<const std::size_t> indices);

  /// Padded cost: sentences * longest side.
  std::size_t padded_tokens() const;

  PackedBatch pack() const;
};

/// Length-bucketed batches whose padded size stays within `token_budget`,
/// visited in a seed-determined order. Every pair lands in exactly one batch.
std::vector<SentencePairBatch> make_batches(std::span<const SentencePair> pairs, std::size_t token_budget,
                                            std::uint64_t seed);

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ull);

}  // namespace cbmi

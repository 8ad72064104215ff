#include "cbmi/corpus.hpp"

#include "cbmi/random.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

namespace cbmi {

namespace {

const std::array<const char*, Vocabulary::kReserved> kReservedTokens = {"<pad>", "<s>", "</s>", "<unk>"};

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return in;
}

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  auto in = open_input(path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

}  // namespace

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::vector<std::string> tokenize(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream in(line);
  std::string tok;
  while (in >> tok) out.push_back(std::move(tok));
  return out;
}

std::string detokenize(std::span<const std::string> tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

Vocabulary::Vocabulary() {
  for (const char* t : kReservedTokens) add(t, 0);
}

void Vocabulary::add(const std::string& token, std::int64_t count) {
  if (index_.count(token)) throw std::invalid_argument("duplicate vocabulary token '" + token + "'");
  index_.emplace(token, static_cast<TokenId>(tokens_.size()));
  tokens_.push_back(token);
  counts_.push_back(count);
}

Vocabulary Vocabulary::build(std::span<const std::string> lines, int min_count) {
  std::map<std::string, std::int64_t> counts;
  for (const auto& line : lines)
    for (auto& tok : tokenize(line)) ++counts[tok];
  if (counts.empty()) throw std::invalid_argument("cannot build a vocabulary from an empty corpus");
  std::vector<std::pair<std::string, std::int64_t>> sorted(counts.begin(), counts.end());
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary v;
  for (const auto& [tok, c] : sorted) {
    if (c < min_count) continue;
    if (v.index_.count(tok)) {
      // a literal reserved token in the text keeps its reserved id
      v.counts_[static_cast<std::size_t>(v.index_.at(tok))] += c;
      continue;
    }
    v.add(tok, c);
  }
  return v;
}

TokenId Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
    throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary");
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<TokenId> Vocabulary::encode(const std::string& line) const {
  std::vector<TokenId> ids;
  for (const auto& tok : tokenize(line)) ids.push_back(id(tok));
  ids.push_back(kEos);
  return ids;
}

std::string Vocabulary::decode(std::span<const TokenId> ids) const {
  std::vector<std::string> toks;
  for (TokenId t : ids) {
    if (t == kEos) break;
    if (t == kPad || t == kBos) continue;
    toks.push_back(token(t));
  }
  return detokenize(toks);
}

std::string Vocabulary::serialize() const {
  std::string out;
  for (std::size_t i = 0; i < tokens_.size(); ++i) out += tokens_[i] + '\t' + std::to_string(counts_[i]) + '\n';
  return out;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  auto out = open_output(path);
  out << serialize();
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  Vocabulary v;
  v.tokens_.clear();
  v.counts_.clear();
  v.index_.clear();
  std::size_t lineno = 0;
  for (const auto& line : read_lines(path)) {
    ++lineno;
    const auto tab = line.rfind('\t');
    if (tab == std::string::npos)
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": expected token<TAB>count");
    v.add(line.substr(0, tab), std::stoll(line.substr(tab + 1)));
  }
  for (int i = 0; i < kReserved; ++i)
    if (v.tokens_.size() <= static_cast<std::size_t>(i) || v.tokens_[static_cast<std::size_t>(i)] != kReservedTokens[static_cast<std::size_t>(i)])
      throw std::runtime_error(path.string() + ": reserved tokens missing or out of order");
  return v;
}

std::uint64_t Vocabulary::fingerprint() const { return fnv1a(serialize()); }

ParallelCorpus ParallelCorpus::load(const std::filesystem::path& src_path, const std::filesystem::path& tgt_path) {
  ParallelCorpus c{read_lines(src_path), read_lines(tgt_path)};
  if (c.src.size() != c.tgt.size())
    throw std::runtime_error("corpus sides differ in length: " + std::to_string(c.src.size()) + " source vs " +
                             std::to_string(c.tgt.size()) + " target lines");
  return c;
}

Vocabularies build_vocab(const ParallelCorpus& corpus, int min_count, bool share) {
  if (corpus.size() == 0) throw std::invalid_argument("cannot build a vocabulary from an empty corpus");
  if (share) {
    std::vector<std::string> all(corpus.src);
    all.insert(all.end(), corpus.tgt.begin(), corpus.tgt.end());
    Vocabulary v = Vocabulary::build(all, min_count);
    return {v, v};
  }
  return {Vocabulary::build(corpus.src, min_count), Vocabulary::build(corpus.tgt, min_count)};
}

std::vector<SentencePair> encode_corpus(const ParallelCorpus& corpus, const Vocabularies& vocabs,
                                        std::size_t max_len) {
  std::vector<SentencePair> pairs;
  pairs.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    SentencePair p{vocabs.src.encode(corpus.src[i]), vocabs.tgt.encode(corpus.tgt[i])};
    if (p.src.size() > max_len || p.tgt.size() > max_len) continue;
    pairs.push_back(std::move(p));
  }
  return pairs;
}

FrequencyTable FrequencyTable::build(std::span<const SentencePair> pairs, std::size_t src_vocab,
                                     std::size_t tgt_vocab) {
  FrequencyTable f;
  f.src_counts.assign(src_vocab, 0);
  f.tgt_counts.assign(tgt_vocab, 0);
  std::vector<TokenId> us, ut;
  for (const auto& p : pairs) {
    for (TokenId t : p.src) ++f.src_counts.at(static_cast<std::size_t>(t));
    for (TokenId t : p.tgt) ++f.tgt_counts.at(static_cast<std::size_t>(t));
    f.src_total += static_cast<std::int64_t>(p.src.size());
    f.tgt_total += static_cast<std::int64_t>(p.tgt.size());
    ++f.pairs;
    us.assign(p.src.begin(), p.src.end());
    ut.assign(p.tgt.begin(), p.tgt.end());
    std::sort(us.begin(), us.end());
    us.erase(std::unique(us.begin(), us.end()), us.end());
    std::sort(ut.begin(), ut.end());
    ut.erase(std::unique(ut.begin(), ut.end()), ut.end());
    for (TokenId s : us)
      for (TokenId t : ut) ++f.cooccurrence[key(s, t)];
  }
  return f;
}

std::int64_t FrequencyTable::src_count(TokenId id) const {
  return id >= 0 && static_cast<std::size_t>(id) < src_counts.size() ? src_counts[static_cast<std::size_t>(id)] : 0;
}

std::int64_t FrequencyTable::tgt_count(TokenId id) const {
  return id >= 0 && static_cast<std::size_t>(id) < tgt_counts.size() ? tgt_counts[static_cast<std::size_t>(id)] : 0;
}

std::int64_t FrequencyTable::cooc(TokenId src, TokenId tgt) const {
  auto it = cooccurrence.find(key(src, tgt));
  return it == cooccurrence.end() ? 0 : it->second;
}

double bmi_value(std::span<const TokenId> src_sentence, TokenId tgt_token, const FrequencyTable& freq) {
  const double fy = (static_cast<double>(freq.tgt_count(tgt_token)) + 1.0) / (static_cast<double>(freq.tgt_total) + 1.0);
  double total = 0.0;
  for (TokenId x : src_sentence) {
    const double fx = (static_cast<double>(freq.src_count(x)) + 1.0) / (static_cast<double>(freq.src_total) + 1.0);
    const double fxy = (static_cast<double>(freq.cooc(x, tgt_token)) + 1.0) / (static_cast<double>(freq.pairs) + 1.0);
    total += std::log(fxy / (fx * fy));
  }
  return total;
}

BmiTable BmiTable::build(std::span<const SentencePair> pairs, const FrequencyTable& freq) {
  std::map<TokenId, std::pair<double, std::int64_t>> acc;
  for (const auto& p : pairs) {
    std::map<TokenId, double> cache;
    for (TokenId y : p.tgt) {
      auto it = cache.find(y);
      if (it == cache.end()) it = cache.emplace(y, bmi_value(p.src, y, freq)).first;
      auto& [sum, n] = acc[y];
      sum += it->second;
      ++n;
    }
  }
  BmiTable t;
  for (const auto& [id, sn] : acc) {
    const double v = sn.first / static_cast<double>(sn.second);
    t.entries_.emplace_back(id, v);
    t.lookup_.emplace(id, v);
  }
  return t;
}

double BmiTable::value(TokenId id) const {
  auto it = lookup_.find(id);
  return it == lookup_.end() ? 0.0 : it->second;
}

void BmiTable::save(const std::filesystem::path& path) const {
  auto out = open_output(path);
  out << "# smoothing=add-one\n"
      << "# frequency=relative unigram (count+1)/(total+1); cooccurrence (pairs_with_both+1)/(pairs+1), binary per pair\n"
      << "# value=mean over target occurrences of sum_i log(f(x_i,y)/(f(x_i)f(y)))\n";
  out << std::setprecision(17);
  for (const auto& [id, v] : entries_) out << id << '\t' << v << '\n';
}

BmiTable BmiTable::load(const std::filesystem::path& path) {
  BmiTable t;
  for (const auto& line : read_lines(path)) {
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw std::runtime_error(path.string() + ": expected token_id<TAB>bmi");
    const TokenId id = static_cast<TokenId>(std::stol(line.substr(0, tab)));
    const double v = std::stod(line.substr(tab + 1));
    t.entries_.emplace_back(id, v);
    t.lookup_[id] = v;
  }
  return t;
}

SentencePairBatch SentencePairBatch::from_pairs(std::span<const SentencePair> pairs,
                                                std::span<const std::size_t> indices) {
  SentencePairBatch b;
  std::size_t ms = 0, mt = 0;
  for (std::size_t i : indices) {
    ms = std::max(ms, pairs[i].src.size());
    mt = std::max(mt, pairs[i].tgt.size());
  }
  const auto n = static_cast<Index>(indices.size());
  b.src = IdMatrix::Constant(n, static_cast<Index>(ms), kPadId);
  b.tgt = IdMatrix::Constant(n, static_cast<Index>(mt), kPadId);
  b.src_mask = MaskMatrix::Zero(n, static_cast<Index>(ms));
  b.tgt_mask = MaskMatrix::Zero(n, static_cast<Index>(mt));
  for (Index r = 0; r < n; ++r) {
    const auto& p = pairs[indices[static_cast<std::size_t>(r)]];
    for (std::size_t j = 0; j < p.src.size(); ++j) {
      b.src(r, static_cast<Index>(j)) = p.src[j];
      b.src_mask(r, static_cast<Index>(j)) = 1;
    }
    for (std::size_t j = 0; j < p.tgt.size(); ++j) {
      b.tgt(r, static_cast<Index>(j)) = p.tgt[j];
      b.tgt_mask(r, static_cast<Index>(j)) = 1;
    }
    b.target_tokens += p.tgt.size();
  }
  b.indices.assign(indices.begin(), indices.end());
  b.sentences = indices.size();
  return b;
}

std::size_t SentencePairBatch::padded_tokens() const {
  return sentences * static_cast<std::size_t>(std::max(src.cols(), tgt.cols()));
}

PackedBatch SentencePairBatch::pack() const {
  PackedBatch p;
  for (Index r = 0; r < src.rows(); ++r) {
    Index ls = 0, lt = 0;
    for (Index j = 0; j < src.cols(); ++j)
      if (src_mask(r, j)) {
        p.src.push_back(src(r, j));
        ++ls;
      }
    p.src_segments.push_back({static_cast<Index>(p.src.size()) - ls, ls});
    for (Index j = 0; j < tgt.cols(); ++j)
      if (tgt_mask(r, j)) {
        p.tgt_in.push_back(lt == 0 ? Vocabulary::kBos : tgt(r, j - 1));
        p.tgt_out.push_back(tgt(r, j));
        ++lt;
      }
    p.tgt_segments.push_back({static_cast<Index>(p.tgt_out.size()) - lt, lt});
  }
  return p;
}

std::vector<SentencePairBatch> make_batches(std::span<const SentencePair> pairs, std::size_t token_budget,
                                            std::uint64_t seed) {
  for (std::size_t i = 0; i < pairs.size(); ++i)
    if (pairs[i].length() > token_budget)
      throw std::invalid_argument("sentence pair " + std::to_string(i) + " of length " +
                                  std::to_string(pairs[i].length()) + " exceeds the token budget of " +
                                  std::to_string(token_budget));
  Rng rng(seed);
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng.engine());
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return pairs[a].length() < pairs[b].length(); });

  std::vector<std::vector<std::size_t>> groups;
  std::vector<std::size_t> current;
  std::size_t longest = 0;
  for (std::size_t idx : order) {
    const std::size_t len = std::max(longest, pairs[idx].length());
    if (!current.empty() && (current.size() + 1) * len > token_budget) {
      groups.push_back(std::move(current));
      current.clear();
      longest = 0;
    }
    current.push_back(idx);
    longest = std::max(longest, pairs[idx].length());
  }
  if (!current.empty()) groups.push_back(std::move(current));
  std::shuffle(groups.begin(), groups.end(), rng.engine());

  std::vector<SentencePairBatch> batches;
  batches.reserve(groups.size());
  for (const auto& g : groups) batches.push_back(SentencePairBatch::from_pairs(pairs, g));
  return batches;
}

}  // namespace cbmi

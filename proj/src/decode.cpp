#include "cbmi/decode.hpp"

#include "cbmi/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <memory>
#include <sstream>
#include <stdexcept>

namespace cbmi {

void BeamConfig::validate() const {
  if (beam_size < 1) throw std::invalid_argument("beam must be >= 1");
  if (!(length_penalty >= 0.0)) throw std::invalid_argument("length_penalty must be non-negative");
  if (!(max_len_ratio > 0.0)) throw std::invalid_argument("max_len_ratio must be positive");
}

double length_normalized_score(double logp, std::size_t len, double alpha) {
  return logp / std::pow((5.0 + static_cast<double>(len)) / 6.0, alpha);
}

std::size_t max_decode_steps(std::size_t src_len, const BeamConfig& config) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(config.max_len_ratio * static_cast<double>(src_len))));
}

Hypothesis greedy_search(const PrefixScorer& scorer, std::size_t max_steps, TokenId eos, double length_penalty) {
  Hypothesis h;
  for (std::size_t t = 0; t < max_steps && !h.finished; ++t) {
    const MatrixXd lp = scorer({h.tokens});
    Index best = 0;
    lp.row(0).maxCoeff(&best);
    h.logp += lp(0, best);
    h.tokens.push_back(static_cast<TokenId>(best));
    h.finished = best == eos;
  }
  h.score = length_normalized_score(h.logp, h.tokens.size(), length_penalty);
  return h;
}

Hypothesis beam_search(const PrefixScorer& scorer, const BeamConfig& config, std::size_t max_steps, TokenId eos) {
  config.validate();
  const auto beam = static_cast<std::size_t>(config.beam_size);
  std::vector<Hypothesis> active(1);
  std::vector<Hypothesis> finished;

  struct Candidate {
    double logp;
    std::size_t parent;
    TokenId token;
  };
  for (std::size_t t = 0; t < max_steps && !active.empty(); ++t) {
    const std::size_t slots = beam - finished.size();
    if (slots == 0) break;
    std::vector<std::vector<TokenId>> prefixes;
    prefixes.reserve(active.size());
    for (const auto& h : active) prefixes.push_back(h.tokens);
    const MatrixXd lp = scorer(prefixes);
    if (lp.rows() != static_cast<Index>(active.size()))
      throw std::logic_error("scorer returned a wrong number of rows");

    std::vector<Candidate> cands;
    cands.reserve(active.size() * static_cast<std::size_t>(lp.cols()));
    for (std::size_t i = 0; i < active.size(); ++i)
      for (Index v = 0; v < lp.cols(); ++v)
        cands.push_back({active[i].logp + lp(static_cast<Index>(i), v), i, static_cast<TokenId>(v)});
    const std::size_t keep = std::min(slots, cands.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(),
                      [](const Candidate& a, const Candidate& b) {
                        if (a.logp != b.logp) return a.logp > b.logp;
                        if (a.parent != b.parent) return a.parent < b.parent;
                        return a.token < b.token;
                      });

    std::vector<Hypothesis> next;
    for (std::size_t k = 0; k < keep; ++k) {
      Hypothesis h = active[cands[k].parent];
      h.tokens.push_back(cands[k].token);
      h.logp = cands[k].logp;
      if (cands[k].token == eos) {
        h.finished = true;
        h.score = length_normalized_score(h.logp, h.tokens.size(), config.length_penalty);
        finished.push_back(std::move(h));
      } else {
        next.push_back(std::move(h));
      }
    }
    active = std::move(next);
  }

  std::vector<Hypothesis> pool = std::move(finished);
  for (auto& h : active) {
    h.score = length_normalized_score(h.logp, h.tokens.size(), config.length_penalty);
    pool.push_back(std::move(h));
  }
  pool.push_back(greedy_search(scorer, max_steps, eos, config.length_penalty));
  // Finished hypotheses are preferred over truncated ones of equal score.
  return *std::max_element(pool.begin(), pool.end(), [](const Hypothesis& a, const Hypothesis& b) {
    if (a.score != b.score) return a.score < b.score;
    return !a.finished && b.finished;
  });
}

template <typename Scalar>
PrefixScorer nmt_scorer(ModelParams<Scalar>& params, std::span<const TokenId> src) {
  if (src.empty()) throw std::invalid_argument("cannot decode an empty source");
  auto tape = std::make_shared<Tape<Scalar>>(false);
  const std::vector<Segment> src_segments{{0, static_cast<Index>(src.size())}};
  const Var<Scalar> memory = nmt_encode(*tape, params.nmt, params.config, src, src_segments, nullptr);
  auto mem = std::make_shared<Matrix<Scalar>>(memory.value());
  ModelParams<Scalar>* p = &params;
  const auto src_len = static_cast<Index>(src.size());
  return [p, mem, src_len](const std::vector<std::vector<TokenId>>& prefixes) {
    Tape<Scalar> t(false);
    const Var<Scalar> m = t.constant(*mem);
    std::vector<TokenId> tgt_in;
    std::vector<Segment> tgt_segments, src_segments;
    std::vector<Index> last;
    for (const auto& prefix : prefixes) {
      const auto offset = static_cast<Index>(tgt_in.size());
      tgt_in.push_back(Vocabulary::kBos);
      tgt_in.insert(tgt_in.end(), prefix.begin(), prefix.end());
      const auto len = static_cast<Index>(prefix.size()) + 1;
      tgt_segments.push_back({offset, len});
      src_segments.push_back({0, src_len});
      last.push_back(offset + len - 1);
    }
    const auto out = nmt_decode(t, p->nmt, p->config, m, src_segments, tgt_in, tgt_segments, nullptr);
    MatrixXd rows(static_cast<Index>(prefixes.size()), out.log_probs.cols());
    for (std::size_t i = 0; i < last.size(); ++i)
      rows.row(static_cast<Index>(i)) = out.log_probs.value().row(last[i]).template cast<double>();
    return rows;
  };
}

template <typename Scalar>
std::vector<std::vector<TokenId>> translate(ModelParams<Scalar>& params,
                                            const std::vector<std::vector<TokenId>>& sources,
                                            const BeamConfig& config) {
  config.validate();
  std::vector<std::vector<TokenId>> out;
  out.reserve(sources.size());
  for (const auto& src : sources) {
    Hypothesis h = beam_search(nmt_scorer(params, src), config, max_decode_steps(src.size(), config),
                               Vocabulary::kEos);
    if (!h.tokens.empty() && h.tokens.back() == Vocabulary::kEos) h.tokens.pop_back();
    out.push_back(std::move(h.tokens));
  }
  return out;
}

namespace {

using Ngrams = std::map<std::vector<std::string>, std::size_t>;

Ngrams count_ngrams(const std::vector<std::string>& tokens, std::size_t n) {
  Ngrams counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i)
    ++counts[std::vector<std::string>(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                      tokens.begin() + static_cast<std::ptrdiff_t>(i + n))];
  return counts;
}

}  // namespace

BleuReport bleu(std::span<const std::string> hypotheses, std::span<const std::string> references) {
  if (hypotheses.size() != references.size())
    throw std::invalid_argument("bleu: " + std::to_string(hypotheses.size()) + " hypotheses but " +
                                std::to_string(references.size()) + " references");
  BleuReport r;
  for (std::size_t s = 0; s < hypotheses.size(); ++s) {
    const auto hyp = tokenize(hypotheses[s]);
    const auto ref = tokenize(references[s]);
    r.hyp_length += hyp.size();
    r.ref_length += ref.size();
    for (std::size_t n = 1; n <= 4; ++n) {
      const Ngrams h = count_ngrams(hyp, n);
      const Ngrams g = count_ngrams(ref, n);
      for (const auto& [gram, c] : h) {
        auto it = g.find(gram);
        if (it != g.end()) r.matches[n - 1] += std::min(c, it->second);
      }
      r.totals[n - 1] += hyp.size() >= n ? hyp.size() - n + 1 : 0;
    }
  }
  double log_sum = 0.0;
  bool zero = false;
  for (std::size_t n = 0; n < 4; ++n) {
    r.precisions[n] = r.totals[n] == 0 ? 0.0 : static_cast<double>(r.matches[n]) / static_cast<double>(r.totals[n]);
    if (r.precisions[n] == 0.0)
      zero = true;
    else
      log_sum += std::log(r.precisions[n]);
  }
  r.length_ratio = r.ref_length == 0 ? 0.0 : static_cast<double>(r.hyp_length) / static_cast<double>(r.ref_length);
  if (r.hyp_length == 0)
    r.brevity_penalty = 0.0;
  else if (r.hyp_length >= r.ref_length)
    r.brevity_penalty = 1.0;
  else
    r.brevity_penalty = std::exp(1.0 - static_cast<double>(r.ref_length) / static_cast<double>(r.hyp_length));
  r.bleu = zero ? 0.0 : 100.0 * r.brevity_penalty * std::exp(log_sum / 4.0);
  return r;
}

std::string BleuReport::to_string() const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << "BLEU = " << bleu << ' ';
  for (std::size_t n = 0; n < 4; ++n) os << (n ? "/" : "") << std::setprecision(1) << 100.0 * precisions[n];
  os << std::setprecision(3) << " (BP = " << brevity_penalty << ", ratio = " << length_ratio
     << ", hyp_len = " << hyp_length << ", ref_len = " << ref_length << ", tok = whitespace, case = sensitive)";
  return os.str();
}

template PrefixScorer nmt_scorer<float>(ModelParams<float>&, std::span<const TokenId>);
template PrefixScorer nmt_scorer<double>(ModelParams<double>&, std::span<const TokenId>);
template std::vector<std::vector<TokenId>> translate<float>(ModelParams<float>&,
                                                            const std::vector<std::vector<TokenId>>&,
                                                            const BeamConfig&);
template std::vector<std::vector<TokenId>> translate<double>(ModelParams<double>&,
                                                             const std::vector<std::vector<TokenId>>&,
                                                             const BeamConfig&);

}  // namespace cbmi

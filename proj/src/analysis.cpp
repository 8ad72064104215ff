#include "cbmi/analysis.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>
#include <stdexcept>

namespace cbmi {

void HistogramSpec::validate() const {
  if (bins < 1) throw std::invalid_argument("histogram needs at least one bin");
  if (!(low < high)) throw std::invalid_argument("histogram range must satisfy low < high");
}

int HistogramSpec::bin_of(double value) const {
  if (!(value >= low)) return 0;
  const int b = static_cast<int>(std::floor((value - low) / (high - low) * bins));
  return std::min(b, bins - 1);
}

std::vector<std::vector<std::size_t>> sequential_groups(std::span<const SentencePair> pairs,
                                                        std::size_t token_budget) {
  std::vector<std::vector<std::size_t>> groups;
  std::vector<std::size_t> current;
  std::size_t longest = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const std::size_t len = std::max(longest, pairs[i].length());
    if (!current.empty() && (current.size() + 1) * len > token_budget) {
      groups.push_back(std::move(current));
      current.clear();
      longest = 0;
    }
    current.push_back(i);
    longest = std::max(longest, pairs[i].length());
  }
  if (!current.empty()) groups.push_back(std::move(current));
  return groups;
}

namespace {

struct TeacherForced {
  PackedBatch batch;
  MatrixXd nmt_log_probs;
  MatrixXd lm_log_probs;
};

template <typename Scalar>
TeacherForced teacher_forced(ModelParams<Scalar>& params, std::span<const SentencePair> pairs,
                             std::span<const std::size_t> group) {
  TeacherForced tf;
  tf.batch = SentencePairBatch::from_pairs(pairs, group).pack();
  Tape<Scalar> tape(false);
  tf.nmt_log_probs = nmt_forward(tape, params.nmt, params.config, tf.batch, nullptr).log_probs.value().template cast<double>();
  tf.lm_log_probs = lm_forward(tape, params.lm, params.config, tf.batch.tgt_in, tf.batch.tgt_segments, nullptr)
                        .log_probs.value()
                        .template cast<double>();
  return tf;
}

}  // namespace

template <typename Scalar>
CbmiAnalysis analyze_cbmi(ModelParams<Scalar>& params, std::span<const SentencePair> pairs,
                          const HistogramSpec& spec, std::size_t token_budget) {
  spec.validate();
  CbmiAnalysis a;
  a.spec = spec;
  a.histogram.assign(static_cast<std::size_t>(spec.bins), 0);
  a.accuracy.assign(static_cast<std::size_t>(spec.bins), {});
  for (const auto& group : sequential_groups(pairs, token_budget)) {
    const TeacherForced tf = teacher_forced(params, pairs, group);
    for (std::size_t s = 0; s < group.size(); ++s) {
      const Segment& seg = tf.batch.tgt_segments[s];
      double sum = 0.0;
      for (Index p = 0; p < seg.length; ++p) {
        const Index r = seg.offset + p;
        const TokenId y = tf.batch.tgt_out[static_cast<std::size_t>(r)];
        TokenRecord t;
        t.sentence = group[s];
        t.position = static_cast<std::size_t>(p);
        t.token = y;
        // Compute the log ratio directly from log-probabilities so very
        // small probabilities do not underflow.
        const double ln = tf.nmt_log_probs(r, y);
        const double ll = tf.lm_log_probs(r, y);
        t.p_nmt = std::exp(ln);
        t.p_lm = std::exp(ll);
        t.cbmi = ln - ll;
        sum += t.cbmi;

        const auto bin = static_cast<std::size_t>(spec.bin_of(t.cbmi));
        ++a.histogram[bin];
        PriorAccuracy& acc = a.accuracy[bin];
        ++acc.count;
        Index best = 0;
        tf.lm_log_probs.row(r).maxCoeff(&best);
        acc.lm_correct += best == y;
        tf.nmt_log_probs.row(r).maxCoeff(&best);
        acc.tm_correct += best == y;
        (tf.nmt_log_probs.row(r) - tf.lm_log_probs.row(r)).maxCoeff(&best);
        acc.cbmi_correct += best == y;
        a.tokens.push_back(t);
      }
      a.sentences.push_back({group[s], static_cast<std::size_t>(seg.length), sum / static_cast<double>(seg.length)});
    }
  }
  return a;
}

void CbmiAnalysis::write(std::ostream& out, const std::string& checkpoint) const {
  const auto old_precision = out.precision();
  out << "# cbmi analysis\n";
  out << "# checkpoint " << checkpoint << '\n';
  out << "# bins " << spec.bins << " range " << spec.low << ' ' << spec.high
      << " (values outside the range are counted in the edge bins)\n";
  out << "# tokens " << tokens.size() << " sentences " << sentences.size() << '\n';
  out << "[histogram]\nbin_low\tbin_high\tcount\n";
  out << std::setprecision(6);
  for (int i = 0; i < spec.bins; ++i)
    out << spec.edge(i) << '\t' << spec.edge(i + 1) << '\t' << histogram[static_cast<std::size_t>(i)] << '\n';
  out << "[prior_accuracy]\nbin_low\tbin_high\tcount\tlm\ttm\tcbmi\n";
  for (int i = 0; i < spec.bins; ++i) {
    const PriorAccuracy& acc = accuracy[static_cast<std::size_t>(i)];
    auto frac = [&](std::size_t c) { return acc.count ? static_cast<double>(c) / static_cast<double>(acc.count) : 0.0; };
    out << spec.edge(i) << '\t' << spec.edge(i + 1) << '\t' << acc.count << '\t' << frac(acc.lm_correct) << '\t'
        << frac(acc.tm_correct) << '\t' << frac(acc.cbmi_correct) << '\n';
  }
  out << std::setprecision(9);
  out << "[sentences]\nsent\tlength\tsent_cbmi\n";
  for (const auto& s : sentences) out << s.sentence << '\t' << s.length << '\t' << s.cbmi << '\n';
  out << "[tokens]\nsent\tpos\ttoken_id\tp_nmt\tp_lm\tcbmi\n";
  for (const auto& t : tokens)
    out << t.sentence << '\t' << t.position << '\t' << t.token << '\t' << t.p_nmt << '\t' << t.p_lm << '\t' << t.cbmi
        << '\n';
  out.precision(old_precision);
}

template <typename Scalar>
void dump_weights(ModelParams<Scalar>& params, const TrainingData& data, const WeightScheme& scheme,
                  std::size_t token_budget, std::ostream& out) {
  out << "step\tsent_idx\tpos\ttoken_id\tcbmi\tw_t\tw_s\tw_final\n" << std::setprecision(9);
  for (const auto& group : sequential_groups(data.pairs, token_budget)) {
    const TeacherForced tf = teacher_forced(params, data.pairs, group);
    const std::size_t n = tf.batch.target_tokens();
    std::vector<double> ln(n), ll(n);
    for (std::size_t j = 0; j < n; ++j) {
      ln[j] = tf.nmt_log_probs(static_cast<Index>(j), tf.batch.tgt_out[j]);
      ll[j] = tf.lm_log_probs(static_cast<Index>(j), tf.batch.tgt_out[j]);
    }
    const TokenWeights tw = compute_weights(scheme, tf.batch, ln, ll, data);
    for (std::size_t s = 0; s < group.size(); ++s) {
      const Segment& seg = tf.batch.tgt_segments[s];
      const CbmiRecord& rec = tw.cbmi[s];
      for (Index p = 0; p < seg.length; ++p) {
        const auto j = static_cast<std::size_t>(seg.offset + p);
        const auto pi = static_cast<std::size_t>(p);
        const bool is_cbmi = scheme.kind == SchemeKind::cbmi;
        out << 0 << '\t' << group[s] << '\t' << p << '\t' << tf.batch.tgt_out[j] << '\t' << rec.token_cbmi[pi] << '\t'
            << (is_cbmi ? rec.token_weights[pi] : tw.weights[j]) << '\t' << (is_cbmi ? rec.sentence_weight : 1.0)
            << '\t' << tw.weights[j] << '\n';
      }
    }
  }
}

template CbmiAnalysis analyze_cbmi<float>(ModelParams<float>&, std::span<const SentencePair>, const HistogramSpec&,
                                          std::size_t);
template CbmiAnalysis analyze_cbmi<double>(ModelParams<double>&, std::span<const SentencePair>, const HistogramSpec&,
                                           std::size_t);
template void dump_weights<float>(ModelParams<float>&, const TrainingData&, const WeightScheme&, std::size_t,
                                  std::ostream&);
template void dump_weights<double>(ModelParams<double>&, const TrainingData&, const WeightScheme&, std::size_t,
                                   std::ostream&);

}  // namespace cbmi

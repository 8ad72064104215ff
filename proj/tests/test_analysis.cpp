#include "doctest.h"
#include "gradcheck_suite.hpp"
#include "trainer_fixtures.hpp"

#include "cbmi/analysis.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

using namespace cbmi;
using namespace cbmi::testing;

namespace {

std::size_t total_tokens(const std::vector<SentencePair>& pairs) {
  std::size_t n = 0;
  for (const auto& p : pairs) n += p.tgt.size();
  return n;
}

}  // namespace

TEST_CASE("histogram bins cover the range and absorb outliers at the edges") {
  HistogramSpec spec;
  CHECK(spec.bin_of(-10.0) == 0);
  CHECK(spec.bin_of(-9.5) == 0);
  CHECK(spec.bin_of(-9.0) == 1);
  CHECK(spec.bin_of(0.0) == 10);
  CHECK(spec.bin_of(9.99) == 19);
  CHECK(spec.bin_of(10.0) == 19);
  CHECK(spec.bin_of(-1e9) == 0);
  CHECK(spec.bin_of(1e9) == 19);
  CHECK(spec.edge(0) == -10.0);
  CHECK(spec.edge(20) == 10.0);
  HistogramSpec bad;
  bad.bins = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = HistogramSpec{};
  bad.low = 3.0;
  bad.high = 3.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("one sentence of three tokens gives three token records and one sentence record") {
  const TrainingData data = toy_training_data();
  auto params = init_params<double>(quick_model_config(data), 2);
  const std::vector<SentencePair> pairs{{{4, 5, 2}, {6, 7, 2}}};
  const CbmiAnalysis a = analyze_cbmi(params, pairs, HistogramSpec{});
  CHECK(a.tokens.size() == 3);
  CHECK(a.sentences.size() == 1);
  CHECK(a.sentences[0].length == 3);
  CHECK(a.tokens[2].token == Vocabulary::kEos);
  CHECK(a.tokens[1].position == 1);
}

TEST_CASE("histogram partitions the tokens and sentence CBMI is their mean") {
  const TrainingData data = toy_training_data();
  auto params = init_params<double>(quick_model_config(data), 2);
  HistogramSpec spec;
  spec.low = -0.5;
  spec.high = 0.5;
  spec.bins = 7;
  const CbmiAnalysis a = analyze_cbmi(params, data.pairs, spec, 40);
  CHECK(std::accumulate(a.histogram.begin(), a.histogram.end(), std::size_t{0}) == total_tokens(data.pairs));
  CHECK(a.tokens.size() == total_tokens(data.pairs));
  CHECK(a.sentences.size() == data.pairs.size());
  std::size_t k = 0;
  for (const auto& s : a.sentences) {
    double sum = 0.0;
    for (std::size_t i = 0; i < s.length; ++i) sum += a.tokens[k++].cbmi;
    CHECK(std::abs(s.cbmi - sum / static_cast<double>(s.length)) < 1e-9);
  }
  for (const auto& t : a.tokens) CHECK(std::abs(t.cbmi - std::log(t.p_nmt / t.p_lm)) < 1e-9);
}

TEST_CASE("with equal sentence lengths the sentence mean equals the token mean") {
  const TrainingData data = toy_training_data();
  auto params = init_params<double>(quick_model_config(data), 5);
  std::vector<SentencePair> same_length;
  for (const auto& p : data.pairs)
    if (p.tgt.size() == 5) same_length.push_back(p);
  REQUIRE(same_length.size() >= 2);
  const CbmiAnalysis a = analyze_cbmi(params, same_length, HistogramSpec{});
  double tokens = 0.0, sentences = 0.0;
  for (const auto& t : a.tokens) tokens += t.cbmi;
  for (const auto& s : a.sentences) sentences += s.cbmi;
  CHECK(std::abs(tokens / static_cast<double>(a.tokens.size()) - sentences / static_cast<double>(a.sentences.size())) <
        1e-9);
}

TEST_CASE("uniform models give zero CBMI everywhere") {
  const TrainingData data = toy_training_data();
  auto params = init_params<double>(quick_model_config(data), 6);
  params.nmt.output.weight.value().setZero();
  params.lm.output.weight.value().setZero();
  const CbmiAnalysis a = analyze_cbmi(params, data.pairs, HistogramSpec{});
  for (const auto& t : a.tokens) CHECK(t.cbmi == 0.0);
  for (const auto& s : a.sentences) CHECK(s.cbmi == 0.0);
  CHECK(a.histogram[10] == a.tokens.size());
}

TEST_CASE("prior accuracy counts stay within the bin counts") {
  const TrainingData data = toy_training_data();
  auto params = init_params<double>(quick_model_config(data), 7);
  const CbmiAnalysis a = analyze_cbmi(params, data.pairs, HistogramSpec{});
  for (std::size_t b = 0; b < a.accuracy.size(); ++b) {
    CHECK(a.accuracy[b].count == a.histogram[b]);
    CHECK(a.accuracy[b].lm_correct <= a.accuracy[b].count);
    CHECK(a.accuracy[b].tm_correct <= a.accuracy[b].count);
    CHECK(a.accuracy[b].cbmi_correct <= a.accuracy[b].count);
  }
}

TEST_CASE("report has a header and tab-separated sections") {
  const TrainingData data = toy_training_data();
  auto params = init_params<double>(quick_model_config(data), 2);
  const std::vector<SentencePair> pairs{{{4, 5, 2}, {6, 7, 2}}};
  HistogramSpec spec;
  spec.bins = 4;
  std::ostringstream out;
  analyze_cbmi(params, pairs, spec).write(out, "abc123");
  const std::string text = out.str();
  CHECK(text.find("# checkpoint abc123") != std::string::npos);
  CHECK(text.find("[histogram]\nbin_low\tbin_high\tcount\n-10\t-5\t") != std::string::npos);
  CHECK(text.find("[prior_accuracy]") != std::string::npos);
  CHECK(text.find("[sentences]") != std::string::npos);
  CHECK(text.find("[tokens]") != std::string::npos);
  std::istringstream lines(text.substr(text.find("[tokens]")));
  std::string line;
  std::getline(lines, line);
  std::getline(lines, line);
  int records = 0;
  while (std::getline(lines, line)) ++records;
  CHECK(records == 3);
}

TEST_CASE("weight dump writes one line per target token") {
  const TrainingData data = toy_training_data();
  auto params = init_params<double>(quick_model_config(data), 2);
  WeightScheme scheme;
  scheme.kind = SchemeKind::cbmi;
  std::ostringstream out;
  dump_weights(params, data, scheme, 64, out);
  std::istringstream lines(out.str());
  std::string line;
  std::getline(lines, line);
  CHECK(line == "step\tsent_idx\tpos\ttoken_id\tcbmi\tw_t\tw_s\tw_final");
  std::size_t n = 0;
  while (std::getline(lines, line)) {
    std::istringstream f(line);
    double step, sent, pos, tok, cbmi, wt, ws, wf;
    f >> step >> sent >> pos >> tok >> cbmi >> wt >> ws >> wf;
    CHECK(std::abs(wt * ws - wf) < 1e-6);
    CHECK(wf >= 0.0);
    ++n;
  }
  CHECK(n == total_tokens(data.pairs));
}

#pragma once

#include "gradcheck.hpp"

#include "cbmi/corpus.hpp"
#include "cbmi/model.hpp"
#include "cbmi/synthetic.hpp"
#include "cbmi/trainer.hpp"

#include <string>
#include <utility>
#include <vector>

namespace cbmi::testing {

using NamedCheck = std::pair<std::string, GradCheck>;

inline std::vector<NamedCheck> op_grad_checks(std::uint64_t seed = 11) {
  std::vector<NamedCheck> out;
  Rng rng(seed);
  const std::vector<double> ones5(5, 1.0);

  {
    auto a = random_tensor(5, 4, rng), b = random_tensor(4, 3, rng);
    out.emplace_back("matmul", grad_check({&a, &b}, [](Tape<double>&, std::vector<Var<double>>& v) {
                       return project(matmul(v[0], v[1]), 1);
                     }, seed));
  }
  {
    auto x = random_tensor(5, 4, rng), w = random_tensor(4, 3, rng), b = random_tensor(1, 3, rng);
    out.emplace_back("linear", grad_check({&x, &w, &b}, [](Tape<double>&, std::vector<Var<double>>& v) {
                       return project(linear(v[0], v[1], v[2]), 2);
                     }, seed));
  }
  {
    auto a = random_tensor(3, 4, rng), b = random_tensor(3, 4, rng);
    out.emplace_back("add", grad_check({&a, &b}, [](Tape<double>&, std::vector<Var<double>>& v) {
                       return project(add(v[0], v[1]), 3);
                     }, seed));
  }
  {
    auto a = random_tensor(3, 4, rng);
    out.emplace_back("scale", grad_check({&a}, [](Tape<double>&, std::vector<Var<double>>& v) {
                       return project(scale(v[0], -1.7), 4);
                     }, seed));
    out.emplace_back("sum", grad_check({&a}, [](Tape<double>&, std::vector<Var<double>>& v) {
                       return sum(v[0]);
                     }, seed));
    out.emplace_back("relu", grad_check({&a}, [](Tape<double>&, std::vector<Var<double>>& v) {
                       return project(relu(v[0]), 5);
                     }, seed));
    out.emplace_back("dropout", grad_check({&a}, [](Tape<double>&, std::vector<Var<double>>& v) {
                       Rng mask_rng(77);
                       return project(dropout(v[0], 0.3, &mask_rng), 6);
                     }, seed));
  }
  {
    auto x = random_tensor(5, 6, rng), g = random_tensor(1, 6, rng), b = random_tensor(1, 6, rng);
    out.emplace_back("layer_norm", grad_check({&x, &g, &b}, [](Tape<double>&, std::vector<Var<double>>& v) {
                       return project(layer_norm(v[0], v[1], v[2]), 7);
                     }, seed));
  }
  {
    auto x = random_tensor(5, 7, rng, 3.0);
    out.emplace_back("softmax", grad_check({&x}, [](Tape<double>&, std::vector<Var<double>>& v) {
                       return project(softmax(v[0]), 8);
                     }, seed));
    out.emplace_back("log_softmax", grad_check({&x}, [](Tape<double>&, std::vector<Var<double>>& v) {
                       return project(log_softmax(v[0]), 9);
                     }, seed));
  }
  {
    auto table = random_tensor(6, 4, rng);
    out.emplace_back("embedding", grad_check({&table}, [](Tape<double>&, std::vector<Var<double>>& v) {
                       const std::vector<TokenId> ids{1, 4, 4, 0, 5, 2};
                       return project(embedding(v[0], ids), 10);
                     }, seed));
  }
  {
    const std::vector<Segment> segs{{0, 3}, {3, 4}};
    const std::vector<Segment> ksegs{{0, 2}, {2, 5}};
    auto q = random_tensor(7, 8, rng), k = random_tensor(7, 8, rng), v = random_tensor(7, 8, rng);
    out.emplace_back("attention_causal", grad_check({&q, &k, &v}, [&](Tape<double>&, std::vector<Var<double>>& x) {
                       return project(attention(x[0], x[1], x[2], segs, segs, 2, true), 11);
                     }, seed));
    out.emplace_back("attention_cross", grad_check({&q, &k, &v}, [&](Tape<double>&, std::vector<Var<double>>& x) {
                       return project(attention(x[0], x[1], x[2], segs, ksegs, 4, false), 12);
                     }, seed));
    out.emplace_back("attention_dropout", grad_check({&q, &k, &v}, [&](Tape<double>&, std::vector<Var<double>>& x) {
                       Rng mask_rng(99);
                       return project(attention(x[0], x[1], x[2], segs, segs, 2, false, 0.2, &mask_rng), 13);
                     }, seed));
  }
  {
    auto x = random_tensor(5, 6, rng, 2.0);
    const std::vector<TokenId> targets{1, 0, 5, 3, 2};
    const std::vector<double> weights{0.5, 1.0, 1.7, 0.0, 2.2};
    out.emplace_back("weighted_cross_entropy",
                     grad_check({&x}, [&](Tape<double>&, std::vector<Var<double>>& v) {
                       return weighted_cross_entropy(log_softmax(v[0]), targets, weights, 0.1);
                     }, seed));
    Matrix<double> q = softmax_rows(Matrix<double>(random_tensor(5, 6, rng, 2.0, false).value()));
    out.emplace_back("soft_cross_entropy", grad_check({&x}, [&](Tape<double>&, std::vector<Var<double>>& v) {
                       return soft_cross_entropy(log_softmax(v[0]), q, ones5);
                     }, seed));
  }
  return out;
}

/// Small substitution corpus used by model-level checks.
inline TrainingData toy_training_data(std::size_t pairs = 24, std::uint64_t seed = 3, int vocab = 20) {
  SubstitutionTask task;
  task.vocab_size = vocab;
  task.pairs = pairs;
  task.min_len = 3;
  task.max_len = 6;
  task.seed = seed;
  const ParallelCorpus corpus = make_substitution_corpus(task);
  return TrainingData::build(corpus, build_vocab(corpus, 1, false), 64);
}

inline ModelConfig small_model_config(const TrainingData& data, int dim = 32, int layers = 2) {
  ModelConfig c;
  c.embed_dim = dim;
  c.ff_dim = 2 * dim;
  c.enc_layers = layers;
  c.dec_layers = layers;
  c.lm_layers = layers;
  c.heads = 4;
  c.vocab_size_src = static_cast<int>(data.vocabs.src.size());
  c.vocab_size_tgt = static_cast<int>(data.vocabs.tgt.size());
  return c;
}

/// Full training objective of a 2-layer, dim-32 model: CBMI-weighted,
/// label-smoothed NMT cross-entropy plus the LM cross-entropy, with dropout
/// masks replayed from a fixed seed on every evaluation.
inline GradCheck full_model_grad_check(std::size_t samples_per_tensor = 6, std::uint64_t seed = 5) {
  const TrainingData data = toy_training_data();
  ModelParams<double> params = init_params<double>(small_model_config(data), seed);
  std::vector<std::size_t> ids{0, 1, 2, 3};
  const PackedBatch batch = SentencePairBatch::from_pairs(data.pairs, ids).pack();

  std::vector<double> weights;
  {
    Tape<double> tape(false);
    const auto ln = nmt_forward(tape, params.nmt, params.config, batch, nullptr).log_probs.value();
    const auto ll = lm_forward(tape, params.lm, params.config, batch.tgt_in, batch.tgt_segments, nullptr)
                        .log_probs.value();
    std::vector<double> gn, gl;
    for (std::size_t j = 0; j < batch.target_tokens(); ++j) {
      gn.push_back(ln(static_cast<Index>(j), batch.tgt_out[j]));
      gl.push_back(ll(static_cast<Index>(j), batch.tgt_out[j]));
    }
    WeightScheme scheme;
    scheme.kind = SchemeKind::cbmi;
    weights = compute_weights(scheme, batch, gn, gl, data).weights;
  }
  const std::vector<double> ones(batch.target_tokens(), 1.0);

  std::vector<Tensor<double>*> tensors;
  params.visit([&](const std::string&, Tensor<double>& t) { tensors.push_back(&t); });
  return grad_check(tensors, [&](Tape<double>& tape, std::vector<Var<double>>&) {
    Rng nmt_rng(21), lm_rng(22);
    const auto nmt = nmt_forward(tape, params.nmt, params.config, batch, &nmt_rng);
    const auto lm = lm_forward(tape, params.lm, params.config, batch.tgt_in, batch.tgt_segments, &lm_rng);
    return add(weighted_cross_entropy(nmt.log_probs, batch.tgt_out, weights, 0.1),
               weighted_cross_entropy(lm.log_probs, batch.tgt_out, ones, 0.1));
  }, seed, samples_per_tensor);
}

}  // namespace cbmi::testing

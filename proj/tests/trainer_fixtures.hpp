#pragma once

#include "cbmi/corpus.hpp"
#include "cbmi/model.hpp"
#include "cbmi/random.hpp"
#include "cbmi/trainer.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace cbmi::testing {

/// Copy task: every target equals its source, over a shared vocabulary.
inline ParallelCorpus copy_corpus(std::size_t pairs, int words, std::size_t min_len, std::size_t max_len,
                                  std::uint64_t seed) {
  Rng rng(seed);
  ParallelCorpus c;
  for (std::size_t i = 0; i < pairs; ++i) {
    const std::size_t n = min_len + rng.next() % (max_len - min_len + 1);
    std::string line;
    for (std::size_t k = 0; k < n; ++k) {
      if (k) line += ' ';
      line += "w" + std::to_string(rng.next() % static_cast<std::uint64_t>(words));
    }
    c.src.push_back(line);
    c.tgt.push_back(line);
  }
  return c;
}

inline TrainConfig quick_train_config(SchemeKind kind, std::int64_t phase1, std::int64_t phase2) {
  TrainConfig t;
  t.base_lr = 0.02;
  t.warmup_steps = 200;
  t.phase1_steps = phase1;
  t.phase2_steps = phase2;
  t.token_budget = 256;
  t.seed = 7;
  t.scheme.kind = kind;
  return t;
}

inline ModelConfig quick_model_config(const TrainingData& data, int dim = 32, int layers = 1) {
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

template <typename S>
std::vector<Matrix<S>> snapshot(LmParams<S>& p) {
  std::vector<Matrix<S>> out;
  p.visit([&](const std::string&, Tensor<S>& t) { out.push_back(t.value()); });
  return out;
}

template <typename S>
std::vector<Matrix<S>> snapshot(NmtParams<S>& p) {
  std::vector<Matrix<S>> out;
  p.visit([&](const std::string&, Tensor<S>& t) { out.push_back(t.value()); });
  return out;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::filesystem::path fresh_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("cbmi_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace cbmi::testing

#pragma once

#include "cbmi/corpus.hpp"
#include "cbmi/model.hpp"
#include "cbmi/optim.hpp"
#include "cbmi/weighting.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace cbmi {

struct TrainConfig {
  double base_lr = 7e-4;
  std::int64_t warmup_steps = 4000;
  std::int64_t phase1_steps = 1000;  // plain cross-entropy for NMT and LM
  std::int64_t phase2_steps = 2000;  // adaptive finetuning with `scheme`
  std::size_t token_budget = 1024;
  std::uint64_t seed = 1;
  WeightScheme scheme;
  double label_smoothing = 0.1;
  double clip_norm = 1.0;  // 0 disables clipping
  AdamHyper adam;
  bool train_lm = true;         // update the LM every step, in both phases
  bool reset_optimizer = false;  // clear Adam moments when phase 2 starts
  std::int64_t checkpoint_every = 0;
  std::int64_t keep_checkpoints = 2;

  std::int64_t total_steps() const { return phase1_steps + phase2_steps; }
  int phase_of(std::int64_t step) const { return step <= phase1_steps ? 1 : 2; }
};

struct StepMetrics {
  std::int64_t step = 0;
  int phase = 1;
  double lr = 0.0;
  double nmt_loss = 0.0;  // weighted, label-smoothed CE per target token
  double aux_loss = 0.0;  // prior / distillation addend per target token
  std::optional<double> lm_loss;
  std::optional<double> mean_cbmi;
  double mean_weight = 1.0;
  double min_weight = 1.0;
  double max_weight = 1.0;
  double clamped_fraction = 0.0;
  std::size_t sentences = 0;
  std::size_t tokens = 0;
  double seconds = 0.0;
  double tokens_per_sec = 0.0;
};

/// Deterministic fields only; wall-clock figures go through timing_json.
nlohmann::json metrics_json(const StepMetrics& m);
nlohmann::json timing_json(const StepMetrics& m);

class NonFiniteLoss : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Encoded corpus plus the statistics the baseline schemes consume.
struct TrainingData {
  Vocabularies vocabs;
  std::vector<SentencePair> pairs;
  FrequencyTable freq;
  BmiTable bmi;

  static TrainingData build(const ParallelCorpus& corpus, Vocabularies vocabs, std::size_t max_len);
};

/// Per-token training weights for one packed batch, plus CBMI when the LM ran.
struct TokenWeights {
  std::vector<double> weights;
  std::vector<CbmiRecord> cbmi;  // empty when no LM pass was made
};

/// Gold-token probabilities and the weights derived from them.
TokenWeights compute_weights(const WeightScheme& scheme, const PackedBatch& batch,
                             std::span<const double> logp_nmt, std::span<const double> logp_lm,
                             const TrainingData& data);

template <typename Scalar>
class Trainer {
 public:
  Trainer(TrainConfig config, ModelParams<Scalar> params, const TrainingData& data);

  const TrainConfig& config() const { return config_; }
  TrainConfig& mutable_config() { return config_; }
  ModelParams<Scalar>& params() { return params_; }
  const ModelParams<Scalar>& params() const { return params_; }
  OptimizerState<Scalar>& nmt_optimizer() { return nmt_state_; }
  OptimizerState<Scalar>& lm_optimizer() { return lm_state_; }
  const TrainingData& data() const { return data_; }

  std::int64_t completed_steps() const { return step_; }
  void set_completed_steps(std::int64_t s) { step_ = s; }
  bool done() const { return step_ >= config_.total_steps(); }

  /// Batch consumed by the given 1-based step; epochs reshuffle from the seed.
  const SentencePairBatch& batch_for_step(std::int64_t step);

  /// Forward, weighting and backward for both models without updating
  /// parameters. Gradients are left on the parameter tensors.
  StepMetrics compute_gradients(const PackedBatch& batch, std::int64_t step, TokenWeights* weights_out = nullptr,
                                std::span<const std::size_t> pair_ids = {});

  /// One optimization step on the next batch.
  StepMetrics step();

  /// Optional sink for "step sent_idx pos token_id cbmi w_t w_s w_final" lines.
  void set_weight_dump(std::ostream* out) { weight_dump_ = out; }
  /// Directory for the offending-batch dump written before NonFiniteLoss.
  void set_diagnostic_dir(std::filesystem::path dir) { diagnostic_dir_ = std::move(dir); }

  std::vector<Tensor<Scalar>*> nmt_tensors();
  std::vector<Tensor<Scalar>*> lm_tensors();

 private:
  void dump_batch(const PackedBatch& batch, std::int64_t step, std::span<const std::size_t> pair_ids) const;

  TrainConfig config_;
  ModelParams<Scalar> params_;
  const TrainingData& data_;
  OptimizerState<Scalar> nmt_state_;
  OptimizerState<Scalar> lm_state_;
  std::int64_t step_ = 0;
  std::int64_t cached_epoch_ = -1;
  std::vector<SentencePairBatch> epoch_batches_;
  std::ostream* weight_dump_ = nullptr;
  std::filesystem::path diagnostic_dir_;
  bool lm_used_ = false;
};

struct RunOptions {
  std::filesystem::path out_dir;
  std::vector<std::pair<std::string, std::string>> config_echo;
  std::ostream* weight_dump = nullptr;
  std::function<void(const StepMetrics&)> on_step;
};

/// Runs the remaining steps of `trainer`, writing metrics.jsonl (header line
/// with the effective config, then one record per step), timing.jsonl,
/// periodic checkpoints under checkpoints/ and the final checkpoint in final/.
template <typename Scalar>
std::vector<StepMetrics> run_training(Trainer<Scalar>& trainer, const RunOptions& options);

/// Teacher-forced next-token accuracy (argmax == gold) in inference mode.
template <typename Scalar>
double teacher_forced_accuracy(ModelParams<Scalar>& params, std::span<const SentencePair> pairs,
                               std::size_t token_budget);

extern template class Trainer<float>;
extern template class Trainer<double>;

}  // namespace cbmi

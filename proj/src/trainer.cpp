#include "cbmi/trainer.hpp"

#include "cbmi/checkpoint.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace cbmi {

namespace fs = std::filesystem;

nlohmann::json metrics_json(const StepMetrics& m) {
  nlohmann::json j;
  j["step"] = m.step;
  j["phase"] = m.phase;
  j["lr"] = m.lr;
  j["nmt_loss"] = m.nmt_loss;
  j["aux_loss"] = m.aux_loss;
  j["lm_loss"] = m.lm_loss ? nlohmann::json(*m.lm_loss) : nlohmann::json(nullptr);
  j["mean_cbmi"] = m.mean_cbmi ? nlohmann::json(*m.mean_cbmi) : nlohmann::json(nullptr);
  j["mean_weight"] = m.mean_weight;
  j["min_weight"] = m.min_weight;
  j["max_weight"] = m.max_weight;
  j["clamped_fraction"] = m.clamped_fraction;
  j["sentences"] = m.sentences;
  j["tokens"] = m.tokens;
  return j;
}

nlohmann::json timing_json(const StepMetrics& m) {
  return {{"step", m.step}, {"seconds", m.seconds}, {"tokens_per_sec", m.tokens_per_sec}};
}

TrainingData TrainingData::build(const ParallelCorpus& corpus, Vocabularies vocabs, std::size_t max_len) {
  TrainingData d;
  d.vocabs = std::move(vocabs);
  d.pairs = encode_corpus(corpus, d.vocabs, max_len);
  if (d.pairs.empty()) throw std::invalid_argument("no sentence pairs left after length filtering");
  d.freq = FrequencyTable::build(d.pairs, d.vocabs.src.size(), d.vocabs.tgt.size());
  d.bmi = BmiTable::build(d.pairs, d.freq);
  return d;
}

TokenWeights compute_weights(const WeightScheme& scheme, const PackedBatch& batch, std::span<const double> logp_nmt,
                             std::span<const double> logp_lm, const TrainingData& data) {
  const std::size_t n = batch.target_tokens();
  if (logp_nmt.size() != n) throw std::invalid_argument("compute_weights: one NMT log-probability per token");
  TokenWeights out;
  out.weights.assign(n, 1.0);
  if (!logp_lm.empty()) {
    if (logp_lm.size() != n) throw std::invalid_argument("compute_weights: one LM log-probability per token");
    std::vector<std::vector<TokenProbPair>> sentences;
    sentences.reserve(batch.sentences());
    for (const Segment& s : batch.tgt_segments) {
      auto& sent = sentences.emplace_back();
      for (Index r = s.offset; r < s.offset + s.length; ++r) {
        const auto i = static_cast<std::size_t>(r);
        // Clamp to the smallest positive double so a probability that
        // underflows still yields a finite (very negative) log ratio.
        sent.push_back({std::max(std::exp(logp_nmt[i]), std::numeric_limits<double>::min()),
                        std::max(std::exp(logp_lm[i]), std::numeric_limits<double>::min())});
      }
    }
    out.cbmi = cbmi_weights(sentences, scheme.cbmi);
  }
  const BaselineConfig& b = scheme.baseline;
  switch (scheme.kind) {
    case SchemeKind::none:
    case SchemeKind::lm_prior:
    case SchemeKind::prior_select:
      break;
    case SchemeKind::cbmi: {
      if (out.cbmi.empty()) throw std::logic_error("cbmi weighting requires LM probabilities");
      std::size_t k = 0;
      for (const auto& rec : out.cbmi)
        for (double w : rec.final_weights) out.weights[k++] = w;
      break;
    }
    case SchemeKind::freq_exp:
      for (std::size_t j = 0; j < n; ++j)
        out.weights[j] = freq_exponential_weight(data.freq.tgt_count(batch.tgt_out[j]), b.freq_a, b.freq_t);
      break;
    case SchemeKind::freq_chi:
      for (std::size_t j = 0; j < n; ++j)
        out.weights[j] = freq_chi_square_weight(data.freq.tgt_count(batch.tgt_out[j]), b.freq_a, b.freq_t);
      break;
    case SchemeKind::bmi:
      for (std::size_t j = 0; j < n; ++j)
        out.weights[j] = bmi_weight(data.bmi.value(batch.tgt_out[j]), b.bmi_s, b.bmi_b);
      break;
    case SchemeKind::focal:
      for (std::size_t j = 0; j < n; ++j) out.weights[j] = focal_factor(std::exp(logp_nmt[j]), b.alpha, b.gamma);
      break;
    case SchemeKind::anti_focal:
      for (std::size_t j = 0; j < n; ++j)
        out.weights[j] = anti_focal_factor(std::exp(logp_nmt[j]), b.alpha, b.gamma);
      break;
  }
  return out;
}

namespace {

template <typename Scalar>
std::vector<double> gold_log_probs(const Matrix<Scalar>& log_probs, std::span<const TokenId> targets) {
  std::vector<double> out(targets.size());
  for (std::size_t j = 0; j < targets.size(); ++j)
    out[j] = static_cast<double>(log_probs(static_cast<Index>(j), targets[j]));
  return out;
}

template <typename Scalar>
bool finite(const Var<Scalar>& v) {
  return std::isfinite(static_cast<double>(v.value()(0, 0)));
}

std::uint64_t epoch_seed(std::uint64_t seed, std::int64_t epoch) {
  return seed * 0x9e3779b97f4a7c15ull + static_cast<std::uint64_t>(epoch) * 0xbf58476d1ce4e5b9ull + 1;
}

}  // namespace

template <typename Scalar>
Trainer<Scalar>::Trainer(TrainConfig config, ModelParams<Scalar> params, const TrainingData& data)
    : config_(std::move(config)), params_(std::move(params)), data_(data) {
  if (config_.phase1_steps < 0 || config_.phase2_steps < 0)
    throw std::invalid_argument("phase step counts must be non-negative");
  if (config_.token_budget == 0) throw std::invalid_argument("token_budget must be positive");
  if (!(config_.label_smoothing >= 0.0 && config_.label_smoothing < 1.0))
    throw std::invalid_argument("label_smoothing must be in [0, 1)");
  if (static_cast<int>(data_.vocabs.src.size()) != params_.config.vocab_size_src ||
      static_cast<int>(data_.vocabs.tgt.size()) != params_.config.vocab_size_tgt)
    throw std::invalid_argument("model vocabulary sizes do not match the training vocabularies");
  auto nmt = nmt_tensors();
  auto lm = lm_tensors();
  nmt_state_ = make_optimizer_state<Scalar>(nmt, config_.adam);
  lm_state_ = make_optimizer_state<Scalar>(lm, config_.adam);
}

template <typename Scalar>
std::vector<Tensor<Scalar>*> Trainer<Scalar>::nmt_tensors() {
  std::vector<Tensor<Scalar>*> out;
  params_.nmt.visit([&](const std::string&, Tensor<Scalar>& t) { out.push_back(&t); });
  return out;
}

template <typename Scalar>
std::vector<Tensor<Scalar>*> Trainer<Scalar>::lm_tensors() {
  std::vector<Tensor<Scalar>*> out;
  params_.lm.visit([&](const std::string&, Tensor<Scalar>& t) { out.push_back(&t); });
  return out;
}

template <typename Scalar>
const SentencePairBatch& Trainer<Scalar>::batch_for_step(std::int64_t step) {
  if (step < 1) throw std::invalid_argument("steps are numbered from 1");
  if (cached_epoch_ < 0) {
    epoch_batches_ = make_batches(data_.pairs, config_.token_budget, epoch_seed(config_.seed, 0));
    cached_epoch_ = 0;
  }
  // Every epoch has the same number of batches: grouping follows the sorted
  // length sequence, which does not depend on the shuffle.
  const auto per_epoch = static_cast<std::int64_t>(epoch_batches_.size());
  const std::int64_t epoch = (step - 1) / per_epoch;
  if (epoch != cached_epoch_) {
    epoch_batches_ = make_batches(data_.pairs, config_.token_budget, epoch_seed(config_.seed, epoch));
    cached_epoch_ = epoch;
  }
  return epoch_batches_[static_cast<std::size_t>((step - 1) % per_epoch)];
}

template <typename Scalar>
void Trainer<Scalar>::dump_batch(const PackedBatch& batch, std::int64_t step,
                                 std::span<const std::size_t> pair_ids) const {
  if (diagnostic_dir_.empty()) return;
  fs::create_directories(diagnostic_dir_);
  std::ofstream out(diagnostic_dir_ / ("nonfinite_step_" + std::to_string(step) + ".txt"));
  out << "# step " << step << ", " << batch.sentences() << " sentences\n";
  for (std::size_t b = 0; b < batch.sentences(); ++b) {
    out << "pair " << (b < pair_ids.size() ? pair_ids[b] : b) << "\nsrc:";
    const Segment& s = batch.src_segments[b];
    for (Index r = s.offset; r < s.offset + s.length; ++r)
      out << ' ' << data_.vocabs.src.token(batch.src[static_cast<std::size_t>(r)]);
    out << "\ntgt:";
    const Segment& t = batch.tgt_segments[b];
    for (Index r = t.offset; r < t.offset + t.length; ++r)
      out << ' ' << data_.vocabs.tgt.token(batch.tgt_out[static_cast<std::size_t>(r)]);
    out << '\n';
  }
}

template <typename Scalar>
StepMetrics Trainer<Scalar>::compute_gradients(const PackedBatch& batch, std::int64_t step,
                                               TokenWeights* weights_out, std::span<const std::size_t> pair_ids) {
  StepMetrics m;
  m.step = step;
  m.phase = config_.phase_of(step);
  m.sentences = batch.sentences();
  m.tokens = batch.target_tokens();
  if (m.tokens == 0) throw std::invalid_argument("empty batch at step " + std::to_string(step));
  // Phase 1 trains both models with plain cross-entropy.
  const WeightScheme scheme = m.phase == 1 ? WeightScheme{SchemeKind::none, config_.scheme.cbmi, config_.scheme.baseline}
                                           : config_.scheme;
  const bool run_lm = config_.train_lm || scheme.needs_lm();
  lm_used_ = run_lm;
  const double inv_tokens = 1.0 / static_cast<double>(m.tokens);
  params_.zero_grad();

  Rng nmt_rng = Rng::stream(config_.seed, static_cast<std::uint64_t>(step), 1);
  Rng lm_rng = Rng::stream(config_.seed, static_cast<std::uint64_t>(step), 2);
  Tape<Scalar> nmt_tape;
  Tape<Scalar> lm_tape;
  std::optional<ModelOutput<Scalar>> nmt_out, lm;
  try {
    nmt_out = nmt_forward(nmt_tape, params_.nmt, params_.config, batch, &nmt_rng);
    if (run_lm) lm = lm_forward(lm_tape, params_.lm, params_.config, batch.tgt_in, batch.tgt_segments, &lm_rng);
  } catch (const std::domain_error& e) {
    dump_batch(batch, step, pair_ids);
    throw NonFiniteLoss("non-finite values in the forward pass at step " + std::to_string(step) + ": " + e.what());
  }
  const ModelOutput<Scalar>& nmt = *nmt_out;

  const auto logp_nmt = gold_log_probs(nmt.log_probs.value(), batch.tgt_out);
  std::vector<double> logp_lm;
  if (lm) logp_lm = gold_log_probs(lm->log_probs.value(), batch.tgt_out);
  TokenWeights tw = compute_weights(scheme, batch, logp_nmt, logp_lm, data_);

  Var<Scalar> loss = scale(weighted_cross_entropy(nmt.log_probs, batch.tgt_out, tw.weights, config_.label_smoothing),
                           static_cast<Scalar>(inv_tokens));
  m.nmt_loss = static_cast<double>(loss.value()(0, 0));

  const BaselineConfig& b = scheme.baseline;
  const std::vector<double> ones(m.tokens, 1.0);
  if (scheme.kind == SchemeKind::lm_prior) {
    if (!(b.tau > 0.0)) throw std::invalid_argument("tau must be positive");
    const Scalar inv_tau = static_cast<Scalar>(1.0 / b.tau);
    const Matrix<Scalar> teacher = softmax_rows<Scalar>(lm->logits.value() * inv_tau);
    const Var<Scalar> student = b.soften_student ? log_softmax(scale(nmt.logits, inv_tau)) : nmt.log_probs;
    // CE(q, p) = KL(q || p) + H(q); H(q) is constant, so report the KL part.
    const Var<Scalar> ce = soft_cross_entropy(student, teacher, ones);
    double entropy = 0.0;
    for (Index i = 0; i < teacher.size(); ++i) {
      const double q = static_cast<double>(teacher.data()[i]);
      if (q > 0.0) entropy -= q * std::log(q);
    }
    m.aux_loss = b.lambda * (static_cast<double>(ce.value()(0, 0)) - entropy) * inv_tokens;
    loss = add(loss, scale(ce, static_cast<Scalar>(b.lambda * inv_tokens)));
  } else if (scheme.kind == SchemeKind::prior_select) {
    const Matrix<Scalar>& nl = nmt.logits.value();
    const Matrix<Scalar>& ll = lm->logits.value();
    const Matrix<Scalar> p_nmt = softmax_rows(nl);
    const Matrix<Scalar> p_lm = softmax_rows(ll);
    Matrix<Scalar> q(nl.rows(), nl.cols());
    std::size_t j = 0;
    for (const auto& rec : tw.cbmi)
      for (double c : rec.token_cbmi) {
        const auto r = static_cast<Index>(j++);
        switch (select_prior(c, b.th1, b.th2)) {
          case Prior::lm: q.row(r) = p_lm.row(r); break;
          case Prior::tm: q.row(r) = p_nmt.row(r); break;
          case Prior::cbmi: {
            const RowVector<double> a = nl.row(r).template cast<double>();
            const RowVector<double> c2 = ll.row(r).template cast<double>();
            const auto dist = cbmi_prior_distribution({a.data(), static_cast<std::size_t>(a.size())},
                                                      {c2.data(), static_cast<std::size_t>(c2.size())});
            for (Index v = 0; v < q.cols(); ++v) q(r, v) = static_cast<Scalar>(dist[static_cast<std::size_t>(v)]);
            break;
          }
        }
      }
    const Var<Scalar> ce = soft_cross_entropy(nmt.log_probs, q, ones);
    m.aux_loss = b.lambda * static_cast<double>(ce.value()(0, 0)) * inv_tokens;
    loss = add(loss, scale(ce, static_cast<Scalar>(b.lambda * inv_tokens)));
  }

  if (!finite(loss)) {
    dump_batch(batch, step, pair_ids);
    throw NonFiniteLoss("non-finite NMT loss at step " + std::to_string(step) +
                        (diagnostic_dir_.empty() ? std::string()
                                                 : "; batch written to " + diagnostic_dir_.string()));
  }
  nmt_tape.backward(loss);

  if (lm) {
    const Var<Scalar> lm_loss =
        scale(weighted_cross_entropy(lm->log_probs, batch.tgt_out, ones, config_.label_smoothing),
              static_cast<Scalar>(inv_tokens));
    m.lm_loss = static_cast<double>(lm_loss.value()(0, 0));
    if (!finite(lm_loss)) {
      dump_batch(batch, step, pair_ids);
      throw NonFiniteLoss("non-finite LM loss at step " + std::to_string(step));
    }
    if (config_.train_lm) lm_tape.backward(lm_loss);
  }

  double sum = 0.0;
  std::size_t clamped = 0;
  m.min_weight = std::numeric_limits<double>::infinity();
  m.max_weight = -std::numeric_limits<double>::infinity();
  for (double w : tw.weights) {
    sum += w;
    m.min_weight = std::min(m.min_weight, w);
    m.max_weight = std::max(m.max_weight, w);
    if (w <= 0.0) ++clamped;
  }
  m.mean_weight = sum * inv_tokens;
  m.clamped_fraction = static_cast<double>(clamped) * inv_tokens;
  if (!tw.cbmi.empty()) {
    double total = 0.0;
    for (const auto& rec : tw.cbmi)
      for (double c : rec.token_cbmi) total += c;
    m.mean_cbmi = total * inv_tokens;
  }

  if (weight_dump_) {
    std::ostream& out = *weight_dump_;
    out << std::setprecision(9);
    for (std::size_t s = 0; s < batch.sentences(); ++s) {
      const Segment& seg = batch.tgt_segments[s];
      const std::size_t sent_id = s < pair_ids.size() ? pair_ids[s] : s;
      for (Index p = 0; p < seg.length; ++p) {
        const auto j = static_cast<std::size_t>(seg.offset + p);
        out << step << '\t' << sent_id << '\t' << p << '\t' << batch.tgt_out[j] << '\t';
        if (!tw.cbmi.empty()) {
          const CbmiRecord& rec = tw.cbmi[s];
          const auto pi = static_cast<std::size_t>(p);
          out << rec.token_cbmi[pi] << '\t' << rec.token_weights[pi] << '\t' << rec.sentence_weight;
        } else {
          out << "nan\t" << tw.weights[j] << "\t1";
        }
        out << '\t' << tw.weights[j] << '\n';
      }
    }
  }

  if (weights_out) *weights_out = std::move(tw);
  return m;
}

template <typename Scalar>
StepMetrics Trainer<Scalar>::step() {
  if (done()) throw std::logic_error("training already finished");
  const auto start = std::chrono::steady_clock::now();
  const std::int64_t s = step_ + 1;
  if (config_.reset_optimizer && s == config_.phase1_steps + 1 && config_.phase1_steps > 0) {
    nmt_state_.reset();
    lm_state_.reset();
  }
  const SentencePairBatch& sb = batch_for_step(s);
  const PackedBatch batch = sb.pack();
  StepMetrics m = compute_gradients(batch, s, nullptr, sb.indices);
  m.lr = lr_schedule(s, config_.base_lr, config_.warmup_steps);

  auto nmt = nmt_tensors();
  clip_grad_norm<Scalar>(nmt, config_.clip_norm);
  adam_update<Scalar>(nmt, nmt_state_, m.lr);
  if (lm_used_ && config_.train_lm) {
    auto lm = lm_tensors();
    clip_grad_norm<Scalar>(lm, config_.clip_norm);
    adam_update<Scalar>(lm, lm_state_, m.lr);
  }
  step_ = s;
  m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  m.tokens_per_sec = m.seconds > 0.0 ? static_cast<double>(m.tokens) / m.seconds : 0.0;
  return m;
}

template <typename Scalar>
std::vector<StepMetrics> run_training(Trainer<Scalar>& trainer, const RunOptions& options) {
  const fs::path& out = options.out_dir;
  fs::create_directories(out);
  trainer.set_diagnostic_dir(out);
  trainer.set_weight_dump(options.weight_dump);
  // A resumed run appends to the logs of the run it continues.
  const bool resuming = trainer.completed_steps() > 0;
  const bool has_log = fs::exists(out / "metrics.jsonl") && fs::file_size(out / "metrics.jsonl") > 0;
  const auto mode = resuming ? std::ios::app : std::ios::trunc;
  std::ofstream metrics(out / "metrics.jsonl", mode);
  std::ofstream timing(out / "timing.jsonl", mode);
  if (!metrics || !timing) throw std::runtime_error("cannot write logs in " + out.string());
  if (!resuming || !has_log) {
    nlohmann::ordered_json header;
    header["type"] = "config";
    for (const auto& [k, v] : options.config_echo) header["config"][k] = v;
    metrics << header.dump() << '\n';
  }

  KeyValues config(options.config_echo.begin(), options.config_echo.end());
  std::vector<StepMetrics> history;
  while (!trainer.done()) {
    StepMetrics m = trainer.step();
    metrics << metrics_json(m).dump() << '\n';
    timing << timing_json(m).dump() << '\n';
    if (options.on_step) options.on_step(m);
    const std::int64_t every = trainer.config().checkpoint_every;
    if (every > 0 && m.step % every == 0 && !trainer.done()) {
      metrics.flush();
      save_checkpoint<Scalar>(out / "checkpoints" / ("step_" + std::to_string(m.step)), trainer.params(),
                              trainer.data().vocabs, m.step, config, &trainer.nmt_optimizer(),
                              &trainer.lm_optimizer());
      prune_checkpoints(out / "checkpoints", trainer.config().keep_checkpoints);
    }
    history.push_back(std::move(m));
  }
  save_checkpoint<Scalar>(out / "final", trainer.params(), trainer.data().vocabs, trainer.completed_steps(), config,
                          &trainer.nmt_optimizer(), &trainer.lm_optimizer());
  return history;
}

template <typename Scalar>
double teacher_forced_accuracy(ModelParams<Scalar>& params, std::span<const SentencePair> pairs,
                               std::size_t token_budget) {
  std::size_t correct = 0, total = 0;
  for (const auto& sb : make_batches(pairs, token_budget, 0)) {
    const PackedBatch batch = sb.pack();
    Tape<Scalar> tape(false);
    const auto out = nmt_forward(tape, params.nmt, params.config, batch, nullptr);
    const Matrix<Scalar>& lp = out.log_probs.value();
    for (Index r = 0; r < lp.rows(); ++r) {
      Index best = 0;
      lp.row(r).maxCoeff(&best);
      correct += static_cast<TokenId>(best) == batch.tgt_out[static_cast<std::size_t>(r)];
      ++total;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

template class Trainer<float>;
template class Trainer<double>;
template std::vector<StepMetrics> run_training<float>(Trainer<float>&, const RunOptions&);
template std::vector<StepMetrics> run_training<double>(Trainer<double>&, const RunOptions&);
template double teacher_forced_accuracy<float>(ModelParams<float>&, std::span<const SentencePair>, std::size_t);
template double teacher_forced_accuracy<double>(ModelParams<double>&, std::span<const SentencePair>, std::size_t);

}  // namespace cbmi

#pragma once

#include "cbmi/tensor.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cbmi {

enum class SchemeKind { none, cbmi, freq_exp, freq_chi, bmi, focal, anti_focal, lm_prior, prior_select };

std::string_view scheme_name(SchemeKind kind);
std::optional<SchemeKind> parse_scheme(std::string_view name);

/// Token- and sentence-level CBMI weighting knobs.
struct CbmiConfig {
  double scale_t = 0.1;
  double scale_s = 0.3;
  bool use_token = true;
  bool use_sentence = true;
  double sigma_floor = 1e-6;
};

/// Baseline hyperparameters; defaults are the En-De settings.
struct BaselineConfig {
  double freq_a = 1.0;
  double freq_t = 1.75;
  double bmi_s = 0.15;
  double bmi_b = 0.8;
  double alpha = 0.1;
  double gamma = 1.0;
  double lambda = 0.1;
  double tau = 2.0;
  double th1 = 0.0;
  double th2 = 8.0;
  bool soften_student = true;  // lm_prior: apply tau to the student as well as the teacher
};

struct WeightScheme {
  SchemeKind kind = SchemeKind::none;
  CbmiConfig cbmi;
  BaselineConfig baseline;

  /// Whether a language-model forward pass is needed to compute the weights.
  bool needs_lm() const;
};

/// Probabilities of the gold token under the translation model and the
/// target-side language model.
struct TokenProbPair {
  double p_nmt = 1.0;
  double p_lm = 1.0;
};

struct NormStats {
  double mean = 0.0;
  double std = 1.0;
};

struct Normalized {
  std::vector<double> values;
  NormStats stats;
};

/// Everything derived from the token CBMI values of one sentence.
struct CbmiRecord {
  std::vector<double> token_cbmi;
  double sent_cbmi = 0.0;
  std::vector<double> norm_token_cbmi;
  NormStats token_stats;
  double norm_sent_cbmi = 0.0;
  std::vector<double> token_weights;
  double sentence_weight = 1.0;
  std::vector<double> final_weights;
};

/// log(p_nmt / p_lm). Throws std::domain_error for probabilities outside (0, 1].
double token_cbmi(const TokenProbPair& p);

/// (v - mean) / max(std, sigma_floor) over masked positions, population std.
/// An empty mask means every position is valid; masked-out positions map to 0.
Normalized normalize_intra_sentence(std::span<const double> token_cbmi, std::span<const std::uint8_t> mask,
                                    double sigma_floor = 1e-6);

/// max(0, scale_t * norm + 1)
double token_weight(double norm_cbmi, double scale_t);

/// Mean of token CBMI over masked positions.
double sentence_cbmi(std::span<const double> token_cbmi, std::span<const std::uint8_t> mask = {});

Normalized normalize_inter_sentence(std::span<const double> sent_cbmi, double sigma_floor = 1e-6);

/// max(0, scale_s * norm + 1)
double sentence_weight(double norm_cbmi, double scale_s);

/// w_j = w_t[j] * w_s, with either factor replaced by 1 when its level is disabled.
std::vector<double> final_weights(std::span<const double> token_weights, double sentence_weight, bool use_token,
                                  bool use_sentence);

/// Full CBMI weighting for one mini-batch: token CBMI, intra-sentence
/// normalization, sentence CBMI, inter-sentence normalization over the batch,
/// and the product weights. `sentences[b]` holds the gold-token probability
/// pairs of sentence b (no padding).
std::vector<CbmiRecord> cbmi_weights(const std::vector<std::vector<TokenProbPair>>& sentences,
                                     const CbmiConfig& config);

double freq_exponential_weight(std::int64_t count, double a, double t);
double freq_chi_square_weight(std::int64_t count, double a, double t);
double bmi_weight(double bmi, double s, double b);

/// -(1 - alpha p)^gamma log p
double focal_loss(double p, double alpha, double gamma);
/// -(1 + alpha p)^gamma log p
double anti_focal_loss(double p, double alpha, double gamma);
/// The modulating factors of the two losses above.
double focal_factor(double p, double alpha, double gamma);
double anti_focal_factor(double p, double alpha, double gamma);

/// lambda * KL(softmax(lm / tau) || softmax(nmt / tau)), averaged over rows.
/// With soften_student false only the teacher is tempered.
double lm_prior_loss(const MatrixXd& nmt_logits, const MatrixXd& lm_logits, double lambda, double tau,
                     bool soften_student = true);

enum class Prior { lm, tm, cbmi };

std::string_view prior_name(Prior p);

/// LM for cbmi <= th1, TM for th1 < cbmi <= th2, CBMI above th2.
Prior select_prior(double cbmi, double th1, double th2);

/// softmax over v of (log p_nmt(v) - log p_lm(v)).
std::vector<double> cbmi_prior_distribution(std::span<const double> nmt_logits_row,
                                            std::span<const double> lm_logits_row);

}  // namespace cbmi

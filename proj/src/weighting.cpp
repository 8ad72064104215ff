#include "cbmi/weighting.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

namespace cbmi {

namespace {

constexpr std::array<std::pair<SchemeKind, std::string_view>, 9> kSchemeNames{{
    {SchemeKind::none, "none"},
    {SchemeKind::cbmi, "cbmi"},
    {SchemeKind::freq_exp, "freq_exp"},
    {SchemeKind::freq_chi, "freq_chi"},
    {SchemeKind::bmi, "bmi"},
    {SchemeKind::focal, "focal"},
    {SchemeKind::anti_focal, "anti_focal"},
    {SchemeKind::lm_prior, "lm_prior"},
    {SchemeKind::prior_select, "prior_select"},
}};

bool valid(std::span<const std::uint8_t> mask, std::size_t i) { return mask.empty() || mask[i] != 0; }

std::vector<double> log_softmax(std::span<const double> x) {
  const double m = *std::max_element(x.begin(), x.end());
  double s = 0.0;
  for (double v : x) s += std::exp(v - m);
  const double lse = m + std::log(s);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - lse;
  return out;
}

}  // namespace

std::string_view scheme_name(SchemeKind kind) {
  for (const auto& [k, n] : kSchemeNames)
    if (k == kind) return n;
  return "unknown";
}

std::optional<SchemeKind> parse_scheme(std::string_view name) {
  for (const auto& [k, n] : kSchemeNames)
    if (n == name) return k;
  return std::nullopt;
}

bool WeightScheme::needs_lm() const {
  return kind == SchemeKind::cbmi || kind == SchemeKind::lm_prior || kind == SchemeKind::prior_select;
}

double token_cbmi(const TokenProbPair& p) {
  if (!(p.p_nmt > 0.0 && p.p_nmt <= 1.0) || !(p.p_lm > 0.0 && p.p_lm <= 1.0))
    throw std::domain_error("token_cbmi: probabilities must lie in (0, 1], got p_nmt=" + std::to_string(p.p_nmt) +
                            " p_lm=" + std::to_string(p.p_lm));
  return std::log(p.p_nmt) - std::log(p.p_lm);
}

Normalized normalize_intra_sentence(std::span<const double> token_cbmi, std::span<const std::uint8_t> mask,
                                    double sigma_floor) {
  if (!mask.empty() && mask.size() != token_cbmi.size())
    throw std::invalid_argument("normalize_intra_sentence: mask length differs from values");
  // Statistics are accumulated around the first valid value so that a
  // constant input normalizes to exact zeros.
  double origin = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < token_cbmi.size(); ++i)
    if (valid(mask, i)) {
      if (n == 0) origin = token_cbmi[i];
      ++n;
    }
  if (n == 0) throw std::invalid_argument("normalize_intra_sentence: no non-pad positions");
  double shift_sum = 0.0;
  for (std::size_t i = 0; i < token_cbmi.size(); ++i)
    if (valid(mask, i)) shift_sum += token_cbmi[i] - origin;
  const double shift = shift_sum / static_cast<double>(n);
  double sq = 0.0;
  for (std::size_t i = 0; i < token_cbmi.size(); ++i)
    if (valid(mask, i)) {
      const double d = (token_cbmi[i] - origin) - shift;
      sq += d * d;
    }
  const double std = std::max(std::sqrt(sq / static_cast<double>(n)), sigma_floor);
  Normalized out{std::vector<double>(token_cbmi.size(), 0.0), {origin + shift, std}};
  for (std::size_t i = 0; i < token_cbmi.size(); ++i)
    if (valid(mask, i)) out.values[i] = ((token_cbmi[i] - origin) - shift) / std;
  return out;
}

double token_weight(double norm_cbmi, double scale_t) { return std::max(0.0, scale_t * norm_cbmi + 1.0); }

double sentence_cbmi(std::span<const double> token_cbmi, std::span<const std::uint8_t> mask) {
  if (!mask.empty() && mask.size() != token_cbmi.size())
    throw std::invalid_argument("sentence_cbmi: mask length differs from values");
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < token_cbmi.size(); ++i)
    if (valid(mask, i)) {
      sum += token_cbmi[i];
      ++n;
    }
  if (n == 0) throw std::invalid_argument("sentence_cbmi: no non-pad positions");
  return sum / static_cast<double>(n);
}

Normalized normalize_inter_sentence(std::span<const double> sent_cbmi, double sigma_floor) {
  return normalize_intra_sentence(sent_cbmi, {}, sigma_floor);
}

double sentence_weight(double norm_cbmi, double scale_s) { return std::max(0.0, scale_s * norm_cbmi + 1.0); }

std::vector<double> final_weights(std::span<const double> token_weights, double sentence_weight, bool use_token,
                                  bool use_sentence) {
  std::vector<double> w(token_weights.size());
  const double ws = use_sentence ? sentence_weight : 1.0;
  for (std::size_t j = 0; j < w.size(); ++j) w[j] = (use_token ? token_weights[j] : 1.0) * ws;
  return w;
}

std::vector<CbmiRecord> cbmi_weights(const std::vector<std::vector<TokenProbPair>>& sentences,
                                     const CbmiConfig& config) {
  std::vector<CbmiRecord> records(sentences.size());
  std::vector<double> sent(sentences.size());
  for (std::size_t b = 0; b < sentences.size(); ++b) {
    CbmiRecord& r = records[b];
    r.token_cbmi.reserve(sentences[b].size());
    for (const auto& p : sentences[b]) r.token_cbmi.push_back(token_cbmi(p));
    Normalized n = normalize_intra_sentence(r.token_cbmi, {}, config.sigma_floor);
    r.norm_token_cbmi = std::move(n.values);
    r.token_stats = n.stats;
    r.token_weights.reserve(r.token_cbmi.size());
    for (double v : r.norm_token_cbmi) r.token_weights.push_back(token_weight(v, config.scale_t));
    r.sent_cbmi = sentence_cbmi(r.token_cbmi);
    sent[b] = r.sent_cbmi;
  }
  if (sentences.empty()) return records;
  const Normalized ns = normalize_inter_sentence(sent, config.sigma_floor);
  for (std::size_t b = 0; b < records.size(); ++b) {
    CbmiRecord& r = records[b];
    r.norm_sent_cbmi = ns.values[b];
    r.sentence_weight = sentence_weight(r.norm_sent_cbmi, config.scale_s);
    r.final_weights = final_weights(r.token_weights, r.sentence_weight, config.use_token, config.use_sentence);
  }
  return records;
}

double freq_exponential_weight(std::int64_t count, double a, double t) {
  return a * std::exp(-t * static_cast<double>(count)) + 1.0;
}

double freq_chi_square_weight(std::int64_t count, double a, double t) {
  const double c = static_cast<double>(count);
  return a * c * c * std::exp(-t * c) + 1.0;
}

double bmi_weight(double bmi, double s, double b) { return s * bmi + b; }

double focal_factor(double p, double alpha, double gamma) { return std::pow(1.0 - alpha * p, gamma); }

double anti_focal_factor(double p, double alpha, double gamma) { return std::pow(1.0 + alpha * p, gamma); }

double focal_loss(double p, double alpha, double gamma) { return -focal_factor(p, alpha, gamma) * std::log(p); }

double anti_focal_loss(double p, double alpha, double gamma) {
  return -anti_focal_factor(p, alpha, gamma) * std::log(p);
}

double lm_prior_loss(const MatrixXd& nmt_logits, const MatrixXd& lm_logits, double lambda, double tau,
                     bool soften_student) {
  if (!(tau > 0.0)) throw std::invalid_argument("lm_prior_loss: tau must be positive");
  if (nmt_logits.rows() != lm_logits.rows() || nmt_logits.cols() != lm_logits.cols())
    throw std::invalid_argument("lm_prior_loss: logit shapes differ");
  if (nmt_logits.rows() == 0) return 0.0;
  const double student_tau = soften_student ? tau : 1.0;
  double total = 0.0;
  std::vector<double> t(static_cast<std::size_t>(lm_logits.cols())), s(t.size());
  for (Index r = 0; r < nmt_logits.rows(); ++r) {
    for (Index c = 0; c < nmt_logits.cols(); ++c) {
      t[static_cast<std::size_t>(c)] = lm_logits(r, c) / tau;
      s[static_cast<std::size_t>(c)] = nmt_logits(r, c) / student_tau;
    }
    const auto lt = log_softmax(t);
    const auto ls = log_softmax(s);
    for (std::size_t c = 0; c < lt.size(); ++c) total += std::exp(lt[c]) * (lt[c] - ls[c]);
  }
  return lambda * total / static_cast<double>(nmt_logits.rows());
}

std::string_view prior_name(Prior p) {
  switch (p) {
    case Prior::lm: return "LM";
    case Prior::tm: return "TM";
    case Prior::cbmi: return "CBMI";
  }
  return "?";
}

Prior select_prior(double cbmi, double th1, double th2) {
  if (!(th1 < th2)) throw std::invalid_argument("select_prior: th1 must be smaller than th2");
  if (cbmi <= th1) return Prior::lm;
  if (cbmi <= th2) return Prior::tm;
  return Prior::cbmi;
}

std::vector<double> cbmi_prior_distribution(std::span<const double> nmt_logits_row,
                                            std::span<const double> lm_logits_row) {
  if (nmt_logits_row.size() != lm_logits_row.size() || nmt_logits_row.empty())
    throw std::invalid_argument("cbmi_prior_distribution: rows must be non-empty and equally sized");
  const auto ln = log_softmax(nmt_logits_row);
  const auto ll = log_softmax(lm_logits_row);
  std::vector<double> c(ln.size());
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = ln[i] - ll[i];
  auto lc = log_softmax(c);
  for (double& v : lc) v = std::exp(v);
  return lc;
}

}  // namespace cbmi

#include "cbmi/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>

namespace cbmi {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_real(const std::string& key, const std::string& text) {
  double v = 0.0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v))
    throw ConfigError(key, "expected a finite number, got '" + text + "'");
  return v;
}

template <typename T>
T parse_integer(const std::string& key, const std::string& text) {
  T v{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) throw ConfigError(key, "expected an integer, got '" + text + "'");
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  throw ConfigError(key, "expected true or false, got '" + text + "'");
}

template <typename Ref>
ConfigKey real_key(std::string name, std::string help, Ref ref) {
  return {name, ValueType::real, std::move(help),
          [ref, name](RunConfig& c, const std::string& v) { ref(c) = parse_real(name, v); },
          [ref](const RunConfig& c) { return format_real(ref(c)); }};
}

template <typename T, typename Ref>
ConfigKey int_key(std::string name, std::string help, Ref ref) {
  return {name, ValueType::integer, std::move(help),
          [ref, name](RunConfig& c, const std::string& v) { ref(c) = parse_integer<T>(name, v); },
          [ref](const RunConfig& c) { return std::to_string(ref(c)); }};
}

template <typename Ref>
ConfigKey bool_key(std::string name, std::string help, Ref ref) {
  return {name, ValueType::boolean, std::move(help),
          [ref, name](RunConfig& c, const std::string& v) { ref(c) = parse_bool(name, v); },
          [ref](const RunConfig& c) { return std::string(ref(c) ? "true" : "false"); }};
}

#define CBMI_REF(expr) [](auto& c) -> auto& { return c.expr; }

std::vector<ConfigKey> build_keys() {
  std::vector<ConfigKey> keys;
  keys.push_back({"profile", ValueType::text, "baseline hyperparameter profile: en-de | zh-en",
                  [](RunConfig& c, const std::string& v) {
                    if (v != "en-de" && v != "zh-en") throw ConfigError("profile", "expected en-de or zh-en, got '" + v + "'");
                    c.profile = v;
                  },
                  [](const RunConfig& c) { return c.profile; }});
  keys.push_back({"preset", ValueType::text, "model size preset: desk | base | big",
                  [](RunConfig& c, const std::string& v) {
                    if (v != "desk" && v != "base" && v != "big")
                      throw ConfigError("preset", "expected desk, base or big, got '" + v + "'");
                    c.preset = v;
                  },
                  [](const RunConfig& c) { return c.preset; }});
  keys.push_back({"scheme", ValueType::text,
                  "weighting scheme for phase 2: none | cbmi | freq_exp | freq_chi | bmi | focal | anti_focal | "
                  "lm_prior | prior_select",
                  [](RunConfig& c, const std::string& v) {
                    auto k = parse_scheme(v);
                    if (!k) throw ConfigError("scheme", "unknown scheme '" + v + "'");
                    c.train.scheme.kind = *k;
                  },
                  [](const RunConfig& c) { return std::string(scheme_name(c.train.scheme.kind)); }});
  keys.push_back(real_key("scale_t", "token-level CBMI weight scale", CBMI_REF(train.scheme.cbmi.scale_t)));
  keys.push_back(real_key("scale_s", "sentence-level CBMI weight scale", CBMI_REF(train.scheme.cbmi.scale_s)));
  keys.push_back(bool_key("use_token", "apply token-level CBMI weights", CBMI_REF(train.scheme.cbmi.use_token)));
  keys.push_back(bool_key("use_sentence", "apply sentence-level CBMI weights", CBMI_REF(train.scheme.cbmi.use_sentence)));
  keys.push_back(real_key("sigma_floor", "lower bound on the standard deviation used in normalization",
                          CBMI_REF(train.scheme.cbmi.sigma_floor)));
  keys.push_back(real_key("freq_a", "frequency schemes: amplitude A", CBMI_REF(train.scheme.baseline.freq_a)));
  keys.push_back(real_key("freq_t", "frequency schemes: temperature T (default depends on profile and scheme)",
                          CBMI_REF(train.scheme.baseline.freq_t)));
  keys.push_back(real_key("bmi_s", "bmi scheme: scale S", CBMI_REF(train.scheme.baseline.bmi_s)));
  keys.push_back(real_key("bmi_b", "bmi scheme: intercept B", CBMI_REF(train.scheme.baseline.bmi_b)));
  keys.push_back(real_key("alpha", "focal / anti_focal: alpha", CBMI_REF(train.scheme.baseline.alpha)));
  keys.push_back(real_key("gamma", "focal / anti_focal: gamma", CBMI_REF(train.scheme.baseline.gamma)));
  keys.push_back(real_key("lambda", "lm_prior / prior_select: weight of the prior term",
                          CBMI_REF(train.scheme.baseline.lambda)));
  keys.push_back(real_key("tau", "lm_prior: softmax temperature", CBMI_REF(train.scheme.baseline.tau)));
  keys.push_back(bool_key("soften_student", "lm_prior: apply tau to the NMT distribution too",
                          CBMI_REF(train.scheme.baseline.soften_student)));
  keys.push_back(real_key("th1", "prior_select: LM prior at or below this CBMI", CBMI_REF(train.scheme.baseline.th1)));
  keys.push_back(real_key("th2", "prior_select: CBMI prior above this CBMI", CBMI_REF(train.scheme.baseline.th2)));
  keys.push_back(int_key<std::uint64_t>("seed", "seed for initialization, batching and dropout", CBMI_REF(train.seed)));
  keys.push_back(real_key("base_lr", "learning-rate scale of the inverse-sqrt schedule", CBMI_REF(train.base_lr)));
  keys.push_back(int_key<std::int64_t>("warmup_steps", "linear warmup steps", CBMI_REF(train.warmup_steps)));
  keys.push_back(int_key<std::int64_t>("phase1_steps", "cross-entropy pretraining steps", CBMI_REF(train.phase1_steps)));
  keys.push_back(int_key<std::int64_t>("phase2_steps", "adaptive finetuning steps", CBMI_REF(train.phase2_steps)));
  keys.push_back(int_key<std::size_t>("token_budget", "max sentences x longest side per batch", CBMI_REF(train.token_budget)));
  keys.push_back(real_key("label_smoothing", "label smoothing epsilon", CBMI_REF(train.label_smoothing)));
  keys.push_back(real_key("clip_norm", "global gradient-norm clip (0 disables)", CBMI_REF(train.clip_norm)));
  keys.push_back(real_key("adam_beta1", "Adam beta1", CBMI_REF(train.adam.beta1)));
  keys.push_back(real_key("adam_beta2", "Adam beta2", CBMI_REF(train.adam.beta2)));
  keys.push_back(real_key("adam_eps", "Adam epsilon", CBMI_REF(train.adam.eps)));
  keys.push_back(bool_key("train_lm", "update the language model during training", CBMI_REF(train.train_lm)));
  keys.push_back(bool_key("reset_optimizer", "clear Adam moments when phase 2 starts", CBMI_REF(train.reset_optimizer)));
  keys.push_back(int_key<std::int64_t>("checkpoint_every", "save a checkpoint every N steps (0 disables)",
                                       CBMI_REF(train.checkpoint_every)));
  keys.push_back(int_key<std::int64_t>("keep_checkpoints", "periodic checkpoints to keep", CBMI_REF(train.keep_checkpoints)));
  keys.push_back(int_key<int>("embed_dim", "model width", CBMI_REF(model.embed_dim)));
  keys.push_back(int_key<int>("ff_dim", "feed-forward inner width", CBMI_REF(model.ff_dim)));
  keys.push_back(int_key<int>("enc_layers", "encoder layers", CBMI_REF(model.enc_layers)));
  keys.push_back(int_key<int>("dec_layers", "decoder layers", CBMI_REF(model.dec_layers)));
  keys.push_back(int_key<int>("lm_layers", "language-model layers", CBMI_REF(model.lm_layers)));
  keys.push_back(int_key<int>("heads", "attention heads", CBMI_REF(model.heads)));
  keys.push_back(real_key("dropout", "residual dropout", CBMI_REF(model.dropout_residual)));
  keys.push_back(real_key("attention_dropout", "attention dropout", CBMI_REF(model.dropout_attention)));
  keys.push_back(real_key("activation_dropout", "activation dropout", CBMI_REF(model.dropout_activation)));
  keys.push_back(int_key<std::size_t>("max_len", "drop training pairs longer than this (tokens incl. </s>)",
                                      CBMI_REF(max_len)));
  keys.push_back(int_key<int>("min_count", "minimum token count for the vocabulary", CBMI_REF(min_count)));
  keys.push_back(bool_key("share_vocab", "one vocabulary for both sides", CBMI_REF(share_vocab)));
  keys.push_back(int_key<int>("precision", "floating-point precision: 32 or 64", CBMI_REF(precision)));
  keys.push_back(int_key<int>("beam", "beam size", CBMI_REF(beam.beam_size)));
  keys.push_back(real_key("length_penalty", "length-penalty exponent alpha", CBMI_REF(beam.length_penalty)));
  keys.push_back(real_key("max_len_ratio", "decode at most ratio x source length tokens", CBMI_REF(beam.max_len_ratio)));
  return keys;
}

#undef CBMI_REF

void apply_preset(RunConfig& c) {
  if (c.preset == "desk") {
    c.model = ModelConfig{};
    c.train.base_lr = 7e-4;
  } else if (c.preset == "base") {
    c.model = ModelConfig::base();
    c.train.base_lr = 7e-4;
  } else {
    c.model = ModelConfig::big();
    c.model.dropout_residual = 0.3;
    c.train.base_lr = 5e-4;
  }
}

void apply_profile(RunConfig& c) {
  BaselineConfig& b = c.train.scheme.baseline;
  b.freq_a = 1.0;
  if (c.profile == "en-de") {
    b.bmi_s = 0.15;
    b.bmi_b = 0.8;
  } else {
    b.bmi_s = 0.1;
    b.bmi_b = 1.0;
  }
}

double profile_freq_t(const std::string& profile, SchemeKind scheme) {
  const bool chi = scheme == SchemeKind::freq_chi;
  if (profile == "zh-en") return chi ? 1.75 : 0.35;
  return chi ? 2.5 : 1.75;
}

void require(bool ok, const char* key, const std::string& what) {
  if (!ok) throw ConfigError(key, what);
}

}  // namespace

std::string format_real(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

std::string ConfigKey::flag() const {
  std::string f = "--" + name;
  std::replace(f.begin(), f.end(), '_', '-');
  return f;
}

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = build_keys();
  return keys;
}

const ConfigKey* find_key(const std::string& name) {
  for (const auto& k : config_keys())
    if (k.name == name) return &k;
  return nullptr;
}

void RunConfig::validate() const {
  const CbmiConfig& cb = train.scheme.cbmi;
  const BaselineConfig& b = train.scheme.baseline;
  require(cb.scale_t >= 0.0, "scale_t", "must be non-negative (got " + format_real(cb.scale_t) + ")");
  require(cb.scale_s >= 0.0, "scale_s", "must be non-negative (got " + format_real(cb.scale_s) + ")");
  require(cb.sigma_floor > 0.0, "sigma_floor", "must be positive");
  require(b.freq_a >= 0.0, "freq_a", "must be non-negative");
  require(b.freq_t >= 0.0, "freq_t", "must be non-negative");
  require(b.alpha >= 0.0 && b.alpha <= 1.0, "alpha", "must lie in [0, 1]");
  require(b.gamma >= 0.0, "gamma", "must be non-negative");
  require(b.lambda >= 0.0, "lambda", "must be non-negative");
  require(b.tau > 0.0, "tau", "must be positive");
  require(b.th1 < b.th2, "th1", "must be smaller than th2");
  require(train.base_lr > 0.0, "base_lr", "must be positive");
  require(train.warmup_steps >= 1, "warmup_steps", "must be >= 1");
  require(train.phase1_steps >= 0, "phase1_steps", "must be non-negative");
  require(train.phase2_steps >= 0, "phase2_steps", "must be non-negative");
  require(train.token_budget >= 1, "token_budget", "must be positive");
  require(train.label_smoothing >= 0.0 && train.label_smoothing < 1.0, "label_smoothing", "must lie in [0, 1)");
  require(train.clip_norm >= 0.0, "clip_norm", "must be non-negative");
  require(train.adam.beta1 >= 0.0 && train.adam.beta1 < 1.0, "adam_beta1", "must lie in [0, 1)");
  require(train.adam.beta2 >= 0.0 && train.adam.beta2 < 1.0, "adam_beta2", "must lie in [0, 1)");
  require(train.adam.eps > 0.0, "adam_eps", "must be positive");
  require(train.checkpoint_every >= 0, "checkpoint_every", "must be non-negative");
  require(train.keep_checkpoints >= 1, "keep_checkpoints", "must be >= 1");
  require(model.embed_dim >= 1, "embed_dim", "must be positive");
  require(model.ff_dim >= 1, "ff_dim", "must be positive");
  require(model.enc_layers >= 1, "enc_layers", "must be positive");
  require(model.dec_layers >= 1, "dec_layers", "must be positive");
  require(model.lm_layers >= 1, "lm_layers", "must be positive");
  require(model.heads >= 1, "heads", "must be positive");
  require(model.embed_dim % model.heads == 0, "heads", "must divide embed_dim");
  require(model.dropout_residual >= 0.0 && model.dropout_residual < 1.0, "dropout", "must lie in [0, 1)");
  require(model.dropout_attention >= 0.0 && model.dropout_attention < 1.0, "attention_dropout", "must lie in [0, 1)");
  require(model.dropout_activation >= 0.0 && model.dropout_activation < 1.0, "activation_dropout",
          "must lie in [0, 1)");
  require(max_len >= 1, "max_len", "must be positive");
  require(min_count >= 1, "min_count", "must be >= 1");
  require(precision == 32 || precision == 64, "precision", "must be 32 or 64");
  require(beam.beam_size >= 1, "beam", "must be >= 1");
  require(beam.length_penalty >= 0.0, "length_penalty", "must be non-negative");
  require(beam.max_len_ratio > 0.0, "max_len_ratio", "must be positive");
}

Assignments read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path.string());
  Assignments out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (eq == std::string::npos) throw ConfigError(t, "expected key=value at " + where);
    std::string key = trim(t.substr(0, eq));
    if (!find_key(key)) throw ConfigError(key, "unknown key at " + where);
    out.emplace_back(std::move(key), trim(t.substr(eq + 1)));
  }
  return out;
}

RunConfig resolve_config(const Assignments& file, const Assignments& overrides) {
  Assignments all = file;
  all.insert(all.end(), overrides.begin(), overrides.end());
  std::set<std::string> explicit_keys;
  RunConfig c;
  // Profile and preset reset whole groups, so they go first and everything
  // else is layered on top of them.
  for (const char* group : {"profile", "preset"})
    for (const auto& [k, v] : all)
      if (k == group) find_key(k)->set(c, v);
  apply_preset(c);
  apply_profile(c);
  for (const auto& [k, v] : all) {
    const ConfigKey* key = find_key(k);
    if (!key) throw ConfigError(k, "unknown key");
    if (k == "profile" || k == "preset") continue;
    key->set(c, v);
    explicit_keys.insert(k);
  }
  if (!explicit_keys.count("freq_t")) c.train.scheme.baseline.freq_t = profile_freq_t(c.profile, c.train.scheme.kind);
  c.validate();
  return c;
}

RunConfig parse_config(const std::filesystem::path& path, const Assignments& overrides) {
  return resolve_config(path.empty() ? Assignments{} : read_config_file(path), overrides);
}

std::vector<std::pair<std::string, std::string>> echo_config(const RunConfig& config) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& k : config_keys()) out.emplace_back(k.name, k.get(config));
  return out;
}

}  // namespace cbmi

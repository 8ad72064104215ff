#include "cbmi/cli.hpp"

#include "cbmi/analysis.hpp"
#include "cbmi/checkpoint.hpp"
#include "cbmi/config.hpp"
#include "cbmi/decode.hpp"
#include "cbmi/trainer.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>

namespace cbmi::cli {

namespace fs = std::filesystem;

namespace {

constexpr std::size_t kNoLengthLimit = std::size_t{1} << 30;

const char* type_label(ValueType type) {
  switch (type) {
    case ValueType::integer: return "INT";
    case ValueType::real: return "REAL";
    case ValueType::boolean: return "[BOOL]";
    case ValueType::text: return "TEXT";
  }
  return "TEXT";
}

/// Binds config keys to flags of one subcommand and collects what was given.
class KeyFlags {
 public:
  KeyFlags(CLI::App* app, const std::vector<std::string>& names) {
    app->add_option("--config", config_path_, "key=value configuration file; flags override its values");
    for (const auto& name : names) {
      const ConfigKey* key = find_key(name);
      auto slot = std::make_unique<std::string>();
      CLI::Option* opt = app->add_option(key->flag(), *slot, key->help);
      if (key->type == ValueType::boolean) opt->expected(0, 1);
      opt->type_name(type_label(key->type));
      bound_.push_back({key, opt, std::move(slot)});
    }
  }

  RunConfig resolve() const {
    Assignments overrides;
    for (const auto& b : bound_)
      if (b.option->count() > 0)
        overrides.emplace_back(b.key->name, b.value->empty() && b.key->type == ValueType::boolean ? "true" : *b.value);
    return parse_config(config_path_, overrides);
  }

 private:
  struct Bound {
    const ConfigKey* key;
    CLI::Option* option;
    std::unique_ptr<std::string> value;
  };
  std::string config_path_;
  std::vector<Bound> bound_;
};

std::vector<std::string> all_key_names() {
  std::vector<std::string> names;
  for (const auto& k : config_keys()) names.push_back(k.name);
  return names;
}

const std::vector<std::string> kSchemeKeys{"profile", "scheme", "scale_t", "scale_s", "use_token", "use_sentence",
                                           "sigma_floor", "freq_a", "freq_t", "bmi_s", "bmi_b", "alpha",
                                           "gamma", "lambda", "tau", "soften_student", "th1", "th2",
                                           "token_budget"};

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

void write_lines(const fs::path& path, const std::vector<std::string>& lines) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& l : lines) out << l << '\n';
}

/// Preprocessed data directory: copies of the corpus plus vocabularies.
struct DataDir {
  ParallelCorpus corpus;
  Vocabularies vocabs;

  static DataDir load(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw std::runtime_error("data directory not found: " + dir.string());
    return {ParallelCorpus::load(dir / "train.src", dir / "train.tgt"),
            {Vocabulary::load(dir / "vocab.src.txt"), Vocabulary::load(dir / "vocab.tgt.txt")}};
  }
};

/// Runs `fn` with a checkpoint loaded in its stored precision.
template <typename Fn>
void with_checkpoint(const fs::path& dir, Fn&& fn) {
  const auto manifest = read_manifest(dir);
  if (manifest.at("precision") == "64") {
    auto ck = load_checkpoint<double>(dir);
    fn(ck);
  } else {
    auto ck = load_checkpoint<float>(dir);
    fn(ck);
  }
}

/// Corpus for analysis commands: a preprocessed directory (vocabularies must
/// match the checkpoint) or a raw src/tgt file pair.
ParallelCorpus analysis_corpus(const std::string& data, const std::string& src, const std::string& tgt,
                               const Vocabularies& vocabs) {
  if (!data.empty()) {
    DataDir d = DataDir::load(data);
    if (!(d.vocabs.src == vocabs.src) || !(d.vocabs.tgt == vocabs.tgt))
      throw std::invalid_argument("vocabulary of " + data + " differs from the checkpoint vocabulary");
    return std::move(d.corpus);
  }
  if (src.empty() || tgt.empty()) throw CLI::ValidationError("either --data or both --src and --tgt are required");
  return ParallelCorpus::load(src, tgt);
}

// ---------------------------------------------------------------- commands

struct PreprocessArgs {
  std::string src, tgt, out_dir;
};

void cmd_preprocess(const PreprocessArgs& a, const RunConfig& cfg, std::ostream& out) {
  const ParallelCorpus corpus = ParallelCorpus::load(a.src, a.tgt);
  const Vocabularies vocabs = build_vocab(corpus, cfg.min_count, cfg.share_vocab);
  const auto pairs = encode_corpus(corpus, vocabs, cfg.max_len);
  fs::create_directories(a.out_dir);
  const fs::path dir(a.out_dir);
  write_lines(dir / "train.src", corpus.src);
  write_lines(dir / "train.tgt", corpus.tgt);
  vocabs.src.save(dir / "vocab.src.txt");
  vocabs.tgt.save(dir / "vocab.tgt.txt");
  const FrequencyTable freq = FrequencyTable::build(pairs, vocabs.src.size(), vocabs.tgt.size());
  BmiTable::build(pairs, freq).save(dir / "bmi.txt");
  write_key_values(dir / "preprocess.txt", {{"pairs", std::to_string(corpus.size())},
                                            {"kept_pairs", std::to_string(pairs.size())},
                                            {"min_count", std::to_string(cfg.min_count)},
                                            {"max_len", std::to_string(cfg.max_len)},
                                            {"share_vocab", cfg.share_vocab ? "true" : "false"},
                                            {"src_vocab", std::to_string(vocabs.src.size())},
                                            {"tgt_vocab", std::to_string(vocabs.tgt.size())}});
  out << "preprocessed " << pairs.size() << " of " << corpus.size() << " pairs; vocab " << vocabs.src.size() << '/'
      << vocabs.tgt.size() << " -> " << a.out_dir << '\n';
}

struct TrainArgs {
  std::string data, out_dir, resume, dump_weights;
};

template <typename Scalar>
void train_with(const TrainArgs& a, RunConfig cfg, const TrainingData& data, std::ostream& out) {
  cfg.model.vocab_size_src = static_cast<int>(data.vocabs.src.size());
  cfg.model.vocab_size_tgt = static_cast<int>(data.vocabs.tgt.size());
  cfg.model.share_vocab = cfg.share_vocab;
  const auto echo = echo_config(cfg);

  std::unique_ptr<Trainer<Scalar>> trainer;
  if (!a.resume.empty()) {
    require_same_vocab(a.resume, data.vocabs);
    Checkpoint<Scalar> ck = load_checkpoint<Scalar>(a.resume);
    if (ck.config != KeyValues(echo.begin(), echo.end()))
      throw std::invalid_argument("configuration differs from the one stored in " + a.resume);
    trainer = std::make_unique<Trainer<Scalar>>(cfg.train, std::move(ck.params), data);
    if (ck.nmt_optimizer) trainer->nmt_optimizer() = std::move(*ck.nmt_optimizer);
    if (ck.lm_optimizer) trainer->lm_optimizer() = std::move(*ck.lm_optimizer);
    trainer->set_completed_steps(ck.step);
  } else {
    trainer = std::make_unique<Trainer<Scalar>>(cfg.train, init_params<Scalar>(cfg.model, cfg.train.seed), data);
  }

  fs::create_directories(a.out_dir);
  write_key_values(fs::path(a.out_dir) / "config.txt", KeyValues(echo.begin(), echo.end()));
  std::ofstream dump;
  RunOptions options;
  options.out_dir = a.out_dir;
  options.config_echo = echo;
  if (!a.dump_weights.empty()) {
    dump.open(a.dump_weights);
    if (!dump) throw std::runtime_error("cannot write " + a.dump_weights);
    dump << "step\tsent_idx\tpos\ttoken_id\tcbmi\tw_t\tw_s\tw_final\n";
    options.weight_dump = &dump;
  }
  const auto history = run_training(*trainer, options);
  out << "trained to step " << trainer->completed_steps();
  if (!history.empty()) out << "; last nmt_loss " << std::setprecision(6) << history.back().nmt_loss;
  out << "; checkpoint " << (fs::path(a.out_dir) / "final").string() << '\n';
}

void cmd_train(const TrainArgs& a, const RunConfig& cfg, std::ostream& out) {
  DataDir d = DataDir::load(a.data);
  const TrainingData data = TrainingData::build(d.corpus, std::move(d.vocabs), cfg.max_len);
  if (cfg.precision == 64)
    train_with<double>(a, cfg, data, out);
  else
    train_with<float>(a, cfg, data, out);
}

struct TranslateArgs {
  std::string checkpoint, input, output;
};

void cmd_translate(const TranslateArgs& a, const RunConfig& cfg, std::ostream& out) {
  const auto lines = read_lines(a.input);
  std::vector<std::string> hyps;
  with_checkpoint(a.checkpoint, [&](auto& ck) {
    std::vector<std::vector<TokenId>> sources;
    for (std::size_t i = 0; i < lines.size(); ++i) {
      if (tokenize(lines[i]).empty())
        throw std::invalid_argument(a.input + ":" + std::to_string(i + 1) + ": empty source sentence");
      sources.push_back(ck.vocabs.src.encode(lines[i]));
    }
    for (const auto& ids : translate(ck.params, sources, cfg.beam)) hyps.push_back(ck.vocabs.tgt.decode(ids));
  });
  if (a.output.empty()) {
    for (const auto& h : hyps) out << h << '\n';
  } else {
    write_lines(a.output, hyps);
  }
}

struct ScoreArgs {
  std::string hyp, ref;
};

void cmd_score(const ScoreArgs& a, std::ostream& out) {
  const auto hyp = read_lines(a.hyp);
  const auto ref = read_lines(a.ref);
  out << bleu(hyp, ref).to_string() << '\n';
}

struct AnalyzeArgs {
  std::string checkpoint, data, src, tgt, out;
  int bins = 20;
  double low = -10.0;
  double high = 10.0;
  std::size_t token_budget = 1024;
};

void cmd_analyze(const AnalyzeArgs& a, std::ostream& out) {
  const HistogramSpec spec{a.low, a.high, a.bins};
  spec.validate();
  with_checkpoint(a.checkpoint, [&](auto& ck) {
    const ParallelCorpus corpus = analysis_corpus(a.data, a.src, a.tgt, ck.vocabs);
    const auto pairs = encode_corpus(corpus, ck.vocabs, kNoLengthLimit);
    const CbmiAnalysis report = analyze_cbmi(ck.params, pairs, spec, std::max(a.token_budget, std::size_t{1}));
    const std::string hash = checkpoint_hash(a.checkpoint);
    if (a.out.empty()) {
      report.write(out, hash);
    } else {
      std::ofstream f(a.out);
      if (!f) throw std::runtime_error("cannot write " + a.out);
      report.write(f, hash);
    }
  });
}

struct DumpArgs {
  std::string checkpoint, data, src, tgt, out;
};

void cmd_dump_weights(const DumpArgs& a, const RunConfig& cfg, std::ostream& out) {
  with_checkpoint(a.checkpoint, [&](auto& ck) {
    const ParallelCorpus corpus = analysis_corpus(a.data, a.src, a.tgt, ck.vocabs);
    const TrainingData data = TrainingData::build(corpus, ck.vocabs, kNoLengthLimit);
    if (a.out.empty()) {
      dump_weights(ck.params, data, cfg.train.scheme, cfg.train.token_budget, out);
    } else {
      std::ofstream f(a.out);
      if (!f) throw std::runtime_error("cannot write " + a.out);
      dump_weights(ck.params, data, cfg.train.scheme, cfg.train.token_budget, f);
    }
  });
}

int fail(std::ostream& err, const std::string& category, const std::string& message, int code) {
  std::string one_line = message;
  std::replace(one_line.begin(), one_line.end(), '\n', ' ');
  err << "error: " << category << ": " << one_line << '\n';
  return code;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app("Token-weighted NMT training with conditional bilingual mutual information", "cbmi");
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Print help for all subcommands");

  PreprocessArgs pre;
  auto* sp = app.add_subcommand("preprocess", "Build vocabularies and corpus statistics");
  sp->add_option("--src", pre.src, "source-side text, one sentence per line")->required();
  sp->add_option("--tgt", pre.tgt, "target-side text, aligned with --src")->required();
  sp->add_option("--out-dir", pre.out_dir, "output directory")->required();
  KeyFlags pre_keys(sp, {"min_count", "max_len", "share_vocab"});

  TrainArgs tr;
  auto* st = app.add_subcommand("train", "Two-phase training of the NMT model and the target LM");
  st->add_option("--data", tr.data, "directory written by preprocess")->required();
  st->add_option("--out-dir", tr.out_dir, "run directory (logs and checkpoints)")->required();
  st->add_option("--resume", tr.resume, "continue from this checkpoint directory");
  st->add_option("--dump-weights", tr.dump_weights, "write per-token training weights to this file");
  KeyFlags train_keys(st, all_key_names());

  TranslateArgs tl;
  auto* stl = app.add_subcommand("translate", "Beam-search translation");
  stl->add_option("--checkpoint", tl.checkpoint, "checkpoint directory")->required();
  stl->add_option("--input", tl.input, "source sentences, one per line")->required();
  stl->add_option("--output", tl.output, "output file (default: stdout)");
  KeyFlags translate_keys(stl, {"beam", "length_penalty", "max_len_ratio"});

  ScoreArgs sc;
  auto* ssc = app.add_subcommand("score", "Corpus BLEU of hypotheses against references");
  ssc->add_option("--hyp", sc.hyp, "hypotheses, one per line")->required();
  ssc->add_option("--ref", sc.ref, "references, one per line")->required();

  AnalyzeArgs an;
  auto* san = app.add_subcommand("analyze-cbmi", "Token CBMI histogram and prior accuracy by CBMI bin");
  san->add_option("--checkpoint", an.checkpoint, "checkpoint directory")->required();
  san->add_option("--data", an.data, "preprocessed directory (vocabularies must match the checkpoint)");
  san->add_option("--src", an.src, "source text (alternative to --data)");
  san->add_option("--tgt", an.tgt, "target text (alternative to --data)");
  san->add_option("--out", an.out, "report file (default: stdout)");
  san->add_option("--bins", an.bins, "histogram bins")->capture_default_str();
  san->add_option("--cbmi-min", an.low, "lower histogram edge")->capture_default_str();
  san->add_option("--cbmi-max", an.high, "upper histogram edge")->capture_default_str();
  san->add_option("--token-budget", an.token_budget, "batch size bound for the forward passes")->capture_default_str();

  DumpArgs dw;
  auto* sdw = app.add_subcommand("dump-weights", "Per-token weights a scheme assigns under a checkpoint");
  sdw->add_option("--checkpoint", dw.checkpoint, "checkpoint directory")->required();
  sdw->add_option("--data", dw.data, "preprocessed directory (vocabularies must match the checkpoint)");
  sdw->add_option("--src", dw.src, "source text (alternative to --data)");
  sdw->add_option("--tgt", dw.tgt, "target text (alternative to --data)");
  sdw->add_option("--out", dw.out, "output file (default: stdout)");
  KeyFlags dump_keys(sdw, kSchemeKeys);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    return fail(err, "usage", e.what(), 2);
  }

  try {
    if (sp->parsed()) cmd_preprocess(pre, pre_keys.resolve(), out);
    else if (st->parsed()) cmd_train(tr, train_keys.resolve(), out);
    else if (stl->parsed()) cmd_translate(tl, translate_keys.resolve(), out);
    else if (ssc->parsed()) cmd_score(sc, out);
    else if (san->parsed()) cmd_analyze(an, out);
    else if (sdw->parsed()) cmd_dump_weights(dw, dump_keys.resolve(), out);
    return 0;
  } catch (const ConfigError& e) {
    return fail(err, "config", e.what(), 2);
  } catch (const CLI::Error& e) {
    return fail(err, "usage", e.what(), 2);
  } catch (const NonFiniteLoss& e) {
    return fail(err, "numeric", e.what(), 1);
  } catch (const std::domain_error& e) {
    return fail(err, "numeric", e.what(), 1);
  } catch (const fs::filesystem_error& e) {
    return fail(err, "io", e.what(), 1);
  } catch (const std::invalid_argument& e) {
    return fail(err, "input", e.what(), 1);
  } catch (const std::runtime_error& e) {
    return fail(err, "runtime", e.what(), 1);
  } catch (const std::exception& e) {
    return fail(err, "internal", e.what(), 1);
  }
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace cbmi::cli
